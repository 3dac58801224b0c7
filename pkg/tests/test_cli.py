import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import jsonschema
import numpy as np
import pytest

from lgpdens.cli import main, schema
from lgpdens.datasets import simulate_dataset
from lgpdens.plotting import _violin_from_values, render_plot

NS = {"s": "http://www.w3.org/2000/svg"}


@pytest.fixture(scope="module")
def data1d(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "x.csv"
    np.savetxt(path, simulate_dataset("mix-t4", 60, 2).points, delimiter=",")
    return path


@pytest.fixture(scope="module")
def data2d(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "xy.csv"
    np.savetxt(path, simulate_dataset("mix-gauss-2d", 60, 2).points, delimiter=",")
    return path


def run(args, tmp_path, name="out.json"):
    out = tmp_path / name
    code = main([*map(str, args), "--out", str(out)])
    return code, (json.loads(out.read_text()) if code == 0 else None)


def exit_code(argv):
    try:
        return main([str(a) for a in argv])
    except SystemExit as exc:
        return exc.code


def strip_timings(res):
    res = json.loads(json.dumps(res))
    res["meta"].pop("timings")
    return res


def test_default_grid_and_schema(data1d, tmp_path):
    code, res = run(["est1d", data1d, "--samples", 300, "--seed", 1], tmp_path)
    assert code == 0
    assert res["grid"]["m"] == [400]
    jsonschema.validate(res, schema())
    assert len(res["density"]["mean"]) == 400
    w = np.diff(res["grid"]["bounds"][0])[0] / 400
    assert sum(res["density"]["mean"]) * w == pytest.approx(1.0, abs=1e-9)


def test_seed_determinism(data1d, tmp_path):
    args = ["est1d", data1d, "--grid", 80, "--samples", 300, "--seed", 7]
    _, a = run(args, tmp_path, "a.json")
    _, b = run(args, tmp_path, "b.json")
    assert strip_timings(a) == strip_timings(b)
    _, c = run(args[:-1] + [8], tmp_path, "c.json")
    assert c["density"]["q025"] != a["density"]["q025"]


def test_fft_matches_dense(data1d, tmp_path):
    base = ["est1d", data1d, "--grid", 128, "--samples", 200, "--seed", 0, "--no-is"]
    _, a = run(base, tmp_path, "a.json")
    _, b = run(base + ["--fft"], tmp_path, "b.json")
    np.testing.assert_allclose(a["density"]["mean"], b["density"]["mean"], atol=1e-6)
    assert b["meta"]["options"]["method"] == "fft"


@pytest.mark.parametrize("extra", [["--integration", "ccd"], ["--rejection"], ["--bounded"]])
def test_est1d_options(data1d, tmp_path, extra):
    code, res = run(["est1d", data1d, "--grid", 60, "--samples", 200, "--seed", 0, *extra],
                    tmp_path)
    assert code == 0
    jsonschema.validate(res, schema())
    if extra[0] == "--integration":
        assert len(res["hyper"]["ccd_weights"]) == 9


def test_est2d_rank_and_regress(data2d, tmp_path):
    code, res = run(["est2d", data2d, "--grid", "12,10", "--samples", 200, "--seed", 0,
                     "--rank", "0.5"], tmp_path)
    assert code == 0
    jsonschema.validate(res, schema())
    assert res["grid"]["m"] == [12, 10] and len(res["density"]["mean"]) == 120
    code, res = run(["regress", data2d, "--grid", 8, "--samples", 200, "--seed", 0], tmp_path)
    assert code == 0 and res["density"]["conditional"]
    dens = np.reshape(res["density"]["mean"], (8, 8))
    w = np.diff(res["grid"]["bounds"][1])[0] / 8
    np.testing.assert_allclose(dens.sum(axis=1) * w, 1.0)


@pytest.mark.parametrize("args", [["--bounds", "1,0"], ["--grid", "1"], ["--grid", "a"],
                                  ["--bounds", "0,1,2"], ["--samples", "1"]])
def test_usage_errors_exit_2(data1d, tmp_path, args):
    assert exit_code(["est1d", data1d, *args, "--out", tmp_path / "o.json"]) == 2


def test_data_errors_exit_3(data1d, tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1.0\nfoo\n2.0\n")
    assert main(["est1d", str(bad)]) == 3
    assert main(["est1d", str(tmp_path / "missing.csv")]) == 3
    assert main(["est1d", str(data1d), "--bounds", "0,1"]) == 3


def test_auto_bounds_widens(data1d, tmp_path):
    code, res = run(["est1d", data1d, "--bounds", "0,1", "--auto-bounds", "--grid", 50,
                     "--samples", 100, "--seed", 0], tmp_path)
    x = np.loadtxt(data1d)
    lo, hi = res["grid"]["bounds"][0]
    assert code == 0 and lo <= x.min() and hi >= x.max()


def test_simulate_and_eval(tmp_path):
    csv = tmp_path / "s.csv"
    assert main(["simulate", "mix-t4", "--n", "80", "--seed", "3", "--out", str(csv)]) == 0
    assert np.loadtxt(csv).shape == (80,)
    code, res = run(["est1d", csv, "--grid", 100, "--samples", 300, "--seed", 0], tmp_path)
    out = tmp_path / "score.json"
    assert main(["eval", str(tmp_path / "out.json"), "--truth", "mix-t4",
                 "--out", str(out)]) == 0
    score = json.loads(out.read_text())["score"]
    assert 0 < score["kl"] < 0.5
    vals = tmp_path / "v.csv"
    vals.write_text("\n".join(str(v) for v in np.linspace(-0.1, 0.5, 20)))
    assert main(["eval", "--values", str(vals), "--seed", "1", "--out", str(out)]) == 0
    v = json.loads(out.read_text())["values"]
    assert v["bootstrap_q025"] < v["mean"] < v["bootstrap_q975"]
    assert exit_code(["eval", "--truth", "mix-t4"]) == 2


def test_mcmc_command(data1d, tmp_path):
    code, res = run(["mcmc", data1d, "--grid", 20, "--meta-iters", 40, "--burn-in", 10,
                     "--latent-steps", 5, "--chains", 2, "--seed", 0], tmp_path)
    assert code == 0
    jsonschema.validate(res, schema())
    assert set(res["meta"]["diagnostics"]) >= {"psrf", "ess"}
    assert exit_code(["mcmc", data1d, "--meta-iters", 5, "--burn-in", 10]) == 2


def test_console_script_help():
    out = subprocess.run([sys.executable, "-m", "lgpdens.cli", "--help"], capture_output=True,
                         text=True)
    assert out.returncode == 0 and "est1d" in out.stdout


def _polygon(root, id_):
    el = root.find(f".//s:*[@id='{id_}']", NS)
    pts = np.array([list(map(float, p.split(","))) for p in el.get("points").split()])
    return pts


def test_density_svg_band(data1d, tmp_path):
    svg = tmp_path / "p.svg"
    code = main(["est1d", str(data1d), "--grid", "60", "--samples", "300", "--seed", "0",
                 "--out", str(tmp_path / "o.json"), "--plot", str(svg)])
    assert code == 0
    root = ET.parse(svg).getroot()
    band = _polygon(root, "band")
    mean = _polygon(root, "mean")
    n = len(mean)
    upper, lower = band[:n, 1], band[n:, 1][::-1]
    # SVG y grows downward
    assert np.all(upper <= mean[:, 1] + 1e-6) and np.all(mean[:, 1] <= lower + 1e-6)


def test_contour_svg(data2d, tmp_path):
    svg = tmp_path / "c.svg"
    assert main(["est2d", str(data2d), "--grid", "10", "--samples", "100", "--seed", "0",
                 "--out", str(tmp_path / "o.json"), "--plot", str(svg)]) == 0
    root = ET.parse(svg).getroot()
    assert root.tag.endswith("svg") and len(list(root.iter())) > 10


def test_violin_symmetric(tmp_path):
    svg = tmp_path / "v.svg"
    render_plot({"values": np.random.default_rng(0).normal(size=40)}, "violin", svg)
    root = ET.parse(svg).getroot()
    poly = _polygon(root, "violin")
    half = len(poly) // 2
    right, left = poly[:half], poly[half:][::-1]
    cx = 150.0
    np.testing.assert_allclose(right[:, 0] - cx, cx - left[:, 0], atol=0.02)
    np.testing.assert_allclose(right[:, 1], left[:, 1])
    ys = {k: float(root.find(f".//s:line[@id='{k}']", NS).get("y1"))
          for k in ("median", "q025", "q975")}
    assert ys["q975"] < ys["median"] < ys["q025"]


def test_violin_empty_raises():
    with pytest.raises(ValueError):
        _violin_from_values([])
    x, d, med, lo, hi = _violin_from_values([2.0])
    assert lo < med < hi
