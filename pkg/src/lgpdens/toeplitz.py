"""Symmetric Toeplitz products through circulant embedding and the FFT."""

from __future__ import annotations

import numpy as np
import scipy.fft


class ToeplitzOperator:
    """Symmetric Toeplitz matrix stored by its first row.

    The row is embedded in a circulant of length at least ``2m - 1`` (rounded
    up to a fast transform size); products cost ``O(m log m)``.
    """

    def __init__(self, first_row):
        row = np.asarray(first_row, dtype=float)
        if row.ndim != 1 or row.size == 0:
            raise ValueError("first row must be a non-empty vector")
        m = row.size
        self.m = m
        self.first_row = row
        size = scipy.fft.next_fast_len(max(2 * m - 1, 1), real=True)
        circ = np.zeros(size)
        circ[:m] = row
        if m > 1:
            circ[size - m + 1:] = row[1:][::-1]
        self.size = size
        self.spectrum = scipy.fft.rfft(circ)

    def matvec(self, v):
        v = np.asarray(v, dtype=float)
        if v.shape[0] != self.m:
            raise ValueError(f"vector length {v.shape[0]} != Toeplitz size {self.m}")
        spec = self.spectrum if v.ndim == 1 else self.spectrum[:, None]
        prod = scipy.fft.irfft(spec * scipy.fft.rfft(v, n=self.size, axis=0), n=self.size, axis=0)
        return prod[: self.m]

    __matmul__ = matvec

    def dense(self) -> np.ndarray:
        idx = np.arange(self.m)
        return self.first_row[np.abs(idx[:, None] - idx[None, :])]


def toeplitz_matvec_fft(first_row, v) -> np.ndarray:
    first_row = np.asarray(first_row, dtype=float)
    v = np.asarray(v, dtype=float)
    if first_row.ndim != 1 or first_row.size != v.shape[0]:
        raise ValueError("first row length must match the vector length")
    return ToeplitzOperator(first_row).matvec(v)
