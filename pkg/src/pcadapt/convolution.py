"""Zero-padded FFT linear convolution of functions on integer boxes."""
from __future__ import annotations

import numpy as np

from .boxes import IndexBox
from .gridfunction import GridFunction


def next_pow2(n: int) -> int:
    return 1 << max(int(n) - 1, 0).bit_length()


def padded_shape(shape_a, shape_b) -> tuple[int, ...]:
    return tuple(next_pow2(a + b - 1) for a, b in zip(shape_a, shape_b))


def convolve_arrays(a: np.ndarray, b: np.ndarray, d: int | None = None) -> np.ndarray:
    """Full linear convolution over the trailing ``d`` axes.

    Leading axes of either input are treated as batch axes and broadcast.
    The output has trailing shape ``a.shape + b.shape - 1``.
    """
    if d is None:
        d = min(a.ndim, b.ndim)
    sa, sb = a.shape[a.ndim - d:], b.shape[b.ndim - d:]
    if 0 in sa or 0 in sb:
        raise ValueError("cannot convolve an empty array")
    full = tuple(x + y - 1 for x, y in zip(sa, sb))
    pad = padded_shape(sa, sb)
    axes = tuple(range(-d, 0))
    fa = np.fft.fftn(a, s=pad, axes=axes)
    fb = np.fft.fftn(b, s=pad, axes=axes)
    out = np.fft.ifftn(fa * fb, axes=axes)
    out = out[(Ellipsis,) + tuple(slice(0, n) for n in full)]
    if not (np.iscomplexobj(a) or np.iscomplexobj(b)):
        out = out.real
    return np.ascontiguousarray(out)


def fft_convolve(psi: GridFunction, f: GridFunction) -> GridFunction:
    """``(psi * f)[y] = sum_x f[x] psi[y - x]`` on the full output box."""
    vals = convolve_arrays(psi.values, f.values, psi.ndim)
    return GridFunction(tuple(a + b for a, b in zip(psi.offset, f.offset)), vals)


def direct_convolve(psi: GridFunction, f: GridFunction) -> GridFunction:
    """Double-sum reference convolution, for testing only."""
    box = psi.box + f.box
    dtype = np.result_type(psi.values, f.values)
    out = np.zeros(box.shape, dtype=dtype)
    for x in f.box.iter_points():
        fx = f(x)
        if fx == 0:
            continue
        for z in psi.box.iter_points():
            y = tuple(a + b - c for a, b, c in zip(z, x, box.min_pt))
            out[y] += fx * psi(z)
    return GridFunction(box.min_pt, out)


class SpectrumCache:
    """FFTs of a fixed batch of arrays, keyed by padded shape.

    ``data`` has shape ``(q,) + box.shape``; spectra are computed lazily
    the first time a given transform size is requested.
    """

    def __init__(self, data: np.ndarray, box: IndexBox):
        self.data = data
        self.box = box
        self._cache: dict[tuple[int, ...], np.ndarray] = {}

    def spectrum(self, pad: tuple[int, ...]) -> np.ndarray:
        hit = self._cache.get(pad)
        if hit is None:
            d = self.box.ndim
            hit = np.fft.fftn(self.data, s=pad, axes=tuple(range(-d, 0)))
            self._cache[pad] = hit
        return hit

    def convolve(self, psi: GridFunction, out_box: IndexBox) -> np.ndarray:
        """``psi * data[i]`` for every batch member, restricted to ``out_box``."""
        d = self.box.ndim
        pad = padded_shape(psi.values.shape, self.box.shape)
        fp = np.fft.fftn(psi.values, s=pad, axes=tuple(range(d)))
        full = np.fft.ifftn(fp[None] * self.spectrum(pad), axes=tuple(range(-d, 0)))
        full_box = psi.box + self.box
        sub = out_box.intersect(full_box)
        out = np.zeros((self.data.shape[0],) + out_box.shape, dtype=full.dtype)
        if sub is not None:
            out[(slice(None),) + sub.slices(out_box)] = full[(slice(None),) + sub.slices(full_box)]
        if not (np.iscomplexobj(psi.values) or np.iscomplexobj(self.data)):
            out = out.real
        return out
