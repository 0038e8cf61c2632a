"""Non-adaptive comparator: equispaced sample points, multilinear hat
weights, impulse responses extended by zero."""
from __future__ import annotations

import itertools

import numpy as np

from .boxes import IndexBox
from .gridfunction import GridFunction
from .impulse import zero_extension
from .operator import ProductConvolutionOperator


def regular_coordinates(lo: int, hi: int, m: int) -> np.ndarray:
    """``m`` distinct, nearly equispaced integers from ``lo`` to ``hi``."""
    if m < 2:
        raise ValueError("need at least two samples per axis")
    c = np.unique(np.round(np.linspace(lo, hi, m)).astype(np.int64))
    if len(c) != m:
        raise ValueError(f"cannot place {m} distinct samples in [{lo}, {hi}]")
    return c


def _hat(coords: np.ndarray, i: int, lo: int, hi: int) -> tuple[int, np.ndarray]:
    """1-D piecewise-linear hat at ``coords[i]``; returns (start, values)."""
    a = coords[i - 1] if i > 0 else coords[i]
    b = coords[i + 1] if i + 1 < len(coords) else coords[i]
    x = np.arange(a, b + 1)
    c = coords[i]
    v = np.ones(len(x))
    left, right = x < c, x > c
    v[left] = (x[left] - a) / (c - a)
    v[right] = (b - x[right]) / (b - c)
    return int(a), v


def regular_grid_operator(op, m) -> ProductConvolutionOperator:
    """Product-convolution approximation on an ``m``-per-axis tensor grid."""
    dom: IndexBox = op.domain
    d = dom.ndim
    ms = (m,) * d if np.isscalar(m) else tuple(m)
    axes = [regular_coordinates(a, b, mi) for a, b, mi in zip(dom.min_pt, dom.max_pt, ms)]
    weights, kernels = {}, {}
    for k, idx in enumerate(itertools.product(*(range(len(c)) for c in axes))):
        p = tuple(int(axes[i][j]) for i, j in enumerate(idx))
        pieces = [_hat(axes[i], j, dom.min_pt[i], dom.max_pt[i]) for i, j in enumerate(idx)]
        vals = pieces[0][1]
        for _, v in pieces[1:]:
            vals = np.multiply.outer(vals, v)
        weights[k] = GridFunction(tuple(s for s, _ in pieces), vals)
        delta = np.zeros(dom.shape)
        delta[tuple(np.subtract(p, dom.min_pt))] = 1.0
        phi = GridFunction((dom - p).min_pt, op.apply(delta))
        kernels[k] = zero_extension(phi)
    return ProductConvolutionOperator(dom, weights, kernels)
