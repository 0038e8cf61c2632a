"""Impulse responses and their extension past the domain boundary.

``phi_k[z] = (A delta_{p_k})[z + p_k]`` lives on ``Omega - p_k``. The
extended function ``phi_k^E`` fills the rest of ``Omega - U_k`` with the
average of neighbouring impulse responses, so that convolving with it never
reads a zero that stands in for missing data.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import IndexBox, bounding_box, box_mask
from .gridfunction import GridFunction


def compute_impulse(op, grid, k: int) -> GridFunction:
    """One application of ``op`` to the delta at ``p_k``, recentred at 0."""
    dom = grid.domain
    p = grid.points[k]
    delta = np.zeros(dom.shape)
    delta[tuple(np.subtract(p, dom.min_pt))] = 1.0
    resp = op.apply(delta)
    return GridFunction((dom - p).min_pt, resp)


@dataclass
class ExtensionWeights:
    """Counting function ``c_k`` and neighbour weights ``v_k^(j)``.

    All arrays live on ``box``, the bounding box of the union of
    ``Omega - p_j`` over the neighbours ``j``.
    """

    k: int
    box: IndexBox
    counting: np.ndarray
    masks: dict[int, np.ndarray]

    @property
    def v(self) -> np.ndarray:
        out = np.zeros(self.counting.shape)
        pos = self.counting > 0
        out[pos] = 1.0 / self.counting[pos]
        return out

    def weight(self, j: int) -> GridFunction:
        """``v_k^(j)`` as a function on ``box``."""
        return GridFunction(self.box.min_pt, self.v * self.masks[j])


def build_extension_weights(grid, k: int, nbrs=None) -> ExtensionWeights:
    dom = grid.domain
    if nbrs is None:
        nbrs = grid.nbrs(k)
    nbrs = sorted(nbrs)
    own = dom - grid.points[k]
    box = bounding_box(dom - grid.points[j] for j in nbrs)
    self_mask = box_mask(own, box)
    counting = self_mask.astype(float)
    masks = {k: self_mask}
    for j in nbrs:
        if j == k:
            continue
        m = box_mask(dom - grid.points[j], box) & ~self_mask
        masks[j] = m
        counting += m
    return ExtensionWeights(k, box, counting, masks)


def extend_impulse(weights: ExtensionWeights, impulses) -> GridFunction:
    """``phi_k^E = sum_j v_k^(j) phi_j``.

    On ``Omega - p_k`` the result is a copy of ``phi_k``; points outside every
    neighbour support stay zero.
    """
    k, box = weights.k, weights.box
    try:
        own = impulses[k]
    except KeyError:
        raise KeyError(f"missing impulse response for point {k}") from None
    dtype = np.result_type(*(impulses[j].values.dtype for j in weights.masks), float)
    acc = np.zeros(box.shape, dtype=dtype)
    cnt = np.zeros(box.shape)
    for j in sorted(weights.masks):
        if j == k:
            continue
        if j not in impulses:
            raise KeyError(f"missing impulse response for neighbour {j}")
        m = weights.masks[j]
        phi = impulses[j]
        sl = phi.box.slices(box)
        acc[sl] += np.where(m[sl], phi.values, 0)
        cnt += m
    gap = cnt > 0
    acc[gap] /= cnt[gap]
    acc[own.box.slices(box)] = own.values
    return GridFunction(box.min_pt, acc)


def zero_extension(impulse: GridFunction) -> GridFunction:
    """The naive alternative: ``phi_k`` extended by zero."""
    return impulse.copy()
