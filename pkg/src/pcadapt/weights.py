"""Harmonic partition-of-unity weights on blocky neighbourhoods.

Each leaf cell is decomposed into a rectilinear complex: its facets, split
along hyperplanes through sample points in their relative interior, then the
facets of those pieces, and so on down to vertices. Values are assigned at
sample points (1 at the owning point, 0 elsewhere), interpolated linearly
along 1-D pieces and extended harmonically into each higher-dimensional
piece with the unweighted graph Laplacian.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .boxes import IndexBox
from .grid import AdaptiveGrid
from .gridfunction import GridFunction

MAX_DIM = 3


class HarmonicSolveError(RuntimeError):
    pass


@dataclass
class WeightFunction:
    k: int
    footprint: IndexBox
    values: np.ndarray

    @property
    def gridfunction(self) -> GridFunction:
        return GridFunction(self.footprint.min_pt, self.values)


# -- skeleton ---------------------------------------------------------------

def _faces(box: IndexBox, m: int) -> list[IndexBox]:
    """All m-dimensional faces of ``box`` (degenerate axes stay fixed)."""
    free = [i for i, e in enumerate(box.extent) if e > 0]
    out = []
    for keep in itertools.combinations(free, m):
        fixed = [i for i in free if i not in keep]
        for sides in itertools.product((0, 1), repeat=len(fixed)):
            lo, hi = list(box.min_pt), list(box.max_pt)
            for i, s in zip(fixed, sides):
                v = box.max_pt[i] if s else box.min_pt[i]
                lo[i] = hi[i] = v
            out.append(IndexBox(tuple(lo), tuple(hi)))
    return out


def _split_by_points(face: IndexBox, pts: np.ndarray) -> list[IndexBox]:
    """Tensor-split ``face`` along hyperplanes through points in its relative interior."""
    free = [i for i, e in enumerate(face.extent) if e > 0]
    if len(pts):
        inside = np.ones(len(pts), dtype=bool)
        for i in range(face.ndim):
            if i in free:
                inside &= (pts[:, i] > face.min_pt[i]) & (pts[:, i] < face.max_pt[i])
            else:
                inside &= pts[:, i] == face.min_pt[i]
        interior = pts[inside]
    else:
        interior = pts
    cuts = []
    for i in range(face.ndim):
        if i in free:
            c = {face.min_pt[i], face.max_pt[i]} | {int(v) for v in interior[:, i]}
            cuts.append(sorted(c))
        else:
            cuts.append([face.min_pt[i]])
    pieces = []
    for idx in itertools.product(*(range(max(len(c) - 1, 1)) for c in cuts)):
        lo = [cuts[i][j] for i, j in enumerate(idx)]
        hi = [cuts[i][j + 1] if len(cuts[i]) > 1 else cuts[i][0] for i, j in enumerate(idx)]
        pieces.append(IndexBox(tuple(lo), tuple(hi)))
    return pieces


def cell_skeleton(box: IndexBox, pts: np.ndarray) -> dict[int, list[IndexBox]]:
    """Rectilinear complex of a leaf box given the sample points lying in it.

    Returns a map dimension -> list of boxes of that dimension, top-down: the
    cell itself, the split facets, the split facets of those, and so on.
    """
    d = sum(1 for e in box.extent if e > 0)
    pts = np.asarray(pts, dtype=np.int64).reshape(-1, box.ndim)
    levels: dict[int, list[IndexBox]] = {d: [box]}
    for m in range(d - 1, -1, -1):
        seen: dict[IndexBox, None] = {}
        for parent in levels[m + 1]:
            for face in _faces(parent, m):
                for piece in _split_by_points(face, pts):
                    seen.setdefault(piece, None)
        levels[m] = list(seen)
    return levels


def facet_skeleton(grid: AdaptiveGrid, k: int) -> dict[int, dict[int, list[IndexBox]]]:
    """Skeleton of every leaf cell in the blocky neighbourhood of point ``k``."""
    out = {}
    for cid in sorted(grid.cells_of_point[k]):
        box = grid.cells[cid].box
        pts = grid.coords[sorted(grid.leaf_points[cid])]
        out[cid] = cell_skeleton(box, pts)
    return out


# -- Laplace solves -----------------------------------------------------------

@lru_cache(maxsize=256)
def _interior_factor(shape: tuple[int, ...]):
    """Factorised Dirichlet graph Laplacian on the interior of a box of ``shape``."""
    inner = [s - 2 for s in shape]
    mats = []
    for n in inner:
        mats.append(sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)],
                             [-1, 0, 1], format="csc"))
    L = mats[0]
    for M in mats[1:]:
        L = sp.kron(L, sp.identity(M.shape[0], format="csc")) + \
            sp.kron(sp.identity(L.shape[0], format="csc"), M)
    L = sp.csc_matrix(L)
    return L, spla.splu(L)


def _boundary_rhs(values: np.ndarray) -> np.ndarray:
    """Sum of boundary neighbours of each interior node; last axis is a batch axis."""
    m = values.ndim - 1
    bdry = values.copy()
    inner = tuple(slice(1, -1) for _ in range(m))
    bdry[inner] = 0.0
    rhs = np.zeros(tuple(s - 2 for s in values.shape[:m]) + values.shape[m:])
    for ax in range(m):
        for lo in (0, 2):
            sl = list(inner)
            sl[ax] = slice(lo, lo + values.shape[ax] - 2)
            rhs += bdry[tuple(sl)]
    return rhs


def harmonic_solve(values: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Fill the interior of ``values`` with the discrete harmonic extension of its boundary.

    Interior entries of ``values`` are ignored. Axes of length 1 are
    squeezed, so lower-dimensional pieces embedded in a higher-dimensional
    array work directly. 1-D problems reduce to linear interpolation. A box
    without interior points is returned unchanged.
    """
    values = np.asarray(values, dtype=float)
    return _harmonic_fill(values[..., None], tol)[..., 0]


def _harmonic_fill(values: np.ndarray, tol: float) -> np.ndarray:
    """Batched harmonic fill; the last axis of ``values`` indexes right-hand sides."""
    space = values.shape[:-1]
    free = [i for i, s in enumerate(space) if s > 1]
    if not free:
        return values
    work = values.reshape(tuple(space[i] for i in free) + values.shape[-1:])
    shape = work.shape[:-1]
    if any(s <= 2 for s in shape):
        return values
    out = work.copy()
    if len(shape) == 1:
        t = np.linspace(0.0, 1.0, shape[0])[:, None]
        out[1:-1] = ((1 - t) * work[:1] + t * work[-1:])[1:-1]
    else:
        L, lu = _interior_factor(shape)
        rhs = _boundary_rhs(work).reshape(-1, work.shape[-1])
        sol = lu.solve(rhs)
        res = np.linalg.norm(L @ sol - rhs)
        scale = np.linalg.norm(rhs)
        if res > tol * scale and res > 1e-13:
            raise HarmonicSolveError(f"relative residual {res / scale:.2e} exceeds {tol:.1e}")
        out[tuple(slice(1, -1) for _ in shape)] = sol.reshape(
            tuple(s - 2 for s in shape) + work.shape[-1:])
    return out.reshape(values.shape)


def _interp_line(vals: np.ndarray, known: np.ndarray) -> None:
    """Piecewise-linear fill of unknown entries along a 1-D line, in place.

    ``vals`` has shape ``(n, nb)``; ``known`` marks the knots.
    """
    n = len(known)
    knots = np.flatnonzero(known)
    if len(knots) == n:
        return
    if knots[0] != 0 or knots[-1] != n - 1:
        raise HarmonicSolveError("line endpoints carry no value")
    x = np.arange(n)
    right = np.searchsorted(knots, x, side="left")
    right = np.clip(right, 1, len(knots) - 1)
    left = right - 1
    a, b = knots[left], knots[right]
    t = ((x - a) / (b - a))[:, None]
    fill = (1 - t) * vals[a] + t * vals[b]
    vals[~known] = fill[~known]


# -- per-leaf basis -----------------------------------------------------------

def leaf_basis(box: IndexBox, pts: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Harmonic pieces on one leaf for every sample point lying in it.

    Returns an array of shape ``box.shape + (len(pts),)``; slice ``[..., j]``
    is the piece belonging to ``pts[j]``.
    """
    d = box.ndim
    if d > MAX_DIM:
        raise NotImplementedError(f"weights implemented for d <= {MAX_DIM}")
    pts = np.asarray(pts, dtype=np.int64).reshape(-1, d)
    nb = len(pts)
    vals = np.zeros(box.shape + (nb,))
    known = np.zeros(box.shape, dtype=bool)
    local = pts - np.asarray(box.min_pt)
    for j, p in enumerate(local):
        vals[tuple(p)][j] = 1.0
        known[tuple(p)] = True

    levels = cell_skeleton(box, pts)
    top = max(levels)
    if top == 0:
        return vals

    # 1-D pieces: group by supporting line, lines on cell edges first
    lines: dict[tuple, tuple[int, IndexBox]] = {}
    for piece in levels.get(1, []):
        ax = next(i for i, e in enumerate(piece.extent) if e > 0)
        key = (ax,) + tuple(v for i, v in enumerate(piece.min_pt) if i != ax)
        on_edge = all(piece.min_pt[i] in (box.min_pt[i], box.max_pt[i])
                      for i in range(d) if i != ax)
        lo, hi = piece.min_pt[ax], piece.max_pt[ax]
        if key in lines:
            _, old = lines[key]
            lo, hi = min(lo, old.min_pt[ax]), max(hi, old.max_pt[ax])
        pmin, pmax = list(piece.min_pt), list(piece.max_pt)
        pmin[ax], pmax[ax] = lo, hi
        lines[key] = (0 if on_edge else 1, IndexBox(tuple(pmin), tuple(pmax)))
    for _, line in sorted(lines.values(), key=lambda t: (t[0], t[1].min_pt, t[1].max_pt)):
        sl = line.slices(box)
        ax = next(i for i, e in enumerate(line.extent) if e > 0)
        seg = vals[sl]
        kn = known[sl]
        seg_flat = np.moveaxis(seg, ax, 0).reshape(line.shape[ax], nb)
        kn_flat = np.moveaxis(kn, ax, 0).reshape(line.shape[ax])
        _interp_line(seg_flat, kn_flat)
        seg[...] = np.moveaxis(seg_flat.reshape(np.moveaxis(seg, ax, 0).shape), 0, ax)
        known[sl] = True

    for m in range(2, top + 1):
        for piece in levels[m]:
            sl = piece.slices(box)
            vals[sl] = _harmonic_fill(vals[sl], tol)
            known[sl] = True
    return vals


class WeightBuilder:
    """Builds and caches harmonic weights for the current state of a grid."""

    def __init__(self, grid: AdaptiveGrid, tol: float = 1e-12):
        self.grid = grid
        self.tol = tol
        self._cache: dict[int, tuple[tuple[int, ...], np.ndarray]] = {}

    def basis(self, cid: int) -> tuple[tuple[int, ...], np.ndarray]:
        ids = tuple(sorted(self.grid.leaf_points[cid]))
        hit = self._cache.get(cid)
        if hit is not None and hit[0] == ids:
            return hit
        box = self.grid.cells[cid].box
        vals = leaf_basis(box, self.grid.coords[list(ids)], self.tol)
        self._cache[cid] = (ids, vals)
        return self._cache[cid]

    def build(self, k: int) -> WeightFunction:
        grid = self.grid
        foot = grid.neighborhood_bbox(k)
        out = np.zeros(foot.shape)
        owner = grid.owner[foot.slices(grid.domain)]
        for cid in sorted(grid.cells_of_point[k]):
            ids, vals = self.basis(cid)
            box = grid.cells[cid].box
            sl = box.slices(foot)
            piece = vals[..., ids.index(k)]
            mine = owner[sl] == cid
            out[sl][mine] = piece[mine]
        return WeightFunction(k, foot, out)


def build_weight(grid: AdaptiveGrid, k: int, tol: float = 1e-12) -> WeightFunction:
    return WeightBuilder(grid, tol).build(k)
