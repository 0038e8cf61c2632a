"""Binary tree of integer boxes with a registry of corner sample points.

Sample-point ids are append-only; a point keeps its id for the lifetime of
the grid so per-point data cached by callers stays valid across refinements.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .boxes import IndexBox, corners


class GridError(ValueError):
    pass


@dataclass
class CellNode:
    box: IndexBox
    parent: int | None = None
    children: tuple[int, int] | None = None
    split_axis: int | None = None

    @property
    def is_leaf(self) -> bool:
        return self.children is None


class AdaptiveGrid:
    """Adaptively refined rectilinear grid over the domain box ``domain``.

    Attributes
    ----------
    cells : list of CellNode
        All tree cells; the root has id 0.
    points : list of tuple
        Sample point coordinates indexed by id.
    cells_of_point : dict
        Point id -> set of leaf ids whose box contains the point.
    leaf_points : dict
        Leaf id -> set of point ids lying in the leaf box.
    owner : ndarray
        For every point of the domain, one leaf containing it. Used as the
        canonical cell when several leaves share a point.
    """

    def __init__(self, domain: IndexBox):
        self.domain = domain
        self.d = domain.ndim
        self.cells: list[CellNode] = [CellNode(domain)]
        self.points: list[tuple[int, ...]] = []
        self._point_id: dict[tuple[int, ...], int] = {}
        self._coords = np.zeros((16, self.d), dtype=np.int64)
        self.cells_of_point: dict[int, set[int]] = {}
        self.leaf_points: dict[int, set[int]] = {0: set()}
        self.owner = np.zeros(domain.shape, dtype=np.int64)
        self.touched: set[int] = set()
        for c in corners(domain):
            self._register(c)

    # -- queries ---------------------------------------------------------

    @property
    def num_points(self) -> int:
        return len(self.points)

    @property
    def coords(self) -> np.ndarray:
        return self._coords[: len(self.points)]

    def point_id(self, p) -> int | None:
        return self._point_id.get(tuple(int(v) for v in p))

    def leaves(self) -> list[int]:
        return [i for i, c in enumerate(self.cells) if c.is_leaf]

    def is_leaf(self, cid: int) -> bool:
        return self.cells[cid].is_leaf

    def nbrs(self, k: int) -> set[int]:
        out: set[int] = set()
        for cid in self.cells_of_point[k]:
            out |= self.leaf_points[cid]
        return out

    def blocky_neighborhood(self, k: int) -> list[IndexBox]:
        return [self.cells[c].box for c in sorted(self.cells_of_point[k])]

    def neighborhood_bbox(self, k: int) -> IndexBox:
        boxes = self.blocky_neighborhood(k)
        lo = tuple(min(b.min_pt[i] for b in boxes) for i in range(self.d))
        hi = tuple(max(b.max_pt[i] for b in boxes) for i in range(self.d))
        return IndexBox(lo, hi)

    def points_in_box(self, box: IndexBox) -> list[int]:
        c = self.coords
        m = np.all((c >= np.asarray(box.min_pt)) & (c <= np.asarray(box.max_pt)), axis=1)
        return [int(i) for i in np.flatnonzero(m)]

    def leaves_containing(self, p) -> list[int]:
        out, stack = [], [0]
        while stack:
            cid = stack.pop()
            cell = self.cells[cid]
            if not cell.box.contains(p):
                continue
            if cell.is_leaf:
                out.append(cid)
            else:
                stack.extend(cell.children)
        return sorted(out)

    def refinable_axes(self, cid: int) -> list[int]:
        return [i for i, e in enumerate(self.cells[cid].box.extent) if e > 2]

    # -- mutation --------------------------------------------------------

    def _register(self, p) -> int | None:
        """Add ``p`` to the registry; return its id if it is new."""
        p = tuple(int(v) for v in p)
        if p in self._point_id:
            return None
        k = len(self.points)
        if k == len(self._coords):
            self._coords = np.concatenate([self._coords, np.zeros_like(self._coords)])
        self._coords[k] = p
        self.points.append(p)
        self._point_id[p] = k
        leaves = self.leaves_containing(p)
        self.cells_of_point[k] = set(leaves)
        for cid in leaves:
            self.leaf_points[cid].add(k)
        return k

    def _split(self, cid: int, axis: int) -> set[int]:
        cell = self.cells[cid]
        box = cell.box
        cut = box.mid()[axis]
        lo_max = list(box.max_pt)
        lo_max[axis] = cut
        hi_min = list(box.min_pt)
        hi_min[axis] = cut
        lo = IndexBox(box.min_pt, tuple(lo_max))
        hi = IndexBox(tuple(hi_min), box.max_pt)
        c0, c1 = len(self.cells), len(self.cells) + 1
        self.cells.append(CellNode(lo, parent=cid))
        self.cells.append(CellNode(hi, parent=cid))
        cell.children = (c0, c1)
        cell.split_axis = axis

        old = self.leaf_points.pop(cid)
        self.leaf_points[c0] = {k for k in old if lo.contains(self.points[k])}
        self.leaf_points[c1] = {k for k in old if hi.contains(self.points[k])}
        for k in old:
            s = self.cells_of_point[k]
            s.discard(cid)
            if k in self.leaf_points[c0]:
                s.add(c0)
            if k in self.leaf_points[c1]:
                s.add(c1)
        self.touched |= old

        sl = box.slices(self.domain)
        view = self.owner[sl]
        mine = view == cid
        in_hi = np.zeros(box.shape, dtype=bool)
        in_hi[(slice(None),) * axis + (slice(cut - box.min_pt[axis] + 1, None),)] = True
        view[mine & ~in_hi] = c0
        view[mine & in_hi] = c1

        new: set[int] = set()
        for p in corners(lo) + corners(hi):
            k = self._register(p)
            if k is not None:
                new.add(k)
                for leaf in self.cells_of_point[k]:
                    self.touched |= self.leaf_points[leaf]
        return new

    def subdivide(self, cid: int, axis: int) -> set[int]:
        """Split leaf ``cid`` at its midpoint along ``axis``.

        Returns the ids of sample points that did not exist before. Ids of
        all points whose leaf membership or neighbour set may have changed
        accumulate in ``self.touched``.
        """
        if not 0 <= cid < len(self.cells):
            raise GridError(f"unknown cell {cid}")
        if not self.cells[cid].is_leaf:
            raise GridError(f"cell {cid} is not a leaf")
        if not 0 <= axis < self.d:
            raise GridError(f"axis {axis} out of range")
        if self.cells[cid].box.extent[axis] <= 2:
            raise GridError(f"cell {cid} has extent <= 2 on axis {axis}")
        return self._split(cid, axis)

    def pop_touched(self) -> set[int]:
        t, self.touched = self.touched, set()
        return t

    # -- export ----------------------------------------------------------

    def to_json(self) -> dict:
        return {
            "domain": {"min": list(self.domain.min_pt), "max": list(self.domain.max_pt)},
            "cells": [
                {"id": i, "box_min": list(c.box.min_pt), "box_max": list(c.box.max_pt),
                 "is_leaf": c.is_leaf,
                 "split_axis": -1 if c.split_axis is None else c.split_axis}
                for i, c in enumerate(self.cells)
            ],
            "sample_points": [{"id": k, "coords": list(p)} for k, p in enumerate(self.points)],
        }

    def dump(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1)


def make_root(domain: IndexBox) -> AdaptiveGrid:
    """Grid with the domain split once along each axis, in ascending order."""
    if any(e < 2 for e in domain.extent):
        raise GridError("every axis needs at least 3 points to split")
    grid = AdaptiveGrid(domain)
    frontier = [0]
    for axis in range(grid.d):
        nxt = []
        for cid in frontier:
            grid._split(cid, axis)
            nxt.extend(grid.cells[cid].children)
        frontier = nxt
    grid.pop_touched()
    return grid
