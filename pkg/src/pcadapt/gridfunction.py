"""Scalar fields stored densely on a box, zero outside it."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boxes import IndexBox


@dataclass
class GridFunction:
    """Dense array ``values`` whose element ``[0, ..., 0]`` sits at ``offset``.

    Evaluation outside the stored box returns zero.
    """

    offset: tuple[int, ...]
    values: np.ndarray

    def __post_init__(self):
        self.offset = tuple(int(v) for v in self.offset)
        self.values = np.asarray(self.values)
        if self.values.ndim != len(self.offset):
            raise ValueError("offset length must match array dimension")

    @classmethod
    def zeros(cls, box: IndexBox, dtype=float) -> "GridFunction":
        return cls(box.min_pt, np.zeros(box.shape, dtype=dtype))

    @classmethod
    def on_box(cls, box: IndexBox, values) -> "GridFunction":
        values = np.asarray(values)
        if values.shape != box.shape:
            raise ValueError(f"array shape {values.shape} does not match box {box}")
        return cls(box.min_pt, values)

    @property
    def box(self) -> IndexBox:
        return IndexBox.from_shape(self.values.shape, self.offset)

    @property
    def ndim(self) -> int:
        return len(self.offset)

    def __call__(self, p) -> complex | float:
        idx = tuple(int(v) - o for v, o in zip(p, self.offset))
        if any(i < 0 or i >= s for i, s in zip(idx, self.values.shape)):
            return self.values.dtype.type(0)
        return self.values[idx]

    def evaluate(self, pts: np.ndarray) -> np.ndarray:
        """Vectorised evaluation at integer points ``pts`` of shape ``(m, d)``."""
        pts = np.asarray(pts, dtype=np.int64)
        idx = pts - np.asarray(self.offset)
        ok = np.all((idx >= 0) & (idx < np.asarray(self.values.shape)), axis=1)
        out = np.zeros(len(pts), dtype=self.values.dtype)
        if ok.any():
            out[ok] = self.values[tuple(idx[ok].T)]
        return out

    def restrict(self, box: IndexBox) -> np.ndarray:
        """Values on ``box`` as a dense array, zero-filled outside storage."""
        out = np.zeros(box.shape, dtype=self.values.dtype)
        common = box.intersect(self.box)
        if common is not None:
            out[common.slices(box)] = self.values[common.slices(self.box)]
        return out

    def flip_conj(self) -> "GridFunction":
        """``z -> conj(psi[-z])``."""
        vals = np.conj(self.values[(slice(None, None, -1),) * self.ndim])
        return GridFunction(tuple(-b for b in self.box.max_pt), vals)

    def copy(self) -> "GridFunction":
        return GridFunction(self.offset, self.values.copy())
