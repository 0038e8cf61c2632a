"""Integer boxes in Z^d and Minkowski arithmetic on them.

Boxes carry inclusive bounds. Arrays living on a box are stored in C order
(last axis fastest), so ``box.shape`` is the array shape.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np


def _as_point(p) -> tuple[int, ...]:
    return tuple(int(v) for v in p)


@dataclass(frozen=True)
class IndexBox:
    """Cartesian product of integer intervals ``[min_pt[i], max_pt[i]]``."""

    min_pt: tuple[int, ...]
    max_pt: tuple[int, ...]

    def __post_init__(self):
        lo, hi = _as_point(self.min_pt), _as_point(self.max_pt)
        if len(lo) != len(hi):
            raise ValueError("min_pt and max_pt differ in dimension")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError(f"empty box: min {lo} exceeds max {hi}")
        object.__setattr__(self, "min_pt", lo)
        object.__setattr__(self, "max_pt", hi)

    @classmethod
    def from_shape(cls, shape: Sequence[int], offset: Sequence[int] | None = None) -> "IndexBox":
        if offset is None:
            offset = (0,) * len(shape)
        return cls(tuple(offset), tuple(o + s - 1 for o, s in zip(offset, shape)))

    @property
    def ndim(self) -> int:
        return len(self.min_pt)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(b - a + 1 for a, b in zip(self.min_pt, self.max_pt))

    @property
    def extent(self) -> tuple[int, ...]:
        """Per-axis ``max - min``."""
        return tuple(b - a for a, b in zip(self.min_pt, self.max_pt))

    @property
    def size(self) -> int:
        return int(np.prod(self.shape))

    @property
    def linear_dimension(self) -> int:
        return sum(self.extent)

    def mid(self) -> tuple[int, ...]:
        # nearest integer to the real midpoint, halves rounded up
        return tuple((a + b + 1) // 2 for a, b in zip(self.min_pt, self.max_pt))

    def corners(self) -> list[tuple[int, ...]]:
        return corners(self)

    def contains(self, p) -> bool:
        return all(a <= v <= b for a, v, b in zip(self.min_pt, p, self.max_pt))

    def contains_box(self, other: "IndexBox") -> bool:
        return all(a <= c and d <= b for a, b, c, d in
                   zip(self.min_pt, self.max_pt, other.min_pt, other.max_pt))

    def intersect(self, other: "IndexBox") -> "IndexBox | None":
        lo = tuple(max(a, b) for a, b in zip(self.min_pt, other.min_pt))
        hi = tuple(min(a, b) for a, b in zip(self.max_pt, other.max_pt))
        if any(a > b for a, b in zip(lo, hi)):
            return None
        return IndexBox(lo, hi)

    def shift(self, p) -> "IndexBox":
        return IndexBox(tuple(a + v for a, v in zip(self.min_pt, p)),
                        tuple(b + v for b, v in zip(self.max_pt, p)))

    def __add__(self, other):
        if isinstance(other, IndexBox):
            return minkowski_sum(self, other)
        return self.shift(other)

    def __sub__(self, other):
        if isinstance(other, IndexBox):
            return minkowski_sum(self, -other)
        return self.shift(tuple(-v for v in other))

    def __neg__(self) -> "IndexBox":
        return IndexBox(tuple(-b for b in self.max_pt), tuple(-a for a in self.min_pt))

    def slices(self, within: "IndexBox") -> tuple[slice, ...]:
        """Slices selecting this box out of an array stored on ``within``."""
        if not within.contains_box(self):
            raise ValueError(f"{self} is not inside {within}")
        return tuple(slice(a - w, b - w + 1)
                     for a, b, w in zip(self.min_pt, self.max_pt, within.min_pt))

    def points(self) -> np.ndarray:
        """All points, shape ``(size, d)``, in storage order."""
        axes = [np.arange(a, b + 1) for a, b in zip(self.min_pt, self.max_pt)]
        grids = np.meshgrid(*axes, indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def iter_points(self) -> Iterator[tuple[int, ...]]:
        return itertools.product(*(range(a, b + 1) for a, b in zip(self.min_pt, self.max_pt)))

    def __repr__(self) -> str:
        return f"IndexBox({list(self.min_pt)}, {list(self.max_pt)})"


def minkowski_sum(a: IndexBox, b: IndexBox) -> IndexBox:
    return IndexBox(tuple(x + y for x, y in zip(a.min_pt, b.min_pt)),
                    tuple(x + y for x, y in zip(a.max_pt, b.max_pt)))


def corners(box: IndexBox) -> list[tuple[int, ...]]:
    """The 2^d corner lattice (duplicates removed on degenerate axes)."""
    axes = [sorted({a, b}) for a, b in zip(box.min_pt, box.max_pt)]
    return [tuple(c) for c in itertools.product(*axes)]


def bounding_box(boxes) -> IndexBox:
    boxes = list(boxes)
    lo = tuple(min(b.min_pt[i] for b in boxes) for i in range(boxes[0].ndim))
    hi = tuple(max(b.max_pt[i] for b in boxes) for i in range(boxes[0].ndim))
    return IndexBox(lo, hi)


def box_mask(inner: IndexBox, within: IndexBox) -> np.ndarray:
    """Boolean indicator of ``inner`` on an array stored on ``within``."""
    mask = np.zeros(within.shape, dtype=bool)
    clipped = inner.intersect(within)
    if clipped is not None:
        mask[clipped.slices(within)] = True
    return mask
