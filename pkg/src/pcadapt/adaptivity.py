"""Adaptive construction of the product-convolution approximation.

The loop refines the leaf with the largest randomized error estimate,
choosing the split axis along which the averaged impulse response changes
most. Operator applications are budgeted: one application of ``A`` per
sample point and ``q`` applications of ``A^*`` for the probes, in total.
"""
from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .boxes import IndexBox
from .convolution import SpectrumCache, padded_shape
from .grid import AdaptiveGrid, make_root
from .gridfunction import GridFunction
from .impulse import build_extension_weights, compute_impulse, extend_impulse
from .operator import ProductConvolutionOperator
from .weights import WeightBuilder


class StaleCacheError(RuntimeError):
    pass


@dataclass
class ProbeSet:
    seed: int
    q: int
    Z: np.ndarray
    Y: np.ndarray


def make_probes(op, q: int, seed: int) -> ProbeSet:
    """Standard normal probes ``Z`` and their adjoint images ``Y = A^* Z``."""
    if q < 1:
        raise ValueError("q must be at least 1")
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((q,) + op.domain.shape)
    Y = np.stack([op.apply_adjoint(z) for z in Z])
    return ProbeSet(seed, q, Z, Y)


@dataclass
class EstimatorState:
    """Cached ``Theta_k = flip(conj(phi_k^E)) * Z`` and the assembled ``Atilde^* Z``.

    ``theta[k]`` holds ``(box, array)`` with the array of shape
    ``(q,) + box.shape``; ``box`` covers the support of ``w_k`` at the time
    it was computed.
    """

    domain: IndexBox
    spectra: SpectrumCache
    theta: dict = field(default_factory=dict)
    Ytilde: np.ndarray | None = None
    cell_errors: dict = field(default_factory=dict)
    eta_abs: float = math.inf
    eta_rel: float = math.inf
    n_theta: int = 0


def new_state(probes: ProbeSet, domain: IndexBox) -> EstimatorState:
    return EstimatorState(domain, SpectrumCache(probes.Z, domain))


def correlate_probes(state: EstimatorState, kernel: GridFunction, out_box: IndexBox) -> np.ndarray:
    """``flip(conj(kernel)) * Z`` restricted to ``out_box``, for every probe."""
    Z = state.spectra.data
    q, N = Z.shape[0], state.domain.size
    pad = padded_shape(kernel.values.shape, state.domain.shape)
    fft_cost = 5.0 * (q + 1) * np.prod(pad) * math.log2(max(np.prod(pad), 2))
    if out_box.size * N * q <= fft_cost:
        # direct sums over the (small) output box
        dom = state.domain
        R = np.conj(kernel.restrict(dom - out_box))
        Zf = Z.reshape(q, -1)
        out = np.empty((q,) + out_box.shape, dtype=np.result_type(R, Z))
        for y in out_box.iter_points():
            start = tuple(b - v for b, v in zip(out_box.max_pt, y))
            sl = tuple(slice(s, s + n) for s, n in zip(start, dom.shape))
            idx = tuple(v - b for v, b in zip(y, out_box.min_pt))
            out[(slice(None),) + idx] = Zf @ R[sl].ravel()
        return out
    return state.spectra.convolve(kernel.flip_conj(), out_box)


def update_samples(state: EstimatorState, weights: dict, kernels: dict, changed_ks,
                   probes: ProbeSet, grid: AdaptiveGrid) -> EstimatorState:
    """Recompute ``Theta_k`` for ``changed_ks`` and reassemble the estimate."""
    for k in sorted(changed_ks):
        box = weights[k].box
        state.theta[k] = (box, correlate_probes(state, kernels[k], box))
        state.n_theta += 1
    dom = state.domain
    Yt = None
    for k in sorted(weights):
        if k not in state.theta:
            raise StaleCacheError(f"no cached convolution for point {k}")
        tbox, th = state.theta[k]
        w = weights[k]
        if not tbox.contains_box(w.box):
            raise StaleCacheError(f"cached convolution for point {k} does not cover its weight")
        if Yt is None:
            Yt = np.zeros((probes.q,) + dom.shape, dtype=np.result_type(th, w.values))
        Yt[(slice(None),) + w.box.slices(dom)] += np.conj(w.values) * th[(slice(None),) + w.box.slices(tbox)]
    state.Ytilde = Yt
    eta_for_cells(state, probes, grid)
    return state


def eta_for_cells(state: EstimatorState, probes: ProbeSet, grid: AdaptiveGrid, leaves=None):
    """Per-leaf errors ``eta_C`` and the overall absolute and relative errors."""
    if leaves is None:
        leaves = grid.leaves()
    q = probes.q
    R = state.Ytilde - probes.Y
    dom = grid.domain
    errs = {}
    for cid in leaves:
        box = grid.cells[cid].box
        errs[cid] = float(np.linalg.norm(R[(slice(None),) + box.slices(dom)]) / math.sqrt(q))
    state.cell_errors = errs
    state.eta_abs = float(np.linalg.norm(R) / math.sqrt(q))
    ynorm = float(np.linalg.norm(probes.Y) / math.sqrt(q))
    state.eta_rel = state.eta_abs / ynorm if ynorm > 0 else (0.0 if state.eta_abs == 0 else math.inf)
    return errs, state.eta_abs


def axis_scores(grid: AdaptiveGrid, cid: int, kernels: dict) -> tuple[dict[int, float], float]:
    """Per-axis change of the facet-averaged impulse responses, and their scale."""
    box = grid.cells[cid].box
    window = grid.domain - box.mid()
    cache = {}

    def restricted(p):
        k = grid.point_id(p)
        if k not in cache:
            cache[k] = kernels[k].restrict(window)
        return cache[k]

    scores = {}
    pts = box.corners()
    for axis in grid.refinable_axes(cid):
        front = [p for p in pts if p[axis] == box.max_pt[axis]]
        back = [p for p in pts if p[axis] == box.min_pt[axis]]
        plus = sum(restricted(p) for p in front) / len(front)
        minus = sum(restricted(p) for p in back) / len(back)
        scores[axis] = float(np.linalg.norm(plus - minus))
    scale = max((float(np.linalg.norm(v)) for v in cache.values()), default=0.0)
    return scores, scale


def choose_axis(grid: AdaptiveGrid, cid: int, kernels: dict, rtol: float = 1e-12) -> int:
    """Refinable axis with the largest change in averaged impulse response."""
    scores, scale = axis_scores(grid, cid, kernels)
    if not scores:
        raise ValueError(f"cell {cid} has no refinable axis")
    best = max(scores.values())
    slack = rtol * max(best, scale)
    return min(a for a, s in scores.items() if s >= best - slack)


@dataclass
class BuildReport:
    rows: list = field(default_factory=list)
    status: str = "running"
    budget_exhausted: bool = False

    FIELDS = ("iteration", "r", "eta_abs", "eta_rel", "n_apply_A", "n_apply_Astar", "wall_ms")

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.FIELDS)
            for row in self.rows:
                w.writerow([row[k] if not isinstance(row[k], float) else repr(row[k])
                            for k in self.FIELDS])

    @property
    def final(self) -> dict:
        return self.rows[-1]


class AdaptiveBuilder:
    """State of an adaptive construction: grid, impulses, weights, kernels."""

    def __init__(self, op, q: int = 10, seed: int = 0, weight_tol: float = 1e-12,
                 domain: IndexBox | None = None):
        self.op = op
        self.grid = make_root(domain or op.domain)
        self.wb = WeightBuilder(self.grid, weight_tol)
        self.impulses: dict = {}
        self.weights: dict = {}
        self.kernels: dict = {}
        self._nbrs: dict = {}
        self.probes = make_probes(op, q, seed)
        self.state = new_state(self.probes, self.grid.domain)
        self.refresh(set(range(self.grid.num_points)))

    @property
    def r(self) -> int:
        return self.grid.num_points

    def refresh(self, touched) -> set:
        """Bring per-point data up to date after refinement; return changed ids."""
        grid = self.grid
        for k in range(grid.num_points):
            if k not in self.impulses:
                self.impulses[k] = compute_impulse(self.op, grid, k)
                touched = set(touched) | {k}
        changed = set()
        for k in sorted(touched):
            nb = frozenset(grid.nbrs(k))
            self.weights[k] = self.wb.build(k).gridfunction
            if self._nbrs.get(k) != nb:
                self._nbrs[k] = nb
                self.kernels[k] = extend_impulse(build_extension_weights(grid, k, nb), self.impulses)
                changed.add(k)
        update_samples(self.state, self.weights, self.kernels, changed, self.probes, grid)
        return changed

    def refine(self, cid: int, axis: int | None = None) -> set:
        if axis is None:
            axis = choose_axis(self.grid, cid, self.kernels)
        new = self.grid.subdivide(cid, axis)
        self.refresh(self.grid.pop_touched())
        return new

    def operator(self) -> ProductConvolutionOperator:
        return ProductConvolutionOperator(self.grid.domain, self.weights, self.kernels, self.grid)


def build(op, tol: float, q: int = 10, max_points: int | None = None, seed: int = 0,
          callback=None, weight_tol: float = 1e-12):
    """Refine until the relative estimate is at most ``tol``.

    Stops early when ``max_points`` sample points exist (flagged as budget
    exhausted) or no leaf can be refined further. ``callback(builder)`` is
    called after initialization and after every refinement that adds points.

    Returns ``(pcop, report, builder)``.
    """
    if not tol > 0 and max_points is None:
        raise ValueError("need tol > 0 or a finite max_points")
    t0 = time.perf_counter()
    op.reset_counters()
    b = AdaptiveBuilder(op, q=q, seed=seed, weight_tol=weight_tol)
    grid = b.grid
    report = BuildReport()
    candidates = {c for c in grid.leaves() if grid.refinable_axes(c)}

    def record(it):
        report.rows.append({
            "iteration": it, "r": b.r, "eta_abs": b.state.eta_abs, "eta_rel": b.state.eta_rel,
            "n_apply_A": op.n_apply, "n_apply_Astar": op.n_apply_adjoint,
            "wall_ms": round(1000 * (time.perf_counter() - t0), 3),
        })

    it = 0
    record(it)
    if callback:
        callback(b)
    while True:
        if b.state.eta_rel <= tol:
            report.status = "converged"
            break
        if max_points is not None and b.r >= max_points:
            report.status = "budget_exhausted"
            report.budget_exhausted = True
            break
        if not candidates:
            report.status = "no_refinable_leaf"
            break
        errs = b.state.cell_errors
        cid = max(candidates, key=lambda c: (errs[c], -c))
        r_before = b.r
        b.refine(cid)
        candidates.discard(cid)
        candidates |= {c for c in grid.cells[cid].children if grid.refinable_axes(c)}
        if b.r > r_before:
            it += 1
            record(it)
            if callback:
                callback(b)
    if report.rows[-1]["r"] != b.r or report.rows[-1]["eta_rel"] != b.state.eta_rel:
        it += 1
        record(it)
    return b.operator(), report, b


def ytilde_from_scratch(pcop: ProductConvolutionOperator, probes: ProbeSet) -> np.ndarray:
    """Oracle for the incremental estimate: ``Atilde^* Z`` by direct adjoint apply."""
    return pcop.apply_adjoint(probes.Z)
