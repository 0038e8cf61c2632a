"""Dense numerical oracles for the error theory of the approximation.

For small problems everything is materialized: the translation-failure
functions ``F_k[y, x] = A[y - x + p_k, p_k] - A[y, x]`` on the sets
``mu_k^E``, their pointwise maximum ``F``, and the pair weights
``W_k[y, x] = sum_j w_j[x] v_j^(k)[y - x]``. The checks then confirm that
the ``W_k`` form a partition of unity on ``Omega x Omega`` subordinate to the
``mu_k^E``, that ``Atilde - A = sum_k W_k F_k`` pointwise, and that
``|Atilde - A| <= F`` pointwise and in Frobenius norm.

Matrices are indexed by flat C-order positions in the domain box.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .boxes import box_mask
from .impulse import build_extension_weights

DEFAULT_CAP = 4096


class OracleCapError(ValueError):
    pass


def materialize(obj, cap: int = DEFAULT_CAP, route: str = "apply") -> np.ndarray:
    """Dense matrix of an operator handle or product-convolution operator.

    ``route`` selects how a product-convolution operator is read: ``"apply"``
    applies it to every basis vector, ``"entry"`` uses the entry formula,
    ``"adjoint"`` materializes the adjoint by basis-vector applications.
    Operator handles are materialized without touching their counters.
    """
    N = obj.domain.size
    if N > cap:
        raise OracleCapError(f"N={N} exceeds the oracle cap {cap}")
    if not hasattr(obj, "entries") or not hasattr(obj, "kernels"):
        return obj.dense() if route != "adjoint" else obj.dense().conj().T
    shape = obj.domain.shape
    if route == "entry":
        return obj.submatrix(np.arange(N), np.arange(N))
    eye = np.eye(N).reshape((N,) + shape)
    apply = obj.apply_adjoint if route == "adjoint" else obj.apply
    out = np.empty((N, N), dtype=obj._dtype(np.zeros(0)))
    for s in range(0, N, 64):
        out[:, s:s + 64] = apply(eye[s:s + 64]).reshape(-1, N).T
    return out


def _flat(domain, pts) -> np.ndarray:
    pts = np.asarray(pts).reshape(-1, domain.ndim)
    return np.ravel_multi_index((pts - np.asarray(domain.min_pt)).T, domain.shape)


def extended_neighborhood(grid, k: int) -> np.ndarray:
    """Boolean mask over the domain of ``U_k^E``, the union of ``U_j`` over neighbours."""
    dom = grid.domain
    mask = np.zeros(dom.shape, dtype=bool)
    cells = set()
    for j in grid.nbrs(k):
        cells |= grid.cells_of_point[j]
    for cid in cells:
        mask |= box_mask(grid.cells[cid].box, dom)
    return mask


@dataclass
class FailureField:
    """``F_k`` on the columns ``cols[k]`` of ``U_k^E``; ``valid[k]`` marks ``mu_k^E``."""

    cols: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)
    valid: dict = field(default_factory=dict)
    F: np.ndarray | None = None
    covered: np.ndarray | None = None

    @property
    def n_coverage_gaps(self) -> int:
        return int((~self.covered).sum())

    def mu_mask(self, k: int, N: int) -> np.ndarray:
        out = np.zeros((N, N), dtype=bool)
        out[:, self.cols[k]] = self.valid[k]
        return out


def _shift_windows(col: np.ndarray, dom, p, xs):
    """For each x in ``xs``: values ``col[y - x + p]`` for all y, and validity."""
    shape = dom.shape
    img = col.reshape(shape)
    d = dom.ndim
    # pad so that every shift lands inside the array
    pad = [(s - 1, s - 1) for s in shape]
    big = np.pad(img, pad)
    inside = np.pad(np.ones(shape, dtype=bool), pad)
    vals = np.empty((dom.size, len(xs)), dtype=col.dtype)
    ok = np.empty((dom.size, len(xs)), dtype=bool)
    for j, x in enumerate(xs):
        # y - x + p relative to the padded origin
        start = tuple(int(p[i] - x[i] + shape[i] - 1) for i in range(d))
        sl = tuple(slice(s, s + n) for s, n in zip(start, shape))
        vals[:, j] = big[sl].ravel()
        ok[:, j] = inside[sl].ravel()
    return vals, ok


def compute_failure_field(A: np.ndarray, grid) -> FailureField:
    dom = grid.domain
    N = dom.size
    pts = dom.points()
    ff = FailureField()
    F = np.zeros((N, N))
    covered = np.zeros((N, N), dtype=bool)
    for k in range(grid.num_points):
        p = np.subtract(grid.points[k], dom.min_pt)
        cols = np.flatnonzero(extended_neighborhood(grid, k).ravel())
        xs = pts[cols] - np.asarray(dom.min_pt)
        pk = np.ravel_multi_index(tuple(p), dom.shape)
        shifted, ok = _shift_windows(A[:, pk], dom, p, xs)
        Fk = np.where(ok, shifted - A[:, cols], 0.0)
        ff.cols[k], ff.values[k], ff.valid[k] = cols, Fk, ok
        sub = F[:, cols]
        np.maximum(sub, np.where(ok, np.abs(Fk), 0.0), out=sub)
        F[:, cols] = sub
        covered[:, cols] |= ok
    ff.F, ff.covered = F, covered
    return ff


@dataclass
class PairWeights:
    """``W_k`` stored on the columns where it can be nonzero."""

    cols: dict = field(default_factory=dict)
    values: dict = field(default_factory=dict)

    def dense(self, k: int, N: int) -> np.ndarray:
        out = np.zeros((N, N))
        out[:, self.cols[k]] = self.values[k]
        return out

    def total(self, N: int) -> np.ndarray:
        out = np.zeros((N, N))
        for k in self.cols:
            out[:, self.cols[k]] += self.values[k]
        return out


def compute_pair_weights(grid, weights: dict, ext_weights: dict | None = None) -> PairWeights:
    """``W_k[y, x] = sum_{j in nbrs(k)} w_j[x] v_j^(k)[y - x]``."""
    dom = grid.domain
    N = dom.size
    if ext_weights is None:
        ext_weights = {j: build_extension_weights(grid, j) for j in range(grid.num_points)}
    acc: dict[int, dict[int, np.ndarray]] = {}
    for j, w in weights.items():
        ew = ext_weights[j]
        v = ew.v
        for x in w.box.iter_points():
            wx = w(x)
            if wx == 0:
                continue
            xi = int(_flat(dom, x)[0])
            window = (dom - x)
            for k, m in ew.masks.items():
                vk = np.zeros(window.shape)
                common = window.intersect(ew.box)
                if common is not None:
                    vk[common.slices(window)] = (v * m)[common.slices(ew.box)]
                col = acc.setdefault(k, {}).setdefault(xi, np.zeros(N))
                col += wx * vk.ravel()
    pw = PairWeights()
    for k, cols in acc.items():
        idx = np.array(sorted(cols), dtype=np.int64)
        pw.cols[k] = idx
        pw.values[k] = np.stack([cols[i] for i in idx], axis=1)
    return pw


def impulse_matrix_terms(A: np.ndarray, grid, pw: PairWeights) -> np.ndarray:
    """``sum_k W_k[y, x] phi_k[y - x]`` with ``phi_k`` extended by zero."""
    dom = grid.domain
    N = dom.size
    pts = dom.points() - np.asarray(dom.min_pt)
    out = np.zeros((N, N), dtype=A.dtype)
    for k, cols in pw.cols.items():
        p = np.subtract(grid.points[k], dom.min_pt)
        pk = np.ravel_multi_index(tuple(p), dom.shape)
        shifted, ok = _shift_windows(A[:, pk], dom, p, pts[cols])
        out[:, cols] += pw.values[k] * np.where(ok, shifted, 0.0)
    return out


def step3_reads(grid, weights: dict) -> int:
    """Number of kernel reads that would land where ``c_k = 0``.

    Column ``x`` of the approximation reads ``phi_k^E`` on ``Omega - x`` for
    every ``k`` with ``w_k[x] != 0``; the extension leaves zeros only where
    ``c_k`` vanishes, so this count must be zero.
    """
    dom = grid.domain
    bad = 0
    for k, w in weights.items():
        ew = build_extension_weights(grid, k)
        support = ew.counting > 0
        for x in w.box.iter_points():
            if w(x) == 0:
                continue
            window = dom - x
            seen = np.zeros(window.shape, dtype=bool)
            common = window.intersect(ew.box)
            if common is not None:
                seen[common.slices(window)] = support[common.slices(ew.box)]
            bad += int((~seen).sum())
    return bad


def check_theorem(A: np.ndarray, Atilde: np.ndarray, grid, pw: PairWeights,
                  ff: FailureField | None = None) -> dict:
    """Pointwise error identity and bounds; returns deviations and flags."""
    N = A.shape[0]
    if ff is None:
        ff = compute_failure_field(A, grid)
    E = Atilde - A
    S = np.zeros_like(E)
    for k, cols in pw.cols.items():
        # W_k F_k restricted to mu_k^E; W_k outside the F_k columns is checked separately
        Wk = pw.dense(k, N)
        Fk = np.zeros((N, N))
        mu = np.zeros((N, N), dtype=bool)
        if k in ff.cols:
            Fk[:, ff.cols[k]] = ff.values[k]
            mu[:, ff.cols[k]] = ff.valid[k]
        S += np.where(mu, Wk * Fk, 0.0)
    err = float(np.linalg.norm(E))
    bound = float(np.linalg.norm(ff.F))
    prop44 = float(np.abs(E - S).max()) if N else 0.0
    excess = np.abs(E) - ff.F
    pointwise = float(excess[ff.covered].max()) if ff.covered.any() else 0.0
    gap_dev = float(np.abs(E[~ff.covered]).max()) if (~ff.covered).any() else 0.0
    out = {
        "err_fro": err,
        "bound_fro": bound,
        "prop44_max_dev": prop44,
        "pointwise_excess": pointwise,
        "pointwise_ok": pointwise <= 1e-12,
        "n_coverage_gaps": ff.n_coverage_gaps,
        "gap_max_error": gap_dev,
        "holds": err <= bound + 1e-10 and pointwise <= 1e-12,
    }
    return out


def prop43_deviations(A: np.ndarray, Atilde: np.ndarray, grid, pw: PairWeights,
                      ff: FailureField) -> dict:
    """Max deviations for the three pair-weight statements."""
    N = A.shape[0]
    total = pw.total(N)
    pou = float(np.abs(total - 1.0).max())
    outside = 0.0
    for k in pw.cols:
        Wk = pw.dense(k, N)
        mu = ff.mu_mask(k, N) if k in ff.cols else np.zeros((N, N), dtype=bool)
        outside = max(outside, float(np.abs(Wk[~mu]).max()) if (~mu).any() else 0.0)
    entries = float(np.abs(impulse_matrix_terms(A, grid, pw) - Atilde).max())
    return {"prop43_entries": entries, "prop43_partition": pou, "prop43_support": outside,
            "prop43_max_dev": max(entries, pou, outside)}


def lemma42_deviation(grid, k: int) -> float:
    """``sum_j v_k^(j)`` against the indicator of ``Omega - U_k``."""
    ew = build_extension_weights(grid, k)
    total = np.zeros(ew.box.shape)
    for j in ew.masks:
        total += ew.weight(j).values
    # indicator of Omega - U_k, the union of Omega - C over leaves C containing p_k
    ind = np.zeros(ew.box.shape, dtype=bool)
    for cid in grid.cells_of_point[k]:
        ind |= box_mask(grid.domain - grid.cells[cid].box, ew.box)
    return float(np.abs(total - ind).max())


def audit(A: np.ndarray, pcop, grid) -> dict:
    """Full theory audit of one approximation; JSON-serializable."""
    Atilde = materialize(pcop, cap=max(A.shape[0], 1))
    weights = pcop.weights
    ext = {j: build_extension_weights(grid, j) for j in range(grid.num_points)}
    pw = compute_pair_weights(grid, weights, ext)
    ff = compute_failure_field(A, grid)
    out = check_theorem(A, Atilde, grid, pw, ff)
    out.update(prop43_deviations(A, Atilde, grid, pw, ff))
    out["lemma42_max_dev"] = max(lemma42_deviation(grid, k) for k in range(grid.num_points))
    out["step3_reads"] = step3_reads(grid, weights)
    return out


def write_audit(report: dict, path) -> None:
    keys = ("err_fro", "bound_fro", "n_coverage_gaps", "prop43_max_dev", "prop44_max_dev")
    data = {k: report[k] for k in keys if k in report}
    data.update({k: v for k, v in report.items() if k not in data})
    with open(path, "w") as fh:
        json.dump(data, fh, indent=1, default=float)
