"""Exact-error convergence curves for the adaptive scheme and the
regular-grid baseline."""
from __future__ import annotations

import numpy as np

from .adaptivity import build
from .baseline import regular_grid_operator
from .operator import ProductConvolutionOperator


class ConvergenceTracker:
    """Build callback recording the exact relative error against ``A_dense``.

    With ``targets`` given, the error is evaluated only for the last state
    whose ``r`` does not exceed each target, which keeps long builds cheap.
    Otherwise every state is evaluated.
    """

    def __init__(self, A_dense: np.ndarray, targets=None):
        self.A = A_dense
        self.targets = None if targets is None else sorted(targets)
        self.rows: list[dict] = []
        self._prev = None

    def _evaluate(self, snap):
        r, eta, domain, weights, kernels = snap
        if self.rows and self.rows[-1]["r"] == r:
            return
        pc = ProductConvolutionOperator(domain, weights, kernels)
        self.rows.append({"r": r, "rel_error": pc.relative_error(self.A), "eta_rel": eta})

    def __call__(self, builder):
        snap = (builder.r, builder.state.eta_rel, builder.grid.domain,
                dict(builder.weights), dict(builder.kernels))
        if self.targets is None:
            self._evaluate(snap)
        else:
            prev = self._prev
            if prev is not None and any(prev[0] <= t < snap[0] for t in self.targets):
                self._evaluate(prev)
            self._prev = snap

    def finish(self):
        if self._prev is not None:
            self._evaluate(self._prev)
        return self.rows


def adaptive_convergence(op, A_dense, tol=1e-10, q=10, seed=0, max_points=None, targets=None):
    tracker = ConvergenceTracker(A_dense, targets)
    pcop, report, builder = build(op, tol, q=q, max_points=max_points, seed=seed, callback=tracker)
    return tracker.finish(), pcop, report, builder


def baseline_convergence(op, A_dense, ms) -> list[dict]:
    rows = []
    for m in ms:
        pc = regular_grid_operator(op, m)
        rows.append({"r": pc.r, "rel_error": pc.relative_error(A_dense)})
    return rows


def matched_comparison(adaptive_rows, baseline_rows, r_min=25) -> list[dict]:
    """For each baseline ``r`` in ``[r_min, final adaptive r]`` pair it with the
    adaptive state having the largest ``r`` not exceeding it."""
    out = []
    ad = sorted(adaptive_rows, key=lambda row: row["r"])
    r_max = ad[-1]["r"] if ad else -1
    for b in baseline_rows:
        if b["r"] < r_min or b["r"] > r_max:
            continue
        below = [a for a in ad if a["r"] <= b["r"]]
        if not below:
            continue
        a = below[-1]
        out.append({"r": b["r"], "adaptive_r": a["r"], "adaptive": a["rel_error"],
                    "baseline": b["rel_error"], "ok": a["rel_error"] <= b["rel_error"]})
    return out
