"""The assembled product-convolution approximation.

``Atilde f = sum_k phi_k^E * (w_k . f)`` restricted to the domain, with
adjoint ``Atilde^* f = sum_k conj(w_k) . (flip(conj(phi_k^E)) * f)``.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .boxes import IndexBox
from .convolution import convolve_arrays
from .gridfunction import GridFunction


class ProductConvolutionOperator:
    """Sum of ``r`` weighted convolutions on the domain ``domain``.

    Parameters
    ----------
    domain : IndexBox
    weights : dict k -> GridFunction
        ``w_k`` stored on the bounding box of its support.
    kernels : dict k -> GridFunction
        ``phi_k^E`` stored on any box; zero outside.
    """

    def __init__(self, domain: IndexBox, weights: dict, kernels: dict, grid=None):
        if set(weights) != set(kernels):
            raise ValueError("weights and kernels must share the same keys")
        self.domain = domain
        self.grid = grid
        self.keys = sorted(weights)
        self.weights = {k: weights[k] for k in self.keys}
        self.kernels = {k: kernels[k] for k in self.keys}
        self._col = {k: i for i, k in enumerate(self.keys)}
        self.W = self._weight_matrix()

    @property
    def r(self) -> int:
        return len(self.keys)

    @property
    def N(self) -> int:
        return self.domain.size

    def _weight_matrix(self) -> sp.csr_matrix:
        rows, cols, vals = [], [], []
        shape = self.domain.shape
        for k in self.keys:
            w = self.weights[k]
            nz = np.nonzero(w.values)
            pts = np.stack(nz, axis=1) + np.asarray(w.offset) - np.asarray(self.domain.min_pt)
            rows.append(np.ravel_multi_index(pts.T, shape))
            cols.append(np.full(len(pts), self._col[k]))
            vals.append(w.values[nz])
        dtype = np.result_type(*(w.values for w in self.weights.values()))
        if not rows:
            return sp.csr_matrix((self.N, 0), dtype=dtype)
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                             shape=(self.N, self.r))

    def _dtype(self, f):
        return np.result_type(f, *(g.values for g in self.kernels.values()),
                              *(w.values for w in self.weights.values()))

    def _check(self, f, box):
        f = np.asarray(f)
        d = box.ndim
        if f.shape[f.ndim - d:] != box.shape:
            raise ValueError(f"expected trailing shape {box.shape}, got {f.shape}")
        return f

    # -- matvecs ---------------------------------------------------------

    def apply(self, f) -> np.ndarray:
        """``Atilde f``; ``f`` may carry leading batch axes."""
        return self.apply_block(self.domain, self.domain, f)

    def apply_adjoint(self, f) -> np.ndarray:
        return self.apply_block(self.domain, self.domain, f, adjoint=True)

    def apply_block(self, T: IndexBox, S: IndexBox, f, adjoint: bool = False) -> np.ndarray:
        """Rows ``T`` and columns ``S`` of ``Atilde`` (or of ``Atilde^*``) times ``f``.

        ``f`` lives on ``S`` and the result on ``T``. Only the part of each
        kernel inside ``T - S`` is read, so the cost depends on the block
        size, not on the domain size.
        """
        for B in (T, S):
            if not self.domain.contains_box(B):
                raise ValueError(f"{B} is not inside the domain {self.domain}")
        f = self._check(f, S)
        d = S.ndim
        batch = f.shape[:f.ndim - d]
        out = np.zeros(batch + T.shape, dtype=self._dtype(f))
        lead = (slice(None),) * len(batch)
        for k in self.keys:
            w = self.weights[k]
            if not adjoint:
                Sk = S.intersect(w.box)
                if Sk is None:
                    continue
                wf = w.values[Sk.slices(w.box)] * f[lead + Sk.slices(S)]
                G = T - Sk
                kern = self.kernels[k].restrict(G)
                full = convolve_arrays(kern, wf, d)
                out += full[lead + T.slices(G + Sk)]
            else:
                Tk = T.intersect(w.box)
                if Tk is None:
                    continue
                G = Tk - S
                kern = self.kernels[k].flip_conj().restrict(G)
                full = convolve_arrays(kern, f, d)
                out[lead + Tk.slices(T)] += (np.conj(w.values[Tk.slices(w.box)])
                                            * full[lead + Tk.slices(G + S)])
        return out

    # -- entries ---------------------------------------------------------

    def entries(self, ys, xs) -> np.ndarray:
        """``Atilde[y, x]`` for paired integer points ``ys``, ``xs`` of shape ``(m, d)``."""
        ys = np.atleast_2d(np.asarray(ys, dtype=np.int64))
        xs = np.atleast_2d(np.asarray(xs, dtype=np.int64))
        lo = np.asarray(self.domain.min_pt)
        hi = np.asarray(self.domain.max_pt)
        for P in (ys, xs):
            if np.any((P < lo) | (P > hi)):
                raise IndexError("index outside the domain")
        xi = np.ravel_multi_index((xs - lo).T, self.domain.shape)
        sub = self.W[xi].tocoo()
        out = np.zeros(len(xs), dtype=self._dtype(np.zeros(0)))
        if sub.nnz == 0:
            return out
        order = np.argsort(sub.col, kind="stable")
        pair, col, wv = sub.row[order], sub.col[order], sub.data[order]
        starts = np.flatnonzero(np.r_[True, col[1:] != col[:-1]])
        ends = np.r_[starts[1:], len(col)]
        for a, b in zip(starts, ends):
            k = self.keys[col[a]]
            p = pair[a:b]
            vals = self.kernels[k].evaluate(ys[p] - xs[p])
            np.add.at(out, p, wv[a:b] * vals)
        return out

    def entry(self, y, x):
        return self.entries([y], [x])[0]

    def submatrix(self, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
        """Dense block for flat row and column indices into the domain."""
        pts = self.domain.points()
        R, C = np.meshgrid(rows, cols, indexing="ij")
        vals = self.entries(pts[R.ravel()], pts[C.ravel()])
        return vals.reshape(len(rows), len(cols))

    def columns(self, cols) -> np.ndarray:
        """Dense columns ``Atilde[:, cols]`` for flat column indices ``cols``.

        Column ``x`` is ``sum_k w_k[x] phi_k^E[. - x]`` over the few ``k`` with
        ``w_k[x] != 0``.
        """
        cols = np.asarray(cols, dtype=np.int64)
        dom = self.domain
        out = np.zeros((self.N, len(cols)), dtype=self._dtype(np.zeros(0)))
        sub = self.W[cols].tocoo()
        pts = np.stack(np.unravel_index(cols, dom.shape), axis=1) + np.asarray(dom.min_pt)
        for j, c, wx in zip(sub.row, sub.col, sub.data):
            x = pts[j]
            out[:, j] += wx * self.kernels[self.keys[c]].restrict(dom - x).ravel()
        return out

    def to_dense(self, chunk: int = 1024) -> np.ndarray:
        """Materialize ``Atilde`` column by column from the kernels."""
        N = self.N
        out = np.zeros((N, N), dtype=self._dtype(np.zeros(0)))
        for s in range(0, N, chunk):
            cols = np.arange(s, min(s + chunk, N))
            out[:, cols] = self.columns(cols)
        return out

    def relative_error(self, A_dense: np.ndarray, chunk: int = 512) -> float:
        """``||Atilde - A||_F / ||A||_F`` without forming ``Atilde`` in full."""
        num = 0.0
        for s in range(0, self.N, chunk):
            cols = np.arange(s, min(s + chunk, self.N))
            num += float(np.linalg.norm(self.columns(cols) - A_dense[:, cols]) ** 2)
        return float(np.sqrt(num) / np.linalg.norm(A_dense))
