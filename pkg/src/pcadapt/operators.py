"""Matrix-free test operators: spatially varying blur and the Poisson
interface Schur complement, plus a dense wrapper used by the tests.

Every operator acts on arrays of shape ``domain.shape``; the index of an
array element is its grid coordinate relative to ``domain.min_pt``.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .boxes import IndexBox


class OperatorHandle:
    """Base class: counted ``apply`` / ``apply_adjoint`` on the domain box."""

    name = "operator"

    def __init__(self, domain: IndexBox):
        self.domain = domain
        self.n_apply = 0
        self.n_apply_adjoint = 0

    @property
    def N(self) -> int:
        return self.domain.size

    def _check(self, f) -> np.ndarray:
        f = np.asarray(f)
        if f.shape != self.domain.shape:
            raise ValueError(f"expected shape {self.domain.shape}, got {f.shape}")
        return f

    def apply(self, f) -> np.ndarray:
        f = self._check(f)
        self.n_apply += 1
        return self._apply(f)

    def apply_adjoint(self, f) -> np.ndarray:
        f = self._check(f)
        self.n_apply_adjoint += 1
        return self._apply_adjoint(f)

    def reset_counters(self) -> None:
        self.n_apply = self.n_apply_adjoint = 0

    def _apply(self, f):
        raise NotImplementedError

    def _apply_adjoint(self, f):
        raise NotImplementedError

    def dense(self) -> np.ndarray:
        """Materialize the N x N matrix without touching the counters."""
        N = self.N
        out = np.zeros((N, N), dtype=self.dtype)
        e = np.zeros(N)
        for j in range(N):
            e[j] = 1.0
            out[:, j] = self._apply(e.reshape(self.domain.shape)).ravel()
            e[j] = 0.0
        return out

    dtype = np.float64


class DenseOperator(OperatorHandle):
    """Operator given by an explicit ``N x N`` matrix in C-order flattening."""

    name = "dense"

    def __init__(self, domain: IndexBox, matrix):
        super().__init__(domain)
        self.matrix = np.asarray(matrix)
        if self.matrix.shape != (domain.size, domain.size):
            raise ValueError("matrix does not match domain size")
        self.dtype = self.matrix.dtype

    def _apply(self, f):
        return (self.matrix @ f.ravel()).reshape(self.domain.shape)

    def _apply_adjoint(self, f):
        return (self.matrix.conj().T @ f.ravel()).reshape(self.domain.shape)

    def entry(self, y, x):
        d = self.domain
        iy = np.ravel_multi_index(tuple(np.subtract(y, d.min_pt)), d.shape)
        ix = np.ravel_multi_index(tuple(np.subtract(x, d.min_pt)), d.shape)
        return self.matrix[iy, ix]

    def dense(self):
        return self.matrix.copy()


def identity_operator(domain: IndexBox) -> DenseOperator:
    return DenseOperator(domain, np.eye(domain.size))


def convolution_operator(domain: IndexBox, kernel) -> DenseOperator:
    """``A[y, x] = kernel(y - x)`` restricted to the domain.

    ``kernel`` maps an ``(m, d)`` integer array of offsets to ``m`` values.
    """
    pts = domain.points()
    diff = pts[:, None, :] - pts[None, :, :]
    vals = np.asarray(kernel(diff.reshape(-1, domain.ndim)))
    return DenseOperator(domain, vals.reshape(domain.size, domain.size))


class BlurOperator(OperatorHandle):
    """Gaussian blur on the regular grid mapped to ``[-1, 1]^d``.

    ``a[y, x] = exp(-|g(y) - g(x)|^2 / (2 sigma(g(x))^2))`` where the width is
    bound to the source point: ``sigma = 0.1`` when ``|g(x)|^2 < 0.5`` and
    ``0.2`` otherwise. Passing ``sigma`` fixes a constant width, which gives a
    translation-invariant kernel.
    """

    name = "blur"
    chunk = 512

    def __init__(self, n: int, d: int = 2, sigma: float | None = None,
                 sigma_in: float = 0.1, sigma_out: float = 0.2, radius2: float = 0.5):
        if n < 2:
            raise ValueError("blur needs n >= 2")
        super().__init__(IndexBox((0,) * d, (n - 1,) * d))
        self.n = n
        self.h = 2.0 / (n - 1)
        self.coords = -1.0 + self.h * self.domain.points()
        if sigma is None:
            r2 = np.sum(self.coords ** 2, axis=1)
            self.sigma = np.where(r2 < radius2, sigma_in, sigma_out)
        else:
            self.sigma = np.full(self.N, float(sigma))

    def physical(self, idx) -> np.ndarray:
        return -1.0 + self.h * np.asarray(idx, dtype=float)

    def _block(self, rows, cols) -> np.ndarray:
        diff = self.coords[rows][:, None, :] - self.coords[cols][None, :, :]
        d2 = np.sum(diff ** 2, axis=-1)
        return np.exp(-d2 / (2.0 * self.sigma[cols] ** 2))

    def entries(self, ys, xs) -> np.ndarray:
        ys = np.ravel_multi_index(np.asarray(ys).T, self.domain.shape)
        xs = np.ravel_multi_index(np.asarray(xs).T, self.domain.shape)
        d2 = np.sum((self.coords[ys] - self.coords[xs]) ** 2, axis=-1)
        return np.exp(-d2 / (2.0 * self.sigma[xs] ** 2))

    def entry(self, y, x) -> float:
        return float(self.entries([y], [x])[0])

    def _apply(self, f):
        fv = f.ravel()
        cols = np.flatnonzero(fv)
        out = np.zeros(self.N, dtype=np.result_type(fv, float))
        allrows = np.arange(self.N)
        for s in range(0, len(cols), self.chunk):
            c = cols[s:s + self.chunk]
            out += self._block(allrows, c) @ fv[c]
        return out.reshape(self.domain.shape)

    def _apply_adjoint(self, f):
        fv = f.ravel()
        rows = np.flatnonzero(fv)
        out = np.zeros(self.N, dtype=np.result_type(fv, float))
        for s in range(0, self.N, self.chunk):
            c = np.arange(s, min(s + self.chunk, self.N))
            out[c] = fv[rows] @ self._block(rows, c)
        return out.reshape(self.domain.shape)

    def dense(self):
        idx = np.arange(self.N)
        return self._block(idx, idx)


def laplacian(m: int, dim: int) -> sp.csr_matrix:
    """Unscaled second-difference Laplacian on an ``m^dim`` grid, Dirichlet."""
    t = sp.diags([-np.ones(m - 1), 2.0 * np.ones(m), -np.ones(m - 1)], [-1, 0, 1])
    eye = sp.identity(m)
    K = sp.csr_matrix((m ** dim, m ** dim))
    for axis in range(dim):
        term = sp.identity(1)
        for j in range(dim):
            term = sp.kron(term, t if j == axis else eye)
        K = K + term
    return sp.csr_matrix(K)


class PoissonSchurOperator(OperatorHandle):
    """``A = K_it K_tt^-1 K_ti + K_ib K_bb^-1 K_bi`` for the mid-plane interface.

    ``K`` is the finite-difference Laplacian on the ``(n-1)^dim`` interior
    nodes of a cube; the interface is the middle plane normal to the last
    axis, so the operator acts on an ``(n-1)^(dim-1)`` grid.
    """

    chunk = 256

    def __init__(self, dim: int, n: int):
        if dim not in (2, 3):
            raise ValueError("dim must be 2 or 3")
        if n % 2 or n < 6:
            raise ValueError("n must be even and at least 6 so the interface is centred")
        m = n - 1
        super().__init__(IndexBox((0,) * (dim - 1), (m - 1,) * (dim - 1)))
        self.name = f"poisson-schur-{dim}d"
        self.dim, self.n, self.m = dim, n, m
        K = laplacian(m, dim)
        z = np.indices((m,) * dim).reshape(dim, -1)[-1]
        mid = m // 2
        i_idx = np.flatnonzero(z == mid)
        t_idx = np.flatnonzero(z > mid)
        b_idx = np.flatnonzero(z < mid)
        K = K.tocsr()
        self.K = K
        self.K_ii = K[i_idx][:, i_idx].tocsc()
        self.K_ti = K[t_idx][:, i_idx].tocsc()
        self.K_it = K[i_idx][:, t_idx].tocsc()
        self.K_bi = K[b_idx][:, i_idx].tocsc()
        self.K_ib = K[i_idx][:, b_idx].tocsc()
        self.lu_t = splu(K[t_idx][:, t_idx].tocsc())
        self.lu_b = splu(K[b_idx][:, b_idx].tocsc())
        self.n_solves = 0

    def _mv(self, F: np.ndarray) -> np.ndarray:
        """Apply ``A`` to the columns of ``F`` (shape ``(N, m)``)."""
        top = self.K_it @ self.lu_t.solve(np.asarray(self.K_ti @ F))
        bot = self.K_ib @ self.lu_b.solve(np.asarray(self.K_bi @ F))
        self.n_solves += 2
        return np.asarray(top + bot)

    def _apply(self, f):
        return self._mv(f.reshape(-1, 1).astype(float))[:, 0].reshape(self.domain.shape)

    _apply_adjoint = _apply

    def dense(self) -> np.ndarray:
        N = self.N
        out = np.zeros((N, N))
        for s in range(0, N, self.chunk):
            cols = np.arange(s, min(s + self.chunk, N))
            E = np.zeros((N, len(cols)))
            E[cols, np.arange(len(cols))] = 1.0
            out[:, cols] = self._mv(E)
        return out


def poisson_schur_operator(dim: int, n: int) -> PoissonSchurOperator:
    return PoissonSchurOperator(dim, n)


def blur_operator(n: int, sigma: float | None = None, d: int = 2) -> BlurOperator:
    return BlurOperator(n, d=d, sigma=sigma)


OPERATORS = {
    "blur": lambda n: BlurOperator(n),
    "poisson-schur-2d": lambda n: PoissonSchurOperator(2, n),
    "poisson-schur-3d": lambda n: PoissonSchurOperator(3, n),
}


def make_operator(name: str, n: int) -> OperatorHandle:
    try:
        return OPERATORS[name](n)
    except KeyError:
        raise ValueError(f"unknown operator {name!r}; choose from {sorted(OPERATORS)}") from None


def tsvd_rank(M: np.ndarray, tol: float) -> int:
    """Smallest rank whose truncated SVD has relative Frobenius error <= tol."""
    s = np.linalg.svd(M, compute_uv=False)
    tail = np.sqrt(np.cumsum((s ** 2)[::-1]))[::-1]
    total = tail[0] if len(tail) else 0.0
    if total == 0.0:
        return 0
    # tail[r] is the error of the rank-r truncation
    ok = np.flatnonzero(np.append(tail, 0.0) <= tol * total)
    return int(ok[0])


def schur_preconditioner_study(dim: int, n: int, tol: float = 0.05, q: int = 10,
                               seed: int = 0, max_points: int | None = None) -> dict:
    """Condition numbers of ``S = K_ii - A`` and of ``S~^-1 S`` with ``S~ = K_ii - Atilde``.

    ``S~`` is factorized densely. ``cond_precond`` is the 2-norm condition
    number (singular values); the eigenvalue spread is reported as well.
    """
    from .adaptivity import build

    op = PoissonSchurOperator(dim, n)
    pcop, report, _ = build(op, tol, q=q, seed=seed, max_points=max_points)
    A = op.dense()
    At = pcop.to_dense()
    Kii = op.K_ii.toarray()
    S = Kii - A
    St = Kii - At
    out = {
        "dim": dim, "n": n, "N": op.N, "tol": tol, "q": q,
        "r": pcop.r,
        "status": report.status,
        "rel_error": float(np.linalg.norm(At - A) / np.linalg.norm(A)),
    }
    out.update(preconditioned_conditioning(S, St))
    out["tsvd_rank"] = tsvd_rank(A, tol)
    return out


def preconditioned_conditioning(S: np.ndarray, St: np.ndarray) -> dict:
    """Spectral condition of ``S``, 2-norm condition of ``St^-1 S`` and definiteness of ``St``."""
    ev = np.linalg.eigvalsh(0.5 * (S + S.T))
    P = np.linalg.solve(St, S)
    pev = np.linalg.eigvals(P)
    sym_min = float(np.linalg.eigvalsh(0.5 * (St + St.T)).min())
    return {
        "cond_S": float(ev.max() / ev.min()),
        "cond_precond": float(np.linalg.cond(P)),
        "eig_ratio_precond": float(np.abs(pev).max() / np.abs(pev).min()),
        "St_sym_min_eig": sym_min,
        "St_indefinite": sym_min <= 0,
    }
