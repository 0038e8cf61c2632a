import numpy as np
import pytest

from pcadapt.adaptivity import build
from pcadapt.boxes import IndexBox
from pcadapt.operators import (BlurOperator, DenseOperator, PoissonSchurOperator, laplacian,
                               make_operator, poisson_schur_operator, preconditioned_conditioning,
                               schur_preconditioner_study,
                               tsvd_rank)


def test_blur_entries_match_formula_bitwise():
    op = BlurOperator(9)
    A = op.dense()
    pts = op.domain.points()
    rng = np.random.default_rng(0)
    for _ in range(50):
        i, j = rng.integers(op.N, size=2)
        gy, gx = -1 + 0.25 * pts[i], -1 + 0.25 * pts[j]
        s = 0.1 if gx @ gx < 0.5 else 0.2
        want = np.exp(-np.sum((gy - gx) ** 2) / (2 * s * s))
        assert A[i, j] == want
        assert op.entry(tuple(pts[i]), tuple(pts[j])) == want


def test_blur_diagonal_and_sigma_values():
    op = BlurOperator(75)
    assert set(np.unique(op.sigma)) == {0.1, 0.2}
    c = (37, 37)
    assert op.entry(c, c) == 1.0
    assert op.coords.min() == -1.0 and op.coords.max() == 1.0


def test_blur_apply_and_adjoint_match_dense():
    op = BlurOperator(12)
    A = op.dense()
    f = np.random.default_rng(1).standard_normal(op.domain.shape)
    assert np.allclose(op.apply(f).ravel(), A @ f.ravel(), atol=1e-12)
    assert np.allclose(op.apply_adjoint(f).ravel(), A.T @ f.ravel(), atol=1e-12)
    assert op.n_apply == 1 and op.n_apply_adjoint == 1


def test_constant_sigma_blur_exact():
    op = BlurOperator(21, sigma=0.15)
    P, rep, _ = build(op, 1e-10, q=3)
    assert P.r == 9
    assert P.relative_error(op.dense()) <= 1e-12


def test_make_operator():
    assert isinstance(make_operator("blur", 5), BlurOperator)
    assert make_operator("poisson-schur-2d", 8).N == 7
    with pytest.raises(ValueError):
        make_operator("nope", 5)


def test_schur_rejects_bad_n():
    for n in (7, 4):
        with pytest.raises(ValueError):
            poisson_schur_operator(3, n)


def test_schur_interface_size_n10():
    op = PoissonSchurOperator(3, 10)
    assert op.domain.shape == (9, 9)


def test_schur_symmetry():
    op = PoissonSchurOperator(3, 10)
    f = np.random.default_rng(0).standard_normal(op.domain.shape)
    Af, Atf = op.apply(f), op.apply_adjoint(f)
    assert np.linalg.norm(Af - Atf) <= 1e-10 * np.linalg.norm(Af)


def lanczos_min_ritz(op, steps, rng):
    n = op.N
    Q = np.zeros((n, steps + 1))
    q = rng.standard_normal(n)
    Q[:, 0] = q / np.linalg.norm(q)
    alpha, beta = [], []
    for j in range(steps):
        w = op.apply(Q[:, j].reshape(op.domain.shape)).ravel()
        alpha.append(Q[:, j] @ w)
        w -= Q[:, :j + 1] @ (Q[:, :j + 1].T @ w)
        w -= Q[:, :j + 1] @ (Q[:, :j + 1].T @ w)
        b = np.linalg.norm(w)
        if b < 1e-14:
            break
        beta.append(b)
        Q[:, j + 1] = w / b
    k = len(alpha)
    T = np.diag(alpha) + np.diag(beta[:k - 1], 1) + np.diag(beta[:k - 1], -1)
    return np.linalg.eigvalsh(T).min()


def test_schur_positive_semidefinite():
    op = PoissonSchurOperator(3, 12)
    assert lanczos_min_ritz(op, 50, np.random.default_rng(0)) >= -1e-10


@pytest.mark.parametrize("dim,n", [(2, 8), (2, 12), (3, 6), (3, 10)])
def test_schur_matches_explicit_inverse(dim, n):
    op = PoissonSchurOperator(dim, n)
    m = n - 1
    K = laplacian(m, dim).toarray()
    z = np.indices((m,) * dim).reshape(dim, -1)[-1]
    i, t, b = (np.flatnonzero(z == m // 2), np.flatnonzero(z > m // 2),
               np.flatnonzero(z < m // 2))
    A = (K[np.ix_(i, t)] @ np.linalg.inv(K[np.ix_(t, t)]) @ K[np.ix_(t, i)]
         + K[np.ix_(i, b)] @ np.linalg.inv(K[np.ix_(b, b)]) @ K[np.ix_(b, i)])
    assert np.abs(op.dense() - A).max() <= 1e-10 * np.abs(A).max()
    # S = K_ii - A is the exact Schur complement of the full system
    S = K[np.ix_(i, i)] - A
    Kinv = np.linalg.inv(K)
    assert np.abs(np.linalg.inv(Kinv[np.ix_(i, i)]) - S).max() <= 1e-9


def test_tsvd_rank():
    M = np.diag([4.0, 3.0, 0.0])
    assert tsvd_rank(M, 0.0) == 2
    assert tsvd_rank(M, 0.61) == 1
    assert tsvd_rank(np.zeros((3, 3)), 0.1) == 0


def test_exact_approximation_gives_unit_condition():
    op = PoissonSchurOperator(3, 8)
    S = op.K_ii.toarray() - op.dense()
    res = preconditioned_conditioning(S, S.copy())
    assert res["cond_precond"] == pytest.approx(1.0, abs=1e-12)
    assert not res["St_indefinite"]


def test_indefinite_preconditioner_reported():
    S = np.diag([1.0, 2.0, 3.0])
    res = preconditioned_conditioning(S, np.diag([1.0, -2.0, 3.0]))
    assert res["St_indefinite"] and res["St_sym_min_eig"] == -2.0


def test_looser_tolerance_degrades_preconditioner():
    tight = schur_preconditioner_study(3, 10, tol=0.05)
    loose = schur_preconditioner_study(3, 10, tol=0.5)
    assert loose["r"] < tight["r"]
    assert loose["cond_precond"] > tight["cond_precond"]
    assert tight["cond_S"] == pytest.approx(10.3, abs=0.1)


def test_schur_build_counters():
    op = PoissonSchurOperator(3, 10)
    P, rep, _ = build(op, 0.05, q=5)
    assert op.n_apply == P.r and op.n_apply_adjoint == 5
