import numpy as np
import pytest

from pcadapt.adaptivity import build
from pcadapt.boxes import IndexBox
from pcadapt.hmatrix import (DENSE, LOWRANK, BlockView, admissible, assemble_hmatrix,
                             box_distance, build_block_tree, build_cluster_tree, compress_aca,
                             compress_block, compress_randomized, export_hmatrix, hmat_matvec,
                             load_hmatrix)
from pcadapt.operators import BlurOperator, identity_operator

from conftest import gaussian_convolution


@pytest.fixture(scope="module")
def blur_pcop():
    op = BlurOperator(16)
    P, _, _ = build(op, 0.05, q=5, seed=0)
    return op, P


@pytest.fixture(scope="module")
def line_pcop():
    op = gaussian_convolution(IndexBox.from_shape((128,)), 3.0)
    P, _, _ = build(op, 1e-12, q=2)
    return P


def test_tree_1d_balanced():
    t = build_cluster_tree(IndexBox.from_shape((8,)), leaf_cap=2)
    leaves = t.leaves()
    assert len(leaves) == 4 and all(t.nodes[i].size == 2 for i in leaves)
    depth = {0: 0}
    for i, n in enumerate(t.nodes):
        if n.children:
            for c in n.children:
                depth[c] = depth[i] + 1
    assert {depth[i] for i in leaves} == {2}
    assert [list(t.indices(i)) for i in leaves] == [[0, 1], [2, 3], [4, 5], [6, 7]]


def test_tree_2d_single_split():
    t = build_cluster_tree(IndexBox.from_shape((8, 8)), leaf_cap=32)
    assert len(t.nodes) == 3 and t.nodes[0].split_axis == 0
    for i in t.nodes[0].children:
        P = IndexBox.from_shape((8, 8)).points()[t.indices(i)]
        assert len(P) == 32 and np.ptp(P[:, 0]) == 3 and np.ptp(P[:, 1]) == 7


def test_tree_small_domain_single_leaf():
    t = build_cluster_tree(IndexBox.from_shape((3, 3)), leaf_cap=32)
    assert len(t.nodes) == 1 and t.leaves() == [0]


def test_tree_odd_split_lower_half_larger():
    t = build_cluster_tree(IndexBox.from_shape((7,)), leaf_cap=3)
    a, b = t.nodes[0].children
    assert t.nodes[a].size == 4 and t.nodes[b].size == 3


def test_block_partition_exact_and_admissibility_bruteforce():
    dom = IndexBox.from_shape((12, 10))
    t = build_cluster_tree(dom, leaf_cap=8)
    cover = np.zeros((dom.size, dom.size), dtype=int)
    P = dom.points()
    for a, s, adm in build_block_tree(t):
        cover[np.ix_(t.indices(a), t.indices(s))] += 1
        A, S = P[t.indices(a)], P[t.indices(s)]
        # brute-force box distance and diameters from the points themselves
        lo = np.maximum(0, np.maximum(A.min(0) - S.max(0), S.min(0) - A.max(0)))
        dist = np.linalg.norm(lo)
        diam = min(np.linalg.norm(np.ptp(A, 0)), np.linalg.norm(np.ptp(S, 0)))
        assert adm == (dist > 0 and dist >= diam)
        assert admissible(t.nodes[a], t.nodes[s]) == admissible(t.nodes[s], t.nodes[a])
        assert box_distance(t.nodes[a], t.nodes[s]) == pytest.approx(dist)
    assert np.all(cover == 1)


def test_zero_block_rank_zero(line_pcop):
    t = build_cluster_tree(line_pcop.domain, leaf_cap=8)
    a, b = t.leaves()[0], t.leaves()[-1]
    for method in ("randomized", "cur"):
        U, V, flag = compress_block(line_pcop, t, a, b, method, 1e-10, None,
                                    np.random.default_rng(0))
        assert U.shape[1] == 0 and not flag


def test_far_blocks_low_rank(line_pcop):
    t = build_cluster_tree(line_pcop.domain, leaf_cap=16)
    blocks = [(a, s) for a, s, adm in build_block_tree(t) if adm]
    assert blocks
    for a, s in blocks:
        view = BlockView(line_pcop, t.indices(a), t.indices(s))
        D = view.dense()
        for comp in (compress_randomized, compress_aca):
            U, V, _ = comp(view, tol=1e-8)
            assert U.shape[1] <= 10
            assert np.linalg.norm(D - U @ V) <= 1e-8 * np.linalg.norm(D)
        sv = np.linalg.svd(D, compute_uv=False)
        assert np.sum(sv > 1e-8 * sv[0]) <= 10


def test_fixed_rank_mode(blur_pcop):
    _, P = blur_pcop
    H = assemble_hmatrix(P, rank=5, leaf_cap=32)
    assert max(H.ranks()) <= 5


def test_identity_pcop_blocks():
    op = identity_operator(IndexBox.from_shape((16, 16)))
    P, _, _ = build(op, 1e-10, q=1)
    for method in ("randomized", "cur"):
        H = assemble_hmatrix(P, method=method)
        assert all(r == 0 for r in H.ranks())
        for t, s, kind, data in H.blocks:
            if kind == DENSE:
                want = (H.tree.indices(t)[:, None] == H.tree.indices(s)[None, :]).astype(float)
                assert np.abs(data[0] - want).max() <= 1e-12


@pytest.mark.parametrize("method", ["randomized", "cur"])
def test_assembly_accuracy_and_no_operator_use(blur_pcop, method):
    op, P = blur_pcop
    before = (op.n_apply, op.n_apply_adjoint)
    H = assemble_hmatrix(P, tol=1e-10, method=method)
    assert (op.n_apply, op.n_apply_adjoint) == before
    assert H.flagged == 0
    f = np.random.default_rng(1).standard_normal(op.domain.shape)
    g = P.apply(f)
    assert np.linalg.norm(hmat_matvec(H, f) - g) <= 1e-8 * np.linalg.norm(g)
    for t, s, kind, data in H.blocks:
        if kind == LOWRANK:
            D = P.submatrix(H.tree.indices(t), H.tree.indices(s))
            assert np.linalg.norm(D - data[0] @ data[1]) <= 1e-10 * np.linalg.norm(D) + 1e-300


def test_export_roundtrip(blur_pcop, tmp_path):
    _, P = blur_pcop
    H = assemble_hmatrix(P, tol=1e-8)
    path = tmp_path / "h.pchm"
    export_hmatrix(H, path)
    data = load_hmatrix(path)
    assert path.read_bytes()[:4] == b"PCHM"
    assert data["N"] == H.N and data["d"] == 2 and data["leaf_cap"] == 32
    assert np.array_equal(data["perm"], H.tree.perm)
    assert [n[:2] for n in data["nodes"]] == [(n.lo, n.hi) for n in H.tree.nodes]
    assert len(data["blocks"]) == len(H.blocks)
    for (t, s, k, arrs), (t2, s2, k2, arrs2) in zip(H.blocks, data["blocks"]):
        assert (t, s, k) == (t2, s2, k2)
        for a, b in zip(arrs, arrs2):
            assert np.array_equal(a, b)


def test_unknown_method(blur_pcop):
    with pytest.raises(ValueError):
        assemble_hmatrix(blur_pcop[1], method="svd")
