"""Block-compressed hierarchical format built from the approximation alone.

Clusters come from geometric bisection of the domain points; blocks whose
clusters are well separated are compressed to low rank, either by a
randomized range finder driven by block applies or by adaptive cross
approximation driven by entries. The original operator is never applied.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .boxes import IndexBox

MAGIC = b"PCHM"
VERSION = 1
DENSE, LOWRANK = 0, 1


@dataclass
class ClusterNode:
    lo: int
    hi: int
    bbox_min: np.ndarray
    bbox_max: np.ndarray
    split_axis: int = -1
    children: tuple[int, int] | None = None

    @property
    def size(self) -> int:
        return self.hi - self.lo

    @property
    def diameter(self) -> float:
        return float(np.linalg.norm(self.bbox_max - self.bbox_min))


@dataclass
class ClusterTree:
    """Nodes in preorder; node ``i`` owns ``perm[lo:hi]`` (flat domain indices)."""

    domain: IndexBox
    leaf_cap: int
    perm: np.ndarray
    nodes: list = field(default_factory=list)

    def indices(self, i: int) -> np.ndarray:
        n = self.nodes[i]
        return self.perm[n.lo:n.hi]

    def leaves(self) -> list[int]:
        return [i for i, n in enumerate(self.nodes) if n.children is None]


def build_cluster_tree(domain: IndexBox, leaf_cap: int = 32) -> ClusterTree:
    """Recursive median bisection normal to the widest bounding-box axis."""
    if leaf_cap < 1:
        raise ValueError("leaf_cap must be at least 1")
    pts = domain.points()
    tree = ClusterTree(domain, leaf_cap, np.arange(domain.size))

    def grow(lo, hi):
        idx = tree.perm[lo:hi]
        P = pts[idx]
        node = ClusterNode(lo, hi, P.min(axis=0), P.max(axis=0))
        me = len(tree.nodes)
        tree.nodes.append(node)
        if hi - lo <= leaf_cap:
            return me
        axis = int(np.argmax(node.bbox_max - node.bbox_min))
        order = np.argsort(P[:, axis], kind="stable")
        tree.perm[lo:hi] = idx[order]
        mid = lo + (hi - lo + 1) // 2
        node.split_axis = axis
        a = grow(lo, mid)
        b = grow(mid, hi)
        node.children = (a, b)
        return me

    grow(0, domain.size)
    return tree


def box_distance(a: ClusterNode, b: ClusterNode) -> float:
    gap = np.maximum(0, np.maximum(a.bbox_min - b.bbox_max, b.bbox_min - a.bbox_max))
    return float(np.linalg.norm(gap))


def admissible(a: ClusterNode, b: ClusterNode) -> bool:
    dist = box_distance(a, b)
    return dist > 0 and dist >= min(a.diameter, b.diameter)


def build_block_tree(tree: ClusterTree) -> list[tuple[int, int, bool]]:
    """Leaf blocks ``(t, s, admissible)`` of the block partition."""
    out = []

    def visit(t, s):
        nt, ns = tree.nodes[t], tree.nodes[s]
        if admissible(nt, ns):
            out.append((t, s, True))
        elif nt.children is None or ns.children is None:
            out.append((t, s, False))
        else:
            for a in nt.children:
                for b in ns.children:
                    visit(a, b)

    visit(0, 0)
    return out


class BlockView:
    """Rows ``rows`` and columns ``cols`` of a product-convolution operator."""

    def __init__(self, pcop, rows: np.ndarray, cols: np.ndarray):
        self.pcop = pcop
        self.rows, self.cols = rows, cols
        dom = pcop.domain
        self.rpts = dom.points()[rows]
        self.cpts = dom.points()[cols]
        self.T = IndexBox(self.rpts.min(axis=0), self.rpts.max(axis=0))
        self.S = IndexBox(self.cpts.min(axis=0), self.cpts.max(axis=0))
        self._rloc = tuple((self.rpts - np.asarray(self.T.min_pt)).T)
        self._cloc = tuple((self.cpts - np.asarray(self.S.min_pt)).T)

    @property
    def shape(self):
        return len(self.rows), len(self.cols)

    def matmat(self, X: np.ndarray) -> np.ndarray:
        b = X.shape[1]
        f = np.zeros((b,) + self.S.shape, dtype=X.dtype)
        f[(slice(None),) + self._cloc] = X.T
        g = self.pcop.apply_block(self.T, self.S, f)
        return g[(slice(None),) + self._rloc].T

    def rmatmat(self, Y: np.ndarray) -> np.ndarray:
        b = Y.shape[1]
        f = np.zeros((b,) + self.T.shape, dtype=Y.dtype)
        f[(slice(None),) + self._rloc] = Y.T
        g = self.pcop.apply_block(self.S, self.T, f, adjoint=True)
        return g[(slice(None),) + self._cloc].T

    def row(self, i: int) -> np.ndarray:
        ys = np.repeat(self.rpts[i:i + 1], len(self.cols), axis=0)
        return self.pcop.entries(ys, self.cpts)

    def col(self, j: int) -> np.ndarray:
        xs = np.repeat(self.cpts[j:j + 1], len(self.rows), axis=0)
        return self.pcop.entries(self.rpts, xs)

    def dense(self) -> np.ndarray:
        return self.pcop.submatrix(self.rows, self.cols)


def _truncate(Q, B, tol, rank, scale):
    """Truncate ``Q B`` to tail Frobenius ``<= tol * scale`` or to ``rank``."""
    U, s, Vh = np.linalg.svd(B, full_matrices=False)
    if rank is not None:
        rho = min(rank, len(s))
    else:
        tail = np.sqrt(np.cumsum((s ** 2)[::-1]))[::-1]
        tail = np.append(tail, 0.0)
        rho = int(np.flatnonzero(tail <= tol * scale)[0])
    return (Q @ U[:, :rho]) * s[:rho], Vh[:rho]


def compress_randomized(block: BlockView, tol=1e-10, rank=None, oversample=10,
                        rng=None, max_rank=None):
    """Randomized range finder with adaptive doubling; returns ``(U, V, flag)``.

    ``flag`` is True when the rank cap was hit before reaching ``tol``.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    m, n = block.shape
    cap = min(m, n) if max_rank is None else min(max_rank, m, n)
    k = min(rank if rank is not None else 10, cap)
    while True:
        ell = min(k + oversample, n)
        Om = rng.standard_normal((n, ell))
        Y = block.matmat(Om)
        Q, _ = np.linalg.qr(Y)
        B = block.rmatmat(Q).conj().T
        normB = np.linalg.norm(B)
        if normB == 0:
            return np.zeros((m, 0)), np.zeros((0, n)), False
        if rank is not None:
            U, V = _truncate(Q, B, 0.0, min(rank, cap), normB)
            return U, V, False
        # a-posteriori check on fresh probes
        Wt = rng.standard_normal((n, 10))
        R = block.matmat(Wt)
        R -= Q @ (Q.conj().T @ R)
        est = np.sqrt(np.mean(np.sum(np.abs(R) ** 2, axis=0)) * n)
        if est <= 0.1 * tol * normB or ell >= n or k >= cap:
            U, V = _truncate(Q, B, 0.5 * tol, None, normB)
            flag = est > 0.1 * tol * normB and ell < n
            return U, V, flag
        k = min(2 * k, cap)


def _spot_check(block, us, vs, unused, rng, entry_tol, residual_row, samples=16):
    """Look for residual entries above ``entry_tol`` in random rows and columns.

    Returns an unused pivot row to continue from, or None when the sampled
    residual is small.
    """
    m, n = block.shape
    rows = np.flatnonzero(unused)
    for r_ in rng.choice(rows, size=min(samples, len(rows)), replace=False) if len(rows) else []:
        if np.abs(residual_row(r_)).max() > entry_tol:
            return int(r_)
    for c in rng.choice(n, size=min(samples, n), replace=False):
        col = block.col(c).astype(float)
        for u, v in zip(us, vs):
            col -= u * v[c]
        col[~unused] = 0.0
        j = int(np.argmax(np.abs(col)))
        if abs(col[j]) > entry_tol:
            return j
    return None


def compress_aca(block: BlockView, tol=1e-10, rank=None, max_rank=None, rng=None):
    """Adaptive cross approximation with partial pivoting on entries.

    Stops when the newest cross is small relative to the running norm
    estimate twice in a row and a residual spot check on random rows agrees.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    m, n = block.shape
    cap = min(m, n) if max_rank is None else min(max_rank, m, n)
    if rank is not None:
        cap = min(cap, rank)
    us, vs = [], []
    unused = np.ones(m, dtype=bool)
    norm2 = 0.0
    small = 0
    flag = False

    def residual_row(i):
        row = block.row(i).astype(float)
        for u, v in zip(us, vs):
            row -= u[i] * v
        return row

    i = 0
    while len(us) < cap:
        unused[i] = False
        row = residual_row(i)
        j = int(np.argmax(np.abs(row)))
        if row[j] == 0:
            if not unused.any():
                break
            i = int(np.flatnonzero(unused)[0])
            continue
        v = row / row[j]
        u = block.col(j).astype(float)
        for uu, vv in zip(us, vs):
            u -= uu * vv[j]
        cross = sum(2.0 * np.dot(u, uu) * np.dot(v, vv) for uu, vv in zip(us, vs))
        uv2 = float(np.dot(u, u) * np.dot(v, v))
        norm2 = max(norm2 + uv2 + cross, 0.0)
        us.append(u)
        vs.append(v)
        small = small + 1 if np.sqrt(uv2) <= 0.1 * tol * np.sqrt(norm2) else 0
        cand = np.where(unused, np.abs(u), -1.0)
        i = int(np.argmax(cand))
        if small >= 2 or cand[i] <= 0:
            i = _spot_check(block, us, vs, unused, rng, 0.1 * tol * np.sqrt(norm2 / max(m * n, 1)),
                            residual_row)
            if i is None:
                break
            small = 0
    else:
        flag = rank is None
    if not us:
        return np.zeros((m, 0)), np.zeros((0, n)), False
    U = np.stack(us, axis=1)
    V = np.stack(vs, axis=0)
    Qu, Ru = np.linalg.qr(U)
    Qv, Rv = np.linalg.qr(V.T)
    Uc, s, Vh = np.linalg.svd(Ru @ Rv.T)
    scale = np.linalg.norm(s)
    if rank is not None:
        rho = min(rank, len(s))
    else:
        tail = np.append(np.sqrt(np.cumsum((s ** 2)[::-1]))[::-1], 0.0)
        rho = int(np.flatnonzero(tail <= 0.5 * tol * scale)[0])
    return (Qu @ Uc[:, :rho]) * s[:rho], (Vh[:rho] @ Qv.T), flag


def compress_block(pcop, tree: ClusterTree, t: int, s: int, method="randomized",
                   tol=1e-10, rank=None, rng=None):
    block = BlockView(pcop, tree.indices(t), tree.indices(s))
    if method == "randomized":
        return compress_randomized(block, tol=tol, rank=rank, rng=rng)
    if method == "cur":
        return compress_aca(block, tol=tol, rank=rank, rng=rng)
    raise ValueError(f"unknown compression method {method!r}")


@dataclass
class HMatrix:
    tree: ClusterTree
    blocks: list
    flagged: int = 0

    @property
    def N(self) -> int:
        return self.tree.domain.size

    def matvec(self, f) -> np.ndarray:
        f = np.asarray(f)
        shape = f.shape
        x = f.reshape(-1)
        out = np.zeros(self.N, dtype=np.result_type(x, *(b[3][0].dtype for b in self.blocks)))
        for t, s, kind, data in self.blocks:
            rows, cols = self.tree.indices(t), self.tree.indices(s)
            if kind == DENSE:
                out[rows] += data[0] @ x[cols]
            elif data[0].shape[1]:
                out[rows] += data[0] @ (data[1] @ x[cols])
        return out.reshape(shape)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.N, self.N))
        for t, s, kind, data in self.blocks:
            rows, cols = self.tree.indices(t), self.tree.indices(s)
            out[np.ix_(rows, cols)] = data[0] if kind == DENSE else data[0] @ data[1]
        return out

    def ranks(self) -> list[int]:
        return [d[0].shape[1] for _, _, k, d in self.blocks if k == LOWRANK]


def assemble_hmatrix(pcop, tol=1e-10, leaf_cap=32, method="randomized", rank=None,
                     seed=0) -> HMatrix:
    tree = build_cluster_tree(pcop.domain, leaf_cap)
    rng = np.random.default_rng(seed)
    blocks, flagged = [], 0
    for t, s, adm in build_block_tree(tree):
        if adm:
            U, V, flag = compress_block(pcop, tree, t, s, method, tol, rank, rng)
            flagged += bool(flag)
            blocks.append((t, s, LOWRANK, (U, V)))
        else:
            D = pcop.submatrix(tree.indices(t), tree.indices(s))
            blocks.append((t, s, DENSE, (D,)))
    return HMatrix(tree, blocks, flagged)


def hmat_matvec(H: HMatrix, f) -> np.ndarray:
    return H.matvec(f)


def export_hmatrix(H: HMatrix, path) -> None:
    """Little-endian binary dump; see the README for the record layout."""
    tree = H.tree
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IIQI", VERSION, tree.domain.ndim, H.N, tree.leaf_cap))
        fh.write(struct.pack("<I", len(tree.nodes)))
        for n in tree.nodes:
            fh.write(struct.pack("<qqi", n.lo, n.hi, n.split_axis))
        fh.write(np.asarray(tree.perm, dtype="<i8").tobytes())
        fh.write(struct.pack("<Q", len(H.blocks)))
        for t, s, kind, data in H.blocks:
            if np.iscomplexobj(data[0]):
                raise TypeError("binary export supports real factors only")
            rank = data[0].shape[1] if kind == LOWRANK else 0
            fh.write(struct.pack("<IIBI", t, s, kind, rank))
            for arr in data:
                fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_hmatrix(path) -> dict:
    """Read an exported file back into plain arrays (for inspection and tests)."""
    with open(path, "rb") as fh:
        buf = fh.read()
    if buf[:4] != MAGIC:
        raise ValueError("not a PCHM file")
    pos = 4
    version, d, N, leaf_cap = struct.unpack_from("<IIQI", buf, pos)
    pos += struct.calcsize("<IIQI")
    (n_nodes,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    nodes = []
    for _ in range(n_nodes):
        nodes.append(struct.unpack_from("<qqi", buf, pos))
        pos += struct.calcsize("<qqi")
    perm = np.frombuffer(buf, dtype="<i8", count=N, offset=pos)
    pos += 8 * N
    (n_blocks,) = struct.unpack_from("<Q", buf, pos)
    pos += 8
    blocks = []
    for _ in range(n_blocks):
        t, s, kind, rank = struct.unpack_from("<IIBI", buf, pos)
        pos += struct.calcsize("<IIBI")
        mt = nodes[t][1] - nodes[t][0]
        ms = nodes[s][1] - nodes[s][0]
        shapes = [(mt, ms)] if kind == DENSE else [(mt, rank), (rank, ms)]
        arrs = []
        for sh in shapes:
            cnt = sh[0] * sh[1]
            arrs.append(np.frombuffer(buf, dtype="<f8", count=cnt, offset=pos).reshape(sh))
            pos += 8 * cnt
        blocks.append((t, s, kind, tuple(arrs)))
    return {"version": version, "d": d, "N": N, "leaf_cap": leaf_cap,
            "nodes": nodes, "perm": perm, "blocks": blocks}
