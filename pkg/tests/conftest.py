import numpy as np
import pytest

from pcadapt.boxes import IndexBox
from pcadapt.grid import make_root
from pcadapt.operators import DenseOperator


def random_refine(grid, rng, steps):
    """Apply ``steps`` random admissible subdivisions; return the grid."""
    for _ in range(steps):
        cands = [c for c in grid.leaves() if grid.refinable_axes(c)]
        if not cands:
            break
        cid = cands[rng.integers(len(cands))]
        axes = grid.refinable_axes(cid)
        grid.subdivide(cid, axes[rng.integers(len(axes))])
    return grid


def random_grid(rng, d=None, max_extent=33, steps=20):
    d = d or int(rng.integers(1, 3))
    shape = tuple(int(rng.integers(3, max_extent + 1)) for _ in range(d))
    return random_refine(make_root(IndexBox.from_shape(shape)), rng, steps)


def varying_kernel_matrix(dom, rng):
    """Smooth, locally varying Gaussian kernel with source-dependent width and drift."""
    P = dom.points().astype(float)
    d, n = dom.ndim, max(dom.shape)
    c = rng.standard_normal((d + 1, d))
    s0 = rng.uniform(1.0, 3.0)
    sig = s0 * (1 + 0.3 * np.sin(P @ c[0] / n * 3))
    shift = 0.5 * np.sin(P @ c[1:].T / n * 2)
    D = P[:, None, :] - P[None, :, :] - shift[None, :, :]
    return np.exp(-(D ** 2).sum(-1) / (2 * sig[None, :] ** 2))


def gaussian_convolution(dom, s=1.7):
    P = dom.points().astype(float)
    D = P[:, None, :] - P[None, :, :]
    return DenseOperator(dom, np.exp(-(D ** 2).sum(-1) / (2 * s * s)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
