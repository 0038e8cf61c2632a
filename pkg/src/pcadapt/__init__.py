"""Adaptive product-convolution approximation of matrix-free operators."""
from .adaptivity import AdaptiveBuilder, BuildReport, build
from .boxes import IndexBox
from .grid import AdaptiveGrid, make_root
from .gridfunction import GridFunction
from .hmatrix import HMatrix, assemble_hmatrix, export_hmatrix, load_hmatrix
from .operator import ProductConvolutionOperator
from .operators import (BlurOperator, DenseOperator, OperatorHandle, PoissonSchurOperator,
                        blur_operator, make_operator, poisson_schur_operator,
                        schur_preconditioner_study)
from .verification import audit

__version__ = "0.1.0"
__all__ = [
    "AdaptiveBuilder", "AdaptiveGrid", "BlurOperator", "BuildReport", "DenseOperator",
    "GridFunction", "HMatrix", "IndexBox", "OperatorHandle", "PoissonSchurOperator",
    "ProductConvolutionOperator", "assemble_hmatrix", "audit", "blur_operator", "build",
    "export_hmatrix", "load_hmatrix", "make_operator", "make_root", "poisson_schur_operator",
    "schur_preconditioner_study",
]
