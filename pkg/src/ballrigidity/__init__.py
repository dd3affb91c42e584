"""Numerical laboratory for scalar-curvature rigidity of geodesic balls in S^n.

Desk-scale implementation and verification of every computational ingredient
of the rigidity argument: perturbation expansions of scalar and mean
curvature, weighted integral identities, the divergence-free gauge
projection, the boundary threshold 2/sqrt(n+3), and coercivity of the
rigidity quadratic form.
"""

from .geometry import (
    ChartSpec,
    QuadParams,
    build_chart,
    build_quadrature,
    eval_background,
    eval_boundary,
    integrate_boundary,
    integrate_volume,
)
from .fields import (
    SymTensorField,
    VectorField,
    eigen_divfree_field,
    jet_at,
    lie_derivative_metric,
    make_admissible_field,
)

__all__ = [
    "ChartSpec",
    "QuadParams",
    "SymTensorField",
    "VectorField",
    "build_chart",
    "build_quadrature",
    "eigen_divfree_field",
    "eval_background",
    "eval_boundary",
    "integrate_boundary",
    "integrate_volume",
    "jet_at",
    "lie_derivative_metric",
    "make_admissible_field",
]

__version__ = "0.1.0"
