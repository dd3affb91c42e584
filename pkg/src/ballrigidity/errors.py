"""Exception types shared across the package."""


class ChartDomainError(ValueError):
    """Invalid chart parameters or a point outside the chart radius."""


class SmallnessGateError(ValueError):
    """Perturbation exceeds the |h| <= 1/2 gate required by the expansions."""


class AdmissibilityError(ValueError):
    """Field does not satisfy the tangential boundary condition."""


class NonFiniteFieldError(FloatingPointError):
    """Integrand evaluated to a non-finite value at a quadrature node."""


class GramConditionError(RuntimeError):
    """Gauge Gram matrix too ill-conditioned to project reliably."""


class BasisDependenceError(RuntimeError):
    """Mass matrix of a trial basis is not positive definite."""


class BasisConfigurationError(ValueError):
    """Basis construction produced no usable elements."""


class RoundingFloorError(RuntimeError):
    """Measured remainder sits at the rounding floor; larger amplitudes needed."""
