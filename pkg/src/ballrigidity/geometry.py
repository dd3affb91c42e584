"""Round background geometry of a geodesic ball in the unit sphere.

The ball of height ``c`` around the north pole is represented in a single
stereographic chart (projection from the south pole), where it becomes the
Euclidean ball of radius ``rho0 = sqrt((1-c)/(1+c))`` and the round metric is
conformal, ``gbar = lam^2 * delta`` with ``lam = 2/(1+|x|^2)``. The height
function is ``f = (1-|x|^2)/(1+|x|^2)``. Every background quantity
(Christoffel symbols, Hess f, the boundary normal and frame) is evaluated
from closed forms; finite differences are reserved for cross-checks.

All evaluators broadcast over a leading batch axis: ``x`` of shape ``(m, n)``
produces fields of shape ``(m, ...)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ChartDomainError, NonFiniteFieldError


@dataclass(frozen=True)
class QuadParams:
    """Resolution knobs for the product quadrature and jet finite differences."""

    n_radial: int = 48
    n_angular: int = 96   # azimuth nodes; also the full angular count for n=2
    n_polar: int = 24     # polar nodes, used only for n=3
    fd_step: float = 1e-3

    def validate(self, n: int) -> None:
        counts = [self.n_radial, self.n_angular] + ([self.n_polar] if n == 3 else [])
        if any(k < 4 for k in counts):
            raise ChartDomainError("quadrature node counts must be >= 4")
        if not 0 < self.fd_step < 0.1:
            raise ChartDomainError("finite-difference step must lie in (0, 0.1)")


DEFAULT_QUAD_N2 = QuadParams(n_radial=48, n_angular=96)
DEFAULT_QUAD_N3 = QuadParams(n_radial=32, n_angular=48, n_polar=24)


@dataclass(frozen=True)
class ChartSpec:
    """Dimension, boundary height, and chart radius of the geodesic ball."""

    n: int
    c: float
    rho0: float
    quad: QuadParams


@dataclass(frozen=True)
class PointEval:
    """Background geometry at chart points.

    Index conventions: ``gammabar[..., k, i, j]`` is Gamma^k_{ij} and
    ``dgammabar[..., l, k, i, j]`` is its partial derivative along x_l.
    ``df`` is the coordinate differential of f (a covector), ``gradf`` the
    metric gradient (a vector, equal to -x in this chart).
    """

    x: np.ndarray
    lam: np.ndarray
    f: np.ndarray
    gbar: np.ndarray
    gbar_inv: np.ndarray
    gammabar: np.ndarray
    dgammabar: np.ndarray
    df: np.ndarray
    gradf: np.ndarray
    hessf: np.ndarray
    ric: np.ndarray


@dataclass(frozen=True)
class BoundaryEval:
    """Boundary geometry: outward unit normal, orthonormal frame, closed forms."""

    x: np.ndarray
    point: PointEval
    nubar: np.ndarray        # outward unit normal, vector components
    nubar_cov: np.ndarray    # index lowered with gbar
    frame: np.ndarray        # (..., n-1, n) tangent vectors, gbar-orthonormal
    Hbar: float
    dnubar_f: float
    area_weight: np.ndarray  # dsigma_gbar relative to Euclidean boundary measure


@dataclass(frozen=True)
class QuadratureRule:
    """Product quadrature over the ball and its boundary sphere.

    Weights carry the full metric densities, so plain weighted sums of node
    values integrate against dvol_gbar and dsigma_gbar. Background evaluations
    at all nodes are precomputed since every functional in the package needs
    them.
    """

    spec: ChartSpec
    volume_x: np.ndarray
    volume_w: np.ndarray
    boundary_x: np.ndarray
    boundary_w: np.ndarray
    volume_point: PointEval = field(repr=False, default=None)
    boundary: BoundaryEval = field(repr=False, default=None)


def build_chart(n: int, c: float, quad: QuadParams | None = None) -> ChartSpec:
    """Validate parameters and fix the chart radius of {f >= c}."""
    if not isinstance(n, (int, np.integer)) or n < 2:
        raise ChartDomainError(f"dimension must be an integer >= 2, got {n!r}")
    if not 0.0 < c < 1.0:
        raise ChartDomainError(f"boundary height must satisfy 0 < c < 1, got {c!r}")
    if quad is None:
        quad = DEFAULT_QUAD_N3 if n == 3 else DEFAULT_QUAD_N2
    quad.validate(n)
    rho0 = float(np.sqrt((1.0 - c) / (1.0 + c)))
    return ChartSpec(n=int(n), c=float(c), rho0=rho0, quad=quad)


def conformal_factor(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return 2.0 / (1.0 + np.sum(x * x, axis=-1))


def height_function(x: np.ndarray) -> np.ndarray:
    r2 = np.sum(np.asarray(x, dtype=float) ** 2, axis=-1)
    return (1.0 - r2) / (1.0 + r2)


def connection_at(x: np.ndarray):
    """Conformal factor, Christoffel symbols, and their gradients at any x.

    The chart formulas are global (the denominators 1 + |x|^2 never vanish),
    so field evaluators may call this outside the ball, e.g. on
    finite-difference stencils poking past the boundary.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    eye = np.eye(n)
    lam = conformal_factor(x)

    # Gamma^k_{ij} = -lam (delta_ki x_j + delta_kj x_i - delta_ij x_k)
    d_ki_xj = np.einsum("ki,...j->...kij", eye, x)
    d_kj_xi = np.einsum("kj,...i->...kij", eye, x)
    d_ij_xk = np.einsum("ij,...k->...kij", eye, x)
    base = d_ki_xj + d_kj_xi - d_ij_xk
    gammabar = -lam[..., None, None, None] * base

    # partial_l Gamma^k_{ij}: product rule with partial_l lam = -lam^2 x_l
    dbase = (
        np.einsum("ki,jl->kijl", eye, eye)
        + np.einsum("kj,il->kijl", eye, eye)
        - np.einsum("ij,kl->kijl", eye, eye)
    )
    dgammabar = np.einsum(
        "...l,...kij->...lkij", lam[..., None] ** 2 * x, base
    ) - np.einsum("...,kijl->...lkij", lam, dbase)
    return lam, gammabar, dgammabar


def eval_background(spec: ChartSpec, x: np.ndarray) -> PointEval:
    """Closed-form background data at chart points with |x| <= rho0."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != spec.n:
        raise ChartDomainError(f"points must have {spec.n} coordinates")
    r = np.sqrt(np.sum(x * x, axis=-1))
    if np.any(r > spec.rho0 * (1.0 + 1e-12)):
        raise ChartDomainError("point outside the chart radius of the ball")

    n = spec.n
    lam, gammabar, dgammabar = connection_at(x)
    f = lam - 1.0
    eye = np.eye(n)
    gbar = lam[..., None, None] ** 2 * eye
    gbar_inv = lam[..., None, None] ** (-2) * eye

    df = -(lam[..., None] ** 2) * x      # partial_i f
    gradf = -x                            # gbar^{ij} partial_j f
    hessf = -(f[..., None, None]) * gbar  # Hessian identity of the height function
    ric = (n - 1) * gbar
    return PointEval(
        x=x, lam=lam, f=f, gbar=gbar, gbar_inv=gbar_inv, gammabar=gammabar,
        dgammabar=dgammabar, df=df, gradf=gradf, hessf=hessf, ric=ric,
    )


def boundary_points(spec: ChartSpec, angular) -> np.ndarray:
    """Chart points on |x| = rho0 from angular coordinates.

    For n=2 ``angular`` is an array of azimuth angles; for n=3 a pair
    ``(polar, azimuth)`` of broadcastable arrays.
    """
    rho0 = spec.rho0
    if spec.n == 2:
        theta = np.asarray(angular, dtype=float)
        return rho0 * np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    if spec.n == 3:
        phi, theta = angular
        phi = np.asarray(phi, dtype=float)
        theta = np.asarray(theta, dtype=float)
        sp = np.sin(phi)
        return rho0 * np.stack(
            [sp * np.cos(theta), sp * np.sin(theta), np.cos(phi)], axis=-1
        )
    raise ChartDomainError("boundary parametrizations implemented for n in {2, 3}")


def _boundary_frame(spec: ChartSpec, angular, lam: np.ndarray) -> np.ndarray:
    """gbar-orthonormal tangent frame at boundary points, shape (..., n-1, n)."""
    if spec.n == 2:
        theta = np.asarray(angular, dtype=float)
        t = np.stack([-np.sin(theta), np.cos(theta)], axis=-1)
        return t[..., None, :] / lam[..., None, None]
    phi, theta = angular
    phi = np.asarray(phi, dtype=float)
    theta = np.asarray(theta, dtype=float)
    t1 = np.stack(
        [np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), -np.sin(phi)],
        axis=-1,
    )
    zeros = np.zeros_like(theta)
    t2 = np.stack([-np.sin(theta), np.cos(theta), zeros], axis=-1)
    return np.stack([t1, t2], axis=-2) / lam[..., None, None]


def mean_curvature_round(n: int, c: float) -> float:
    """Mean curvature of the boundary sphere in the round metric."""
    return (n - 1) * c / np.sqrt(1.0 - c * c)


def eval_boundary(spec: ChartSpec, angular) -> BoundaryEval:
    """Boundary data at |x| = rho0: unit normal, frame, umbilic closed forms."""
    x = boundary_points(spec, angular)
    pe = eval_background(spec, x)
    rho = np.sqrt(np.sum(x * x, axis=-1))
    nubar = x / (rho[..., None] * pe.lam[..., None])
    nubar_cov = np.einsum("...ij,...j->...i", pe.gbar, nubar)
    frame = _boundary_frame(spec, angular, pe.lam)
    Hbar = float(mean_curvature_round(spec.n, spec.c))
    dnubar_f = -float(np.sqrt(1.0 - spec.c**2))
    area_weight = pe.lam ** (spec.n - 1)
    return BoundaryEval(
        x=x, point=pe, nubar=nubar, nubar_cov=nubar_cov, frame=frame,
        Hbar=Hbar, dnubar_f=dnubar_f, area_weight=area_weight,
    )


def _gauss_legendre(k: int, a: float, b: float):
    nodes, weights = np.polynomial.legendre.leggauss(k)
    half = 0.5 * (b - a)
    return a + half * (nodes + 1.0), half * weights


def build_quadrature(spec: ChartSpec) -> QuadratureRule:
    """Gauss-Legendre x trapezoid product rule over the ball and its boundary.

    Integrands are smooth in these coordinates, so the radial Gauss rule and
    the periodic trapezoid rule both converge spectrally; the defaults land
    well below 1e-10 on the closed-form volume and area.
    """
    n, q, rho0 = spec.n, spec.quad, spec.rho0
    if n == 2:
        r, wr = _gauss_legendre(q.n_radial, 0.0, rho0)
        theta = 2.0 * np.pi * np.arange(q.n_angular) / q.n_angular
        wth = 2.0 * np.pi / q.n_angular
        R, TH = np.meshgrid(r, theta, indexing="ij")
        WR = np.broadcast_to(wr[:, None], R.shape)
        vol_x = np.stack([R * np.cos(TH), R * np.sin(TH)], axis=-1).reshape(-1, 2)
        lam = conformal_factor(vol_x)
        vol_w = (WR * wth * R).reshape(-1) * lam**n
        b_ang = theta
        b_x = boundary_points(spec, b_ang)
        lam_b = conformal_factor(b_x)
        b_w = np.full(b_x.shape[0], wth * rho0) * lam_b ** (n - 1)
    elif n == 3:
        r, wr = _gauss_legendre(q.n_radial, 0.0, rho0)
        t, wt = _gauss_legendre(q.n_polar, -1.0, 1.0)  # t = cos(polar angle)
        theta = 2.0 * np.pi * np.arange(q.n_angular) / q.n_angular
        wth = 2.0 * np.pi / q.n_angular
        R, T, TH = np.meshgrid(r, t, theta, indexing="ij")
        WR = np.broadcast_to(wr[:, None, None], R.shape)
        WT = np.broadcast_to(wt[None, :, None], R.shape)
        phi = np.arccos(T)
        sp = np.sin(phi)
        vol_x = np.stack(
            [R * sp * np.cos(TH), R * sp * np.sin(TH), R * T], axis=-1
        ).reshape(-1, 3)
        lam = conformal_factor(vol_x)
        vol_w = (WR * WT * wth * R**2).reshape(-1) * lam**n
        PHI_b, TH_b = np.meshgrid(np.arccos(t), theta, indexing="ij")
        b_ang = (PHI_b.reshape(-1), TH_b.reshape(-1))
        b_x = boundary_points(spec, b_ang)
        lam_b = conformal_factor(b_x)
        WT_b = np.broadcast_to(wt[:, None], PHI_b.shape).reshape(-1)
        b_w = WT_b * wth * rho0**2 * lam_b ** (n - 1)
    else:
        raise ChartDomainError("quadrature grids implemented for n in {2, 3}")

    vol_pe = eval_background(spec, vol_x)
    bdry = eval_boundary(spec, b_ang)
    return QuadratureRule(
        spec=spec, volume_x=vol_x, volume_w=vol_w,
        boundary_x=b_x, boundary_w=b_w,
        volume_point=vol_pe, boundary=bdry,
    )


def _node_values(values_or_callable, x: np.ndarray) -> np.ndarray:
    if callable(values_or_callable):
        vals = np.asarray(values_or_callable(x), dtype=float)
    else:
        vals = np.asarray(values_or_callable, dtype=float)
    if vals.shape != (x.shape[0],):
        raise ValueError(f"expected {x.shape[0]} scalar node values, got shape {vals.shape}")
    return vals


def _checked_sum(vals: np.ndarray, w: np.ndarray, x: np.ndarray, where: str) -> float:
    bad = ~np.isfinite(vals)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise NonFiniteFieldError(
            f"non-finite integrand at {where} node {idx}, x = {x[idx].tolist()}"
        )
    # np.sum pairwise accumulation keeps results bit-stable for a fixed node order
    return float(np.sum(vals * w))


def integrate_volume(rule: QuadratureRule, scalar_field) -> float:
    """Integral over the ball against dvol_gbar; linear in the integrand."""
    vals = _node_values(scalar_field, rule.volume_x)
    return _checked_sum(vals, rule.volume_w, rule.volume_x, "volume")


def integrate_boundary(rule: QuadratureRule, scalar_field) -> float:
    """Integral over the boundary sphere against dsigma_gbar."""
    vals = _node_values(scalar_field, rule.boundary_x)
    return _checked_sum(vals, rule.boundary_w, rule.boundary_x, "boundary")


def ball_volume(n: int, c: float) -> float:
    """Closed-form volume of {f >= c} in the round metric (n = 2 or 3)."""
    if n == 2:
        return 2.0 * np.pi * (1.0 - c)
    if n == 3:
        return 2.0 * np.pi * (np.arccos(c) - c * np.sqrt(1.0 - c * c))
    raise ChartDomainError("closed-form volume implemented for n in {2, 3}")


def boundary_area(n: int, c: float) -> float:
    """Closed-form area of the boundary geodesic sphere (n = 2 or 3)."""
    if n == 2:
        return 2.0 * np.pi * np.sqrt(1.0 - c * c)
    if n == 3:
        return 4.0 * np.pi * (1.0 - c * c)
    raise ChartDomainError("closed-form area implemented for n in {2, 3}")
