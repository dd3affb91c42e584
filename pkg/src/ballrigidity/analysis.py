"""Integral identities, thresholds, coercivity, and the rigidity certificate.

Everything here is a quadrature reduction of jets produced by the fields
module. The deficit integrals use the exact curvature routes; the identity
residuals come in two kinds:

* exact identities (the trace-divergence identity, the boundary flux
  identity, closure of the boundary one-form), whose residuals sit at the
  quadrature/stencil floor and shrink under refinement;
* estimates with cubic remainders, whose residuals scale like eps^3 under
  h -> eps h. Estimates stated for divergence-free tensors are evaluated on
  projected fields, with the divergence leakage reported and, where asked,
  removed by a two-term fit in the amplitude.

Existential constants are never asserted: each estimate reports a fitted
ratio together with the scaling evidence.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np
import scipy.linalg

from .errors import BasisDependenceError
from .curvature import (
    _boundary_contractions,
    _scalar_exact_from_jet,
    mean_exact,
)
from .fields import (
    SymTensorField,
    jet_at,
    lie_derivative_metric,
    linear_combination,
    polynomial_perturbation_field,
    require_smallness,
    tangential_block_sup,
    fd_partials,
)
from .gauge import (
    GaugeBasis,
    build_gauge_basis,
    bump_poly,
    slice_project,
)
from .geometry import (
    ChartSpec,
    PointEval,
    QuadratureRule,
    ball_volume,
    boundary_area,
    conformal_factor,
    mean_curvature_round,
)
from .polynomials import Poly, multi_indices


# ---------------------------------------------------------------------------
# report containers
# ---------------------------------------------------------------------------

@dataclass
class IdentityReport:
    tag: str
    residual: float
    cubic: float
    metadata: dict = dc_field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.residual / self.cubic if self.cubic > 0 else np.nan


@dataclass
class CubicBound:
    volume_cubic: float
    boundary_cubic: float
    c1_norm: float
    w12_norm_sq: float

    @property
    def total(self) -> float:
        return self.volume_cubic + self.boundary_cubic

    @property
    def trace_ratio(self) -> float:
        denom = self.c1_norm * self.w12_norm_sq
        return self.total / denom if denom > 0 else np.nan


@dataclass
class QuadraticFormBreakdown:
    """The eight terms of the rigidity quadratic form plus the deficits."""

    t1: float
    t2: float
    t3: float
    t4: float
    b1: float
    b2: float
    b3: float
    b4: float
    i_r: float
    i_h: float
    cubic: CubicBound

    @property
    def q_total(self) -> float:
        return (self.t1 + self.t2 + self.t3 + self.t4
                + self.b1 + self.b2 + self.b3 + self.b4)

    @property
    def key_residual(self) -> float:
        return abs(self.i_r + self.i_h + self.q_total)


@dataclass
class ThresholdReport:
    n: int
    c_samples: np.ndarray
    beta_samples: np.ndarray
    b2_samples: np.ndarray
    cstar: float
    cstar_closed: float
    b2_root: float
    b2_root_closed: float


@dataclass
class ScalingFit:
    """Amplitude sweep of a residual with raw and leakage-corrected slopes."""

    eps: np.ndarray
    residuals: np.ndarray
    slope_raw: float
    slope_corrected: float
    leakage_coef: float
    cubic_coef: float


@dataclass
class CoercivityReport:
    n: int
    c: float
    kappa: float
    basis_dim: int
    min_vector_margin: float      # min over basis of (Q - M/2) / M diagonal ratio
    beta_coefficient: float
    b2_coefficient: float
    min_node_beta: float
    min_node_b2: float
    eigenvalues: np.ndarray


@dataclass
class RigidityCertificate:
    verdict: str
    c: float
    cstar: float
    min_scalar_deficit: float
    min_mean_deficit: float
    isometry_residual: float
    div_l2: float
    div_sup: float
    q_total: float
    mass: float
    cubic_volume: float
    cubic_boundary: float
    c1_norm: float
    w12_norm_sq: float
    kappa: float
    c_fit: float
    slack: float
    margin: float
    smallness_bound: float
    explanation: str


# ---------------------------------------------------------------------------
# node-level assembly helpers
# ---------------------------------------------------------------------------

def _volume_jet(spec: ChartSpec, rule: QuadratureRule, field: SymTensorField,
                with_second: bool = True):
    pe = rule.volume_point
    jet = jet_at(field, pe, fd_step=spec.quad.fd_step, with_second=with_second)
    return jet, pe


def _boundary_jet(spec: ChartSpec, rule: QuadratureRule, field: SymTensorField):
    bdry = rule.boundary
    jet = jet_at(field, bdry.point, fd_step=spec.quad.fd_step, with_second=False)
    return jet, bdry


def _antisym(dh: np.ndarray) -> np.ndarray:
    """u_{kjl} = nabla_k h_{jl} - nabla_l h_{jk} from dh[p, i, j, k]."""
    return dh - np.einsum("pljk->pkjl", dh)


def deficit_scalar(spec: ChartSpec, rule: QuadratureRule,
                   field: SymTensorField) -> float:
    """Weighted scalar-curvature deficit integral over the ball."""
    require_smallness(field, rule.volume_x)
    jet, pe = _volume_jet(spec, rule, field)
    r = _scalar_exact_from_jet(jet, pe)
    n = spec.n
    return float(np.sum(rule.volume_w * (r - n * (n - 1)) * pe.f))


def deficit_mean(spec: ChartSpec, rule: QuadratureRule,
                 field: SymTensorField) -> float:
    """Weighted mean-curvature deficit over the boundary; the constant height
    is factored out rather than sampled."""
    ms = mean_exact(spec, field, rule.boundary, fd_step=spec.quad.fd_step)
    jet, bdry = _boundary_jet(spec, rule, field)
    hnn, _, _, _, _ = _boundary_contractions(jet, bdry)
    return spec.c * float(np.sum(rule.boundary_w * (2.0 - hnn) * (ms.h_exact - bdry.Hbar)))


def trace_divergence_identity(spec: ChartSpec, rule: QuadratureRule,
                              field: SymTensorField) -> float:
    """Volume integral that the Hessian identity of the height function kills.

    For admissible fields the companion boundary integrand vanishes
    pointwise, so the returned volume integral is an exact zero up to
    quadrature and stencil error:
    int [ (n-1) tr(h) f - gbar^{ik} gbar^{jl} (nabla_k h_{jl}
          - nabla_l h_{jk}) d_i f ] dvol.
    """
    jet, pe = _volume_jet(spec, rule, field, with_second=False)
    n = spec.n
    u = _antisym(jet.dh)
    lam4 = pe.lam**-4
    cross = lam4 * np.einsum("pkjj,pk->p", u, pe.df)
    return float(np.sum(rule.volume_w * ((n - 1) * jet.trace * pe.f - cross)))


def divergence_boundary_flux(spec: ChartSpec, rule: QuadratureRule,
                             field: SymTensorField) -> tuple[float, float]:
    """(integral of (delta h)(nubar) over the boundary, sup node |delta h|).

    This flux is the leading divergence leakage of the identities stated for
    divergence-free tensors: their derivations trade normal derivative traces
    for tangential data through delta h = 0, and the traded linear terms
    integrate to exactly this flux.
    """
    bjet, bdry = _boundary_jet(spec, rule, field)
    nu = bdry.nubar.reshape(-1, spec.n)
    flux = float(np.sum(rule.boundary_w * np.einsum("pl,pl->p", bjet.div, nu)))
    lam = bdry.point.lam
    sup = float(np.max(lam**-1 * np.sqrt(
        np.einsum("pl,pl->p", bjet.div, bjet.div)), initial=0.0))
    return flux, sup


def cubic_bound(spec: ChartSpec, rule: QuadratureRule,
                field: SymTensorField) -> CubicBound:
    """Cubic majorants plus the surrogate norms that control them.

    The reported ratio (cubic total over C1-norm times squared W12-norm)
    staying bounded is the empirical form of controlling boundary error terms
    by interior norms.
    """
    vjet, _ = _volume_jet(spec, rule, field, with_second=False)
    bjet, _ = _boundary_jet(spec, rule, field)
    vol_cubic = float(np.sum(rule.volume_w *
                             (vjet.norm_h * vjet.norm_dh**2 + vjet.norm_h**3)))
    bdry_cubic = float(np.sum(rule.boundary_w *
                              (bjet.norm_h**2 * bjet.norm_dh + bjet.norm_h**3)))
    c1 = float(max(np.max(vjet.norm_h + vjet.norm_dh, initial=0.0),
                   np.max(bjet.norm_h + bjet.norm_dh, initial=0.0)))
    w12 = float(np.sum(rule.volume_w * (vjet.norm_h**2 + vjet.norm_dh**2)))
    return CubicBound(volume_cubic=vol_cubic, boundary_cubic=bdry_cubic,
                      c1_norm=c1, w12_norm_sq=w12)


# ---------------------------------------------------------------------------
# the integral identities
# ---------------------------------------------------------------------------

def scalar_deficit_expansion(spec: ChartSpec, rule: QuadratureRule,
                             field: SymTensorField) -> IdentityReport:
    """Second-order expansion of the weighted scalar deficit for admissible h.

    Combines the volume terms, the two gradient-of-f cross terms, and three
    boundary flux terms; the total is bounded by the cubic majorant.
    """
    require_smallness(field, rule.volume_x)
    jet, pe = _volume_jet(spec, rule, field)
    n = spec.n
    lam = pe.lam
    r = _scalar_exact_from_jet(jet, pe)
    u = _antisym(jet.dh)
    dh = jet.dh

    v1 = (r - n * (n - 1) - (n - 1) * jet.norm_h**2) * pe.f
    v2 = 0.25 * jet.norm_dh**2 * pe.f
    dtr = lam[:, None] ** -2 * np.einsum("pijj->pi", dh)
    v3 = 0.25 * lam**-2 * np.einsum("pi,pi->p", dtr, dtr) * pe.f
    v4 = -0.5 * lam**-6 * np.einsum("pikq,pkiq->p", dh, dh) * pe.f
    v5 = lam**-6 * np.einsum("pjl,pkjl,pk->p", jet.h, u, pe.df)
    usum = np.einsum("pkjj->pk", u)
    v6 = lam**-6 * np.einsum("pik,pk,pi->p", jet.h, usum, pe.df)
    volume = float(np.sum(rule.volume_w * (v1 + v2 + v3 + v4 + v5 + v6)))

    bjet, bdry = _boundary_jet(spec, rule, field)
    nu = bdry.nubar
    lb = bdry.point.lam
    bu = _antisym(bjet.dh)
    busum = np.einsum("pkjj->pk", bu)
    g1 = lb**-2 * np.einsum("pk,pk->p", busum, nu)
    g2 = -(lb**-4) * np.einsum("pjl,pkjl,pk->p", bjet.h, bu, nu)
    g3 = -(lb**-4) * np.einsum("pqk,pk,pq->p", bjet.h, busum, nu)
    boundary = spec.c * float(np.sum(rule.boundary_w * (g1 + g2 + g3)))

    cub = cubic_bound(spec, rule, field)
    return IdentityReport(
        tag="scalar_deficit", residual=abs(volume + boundary),
        cubic=cub.volume_cubic + float(np.sum(
            rule.boundary_w * bjet.norm_h**2 * bjet.norm_dh)),
        metadata={"volume_part": volume, "boundary_part": boundary},
    )


def scalar_deficit_expansion_divfree(spec: ChartSpec, rule: QuadratureRule,
                                     field: SymTensorField,
                                     div_l2: float | None = None) -> IdentityReport:
    """Expansion of the weighted scalar deficit for divergence-free tensors.

    On projected fields the divergence residual leaks into the identity at
    second order in the amplitude; callers pass the measured residual so the
    report can carry it alongside the cubic bound.
    """
    require_smallness(field, rule.volume_x)
    jet, pe = _volume_jet(spec, rule, field)
    n = spec.n
    lam = pe.lam
    r = _scalar_exact_from_jet(jet, pe)
    dh = jet.dh

    w1 = (r - n * (n - 1)) * pe.f
    w2 = 0.25 * jet.norm_dh**2 * pe.f
    dtr = lam[:, None] ** -2 * np.einsum("pijj->pi", dh)
    w3 = 0.25 * lam**-2 * np.einsum("pi,pi->p", dtr, dtr) * pe.f
    w4 = 0.5 * jet.norm_h**2 * pe.f
    w5 = 0.5 * jet.trace**2 * pe.f
    volume = float(np.sum(rule.volume_w * (w1 + w2 + w3 + w4 + w5)))

    bjet, bdry = _boundary_jet(spec, rule, field)
    hnn, _, _, nu, _ = _boundary_contractions(bjet, bdry)
    lb = bdry.point.lam
    dnf = bdry.dnubar_f
    w6 = 0.25 * (bjet.norm_h**2 + 3.0 * hnn**2) * dnf
    bu = _antisym(bjet.dh)
    w7 = lb**-2 * np.einsum("pkjj,pk->p", bjet.dh, nu) * spec.c
    w8 = -0.5 * lb**-4 * np.einsum("pkq,pkjq,pj->p", bjet.h, bjet.dh, nu) * spec.c
    w9 = -(lb**-4) * np.einsum("pjl,pkjl,pk->p", bjet.h, bu, nu) * spec.c
    w10 = -(lb**-4) * np.einsum("pqk,pkjj,pq->p", bjet.h, bjet.dh, nu) * spec.c
    boundary = float(np.sum(rule.boundary_w * (w6 + w7 + w8 + w9 + w10)))

    cub = cubic_bound(spec, rule, field)
    flux, div_sup_b = divergence_boundary_flux(spec, rule, field)
    return IdentityReport(
        tag="scalar_deficit_divfree", residual=abs(volume + boundary),
        cubic=cub.total,
        metadata={"volume_part": volume, "boundary_part": boundary,
                  "div_l2": div_l2, "div_flux": flux,
                  "div_sup_boundary": div_sup_b,
                  "residual_corrected": abs(volume + boundary - spec.c * flux)},
    )


def boundary_flux_identity(spec: ChartSpec, rule: QuadratureRule,
                           field: SymTensorField) -> IdentityReport:
    """Exact boundary identity for divergence-free admissible tensors.

    Returns the residual between the four flux integrals and their frame
    form, plus (in the metadata) the two pointwise umbilic contraction
    identities, which need only the tangential boundary condition, and the
    closure integral of the boundary one-form
    omega(e_a) = (1 - h(nu,nu)/2) h(e_a, nu).
    """
    bjet, bdry = _boundary_jet(spec, rule, field)
    hnn, han, S, nu, fr = _boundary_contractions(bjet, bdry)
    lb = bdry.point.lam
    hbar = bdry.Hbar
    n = spec.n
    w = rule.boundary_w

    bu = _antisym(bjet.dh)
    l1 = lb**-2 * np.einsum("pkjj,pk->p", bjet.dh, nu)
    l2 = -0.5 * lb**-4 * np.einsum("pkq,pkjq,pj->p", bjet.h, bjet.dh, nu)
    l3 = -(lb**-4) * np.einsum("pjl,pkjl,pk->p", bjet.h, bu, nu)
    l4 = -(lb**-4) * np.einsum("pqk,pkjj,pq->p", bjet.h, bjet.dh, nu)
    lhs = float(np.sum(w * (l1 + l2 + l3 + l4)))

    r1 = -(1.0 - hnn) * S
    r2 = (1.0 - 0.5 * hnn) * hnn * hbar
    r3 = (3.0 * n - 2.0) / (2.0 * (n - 1.0)) * np.einsum("pa,pa->p", han, han) * hbar
    rhs = float(np.sum(w * (r1 + r2 + r3)))

    # pointwise umbilic identities, valid for any admissible field
    p1 = np.einsum("pijk,pbi,paj,pbk->pa", bjet.dh, fr, fr, fr) \
        - n / (n - 1.0) * han * hbar
    p2 = np.einsum("pijk,pai,pbj,pbk->pa", bjet.dh, fr, fr, fr) \
        - 2.0 / (n - 1.0) * han * hbar
    omega = _omega_closure(spec, rule, field)
    flux, div_sup_b = divergence_boundary_flux(spec, rule, field)

    return IdentityReport(
        tag="boundary_flux", residual=abs(lhs - rhs), cubic=float(np.sum(
            w * (bjet.norm_h**2 * bjet.norm_dh + bjet.norm_h**3))),
        metadata={
            "lhs": lhs, "rhs": rhs,
            "pointwise_frame_div": float(np.max(np.abs(p1), initial=0.0)),
            "pointwise_frame_trace": float(np.max(np.abs(p2), initial=0.0)),
            "omega_closure": omega,
            "div_flux": flux, "div_sup_boundary": div_sup_b,
            "residual_corrected": abs(lhs - rhs - flux),
        },
    )


def _omega_closure(spec: ChartSpec, rule: QuadratureRule,
                   field: SymTensorField) -> float:
    """Integral of the tangential divergence of the boundary one-form.

    The one-form lives on the closed boundary sphere, so the integral of its
    divergence vanishes; the ambient extension used here keeps omega(nu) = 0
    identically, which makes the tangential divergence computable from chart
    derivatives alone.
    """
    bdry = rule.boundary
    X = bdry.x.reshape(-1, spec.n)

    def omega(Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        lam = conformal_factor(Y)
        rho = np.sqrt(np.sum(Y * Y, axis=-1))
        nu_vec = Y / (rho * lam)[:, None]
        nu_cov = lam[:, None] * Y / rho[:, None]
        h = field.components(Y)
        hn = np.einsum("pjk,pk->pj", h, nu_vec)
        hnn = np.einsum("pj,pj->p", hn, nu_vec)
        return (1.0 - 0.5 * hnn)[:, None] * (hn - hnn[:, None] * nu_cov)

    _, domega, _, _ = fd_partials(omega, X, spec.quad.fd_step, field.eval_radius)
    om = omega(X)
    pe = bdry.point
    G = pe.gammabar.reshape((X.shape[0],) + pe.gammabar.shape[-3:])
    cov = domega - np.einsum("pmij,pm->pij", G, om)
    fr = bdry.frame.reshape((X.shape[0],) + bdry.frame.shape[-2:])
    div_t = np.einsum("pai,paj,pij->p", fr, fr, cov)
    return float(np.sum(rule.boundary_w * div_t))


def mean_deficit_expansion(spec: ChartSpec, rule: QuadratureRule,
                           field: SymTensorField,
                           use_quadratic_mean: bool = False) -> IdentityReport:
    """Boundary estimate tying the weighted mean-curvature deficit to the
    flux integrals, for divergence-free admissible tensors.

    ``use_quadratic_mean`` replaces the exact mean curvature by its
    second-order model; comparing the two isolates how much of the residual
    is the mean-curvature remainder versus divergence leakage.
    """
    ms = mean_exact(spec, field, rule.boundary, fd_step=spec.quad.fd_step)
    bjet, bdry = _boundary_jet(spec, rule, field)
    hnn, han, _, nu, _ = _boundary_contractions(bjet, bdry)
    lb = bdry.point.lam
    hbar = bdry.Hbar
    n = spec.n
    w = rule.boundary_w

    hcurv = ms.h_quadratic if use_quadratic_mean else ms.h_exact
    main = (2.0 - hnn) * (hcurv - hbar)
    bu = _antisym(bjet.dh)
    l1 = lb**-2 * np.einsum("pkjj,pk->p", bjet.dh, nu)
    l2 = -0.5 * lb**-4 * np.einsum("pkq,pkjq,pj->p", bjet.h, bjet.dh, nu)
    l3 = -(lb**-4) * np.einsum("pjl,pkjl,pk->p", bjet.h, bu, nu)
    l4 = -(lb**-4) * np.einsum("pqk,pkjj,pq->p", bjet.h, bjet.dh, nu)
    corr = (0.25 * hnn**2 + n / (2.0 * (n - 1.0))
            * np.einsum("pa,pa->p", han, han)) * hbar
    total = float(np.sum(w * (main - (l1 + l2 + l3 + l4) + corr)))
    cubic = float(np.sum(w * (bjet.norm_h**2 * bjet.norm_dh + bjet.norm_h**3)))
    flux, div_sup_b = divergence_boundary_flux(spec, rule, field)
    return IdentityReport(tag="mean_deficit", residual=abs(total), cubic=cubic,
                          metadata={"quadratic_mean": use_quadratic_mean,
                                    "signed_total": total,
                                    "div_flux": flux,
                                    "div_sup_boundary": div_sup_b,
                                    "residual_corrected": abs(total + flux)})


def quadratic_form(spec: ChartSpec, rule: QuadratureRule,
                   field: SymTensorField) -> QuadraticFormBreakdown:
    """All eight terms of the rigidity quadratic form plus the deficits."""
    require_smallness(field, rule.volume_x)
    vjet, pe = _volume_jet(spec, rule, field, with_second=False)
    lam = pe.lam
    w = rule.volume_w
    f = pe.f
    t1 = 0.25 * float(np.sum(w * vjet.norm_dh**2 * f))
    dtr = lam[:, None] ** -2 * np.einsum("pijj->pi", vjet.dh)
    t2 = 0.25 * float(np.sum(w * lam**-2 * np.einsum("pi,pi->p", dtr, dtr) * f))
    t3 = 0.5 * float(np.sum(w * vjet.norm_h**2 * f))
    t4 = 0.5 * float(np.sum(w * vjet.trace**2 * f))

    bjet, bdry = _boundary_jet(spec, rule, field)
    hnn, han, _, _, _ = _boundary_contractions(bjet, bdry)
    wb = rule.boundary_w
    dnf = bdry.dnubar_f
    hbar_c = bdry.Hbar * spec.c
    n = spec.n
    b1 = float(np.sum(wb * hnn**2)) * dnf
    b2 = 0.5 * float(np.sum(wb * np.einsum("pa,pa->p", han, han))) * dnf
    b3 = 0.25 * float(np.sum(wb * hnn**2)) * hbar_c
    b4 = n / (2.0 * (n - 1.0)) * float(
        np.sum(wb * np.einsum("pa,pa->p", han, han))) * hbar_c

    i_r = deficit_scalar(spec, rule, field)
    i_h = deficit_mean(spec, rule, field)
    cub = cubic_bound(spec, rule, field)
    return QuadraticFormBreakdown(t1=t1, t2=t2, t3=t3, t4=t4,
                                  b1=b1, b2=b2, b3=b3, b4=b4,
                                  i_r=i_r, i_h=i_h, cubic=cub)


def key_estimate_residual(spec: ChartSpec, rule: QuadratureRule,
                          field: SymTensorField,
                          div_l2: float | None = None) -> IdentityReport:
    """|deficits + quadratic form| against the cubic majorant."""
    br = quadratic_form(spec, rule, field)
    return IdentityReport(
        tag="key_estimate", residual=br.key_residual, cubic=br.cubic.total,
        metadata={"i_r": br.i_r, "i_h": br.i_h, "q_total": br.q_total,
                  "div_l2": div_l2},
    )


# ---------------------------------------------------------------------------
# amplitude scaling fits
# ---------------------------------------------------------------------------

def fit_scaling(eps, residuals) -> ScalingFit:
    """Raw log-log slope plus a two-term leakage split of the residual curve.

    The model residual = K2 eps^2 + K3 eps^3 separates divergence leakage
    (quadratic, proportional to the projection residual) from the cubic
    remainder; the corrected slope refits after removing the K2 part.
    """
    eps = np.asarray(list(eps), dtype=float)
    res = np.asarray(list(residuals), dtype=float)
    slope_raw = float(np.polyfit(np.log(eps), np.log(np.maximum(res, 1e-300)), 1)[0])
    design = np.stack([np.ones_like(eps), eps], axis=1)
    k2, k3 = np.linalg.lstsq(design, res / eps**2, rcond=None)[0]
    if k2 > 0:
        floor = 1e-6 * np.max(res)
        corrected = np.maximum(res - k2 * eps**2, floor)
    else:
        corrected = res
    slope_corr = float(np.polyfit(np.log(eps),
                                  np.log(np.maximum(corrected, 1e-300)), 1)[0])
    return ScalingFit(eps=eps, residuals=res, slope_raw=slope_raw,
                      slope_corrected=slope_corr,
                      leakage_coef=float(k2), cubic_coef=float(k3))


def identity_scaling(spec: ChartSpec, rule: QuadratureRule,
                     base_field: SymTensorField, eps, evaluate) -> ScalingFit:
    """Sweep h -> eps h through an identity evaluator returning a residual."""
    residuals = [evaluate(base_field.scaled(float(e))) for e in eps]
    return fit_scaling(eps, residuals)


def estimate_divergence_sensitivity(spec: ChartSpec, rule: QuadratureRule,
                                    evaluate, base_field: SymTensorField,
                                    probe_seeds=(11, 12, 13), probe_degree: int = 2,
                                    tau: float = 1e-2, safety: float = 2.0) -> float:
    """First-order sensitivity of an identity residual to divergence content.

    Perturbs the base field with controlled non-divergence-free directions
    (Lie derivatives of random boundary-vanishing fields, which keep
    admissibility) and measures the residual change per unit of boundary
    divergence sup norm. The returned constant times the measured divergence
    residual is the leakage budget for the identity.
    """
    from .gauge import random_boundary_vector_field
    r0 = evaluate(base_field)
    worst = 0.0
    for seed in probe_seeds:
        xi = random_boundary_vector_field(spec, seed=seed, degree=probe_degree)
        probe = lie_derivative_metric(xi)
        _, sup_p = divergence_boundary_flux(spec, rule, probe)
        if sup_p == 0.0:
            continue
        scale = tau / sup_p
        pert = linear_combination([base_field, probe], [1.0, scale])
        pert.admissible = base_field.admissible
        r1 = evaluate(pert)
        worst = max(worst, abs(r1 - r0) / tau)
    return safety * worst


# ---------------------------------------------------------------------------
# thresholds
# ---------------------------------------------------------------------------

def beta_threshold(n: int, c: float) -> float:
    """Coefficient of the squared normal-normal boundary trace:
    H_round * f / 4 + normal derivative of f, evaluated on the boundary."""
    s = np.sqrt(1.0 - c * c)
    return 0.25 * (n - 1) * c * c / s - s


def b2_coefficient(n: int, c: float) -> float:
    """Coefficient of the squared tangential-normal boundary trace."""
    return ((n + 1) * c * c - 1.0) / (2.0 * np.sqrt(1.0 - c * c))


def _bisect_root(fn, lo: float, hi: float, xtol: float = 1e-14) -> float:
    flo, fhi = fn(lo), fn(hi)
    if flo > 0 or fhi < 0:
        raise ValueError("root not bracketed on (0, 1)")
    while hi - lo > xtol:
        mid = 0.5 * (lo + hi)
        if fn(mid) < 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def cstar(n: int) -> float:
    """Boundary-height threshold: root of the normal-normal coefficient."""
    return _bisect_root(lambda c: beta_threshold(n, c), 1e-12, 1.0 - 1e-12)


def cstar_closed(n: int) -> float:
    return 2.0 / np.sqrt(n + 3.0)


def b2_root(n: int) -> float:
    return _bisect_root(lambda c: b2_coefficient(n, c), 1e-12, 1.0 - 1e-12)


def b2_root_closed(n: int) -> float:
    return 1.0 / np.sqrt(n + 1.0)


def threshold_report(n: int, c_samples=None) -> ThresholdReport:
    if c_samples is None:
        c_samples = np.linspace(0.05, 0.99, 95)
    c_samples = np.asarray(c_samples, dtype=float)
    beta = np.array([beta_threshold(n, c) for c in c_samples])
    b2v = np.array([b2_coefficient(n, c) for c in c_samples])
    return ThresholdReport(
        n=n, c_samples=c_samples, beta_samples=beta, b2_samples=b2v,
        cstar=cstar(n), cstar_closed=cstar_closed(n),
        b2_root=b2_root(n), b2_root_closed=b2_root_closed(n),
    )


# ---------------------------------------------------------------------------
# coercivity spectrum
# ---------------------------------------------------------------------------

def admissible_generator_fields(spec: ChartSpec, degree: int) -> list[SymTensorField]:
    """Deterministic admissible trial family: bump-carried matrix monomials
    plus df-carried covector monomials."""
    n = spec.n
    bump = bump_poly(spec)
    out = []
    zero_w = [Poly.zero(n)] * n
    for beta in multi_indices(n, degree):
        mono = Poly.monomial(n, beta, 1.0)
        for i in range(n):
            for j in range(i, n):
                s = {(a, b): Poly.zero(n) for a in range(n) for b in range(a, n)}
                s[(i, j)] = bump * mono
                out.append(polynomial_perturbation_field(
                    n, s, zero_w, admissible=True,
                    meta={"recipe": "gen_bump", "beta": beta.tolist(), "entry": (i, j)},
                ))
        for direction in range(n):
            w = [mono if k == direction else Poly.zero(n) for k in range(n)]
            s = {(a, b): Poly.zero(n) for a in range(n) for b in range(a, n)}
            out.append(polynomial_perturbation_field(
                n, s, w, admissible=True,
                meta={"recipe": "gen_df", "beta": beta.tolist(), "dir": direction},
            ))
    return out


def _pe_slice(pe: PointEval, sl: slice) -> PointEval:
    return PointEval(
        x=pe.x[sl], lam=pe.lam[sl], f=pe.f[sl], gbar=pe.gbar[sl],
        gbar_inv=pe.gbar_inv[sl], gammabar=pe.gammabar[sl],
        dgammabar=pe.dgammabar[sl], df=pe.df[sl], gradf=pe.gradf[sl],
        hessf=pe.hessf[sl], ric=pe.ric[sl],
    )


def assemble_quadratic_grams(spec: ChartSpec, rule: QuadratureRule,
                             fields: list[SymTensorField],
                             chunk: int = 2048) -> dict:
    """Bilinear Gram blocks of every term of the quadratic form, plus the
    plain and f-weighted mass matrices, over a list of trial fields.

    Node-chunked so the jet features of large families never exceed a few
    hundred MB; each block reduces to one GEMM per chunk.
    """
    N = len(fields)
    n = spec.n
    M = rule.volume_x.shape[0]
    blocks = {key: np.zeros((N, N)) for key in
              ("t1", "t2", "t3", "t4", "mass_f", "mass")}
    step = spec.quad.fd_step

    for start in range(0, M, chunk):
        sl = slice(start, min(start + chunk, M))
        pe = _pe_slice(rule.volume_point, sl)
        w = rule.volume_w[sl]
        f = pe.f
        lam = pe.lam
        m = pe.x.shape[0]
        dh = np.empty((N, m, n, n, n))
        hv = np.empty((N, m, n, n))
        for a, fld in enumerate(fields):
            jet = jet_at(fld, pe, fd_step=step, with_second=False)
            dh[a] = jet.dh
            hv[a] = jet.h
        wf = w * f
        l6 = lam**-6
        l4 = lam**-4
        l2 = lam**-2
        blocks["t1"] += np.einsum("amijk,bmijk,m->ab", dh, dh, wf * l6, optimize=True)
        dtr = np.einsum("amijj->ami", dh)
        blocks["t2"] += np.einsum("ami,bmi,m->ab", dtr, dtr, wf * l6, optimize=True)
        blocks["t3"] += np.einsum("amjk,bmjk,m->ab", hv, hv, wf * l4, optimize=True)
        tr = np.einsum("amjj->am", hv)
        blocks["t4"] += np.einsum("am,bm,m->ab", tr, tr, wf * l4, optimize=True)
        blocks["mass_f"] += np.einsum("amjk,bmjk,m->ab", hv, hv, wf * l4, optimize=True)
        blocks["mass"] += np.einsum("amjk,bmjk,m->ab", hv, hv, w * l4, optimize=True)

    # boundary trace features are tiny; do them in one pass
    bdry = rule.boundary
    Xb = bdry.x.reshape(-1, n)
    nu = bdry.nubar.reshape(-1, n)
    fr = bdry.frame.reshape(-1, n - 1, n)
    hnn = np.empty((N, Xb.shape[0]))
    han = np.empty((N, Xb.shape[0], n - 1))
    for a, fld in enumerate(fields):
        hb = fld.components(Xb)
        hnn[a] = np.einsum("pjk,pj,pk->p", hb, nu, nu)
        han[a] = np.einsum("pjk,paj,pk->pa", hb, fr, nu)
    wb = rule.boundary_w
    blocks["bnn"] = np.einsum("am,bm,m->ab", hnn, hnn, wb, optimize=True)
    blocks["ban"] = np.einsum("amc,bmc,m->ab", han, han, wb, optimize=True)
    return blocks


def quadratic_form_matrices(spec: ChartSpec, rule: QuadratureRule,
                            blocks: dict) -> tuple[np.ndarray, np.ndarray]:
    """(Q, M) from assembled Gram blocks; Q follows the eight-term layout."""
    n = spec.n
    dnf = -np.sqrt(1.0 - spec.c**2)
    hbar_c = mean_curvature_round(n, spec.c) * spec.c
    Q = (0.25 * blocks["t1"] + 0.25 * blocks["t2"]
         + 0.5 * blocks["t3"] + 0.5 * blocks["t4"]
         + dnf * blocks["bnn"] + 0.5 * dnf * blocks["ban"]
         + 0.25 * hbar_c * blocks["bnn"]
         + n / (2.0 * (n - 1.0)) * hbar_c * blocks["ban"])
    Q = 0.5 * (Q + Q.T)
    M = 0.5 * (blocks["mass_f"] + blocks["mass_f"].T)
    return Q, M


def assemble_Q_matrix(spec: ChartSpec, rule: QuadratureRule,
                      fields: list[SymTensorField]) -> tuple[np.ndarray, np.ndarray]:
    """Quadratic-form and f-weighted mass matrices over the given trial fields."""
    blocks = assemble_quadratic_grams(spec, rule, fields)
    return quadratic_form_matrices(spec, rule, blocks)


def min_eigenvalue(Q: np.ndarray, M: np.ndarray) -> float:
    """Smallest generalized eigenvalue of (Q, M); M must be positive definite."""
    evals_m = np.linalg.eigvalsh(M)
    if evals_m[0] <= 0 or evals_m[0] < 1e-14 * evals_m[-1]:
        raise BasisDependenceError(
            "mass matrix is not (numerically) positive definite; "
            "trial fields are dependent"
        )
    return float(scipy.linalg.eigh(Q, M, eigvals_only=True)[0])


def coercivity_spectrum(spec: ChartSpec, rule: QuadratureRule,
                        gen_degree: int = 2, gauge_degree: int = 3,
                        basis: GaugeBasis | None = None,
                        mass_filter: float = 1e-4) -> CoercivityReport:
    """Generalized spectrum of the quadratic form over projected trial fields.

    Every admissible generator is replaced by its divergence-free projection
    (a linear operation, folded into the Gram blocks). Generators that fall
    almost entirely into the gauge span survive projection only as rounding
    noise, so the pencil is reduced by mass-matrix whitening: directions with
    relative mass singular value below ``mass_filter`` are discarded before
    the eigensolve.
    """
    gens = admissible_generator_fields(spec, gen_degree)
    if basis is None:
        basis = build_gauge_basis(spec, gauge_degree, rule)
    joint = gens + basis.lie_fields
    blocks = assemble_quadratic_grams(spec, rule, joint)

    ng = len(gens)
    # projection coefficients from the plain L2 mass: a = G_ll^+ G_lg
    G = blocks["mass"]
    Glg = G[ng:, :ng]
    V, s = basis.eigvecs, basis.eigvals
    # quadrature here matches the basis Gram, so reuse its factorization
    A = V @ ((V.T @ Glg) / s[:, None])
    C = np.vstack([np.eye(ng), -A])

    Qj, Mj = quadratic_form_matrices(spec, rule, blocks)
    Q = C.T @ Qj @ C
    M = C.T @ Mj @ C
    Q = 0.5 * (Q + Q.T)
    M = 0.5 * (M + M.T)

    # whiten by the mass matrix, dropping the projected-away directions
    scale = np.sqrt(np.maximum(np.diag(M), 1e-300))
    Mn = M / np.outer(scale, scale)
    Qn = Q / np.outer(scale, scale)
    ev, U = np.linalg.eigh(Mn)
    keep = ev >= (mass_filter**2) * ev[-1]
    if not np.any(keep):
        raise BasisDependenceError("no trial direction survives the projection")
    W = U[:, keep] / np.sqrt(ev[keep])
    Qw = W.T @ Qn @ W
    evals = np.linalg.eigvalsh(0.5 * (Qw + Qw.T))
    kappa = float(evals[0])

    # per-vector margins, restricted to directions that survive projection
    dM = np.diag(M)
    solid = dM >= (mass_filter**2) * np.max(dM)
    diag_margin = (np.diag(Q)[solid] - 0.5 * dM[solid]) / dM[solid]
    node_beta, node_b2 = boundary_pair_coefficients(spec, rule)
    return CoercivityReport(
        n=spec.n, c=spec.c, kappa=kappa, basis_dim=int(np.sum(keep)),
        min_vector_margin=float(np.min(diag_margin)),
        beta_coefficient=beta_threshold(spec.n, spec.c),
        b2_coefficient=b2_coefficient(spec.n, spec.c),
        min_node_beta=float(np.min(node_beta)),
        min_node_b2=float(np.min(node_b2)),
        eigenvalues=np.asarray(evals),
    )


def boundary_pair_coefficients(spec: ChartSpec, rule: QuadratureRule):
    """Per-node coefficients of the two boundary pair sums, from node data.

    beta multiplies the squared normal-normal trace (weight of the first and
    third boundary terms together); b2 the squared tangential-normal traces.
    Both are constant over the boundary sphere; evaluating them from node
    geometry cross-checks the closed forms.
    """
    bdry = rule.boundary
    pe = bdry.point
    n = spec.n
    dnf = np.einsum("...i,...i->...", bdry.nubar, pe.df)
    node_beta = 0.25 * bdry.Hbar * pe.f + dnf
    node_b2 = 0.5 * dnf + n / (2.0 * (n - 1.0)) * bdry.Hbar * pe.f
    return node_beta.reshape(-1), node_b2.reshape(-1)


# ---------------------------------------------------------------------------
# rigidity certificate
# ---------------------------------------------------------------------------

def calibrate_key_constant(spec: ChartSpec, rule: QuadratureRule,
                           basis: GaugeBasis, seeds=(101, 102, 103),
                           eps=(0.1, 0.05, 0.025), safety: float = 2.0) -> float:
    """Fitted constant for the key estimate: max observed residual-to-cubic
    ratio over seeded projected fields, times a safety factor."""
    from .fields import make_admissible_field
    worst = 0.0
    for seed in seeds:
        base = make_admissible_field(spec, seed=seed, amplitude=1.0, rule=rule)
        proj = slice_project(base, basis)
        for e in eps:
            rep = key_estimate_residual(spec, rule, proj.h_df.scaled(float(e)))
            if rep.cubic > 0:
                worst = max(worst, rep.residual / rep.cubic)
    return safety * worst


def rigidity_certificate(spec: ChartSpec, rule: QuadratureRule,
                         field: SymTensorField, tol_scalar: float = 1e-6,
                         tol_mean: float = 1e-6, tol_isometry: float = 1e-8,
                         gauge_degree: int = 4, kappa: float = 0.5,
                         c_fit: float | None = None,
                         basis: GaugeBasis | None = None) -> RigidityCertificate:
    """Quantitative consistency check of the rigidity conclusion.

    Verifies the three hypotheses on the nodes (within tolerances), projects
    to the divergence-free slice, and tests the inequality chain: coercivity
    bounds the f-weighted mass by the quadratic form, the key estimate bounds
    the quadratic form by the fitted cubic plus the hypothesis slack. The
    verdict never claims more than the tolerances support.
    """
    n, c = spec.n, spec.c
    cs = cstar(n)
    require_smallness(field, rule.volume_x)

    vjet, pe = _volume_jet(spec, rule, field)
    r = _scalar_exact_from_jet(vjet, pe)
    min_r = float(np.min(r - n * (n - 1)))
    iso = tangential_block_sup(field, rule.boundary)
    ms = mean_exact(spec, field, rule.boundary, fd_step=spec.quad.fd_step)
    min_h = float(np.min(ms.h_exact - rule.boundary.Hbar))

    if basis is None:
        basis = build_gauge_basis(spec, gauge_degree, rule)
    proj = slice_project(field, basis)
    br = quadratic_form(spec, rule, proj.h_df)
    mass = 2.0 * br.t3  # int |h_df|^2 f dvol
    if c_fit is None:
        c_fit = calibrate_key_constant(spec, rule, basis)
    slack = (tol_scalar * ball_volume(n, c) +
             3.0 * c * tol_mean * boundary_area(n, c))
    bound = c_fit * br.cubic.total + slack
    margin = kappa * mass - bound
    smallness = float(np.sqrt(max(bound, 0.0) / kappa))

    if c < cs:
        verdict = "inconclusive"
        explanation = (f"boundary height {c:.6f} is below the threshold "
                       f"{cs:.6f}; the coercivity argument does not apply")
    elif min_r < -tol_scalar or min_h < -tol_mean or iso > tol_isometry:
        verdict = "hypotheses_violated"
        explanation = (f"hypothesis failure: min scalar deficit {min_r:.3e}, "
                       f"min mean-curvature deficit {min_h:.3e}, "
                       f"boundary isometry residual {iso:.3e}")
    elif margin <= 1e-12 * max(1.0, kappa * mass):
        verdict = "rigid_consistent"
        explanation = (
            "hypotheses hold within tolerance and the inequality chain "
            f"caps the weighted mass at {bound / kappa:.3e}, i.e. "
            f"||h_df|| <= {smallness:.3e}; data consistent with rigidity"
        )
    else:
        verdict = "inconclusive"
        explanation = (
            f"quantitative margin {margin:.3e} > 0: the weighted mass exceeds "
            "the cubic budget, inconsistent with the hypothesis tolerances"
        )

    return RigidityCertificate(
        verdict=verdict, c=c, cstar=cs, min_scalar_deficit=min_r,
        min_mean_deficit=min_h, isometry_residual=iso,
        div_l2=proj.div_l2, div_sup=proj.div_sup,
        q_total=br.q_total, mass=mass,
        cubic_volume=br.cubic.volume_cubic, cubic_boundary=br.cubic.boundary_cubic,
        c1_norm=br.cubic.c1_norm, w12_norm_sq=br.cubic.w12_norm_sq,
        kappa=kappa, c_fit=c_fit, slack=slack, margin=margin,
        smallness_bound=smallness, explanation=explanation,
    )
