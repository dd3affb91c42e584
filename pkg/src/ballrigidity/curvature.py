"""Scalar and boundary mean curvature of the perturbed metric g = gbar + h.

Three routes per quantity:

* exact: closed identities that need only background-covariant derivatives of
  the perturbation (the connection difference tensor for the scalar
  curvature, the perturbed-normal identity for the mean curvature);
* oracle: brute-force finite differencing of the full metric components,
  sharing no code path with the exact route beyond field evaluation;
* quadratic: the second-order expansion whose remainder is cubic in h.

All routes are batched over points. The |h| <= 1/2 gate is enforced on entry
because the expansions are only meaningful there.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RoundingFloorError
from .fields import (
    FieldJet,
    SymTensorField,
    fd_partials,
    jet_at,
    require_admissible,
    require_smallness,
)
from .geometry import (
    BoundaryEval,
    ChartSpec,
    PointEval,
    QuadratureRule,
    conformal_factor,
    eval_background,
)


@dataclass
class CurvatureSample:
    """Scalar curvature at points: exact, oracle, expansion, and the cubic bound."""

    x: np.ndarray
    r_exact: np.ndarray
    r_oracle: np.ndarray | None
    r_quadratic: np.ndarray
    remainder: np.ndarray
    cubic_local: np.ndarray


@dataclass
class MeanCurvSample:
    """Boundary mean curvature: exact identity value, expansion, perturbed normal."""

    x: np.ndarray
    h_exact: np.ndarray
    h_quadratic: np.ndarray
    remainder: np.ndarray
    nu: np.ndarray
    g_nu_nubar: np.ndarray
    hbar: float


def gamma_tensor(jet: FieldJet, g_inv: np.ndarray) -> np.ndarray:
    """Connection difference Gamma^m_{jk} of g relative to the background.

    Uses the full inverse metric: Gamma^m_{jk} = g^{lm}(nabla_j h_{kl}
    + nabla_k h_{jl} - nabla_l h_{jk})/2. Vanishes wherever nabla h does.
    """
    dh = jet.dh
    sym = (np.einsum("...jkl->...ljk", dh) + np.einsum("...kjl->...ljk", dh)
           - np.einsum("...ljk->...ljk", dh))
    return 0.5 * np.einsum("...lm,...ljk->...mjk", g_inv, sym)


def _full_metric(pe: PointEval, h: np.ndarray):
    g = pe.gbar + h
    return g, np.linalg.inv(g)


def _scalar_exact_from_jet(jet: FieldJet, pe: PointEval) -> np.ndarray:
    g, ginv = _full_metric(pe, jet.h)
    gam = gamma_tensor(jet, ginv)
    ric = pe.ric
    t_ric = np.einsum("...ik,...ik->...", ginv, ric)
    t_g1 = np.einsum("...ik,...jl,...pq,...qil,...pjk->...", ginv, ginv, g, gam, gam,
                     optimize=True)
    t_g2 = np.einsum("...ik,...jl,...pq,...qjl,...pik->...", ginv, ginv, g, gam, gam,
                     optimize=True)
    d2h = jet.d2h
    t_dd = np.einsum("...ik,...jl,...ikjl->...", ginv, ginv, d2h, optimize=True) \
        - np.einsum("...ik,...jl,...iljk->...", ginv, ginv, d2h, optimize=True)
    return t_ric + t_g1 - t_g2 - t_dd


def scalar_exact(spec: ChartSpec, field: SymTensorField, X: np.ndarray,
                 fd_step: float | None = None) -> np.ndarray:
    """Scalar curvature of g = gbar + h from the connection-difference identity."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    require_smallness(field, X)
    pe = eval_background(spec, X)
    step = fd_step if fd_step is not None else spec.quad.fd_step
    jet = jet_at(field, pe, fd_step=step, with_second=True)
    return _scalar_exact_from_jet(jet, pe)


def scalar_oracle(spec: ChartSpec, field: SymTensorField, X: np.ndarray,
                  fd_step: float | None = None) -> np.ndarray:
    """Brute-force scalar curvature: finite-difference the metric components.

    Christoffel symbols of g and their gradients come from 4th-order stencils
    applied to x -> g_{ij}(x); the Ricci tensor is contracted directly. Only
    the field evaluator is shared with the exact route.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    require_smallness(field, X)
    step = fd_step if fd_step is not None else spec.quad.fd_step
    n = spec.n

    def metric(Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        lam = conformal_factor(Y)
        return lam[:, None, None] ** 2 * np.eye(n) + field.components(Y)

    g, dg, d2g, _ = fd_partials(metric, X, step, field.eval_radius, second=True)
    ginv = np.linalg.inv(g)
    # Gamma^k_{ij} = ginv^{kl} (d_i g_{jl} + d_j g_{il} - d_l g_{ij}) / 2
    sym = (np.einsum("pijl->plij", dg) + np.einsum("pjil->plij", dg)
           - np.einsum("plij->plij", dg))
    gam = 0.5 * np.einsum("pkl,plij->pkij", ginv, sym, optimize=True)
    # d_m Gamma^k_{ij} with d ginv = -ginv dg ginv
    dginv = -np.einsum("pka,pmab,pbl->pmkl", ginv, dg, ginv, optimize=True)
    dsym = (np.einsum("pmijl->pmlij", d2g) + np.einsum("pmjil->pmlij", d2g)
            - np.einsum("pmlij->pmlij", d2g))
    dgam = 0.5 * (np.einsum("pmkl,plij->pmkij", dginv, sym, optimize=True)
                  + np.einsum("pkl,pmlij->pmkij", ginv, dsym, optimize=True))
    # Ricci_{jk} = d_i Gamma^i_{jk} - d_j Gamma^i_{ik} + G^i_{im} G^m_{jk} - G^i_{jm} G^m_{ik}
    ric = (np.einsum("piijk->pjk", dgam)
           - np.einsum("pjiik->pjk", dgam)
           + np.einsum("piim,pmjk->pjk", gam, gam)
           - np.einsum("pijm,pmik->pjk", gam, gam))
    return np.einsum("pjk,pjk->p", ginv, ric)


def _scalar_quadratic_from_jet(jet: FieldJet, pe: PointEval) -> np.ndarray:
    """Second-order model of R_g; the divergence term is expanded by product rule."""
    n = pe.x.shape[-1]
    lam = pe.lam
    dh, d2h, h = jet.dh, jet.d2h, jet.h
    inv2 = lam**-2

    tr = jet.trace
    norm2_dh = inv2**3 * np.einsum("pijk,pijk->p", dh, dh)
    cross = inv2**3 * np.einsum("pikq,pkiq->p", dh, dh)
    dtr = inv2[:, None] * np.einsum("pijj->pi", dh)  # nabla tr h (covector)
    norm2_dtr = inv2 * np.einsum("pi,pi->p", dtr, dtr)

    g, ginv = _full_metric(pe, h)
    u = dh - np.einsum("pljk->pkjl", dh)  # u_{kjl} = nabla_k h_{jl} - nabla_l h_{jk}
    dginv_contr = -np.einsum("pia,piab,pbk->pk", ginv, dh, ginv, optimize=True)  # nabla_i g^{ik}
    term1 = np.einsum("pk,pjl,pkjl->p", dginv_contr, ginv, u, optimize=True)
    dginv_full = -np.einsum("pja,piab,pbl->pijl", ginv, dh, ginv, optimize=True)  # nabla_i g^{jl}
    term2 = np.einsum("pik,pijl,pkjl->p", ginv, dginv_full, u, optimize=True)
    term3 = np.einsum("pik,pjl,pikjl->p", ginv, ginv, d2h, optimize=True) \
        - np.einsum("pik,pjl,piljk->p", ginv, ginv, d2h, optimize=True)
    div_term = term1 + term2 + term3

    return (n * (n - 1)
            - (n - 1) * tr
            + (n - 1) * inv2 * np.einsum("pii->p", jet.hsq)
            - 0.25 * norm2_dh
            + 0.5 * cross
            - 0.25 * norm2_dtr
            - div_term)


def scalar_quadratic(spec: ChartSpec, field: SymTensorField, X: np.ndarray,
                     fd_step: float | None = None) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    require_smallness(field, X)
    pe = eval_background(spec, X)
    step = fd_step if fd_step is not None else spec.quad.fd_step
    jet = jet_at(field, pe, fd_step=step, with_second=True)
    return _scalar_quadratic_from_jet(jet, pe)


def curvature_samples(spec: ChartSpec, field: SymTensorField, X: np.ndarray,
                      with_oracle: bool = False,
                      fd_step: float | None = None) -> CurvatureSample:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    require_smallness(field, X)
    pe = eval_background(spec, X)
    step = fd_step if fd_step is not None else spec.quad.fd_step
    jet = jet_at(field, pe, fd_step=step, with_second=True)
    r_exact = _scalar_exact_from_jet(jet, pe)
    r_quad = _scalar_quadratic_from_jet(jet, pe)
    r_orc = scalar_oracle(spec, field, X, fd_step=step) if with_oracle else None
    cubic = jet.norm_h * jet.norm_dh**2 + jet.norm_h**3
    return CurvatureSample(x=X, r_exact=r_exact, r_oracle=r_orc,
                           r_quadratic=r_quad, remainder=r_exact - r_quad,
                           cubic_local=cubic)


# ---------------------------------------------------------------------------
# boundary mean curvature
# ---------------------------------------------------------------------------

def _boundary_contractions(jet: FieldJet, bdry: BoundaryEval):
    nu = bdry.nubar.reshape((-1,) + bdry.nubar.shape[-1:])
    fr = bdry.frame.reshape((nu.shape[0],) + bdry.frame.shape[-2:])
    h, dh = jet.h, jet.dh
    hnn = np.einsum("pjk,pj,pk->p", h, nu, nu)
    han = np.einsum("pjk,paj,pk->pa", h, fr, nu)
    # S = sum_a (2 (nabla_{e_a} h)(e_a, nu) - (nabla_nu h)(e_a, e_a))
    s1 = np.einsum("pijk,pai,paj,pk->p", dh, fr, fr, nu)
    s2 = np.einsum("pijk,pi,paj,pak->p", dh, nu, fr, fr)
    return hnn, han, 2.0 * s1 - s2, nu, fr


def mean_exact(spec: ChartSpec, field: SymTensorField, bdry: BoundaryEval,
               fd_step: float | None = None) -> MeanCurvSample:
    """Mean curvature of the boundary under g, from the perturbed-normal identity.

    Valid only for admissible fields (the derivation uses that g and gbar
    induce the same boundary metric); non-admissible input raises.
    """
    require_admissible(field, bdry)
    require_smallness(field, bdry.x.reshape(-1, spec.n))
    pe = bdry.point
    step = fd_step if fd_step is not None else spec.quad.fd_step
    jet = jet_at(field, pe, fd_step=step, with_second=False)
    hnn, han, S, nu_b, fr = _boundary_contractions(jet, bdry)
    hbar = bdry.Hbar
    denom = np.sqrt(1.0 + hnn - np.einsum("pa,pa->p", han, han))
    h_exact = (hbar * (1.0 + hnn) - 0.5 * S) / denom
    nu = (nu_b - np.einsum("pa,pai->pi", han, fr)) / denom[:, None]
    h_quad = hbar + 0.5 * ((hnn - 0.25 * hnn**2 + np.einsum("pa,pa->p", han, han)) * hbar
                           - (1.0 - 0.5 * hnn) * S)
    return MeanCurvSample(x=bdry.x, h_exact=h_exact, h_quadratic=h_quad,
                          remainder=h_exact - h_quad, nu=nu,
                          g_nu_nubar=denom, hbar=hbar)


def mean_quadratic(spec: ChartSpec, field: SymTensorField, bdry: BoundaryEval,
                   fd_step: float | None = None) -> np.ndarray:
    return mean_exact(spec, field, bdry, fd_step=fd_step).h_quadratic


def mean_oracle(spec: ChartSpec, field: SymTensorField, bdry: BoundaryEval,
                fd_step: float | None = None) -> np.ndarray:
    """Independent mean curvature: trace of the second fundamental form of the
    chart sphere under g, with g-Christoffels and the g-unit normal field both
    obtained by finite differences of the metric components."""
    step = fd_step if fd_step is not None else spec.quad.fd_step
    n = spec.n
    X = bdry.x.reshape(-1, n)

    def metric(Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        lam = conformal_factor(Y)
        return lam[:, None, None] ** 2 * np.eye(n) + field.components(Y)

    def normal(Y):
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        g = metric(Y)
        v = np.einsum("pij,pj->pi", np.linalg.inv(g), Y)
        norm = np.sqrt(np.einsum("pij,pi,pj->p", g, v, v))
        return v / norm[:, None]

    g, dg, _, _ = fd_partials(metric, X, step, field.eval_radius, second=False)
    ginv = np.linalg.inv(g)
    sym = (np.einsum("pijl->plij", dg) + np.einsum("pjil->plij", dg)
           - np.einsum("plij->plij", dg))
    gam = 0.5 * np.einsum("pkl,plij->pkij", ginv, sym, optimize=True)
    nu, dnu, _, _ = fd_partials(normal, X, step, field.eval_radius, second=False)

    # Euclidean tangent basis of the chart sphere; induced metric G_T under g
    fr = bdry.frame.reshape((X.shape[0],) + bdry.frame.shape[-2:])
    lam = conformal_factor(X)
    t = fr * lam[:, None, None]  # undo the conformal normalization
    cov = dnu + np.einsum("pkij,pj->pik", gam, nu)  # D_i nu^k
    II = np.einsum("pai,pik,pkl,pbl->pab", t, cov, g, t)
    GT = np.einsum("pai,pij,pbj->pab", t, g, t)
    return np.einsum("pab,pab->p", np.linalg.inv(GT), 0.5 * (II + np.swapaxes(II, 1, 2)))


# ---------------------------------------------------------------------------
# expansion-order regression
# ---------------------------------------------------------------------------

@dataclass
class SlopeFit:
    """Log-log least-squares fit of sup-node remainders against amplitude."""

    which: str
    eps: np.ndarray
    sup_remainder: np.ndarray
    slope: float
    intercept: float


def remainder_slope(spec: ChartSpec, rule: QuadratureRule, field: SymTensorField,
                    eps_list, which: str, fd_step: float | None = None) -> SlopeFit:
    """Fitted scaling exponent of the expansion remainder under h -> eps h.

    ``which`` selects the scalar-curvature remainder over volume nodes or the
    mean-curvature remainder over boundary nodes; both should come out cubic.
    """
    eps = np.asarray(list(eps_list), dtype=float)
    if len(eps) < 3:
        raise ValueError("need at least 3 amplitudes for a slope fit")
    if np.any(np.diff(eps) >= 0):
        raise ValueError("amplitudes must be strictly decreasing")
    if which not in ("scalar", "mean"):
        raise ValueError("which must be 'scalar' or 'mean'")

    sups = []
    for e in eps:
        fe = field.scaled(e)
        if which == "scalar":
            s = curvature_samples(spec, fe, rule.volume_x, fd_step=fd_step)
            sups.append(np.max(np.abs(s.remainder)))
        else:
            s = mean_exact(spec, fe, rule.boundary, fd_step=fd_step)
            sups.append(np.max(np.abs(s.remainder)))
    sups = np.asarray(sups)
    floor = 1e3 * np.finfo(float).eps
    if np.any(sups < floor):
        raise RoundingFloorError(
            "remainder at the rounding floor; rerun with larger amplitudes"
        )
    slope, intercept = np.polyfit(np.log(eps), np.log(sups), 1)
    return SlopeFit(which=which, eps=eps, sup_remainder=sups,
                    slope=float(slope), intercept=float(intercept))
