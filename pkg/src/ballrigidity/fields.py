"""Symmetric 2-tensor perturbations, vector fields, and their covariant jets.

Perturbations are analytic closures (polynomial and rational components), not
grid arrays, so pointwise identities carry no interpolation error. First
partial derivatives come from exact formulas whenever the recipe provides
them; otherwise, and for all second derivatives, 4th-order central
differences with a small step are used. Covariant corrections always use the
closed-form background connection.

Index conventions on jets: ``dh[..., i, j, k]`` is the covariant derivative
nabla_i h_{jk}; ``d2h[..., i, l, j, k]`` is nabla^2_{i,l} h_{jk}.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from functools import lru_cache
from math import comb
from typing import Callable, Optional

import numpy as np

from .errors import AdmissibilityError, ChartDomainError, SmallnessGateError
from .geometry import (
    ChartSpec,
    PointEval,
    QuadratureRule,
    build_quadrature,
    conformal_factor,
    connection_at,
    eval_background,
)
from .polynomials import Poly, monomial_matrix, multi_indices, stack_on_basis

DEFAULT_FD_STEP = 1e-3


# ---------------------------------------------------------------------------
# finite-difference engine
# ---------------------------------------------------------------------------

def _fornberg(nodes: np.ndarray, order: int) -> np.ndarray:
    """Finite-difference weights at 0 for the given derivative order (Fornberg)."""
    x = np.asarray(nodes, dtype=float)
    npts = len(x)
    c = np.zeros((npts, order + 1))
    c[0, 0] = 1.0
    c1 = 1.0
    c4 = x[0]
    for i in range(1, npts):
        mn = min(i, order)
        c2 = 1.0
        c5 = c4
        c4 = x[i]
        for j in range(i):
            c3 = x[i] - x[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, order]


@lru_cache(maxsize=None)
def _shift_stencil(shift: int):
    """5-point stencil offsets (units of the step) and 1st/2nd derivative weights."""
    offsets = np.arange(-2, 3) + shift
    return offsets, _fornberg(offsets, 1), _fornberg(offsets, 2)


def _axis_shifts(X: np.ndarray, axis: int, step: float, radius: float) -> np.ndarray:
    """Per-point stencil shift along one axis keeping samples inside `radius`."""
    m = X.shape[0]
    if not np.isfinite(radius):
        return np.zeros(m, dtype=np.int64)
    shifts = np.zeros(m, dtype=np.int64)
    for p in range(m):
        ok = False
        xi = X[p, axis]
        for s in sorted(range(-2, 3), key=lambda s: (abs(s), np.sign(s) == np.sign(xi))):
            ends = []
            for off in (s - 2, s + 2):
                y = X[p].copy()
                y[axis] += off * step
                ends.append(np.linalg.norm(y))
            if max(ends) <= radius:
                shifts[p] = s
                ok = True
                break
        if not ok:
            raise ChartDomainError(
                "finite-difference stencil cannot fit inside the evaluable radius"
            )
    return shifts


def fd_partials(func, X: np.ndarray, step: float, radius: float = np.inf,
                second: bool = False):
    """Partial derivatives of an array-valued map by 4th-order differences.

    Returns ``(vals, d1, d2, downgraded)`` where ``d1[p, i, ...]`` is the
    partial along axis i and ``d2[p, i, j, ...]`` the mixed second partial
    (``None`` unless requested). Stencils that would leave the evaluable ball
    are shifted one-sided; the mask of affected points is returned.
    """
    X = np.asarray(X, dtype=float)
    m, n = X.shape
    vals = np.asarray(func(X), dtype=float)
    out_shape = vals.shape[1:]
    d1 = np.zeros((m, n) + out_shape)
    d2 = np.zeros((m, n, n) + out_shape) if second else None
    downgraded = np.zeros(m, dtype=bool)

    shifts = np.stack([_axis_shifts(X, i, step, radius) for i in range(n)], axis=1)
    downgraded |= np.any(shifts != 0, axis=1)

    axis_samples: list[dict[int, np.ndarray]] = [dict() for _ in range(n)]
    for i in range(n):
        for s in np.unique(shifts[:, i]):
            idx = np.flatnonzero(shifts[:, i] == s)
            offsets, w1, w2 = _shift_stencil(int(s))
            acc1 = np.zeros((len(idx),) + out_shape)
            acc2 = np.zeros_like(acc1) if second else None
            samples = {}
            for off, c1v, c2v in zip(offsets, w1, w2):
                if off == 0:
                    fv = vals[idx]
                else:
                    Y = X[idx].copy()
                    Y[:, i] += off * step
                    fv = np.asarray(func(Y), dtype=float)
                samples[int(off)] = fv
                acc1 += c1v * fv
                if second:
                    acc2 += c2v * fv
            d1[idx, i] = acc1 / step
            if second:
                d2[idx, i, i] = acc2 / step**2
            axis_samples[i][int(s)] = samples  # kept for possible reuse

    if second:
        for i in range(n):
            for j in range(i + 1, n):
                key = shifts[:, i] * 10 + shifts[:, j]
                for kv in np.unique(key):
                    idx = np.flatnonzero(key == kv)
                    si, sj = int(shifts[idx[0], i]), int(shifts[idx[0], j])
                    off_i, wi, _ = _shift_stencil(si)
                    off_j, wj, _ = _shift_stencil(sj)
                    acc = np.zeros((len(idx),) + out_shape)
                    for oi, ci in zip(off_i, wi):
                        if ci == 0.0:
                            continue
                        for oj, cj in zip(off_j, wj):
                            if cj == 0.0:
                                continue
                            Y = X[idx].copy()
                            Y[:, i] += oi * step
                            Y[:, j] += oj * step
                            acc += ci * cj * np.asarray(func(Y), dtype=float)
                    d2[idx, i, j] = acc / step**2
                    d2[idx, j, i] = d2[idx, i, j]
    return vals, d1, d2, downgraded


# ---------------------------------------------------------------------------
# field containers
# ---------------------------------------------------------------------------

@dataclass
class SymTensorField:
    """Evaluable symmetric 2-tensor field h_{ij}(x) in chart coordinates."""

    n: int
    components: Callable[[np.ndarray], np.ndarray]
    d_components: Optional[Callable[[np.ndarray], np.ndarray]] = None
    eval_radius: float = np.inf
    admissible: bool = False
    meta: dict = dc_field(default_factory=dict)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.components(np.asarray(X, dtype=float))

    def scaled(self, factor: float) -> "SymTensorField":
        return linear_combination([self], [factor])


@dataclass
class VectorField:
    """Evaluable vector field xi^k(x) in chart coordinates."""

    n: int
    components: Callable[[np.ndarray], np.ndarray]
    d_components: Optional[Callable[[np.ndarray], np.ndarray]] = None   # (m,i,k) = d_i v^k
    d2_components: Optional[Callable[[np.ndarray], np.ndarray]] = None  # (m,i,j,k)
    boundary_vanishing: bool = False
    meta: dict = dc_field(default_factory=dict)
    polys: Optional[list] = None  # coefficient polynomials, when available

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.components(np.asarray(X, dtype=float))

    @classmethod
    def from_polys(cls, polys: list[Poly], boundary_vanishing: bool = False,
                   meta: dict | None = None) -> "VectorField":
        n = len(polys)
        maxdeg = max(p.degree() for p in polys)
        expo = multi_indices(n, maxdeg)
        C = stack_on_basis(polys, expo)                       # (K, k)
        D = np.stack([stack_on_basis([p.diff(i) for p in polys], expo)
                      for i in range(n)])                     # (i, K, k)
        D2 = np.stack([np.stack([
            stack_on_basis([p.diff(i).diff(j) for p in polys], expo)
            for j in range(n)]) for i in range(n)])           # (i, j, K, k)

        def comp(X):
            X = np.atleast_2d(np.asarray(X, dtype=float))
            return monomial_matrix(X, expo) @ C

        def dcomp(X):
            X = np.atleast_2d(np.asarray(X, dtype=float))
            return np.einsum("pK,iKk->pik", monomial_matrix(X, expo), D, optimize=True)

        def d2comp(X):
            X = np.atleast_2d(np.asarray(X, dtype=float))
            return np.einsum("pK,ijKk->pijk", monomial_matrix(X, expo), D2, optimize=True)

        return cls(n=n, components=comp, d_components=dcomp, d2_components=d2comp,
                   boundary_vanishing=boundary_vanishing, meta=meta or {},
                   polys=list(polys))


def zero_field(n: int) -> SymTensorField:
    def comp(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.zeros(X.shape[:1] + (n, n))

    def dcomp(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.zeros(X.shape[:1] + (n, n, n))

    return SymTensorField(n=n, components=comp, d_components=dcomp, admissible=True,
                          meta={"recipe": "zero"})


def conformal_multiple(n: int, t: float) -> SymTensorField:
    """h = t * gbar, the conformal rescaling direction."""

    def comp(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lam = conformal_factor(X)
        return t * lam[:, None, None] ** 2 * np.eye(n)

    def dcomp(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lam = conformal_factor(X)
        dlam2 = -2.0 * lam[:, None] ** 3 * X  # partial_i lam^2
        return t * np.einsum("mi,jk->mijk", dlam2, np.eye(n))

    return SymTensorField(n=n, components=comp, d_components=dcomp,
                          meta={"recipe": "conformal", "t": t})


def linear_combination(fields: list[SymTensorField], coeffs) -> SymTensorField:
    coeffs = [float(c) for c in coeffs]
    if len(fields) != len(coeffs):
        raise ValueError("fields and coefficients disagree in length")
    n = fields[0].n

    def comp(X):
        out = coeffs[0] * fields[0].components(X)
        for fld, c in zip(fields[1:], coeffs[1:]):
            out = out + c * fld.components(X)
        return out

    dcomp = None
    if all(f.d_components is not None for f in fields):
        def dcomp(X):
            out = coeffs[0] * fields[0].d_components(X)
            for fld, c in zip(fields[1:], coeffs[1:]):
                out = out + c * fld.d_components(X)
            return out

    admissible = all(f.admissible for f, c in zip(fields, coeffs) if c != 0.0)
    radius = min(f.eval_radius for f in fields)
    meta = {"recipe": "combination",
            "parts": [f.meta for f in fields], "coeffs": coeffs}
    return SymTensorField(n=n, components=comp, d_components=dcomp,
                          eval_radius=radius, admissible=admissible, meta=meta)


# ---------------------------------------------------------------------------
# jets
# ---------------------------------------------------------------------------

@dataclass
class FieldJet:
    """Pointwise values, covariant derivatives, and the derived scalars."""

    h: np.ndarray
    dh: np.ndarray
    d2h: Optional[np.ndarray]
    trace: np.ndarray
    norm_h: np.ndarray
    norm_dh: np.ndarray
    hsq: np.ndarray
    div: np.ndarray
    downgraded: np.ndarray


def jet_at(field: SymTensorField, pe: PointEval, fd_step: float = DEFAULT_FD_STEP,
           with_second: bool = True) -> FieldJet:
    """Covariant jet of a tensor field at background points.

    Analytic first derivatives are used when the field carries them; second
    partials are then one central difference of an exact gradient, which is
    noticeably cleaner than differencing values twice.
    """
    X = np.atleast_2d(pe.x)
    squeeze = pe.x.ndim == 1
    h = np.asarray(field.components(X), dtype=float)

    if field.d_components is not None:
        d1 = np.asarray(field.d_components(X), dtype=float)
        if with_second:
            _, dd1, _, downgraded = fd_partials(field.d_components, X, fd_step,
                                                field.eval_radius, second=False)
            # dd1[p, l, i, j, k] = d_l d_i h_jk; symmetrize the two derivative slots
            d2 = 0.5 * (dd1 + np.swapaxes(dd1, 1, 2))
        else:
            d2 = None
            downgraded = np.zeros(X.shape[0], dtype=bool)
    else:
        _, d1, d2, downgraded = fd_partials(field.components, X, fd_step,
                                            field.eval_radius, second=with_second)

    G = pe.gammabar.reshape((X.shape[0],) + pe.gammabar.shape[-3:])
    lam = np.atleast_1d(pe.lam).reshape(X.shape[0])

    dh = (d1
          - np.einsum("pmij,pmk->pijk", G, h)
          - np.einsum("pmik,pjm->pijk", G, h))

    d2h = None
    if with_second:
        dG = pe.dgammabar.reshape((X.shape[0],) + pe.dgammabar.shape[-4:])
        pd = (d2
              - np.einsum("pimlj,pmk->piljk", dG, h)
              - np.einsum("pmlj,pimk->piljk", G, d1)
              - np.einsum("pimlk,pjm->piljk", dG, h)
              - np.einsum("pmlk,pijm->piljk", G, d1))
        d2h = (pd
               - np.einsum("pmil,pmjk->piljk", G, dh)
               - np.einsum("pmij,plmk->piljk", G, dh)
               - np.einsum("pmik,pljm->piljk", G, dh))

    inv2 = lam**-2
    trace = inv2 * np.einsum("pjj->p", h)
    norm_h = inv2 * np.sqrt(np.einsum("pjk,pjk->p", h, h))
    norm_dh = lam**-3 * np.sqrt(np.einsum("pijk,pijk->p", dh, dh))
    hsq = inv2[:, None, None] * np.einsum("pij,pjk->pik", h, h)
    div = inv2[:, None] * np.einsum("piil->pl", dh)

    def maybe(a):
        return None if a is None else (a[0] if squeeze else a)

    return FieldJet(
        h=maybe(h), dh=maybe(dh), d2h=maybe(d2h), trace=maybe(trace),
        norm_h=maybe(norm_h), norm_dh=maybe(norm_dh), hsq=maybe(hsq),
        div=maybe(div), downgraded=maybe(downgraded),
    )


def divergence_field(spec: ChartSpec, field: SymTensorField,
                     fd_step: float | None = None):
    """Pointwise divergence (delta h)_l = gbar^{ik} nabla_i h_{kl} as a closure."""
    step = fd_step if fd_step is not None else spec.quad.fd_step

    def ev(X):
        pe = eval_background(spec, np.atleast_2d(np.asarray(X, dtype=float)))
        return jet_at(field, pe, fd_step=step, with_second=False).div

    return ev


def trace_field(spec: ChartSpec, field: SymTensorField):
    """Pointwise gbar-trace of the field as a closure."""

    def ev(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lam = conformal_factor(X)
        return lam**-2 * np.einsum("pjj->p", field.components(X))

    return ev


# ---------------------------------------------------------------------------
# gates and boundary checks
# ---------------------------------------------------------------------------

def sup_metric_norm(field: SymTensorField, X: np.ndarray) -> float:
    """sup over the given points of |h|_gbar."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    lam = conformal_factor(X)
    h = field.components(X)
    return float(np.max(lam**-2 * np.sqrt(np.einsum("pjk,pjk->p", h, h)), initial=0.0))


def require_smallness(field: SymTensorField, X: np.ndarray, tol: float = 1e-9) -> None:
    sup = sup_metric_norm(field, X)
    if sup > 0.5 + tol:
        raise SmallnessGateError(
            f"|h|_gbar = {sup:.3g} exceeds the 1/2 gate required by the expansions"
        )


def tangential_block_sup(field: SymTensorField, bdry) -> float:
    """sup over boundary nodes of |h(e_a, e_b)| for frame tangent vectors."""
    h = field.components(np.atleast_2d(bdry.x))
    frame = bdry.frame.reshape((h.shape[0],) + bdry.frame.shape[-2:])
    blocks = np.einsum("paj,pjk,pbk->pab", frame, h, frame)
    return float(np.max(np.abs(blocks), initial=0.0))


def require_admissible(field: SymTensorField, bdry, tol: float = 1e-7) -> None:
    sup = tangential_block_sup(field, bdry)
    scale = max(1.0, sup_metric_norm(field, bdry.x))
    if sup > tol * scale:
        raise AdmissibilityError(
            f"tangential boundary block {sup:.3g} violates the boundary condition"
        )


# ---------------------------------------------------------------------------
# field recipes
# ---------------------------------------------------------------------------

def _euclid_hess_f(X: np.ndarray) -> np.ndarray:
    """Euclidean second partials of the height function, closed form."""
    lam = conformal_factor(X)
    n = X.shape[-1]
    return 2.0 * lam[:, None, None] ** 3 * X[:, :, None] * X[:, None, :] \
        - lam[:, None, None] ** 2 * np.eye(n)


def polynomial_perturbation_field(n: int, s_polys: dict, w_polys: list[Poly],
                                  admissible: bool = False,
                                  meta: dict | None = None) -> SymTensorField:
    """h = S(x) + sym(df (x) w(x)) for polynomial S (symmetric) and covector w.

    ``s_polys`` maps index pairs (i, j) with i <= j to entry polynomials. The
    df part annihilates boundary-tangent vectors, so the field is admissible
    whenever every S entry vanishes on the boundary sphere.
    """
    pairs = sorted(s_polys.keys())
    maxdeg = max([p.degree() for p in s_polys.values()]
                 + [p.degree() for p in w_polys] + [0])
    expo = multi_indices(n, maxdeg)
    Cs = stack_on_basis([s_polys[ij] for ij in pairs], expo)   # (K, npairs)
    Cw = stack_on_basis(w_polys, expo)                          # (K, n)
    Ds = np.stack([stack_on_basis([s_polys[ij].diff(ax) for ij in pairs], expo)
                   for ax in range(n)])                         # (ax, K, npairs)
    Dw = np.stack([stack_on_basis([p.diff(ax) for p in w_polys], expo)
                   for ax in range(n)])                         # (ax, K, n)

    def _sym_expand(vals):
        S = np.zeros(vals.shape[:-1] + (n, n))
        for col, (i, j) in enumerate(pairs):
            S[..., i, j] += vals[..., col]
            if i != j:
                S[..., j, i] += vals[..., col]
        return S

    def comp(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lam = conformal_factor(X)
        V = monomial_matrix(X, expo)
        S = _sym_expand(V @ Cs)
        W = V @ Cw
        dfv = -(lam[:, None] ** 2) * X
        return S + 0.5 * (dfv[:, :, None] * W[:, None, :]
                          + W[:, :, None] * dfv[:, None, :])

    def dcomp(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lam = conformal_factor(X)
        V = monomial_matrix(X, expo)
        dS = _sym_expand(np.einsum("pK,aKc->pac", V, Ds, optimize=True))
        W = V @ Cw
        dW = np.einsum("pK,aKk->pak", V, Dw, optimize=True)
        dfv = -(lam[:, None] ** 2) * X
        F2 = _euclid_hess_f(X)
        out = dS
        out = out + 0.5 * (np.einsum("pij,pk->pijk", F2, W)
                           + np.einsum("pj,pik->pijk", dfv, dW)
                           + np.einsum("pik,pj->pijk", F2, W)
                           + np.einsum("pk,pij->pijk", dfv, dW))
        return out

    return SymTensorField(n=n, components=comp, d_components=dcomp,
                          admissible=admissible, meta=meta or {})


def make_admissible_field(spec: ChartSpec, seed: int = 0, amplitude: float = 0.1,
                          degree: int = 3, rule: QuadratureRule | None = None
                          ) -> SymTensorField:
    """Random admissible perturbation: bulk bump part plus a df (x) w part.

    h = (rho0^2 - |x|^2) s(x) + sym(df (x) w(x)) with seeded polynomial s, w.
    Tangential boundary components vanish exactly (the bump kills the first
    part, df annihilates boundary-tangent vectors); the normal blocks stay
    generic. The result is rescaled so sup over quadrature nodes of |h|_gbar
    equals ``amplitude``.
    """
    n, rho0 = spec.n, spec.rho0
    if amplitude == 0.0:
        return zero_field(n)
    rng = np.random.default_rng(seed)
    bump = Poly.monomial(n, [0] * n, rho0**2)
    for i in range(n):
        e = [0] * n
        e[i] = 2
        bump = bump + Poly.monomial(n, e, -1.0)
    s_polys = {(i, j): bump * Poly.random(n, degree, rng)
               for i in range(n) for j in range(i, n)}
    w_polys = [Poly.random(n, degree, rng) for _ in range(n)]
    base = polynomial_perturbation_field(n, s_polys, w_polys, admissible=True)

    if rule is None:
        rule = build_quadrature(spec)
    probe = np.vstack([rule.volume_x, rule.boundary_x])
    sup = sup_metric_norm(base, probe)
    scale = amplitude / sup
    out = linear_combination([base], [scale])
    out.admissible = True
    out.meta = {"recipe": "admissible", "seed": int(seed), "degree": int(degree),
                "amplitude": float(amplitude), "scale": float(scale)}
    return out


# chart-to-sphere map and its derivatives, used by the eigen tensor family

def _sphere_coords(X: np.ndarray) -> np.ndarray:
    lam = conformal_factor(X)
    return np.concatenate([lam[:, None] * X, (lam - 1.0)[:, None]], axis=-1)


def _sphere_jacobians(X: np.ndarray):
    m, n = X.shape
    lam = conformal_factor(X)
    eye = np.eye(n)
    l2, l3, l4 = lam**2, lam**3, lam**4

    dy = np.empty((m, n, n + 1))
    dy[:, :, :n] = -l2[:, None, None] * X[:, :, None] * X[:, None, :] \
        + lam[:, None, None] * eye
    dy[:, :, n] = -l2[:, None] * X

    d2y = np.empty((m, n, n, n + 1))
    xx = X[:, :, None] * X[:, None, :]
    sym3 = (np.einsum("ij,pa->pija", eye, X)
            + np.einsum("pj,ia->pija", X, eye)
            + np.einsum("pi,ja->pija", X, eye))
    d2y[:, :, :, :n] = 2.0 * l3[:, None, None, None] * np.einsum("pij,pa->pija", xx, X) \
        - l2[:, None, None, None] * sym3
    d2y[:, :, :, n] = 2.0 * l3[:, None, None] * xx - l2[:, None, None] * eye

    d3y = np.empty((m, n, n, n, n + 1))
    xxx = np.einsum("pi,pj,pl->pijl", X, X, X)
    pair6 = (np.einsum("ij,pl,pa->pijla", eye, X, X)
             + np.einsum("il,pj,pa->pijla", eye, X, X)
             + np.einsum("jl,pi,pa->pijla", eye, X, X)
             + np.einsum("ia,pj,pl->pijla", eye, X, X)
             + np.einsum("ja,pi,pl->pijla", eye, X, X)
             + np.einsum("la,pi,pj->pijla", eye, X, X))
    kron3 = (np.einsum("ij,la->ijla", eye, eye)
             + np.einsum("il,ja->ijla", eye, eye)
             + np.einsum("jl,ia->ijla", eye, eye))
    d3y[:, :, :, :, :n] = (-6.0 * l4[:, None, None, None, None]
                           * np.einsum("pijl,pa->pijla", xxx, X)
                           + 2.0 * l3[:, None, None, None, None] * pair6
                           - l2[:, None, None, None, None] * kron3)
    pair3 = (np.einsum("ij,pl->pijl", eye, X)
             + np.einsum("il,pj->pijl", eye, X)
             + np.einsum("jl,pi->pijl", eye, X))
    d3y[:, :, :, :, n] = -6.0 * l4[:, None, None, None] * xxx \
        + 2.0 * l3[:, None, None, None] * pair3
    return dy, d2y, d3y


def harmonic_catalog(d: int, k: int) -> list[Poly]:
    """Homogeneous harmonic polynomials of degree k in d ambient variables.

    Real and imaginary parts of (y_A + i y_B)^k over coordinate pairs; their
    restrictions to the sphere are eigenfunctions of the Laplacian with
    eigenvalue k(k + d - 2).
    """
    if k < 1:
        raise ValueError("degree must be >= 1")
    out = []
    for A in range(d):
        for B in range(A + 1, d):
            im = Poly.zero(d)
            re = Poly.zero(d)
            for j in range(k + 1):
                expo = [0] * d
                expo[A] = k - j
                expo[B] = j
                coef = comb(k, j)
                if j % 2 == 0:
                    re = re + Poly.monomial(d, expo, coef * (-1.0) ** (j // 2))
                else:
                    im = im + Poly.monomial(d, expo, coef * (-1.0) ** ((j - 1) // 2))
            out.append(im)
            out.append(re)
    for p in out:
        assert p.laplacian().is_zero(), "catalog entry failed the harmonicity check"
    return out


def eigen_divfree_field(spec: ChartSpec, k: int, member: int = 0,
                        harmonic: Poly | None = None, amplitude: float | None = None,
                        rule: QuadratureRule | None = None) -> SymTensorField:
    """Exactly divergence-free tensor built from a spherical harmonic.

    For an eigenfunction u with Delta u = -mu u, mu = k(k+n-1), the field
    h = Hess u + (mu - n + 1) u gbar satisfies delta h = 0 identically: the
    contracted commutation rule on the unit sphere gives
    delta(Hess u) = grad(Delta u) + (n-1) grad u = (n - 1 - mu) grad u.
    Not admissible; its tangential boundary block is generically nonzero.
    """
    n = spec.n
    if k <= 1:
        raise ValueError(
            "harmonic degree must be >= 2; k = 1 produces the zero tensor "
            "since Hess f = -f gbar for coordinate restrictions"
        )
    if harmonic is None:
        catalog = harmonic_catalog(n + 1, k)
        harmonic = catalog[member % len(catalog)]
    if harmonic.laplacian().coef.size:
        raise ValueError("supplied polynomial is not harmonic")
    mu = float(k * (k + n - 1))
    coef_u = mu - n + 1.0
    d = n + 1
    p1 = [harmonic.diff(A) for A in range(d)]
    p2 = [[p1[A].diff(B) for B in range(d)] for A in range(d)]
    p3 = [[[p2[A][B].diff(C) for C in range(d)] for B in range(d)] for A in range(d)]

    # shared ambient monomial basis: one Vandermonde serves every p-derivative
    a_expo = multi_indices(d, k)
    C0 = stack_on_basis([harmonic], a_expo)[:, 0]
    C1 = stack_on_basis(p1, a_expo)
    C2 = stack_on_basis([p2[A][B] for A in range(d) for B in range(d)], a_expo)
    C3 = stack_on_basis(
        [p3[A][B][C] for A in range(d) for B in range(d) for C in range(d)], a_expo
    )

    def _u_jets(X, order):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        m = X.shape[0]
        Y = _sphere_coords(X)
        dy, d2y, d3y = _sphere_jacobians(X)
        V = monomial_matrix(Y, a_expo)
        u = V @ C0
        p1v = V @ C1
        p2v = (V @ C2).reshape(m, d, d)
        u1 = np.einsum("pA,piA->pi", p1v, dy)
        u2 = np.einsum("pAB,piA,pjB->pij", p2v, dy, dy, optimize=True) \
            + np.einsum("pA,pijA->pij", p1v, d2y)
        if order < 3:
            return u, u1, u2, None
        p3v = (V @ C3).reshape(m, d, d, d)
        u3 = (np.einsum("pABC,piA,pjB,plC->plij", p3v, dy, dy, dy, optimize=True)
              + np.einsum("pAB,pliA,pjB->plij", p2v, d2y, dy, optimize=True)
              + np.einsum("pAB,piA,pljB->plij", p2v, dy, d2y, optimize=True)
              + np.einsum("pAC,plC,pijA->plij", p2v, dy, d2y, optimize=True)
              + np.einsum("pA,plijA->plij", p1v, d3y))
        return u, u1, u2, u3

    def comp(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        u, u1, u2, _ = _u_jets(X, order=2)
        lam, G, _ = connection_at(X)
        hess = u2 - np.einsum("pmjk,pm->pjk", G, u1)
        return hess + coef_u * u[:, None, None] * lam[:, None, None] ** 2 * np.eye(n)

    def dcomp(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        u, u1, u2, u3 = _u_jets(X, order=3)
        lam, G, dG = connection_at(X)
        out = (u3
               - np.einsum("pimjk,pm->pijk", dG, u1)
               - np.einsum("pmjk,pim->pijk", G, u2))
        dlam2 = -2.0 * lam[:, None] ** 3 * X
        out += coef_u * np.einsum(
            "pi,jk->pijk", u1 * lam[:, None] ** 2 + u[:, None] * dlam2, np.eye(n))
        return out

    fld = SymTensorField(n=n, components=comp, d_components=dcomp,
                         meta={"recipe": "eigen", "k": int(k), "member": int(member),
                               "mu": mu})
    if amplitude is not None:
        if rule is None:
            rule = build_quadrature(spec)
        probe = np.vstack([rule.volume_x, rule.boundary_x])
        sup = sup_metric_norm(fld, probe)
        scaled = fld.scaled(amplitude / sup)
        scaled.meta = dict(fld.meta, amplitude=float(amplitude))
        return scaled
    return fld


def lie_derivative_metric(xi: VectorField) -> SymTensorField:
    """Lie derivative of the round metric along xi, (L_xi gbar)_{jk}."""
    n = xi.n

    def comp(X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        lam = conformal_factor(X)
        v = xi.components(X)
        if xi.d_components is not None:
            dv = xi.d_components(X)
        else:
            _, dv, _, _ = fd_partials(xi.components, X, DEFAULT_FD_STEP)
        xv = np.einsum("pm,pm->p", X, v)
        return (-2.0 * lam[:, None, None] ** 3 * xv[:, None, None] * np.eye(n)
                + lam[:, None, None] ** 2 * (dv + np.swapaxes(dv, 1, 2)))

    dcomp = None
    if xi.d_components is not None and xi.d2_components is not None:
        def dcomp(X):
            X = np.atleast_2d(np.asarray(X, dtype=float))
            lam = conformal_factor(X)
            v = xi.components(X)
            dv = xi.d_components(X)
            d2v = xi.d2_components(X)
            xv = np.einsum("pm,pm->p", X, v)
            dxv = v + np.einsum("pm,pim->pi", X, dv)
            l3, l4 = lam**3, lam**4
            eye = np.eye(n)
            sym = dv + np.swapaxes(dv, 1, 2)
            out = np.einsum("pi,jk->pijk", 6.0 * l4[:, None] * X * xv[:, None], eye)
            out -= np.einsum("pi,jk->pijk", 2.0 * l3[:, None] * dxv, eye)
            out -= 2.0 * l3[:, None, None, None] * X[:, :, None, None] * sym[:, None, :, :]
            out += lam[:, None, None, None] ** 2 * (d2v + np.swapaxes(d2v, 2, 3))
            return out

    return SymTensorField(n=n, components=comp, d_components=dcomp,
                          admissible=xi.boundary_vanishing,
                          meta={"recipe": "lie", "xi": xi.meta,
                                "boundary_vanishing": xi.boundary_vanishing})


def rotation_field(n: int, a: int, b: int) -> VectorField:
    """Killing field rotating the chart plane (x_a, x_b)."""
    polys = [Poly.zero(n) for _ in range(n)]
    polys[a] = Poly.monomial(n, [1 if i == b else 0 for i in range(n)], -1.0)
    polys[b] = Poly.monomial(n, [1 if i == a else 0 for i in range(n)], 1.0)
    return VectorField.from_polys(polys, meta={"recipe": "rotation", "plane": (a, b)})


def pole_rotation_field(n: int, a: int) -> VectorField:
    """Killing field of the ambient rotation tilting the pole toward axis a.

    Chart expression xi^i = (1 - |x|^2)/2 delta_{ia} + x_a x_i.
    """
    polys = []
    for i in range(n):
        p = Poly.zero(n)
        if i == a:
            p = p + Poly.monomial(n, [0] * n, 0.5)
            for m in range(n):
                e = [0] * n
                e[m] = 2
                p = p + Poly.monomial(n, e, -0.5)
        e = [0] * n
        e[a] += 1
        e[i] += 1
        p = p + Poly.monomial(n, e, 1.0)
        polys.append(p)
    return VectorField.from_polys(polys, meta={"recipe": "pole_rotation", "axis": a})
