"""Linearized slice decomposition by variational least squares.

Symmetric tensors split, modulo the discretization, into Lie derivatives of
the metric along boundary-vanishing vector fields plus divergence-free
tensors. Orthogonality to every Lie direction in L^2(dvol) is the weak form
of divergence-freeness, since integrating by parts against a vector field
that vanishes on the boundary gives
``int <h, L_xi gbar> = -2 int <delta h, xi>``.

The gauge space is a polynomial-times-bump Ritz family; the projection is a
small dense symmetric solve, done through an eigendecomposition of the
normalized Gram matrix so that pure-gauge inputs are annihilated to near
machine precision.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BasisConfigurationError, GramConditionError
from .fields import (
    SymTensorField,
    VectorField,
    jet_at,
    lie_derivative_metric,
    linear_combination,
)
from .geometry import ChartSpec, QuadratureRule
from .polynomials import Poly, multi_indices


def bump_poly(spec: ChartSpec) -> Poly:
    """rho0^2 - |x|^2, the factor forcing boundary vanishing."""
    n = spec.n
    p = Poly.monomial(n, [0] * n, spec.rho0**2)
    for i in range(n):
        e = [0] * n
        e[i] = 2
        p = p + Poly.monomial(n, e, -1.0)
    return p


def gauge_vector_fields(spec: ChartSpec, degree: int) -> list[VectorField]:
    """Monomial-vector family times the bump: xi = (rho0^2 - |x|^2) x^beta e_dir."""
    if degree < 0:
        raise BasisConfigurationError("gauge degree must be >= 0")
    n = spec.n
    bump = bump_poly(spec)
    out = []
    for beta in multi_indices(n, degree):
        base = Poly(n, bump.expo + beta[None, :], bump.coef)  # bump * x^beta
        for direction in range(n):
            polys = [base if i == direction else Poly.zero(n) for i in range(n)]
            out.append(VectorField.from_polys(
                polys, boundary_vanishing=True,
                meta={"recipe": "gauge", "beta": beta.tolist(), "dir": direction},
            ))
    return out


def _pivoted_cholesky_keep(G: np.ndarray, rel_tol: float) -> list[int]:
    """Indices of a numerically independent subset, greedy pivoted Cholesky."""
    S = G.copy()
    N = S.shape[0]
    active = list(range(N))
    kept: list[int] = []
    threshold = rel_tol * float(np.max(np.diag(G)))
    for _ in range(N):
        diag = np.array([S[i, i] for i in active])
        j = int(np.argmax(diag))
        if diag[j] <= threshold:
            break
        piv = active[j]
        kept.append(piv)
        col = np.array([S[i, piv] for i in active]) / np.sqrt(S[piv, piv])
        for a, ia in enumerate(active):
            for b, ib in enumerate(active):
                S[ia, ib] -= col[a] * col[b]
        active.pop(j)
        if not active:
            break
    return sorted(kept)


@dataclass
class GaugeBasis:
    """Filtered, normalized Lie-derivative basis with its Gram factorization."""

    spec: ChartSpec
    rule: QuadratureRule
    degree: int
    xis: list[VectorField]
    lie_fields: list[SymTensorField]       # normalized to unit L^2 norm
    lie_values: np.ndarray                  # (N, M, n, n) at volume nodes
    norms: np.ndarray                       # original L^2 norms before scaling
    gram: np.ndarray
    eigvals: np.ndarray
    eigvecs: np.ndarray
    cond: float
    n_raw: int

    @property
    def dimension(self) -> int:
        return len(self.xis)


def build_gauge_basis(spec: ChartSpec, degree: int, rule: QuadratureRule,
                      filter_tol: float = 1e-10) -> GaugeBasis:
    """Assemble, filter, and factor the gauge family at the given degree.

    Elements whose Lie derivatives are numerically dependent (relative
    singular value below ``filter_tol``) are dropped. There is no
    boundary-vanishing Killing field on the ball, so nothing collapses to
    zero and the filtered Gram is positive definite.
    """
    xis = gauge_vector_fields(spec, degree)
    lies = [lie_derivative_metric(xi) for xi in xis]
    wfac = rule.volume_w * rule.volume_point.lam**-4
    vals = np.stack([fld.components(rule.volume_x) for fld in lies])
    gram_raw = np.einsum("aMjk,bMjk,M->ab", vals, vals, wfac, optimize=True)

    norms = np.sqrt(np.diag(gram_raw))
    alive = np.flatnonzero(norms > 0)
    if alive.size == 0:
        raise BasisConfigurationError("every gauge element has zero Lie derivative")
    gram_n = gram_raw[np.ix_(alive, alive)] / np.outer(norms[alive], norms[alive])
    # relative singular value of the family is sqrt of the Gram eigenvalue ratio
    kept_local = _pivoted_cholesky_keep(gram_n, rel_tol=filter_tol**2)
    if not kept_local:
        raise BasisConfigurationError("gauge basis empty after rank filtering")
    kept = alive[kept_local]

    gram = gram_n[np.ix_(kept_local, kept_local)]
    eigvals, eigvecs = np.linalg.eigh(0.5 * (gram + gram.T))
    cond = float(eigvals[-1] / eigvals[0])
    keep_norms = norms[kept]
    lie_fields = [linear_combination([lies[i]], [1.0 / norms[i]]) for i in kept]
    for fld, i in zip(lie_fields, kept):
        fld.admissible = True
        fld.meta = dict(lies[i].meta, normalized=True)
    lie_values = vals[kept] / keep_norms[:, None, None, None]
    return GaugeBasis(
        spec=spec, rule=rule, degree=degree,
        xis=[xis[i] for i in kept], lie_fields=lie_fields,
        lie_values=lie_values, norms=keep_norms,
        gram=gram, eigvals=eigvals, eigvecs=eigvecs, cond=cond, n_raw=len(xis),
    )


def combine_vector_fields(xis: list[VectorField], coeffs) -> VectorField:
    coeffs = [float(c) for c in coeffs]
    n = xis[0].n

    # polynomial fields combine at the coefficient level: one evaluation pass
    if all(x.polys is not None for x in xis):
        polys = []
        for k in range(n):
            total = xis[0].polys[k].scale(coeffs[0])
            for xi, c in zip(xis[1:], coeffs[1:]):
                total = total + xi.polys[k].scale(c)
            polys.append(total)
        return VectorField.from_polys(
            polys, boundary_vanishing=all(x.boundary_vanishing for x in xis),
            meta={"recipe": "combination"})

    def comp(X):
        out = coeffs[0] * xis[0].components(X)
        for xi, c in zip(xis[1:], coeffs[1:]):
            out = out + c * xi.components(X)
        return out

    dcomp = None
    if all(x.d_components is not None for x in xis):
        def dcomp(X):
            out = coeffs[0] * xis[0].d_components(X)
            for xi, c in zip(xis[1:], coeffs[1:]):
                out = out + c * xi.d_components(X)
            return out

    d2comp = None
    if all(x.d2_components is not None for x in xis):
        def d2comp(X):
            out = coeffs[0] * xis[0].d2_components(X)
            for xi, c in zip(xis[1:], coeffs[1:]):
                out = out + c * xi.d2_components(X)
            return out

    return VectorField(
        n=n, components=comp, d_components=dcomp, d2_components=d2comp,
        boundary_vanishing=all(x.boundary_vanishing for x in xis),
        meta={"recipe": "combination"},
    )


@dataclass
class ProjectionResult:
    """Gauge coefficients, the projected tensor, and its divergence residuals."""

    coefficients: np.ndarray           # against the unnormalized xi family
    coefficients_normalized: np.ndarray
    xi_star: VectorField
    h_df: SymTensorField
    div_l2: float
    div_sup: float
    gram_cond: float
    norm_h: float
    norm_h_df: float
    norm_gauge: float


def field_l2_norm(rule: QuadratureRule, values: np.ndarray) -> float:
    """L^2(dvol) norm of tensor node values, metric contractions included."""
    wfac = rule.volume_w * rule.volume_point.lam**-4
    return float(np.sqrt(np.einsum("Mjk,Mjk,M->", values, values, wfac)))


def divergence_residual(spec: ChartSpec, field: SymTensorField,
                        rule: QuadratureRule,
                        fd_step: float | None = None) -> tuple[float, float]:
    """(L^2, sup) quadrature norms of the divergence over the volume nodes."""
    step = fd_step if fd_step is not None else spec.quad.fd_step
    jet = jet_at(field, rule.volume_point, fd_step=step, with_second=False)
    lam = rule.volume_point.lam
    div2 = lam**-2 * np.einsum("pl,pl->p", jet.div, jet.div)
    l2 = float(np.sqrt(np.sum(rule.volume_w * div2)))
    sup = float(np.max(np.sqrt(div2), initial=0.0))
    return l2, sup


def slice_project(h: SymTensorField, basis: GaugeBasis,
                  fd_step: float | None = None) -> ProjectionResult:
    """L^2-least-squares removal of the gauge content of a perturbation.

    Minimizes ||h - L_xi gbar||_{L^2(dvol)} over the basis span. The solve
    goes through the eigendecomposition of the normalized Gram matrix, so a
    pure-gauge input projects to (numerically) zero and an exactly
    divergence-free input is left untouched.
    """
    if basis.cond > 1e12:
        raise GramConditionError(
            f"gauge Gram condition {basis.cond:.2e} too large; "
            "lower the degree or refine the quadrature"
        )
    rule = basis.rule
    hv = h.components(rule.volume_x)
    wfac = rule.volume_w * rule.volume_point.lam**-4
    b = np.einsum("aMjk,Mjk->a", basis.lie_values, hv * wfac[:, None, None])
    V, s = basis.eigvecs, basis.eigvals
    a_norm = V @ ((V.T @ b) / s)
    a_orig = a_norm / basis.norms

    # the Lie derivative is linear in xi, so the gauge part collapses to a
    # single field of the combined vector field; far cheaper to evaluate
    xi_star = combine_vector_fields(basis.xis, a_orig)
    gauge_field = lie_derivative_metric(xi_star)
    h_df = linear_combination([h, gauge_field], [1.0, -1.0])
    h_df.admissible = h.admissible
    h_df.meta = {"recipe": "projected", "base": h.meta, "gauge_degree": basis.degree}

    gauge_vals = np.einsum("a,aMjk->Mjk", a_norm, basis.lie_values)
    norm_h = field_l2_norm(rule, hv)
    norm_gauge = field_l2_norm(rule, gauge_vals)
    norm_h_df = field_l2_norm(rule, hv - gauge_vals)
    div_l2, div_sup = divergence_residual(basis.spec, h_df, rule, fd_step=fd_step)
    return ProjectionResult(
        coefficients=a_orig, coefficients_normalized=a_norm, xi_star=xi_star,
        h_df=h_df, div_l2=div_l2, div_sup=div_sup, gram_cond=basis.cond,
        norm_h=norm_h, norm_h_df=norm_h_df, norm_gauge=norm_gauge,
    )


def random_boundary_vector_field(spec: ChartSpec, seed: int = 0,
                                 degree: int = 2) -> VectorField:
    """Seeded boundary-vanishing vector field, for duality and probe tests."""
    rng = np.random.default_rng(seed)
    n = spec.n
    bump = bump_poly(spec)
    polys = []
    for _ in range(n):
        p = Poly.random(n, degree, rng)
        # multiply by the bump: shift every exponent row by each bump term
        terms = [Poly(n, p.expo + brow[None, :], p.coef * bc)
                 for brow, bc in zip(bump.expo, bump.coef)]
        total = terms[0]
        for t in terms[1:]:
            total = total + t
        polys.append(total)
    return VectorField.from_polys(polys, boundary_vanishing=True,
                                  meta={"recipe": "random_gauge", "seed": seed})
