import numpy as np
import pytest

from ballrigidity import build_chart, build_quadrature, eval_background, eval_boundary
from ballrigidity.errors import ChartDomainError, NonFiniteFieldError
from ballrigidity.fields import fd_partials
from ballrigidity.geometry import (
    QuadParams,
    ball_volume,
    boundary_area,
    conformal_factor,
    integrate_boundary,
    integrate_volume,
    mean_curvature_round,
)


class TestChart:
    def test_rho0_closed_form(self):
        spec = build_chart(3, 0.8)
        assert spec.rho0 == pytest.approx(1.0 / 3.0, abs=1e-15)

    def test_height_roundtrip(self):
        for c in (0.3, 0.8944, 0.99):
            spec = build_chart(2, c)
            r2 = spec.rho0**2
            assert (1 - r2) / (1 + r2) == pytest.approx(c, abs=1e-14)

    def test_degenerate_limit(self):
        spec = build_chart(2, 1.0 - 1e-9)
        assert spec.rho0 < 3e-5

    @pytest.mark.parametrize("n,c", [(2, 0.0), (2, 1.0), (2, -0.5), (2, 1.5), (1, 0.5)])
    def test_rejects_bad_parameters(self, n, c):
        with pytest.raises(ChartDomainError):
            build_chart(n, c)

    def test_rejects_tiny_node_counts(self):
        with pytest.raises(ChartDomainError):
            build_chart(2, 0.9, QuadParams(n_radial=2, n_angular=8))


class TestBackground:
    def test_pole_values(self):
        spec = build_chart(2, 0.9)
        pe = eval_background(spec, np.zeros(2))
        assert pe.lam == pytest.approx(2.0)
        assert pe.f == pytest.approx(1.0)
        assert np.allclose(pe.gbar, 4.0 * np.eye(2))
        assert np.allclose(pe.df, 0.0)
        assert np.allclose(pe.hessf, -4.0 * np.eye(2))

    @pytest.mark.parametrize("fixture", ["disk", "ball"])
    def test_hessian_identity_analytic(self, fixture, request):
        spec, rule = request.getfixturevalue(fixture)
        pe = rule.volume_point
        res = np.max(np.abs(pe.hessf + pe.f[:, None, None] * pe.gbar))
        assert res <= 1e-10

    @pytest.mark.parametrize("fixture", ["disk", "ball"])
    def test_eikonal_identity(self, fixture, request):
        spec, rule = request.getfixturevalue(fixture)
        pe = rule.volume_point
        res = np.max(np.abs(
            np.einsum("pij,pi,pj->p", pe.gbar_inv, pe.df, pe.df) + pe.f**2 - 1.0))
        assert res <= 1e-10

    def test_hessian_identity_fd_crosscheck(self, disk):
        spec, rule = disk
        X = rule.volume_x[::19]
        pe = eval_background(spec, X)

        def fmap(Y):
            return conformal_factor(np.atleast_2d(Y)) - 1.0

        _, d1, d2, _ = fd_partials(fmap, X, 1e-3, second=True)
        G = pe.gammabar
        hess = d2 - np.einsum("pmij,pm->pij", G, d1)
        assert np.max(np.abs(hess + pe.f[:, None, None] * pe.gbar)) <= 1e-6

    def test_outside_chart_rejected(self, disk):
        spec, _ = disk
        with pytest.raises(ChartDomainError):
            eval_background(spec, np.array([spec.rho0 + 0.01, 0.0]))


class TestBoundary:
    def test_mean_curvature_closed_forms(self):
        spec = build_chart(2, 2.0 / np.sqrt(5.0))
        be = eval_boundary(spec, np.array([0.1, 1.2]))
        assert be.Hbar == pytest.approx(2.0, abs=1e-12)
        spec3 = build_chart(3, 2.0 / np.sqrt(6.0))
        be3 = eval_boundary(spec3, (np.array([1.0]), np.array([0.3])))
        assert be3.Hbar == pytest.approx(2.0 * np.sqrt(2.0), abs=1e-12)

    def test_normal_derivative_two_closed_forms(self, disk):
        spec, rule = disk
        be = rule.boundary
        lam_b = conformal_factor(be.x.reshape(-1, 2))
        assert be.dnubar_f == pytest.approx(-np.sqrt(1 - spec.c**2), abs=1e-14)
        assert be.dnubar_f == pytest.approx(-lam_b[0] * spec.rho0, abs=1e-14)
        # chain rule at the nodes: nubar contracted with df
        direct = np.einsum("pi,pi->p", be.nubar.reshape(-1, 2),
                           be.point.df.reshape(-1, 2))
        assert np.max(np.abs(direct - be.dnubar_f)) <= 1e-13

    @pytest.mark.parametrize("fixture", ["disk", "ball"])
    def test_frame_orthonormal(self, fixture, request):
        spec, rule = request.getfixturevalue(fixture)
        be = rule.boundary
        g = be.point.gbar
        fr = be.frame
        gram = np.einsum("paj,pjk,pbk->pab", fr, g, fr)
        assert np.max(np.abs(gram - np.eye(spec.n - 1))) <= 1e-12
        nn = np.einsum("pij,pi,pj->p", g, be.nubar, be.nubar)
        assert np.max(np.abs(nn - 1.0)) <= 1e-12
        mixed = np.einsum("pij,pi,paj->pa", g, be.nubar, fr)
        assert np.max(np.abs(mixed)) <= 1e-12

    @pytest.mark.parametrize("fixture", ["disk", "ball"])
    def test_umbilicity_finite_difference(self, fixture, request):
        spec, rule = request.getfixturevalue(fixture)
        be = rule.boundary
        X = be.x.reshape(-1, spec.n)

        def numap(Y):
            Y = np.atleast_2d(Y)
            lam = conformal_factor(Y)
            rho = np.sqrt(np.sum(Y * Y, axis=-1))
            return Y / (lam * rho)[:, None]

        nu0, dnu, _, _ = fd_partials(numap, X, 1e-3)
        G = be.point.gammabar
        cov = dnu + np.einsum("pkim,pm->pik", G, nu0)
        fr = be.frame
        diff = np.einsum("pai,pik->pak", fr, cov) \
            - mean_curvature_round(spec.n, spec.c) / (spec.n - 1) * fr
        norm = np.sqrt(np.einsum("pjk,paj,pak->pa", be.point.gbar, diff, diff))
        assert np.max(norm) <= 1e-8


class TestQuadrature:
    def test_closed_forms_n2(self, disk):
        spec, rule = disk
        vol = integrate_volume(rule, np.ones(rule.volume_x.shape[0]))
        area = integrate_boundary(rule, np.ones(rule.boundary_x.shape[0]))
        assert vol == pytest.approx(2 * np.pi * (1 - 0.9), abs=1e-8)
        assert area == pytest.approx(2 * np.pi * np.sqrt(1 - 0.81), abs=1e-8)
        fint = integrate_volume(rule, rule.volume_point.f)
        assert fint == pytest.approx(np.pi * (1 - 0.81), abs=1e-8)

    def test_closed_forms_n3(self, ball):
        spec, rule = ball
        vol = integrate_volume(rule, np.ones(rule.volume_x.shape[0]))
        area = integrate_boundary(rule, np.ones(rule.boundary_x.shape[0]))
        assert vol == pytest.approx(ball_volume(3, spec.c), abs=1e-8)
        assert area == pytest.approx(boundary_area(3, spec.c), abs=1e-8)
        # moment of the height function on the cap: (4 pi / 3)(1 - c^2)^{3/2}
        fint = integrate_volume(rule, rule.volume_point.f)
        assert fint == pytest.approx(4 * np.pi / 3 * (1 - spec.c**2) ** 1.5, abs=1e-8)

    def test_weights_positive(self, disk, ball):
        for _, rule in (disk, ball):
            assert np.all(rule.volume_w > 0)
            assert np.all(rule.boundary_w > 0)

    def test_refinement_monotone(self):
        def smooth(X):
            return np.exp(X[:, 0]) * np.cos(X[:, 1])

        ref_spec = build_chart(2, 0.9, QuadParams(n_radial=64, n_angular=128))
        ref = integrate_volume(build_quadrature(ref_spec), smooth)
        errs = []
        for nr, na in [(5, 6), (10, 12), (20, 24)]:
            spec = build_chart(2, 0.9, QuadParams(n_radial=nr, n_angular=na))
            errs.append(abs(integrate_volume(build_quadrature(spec), smooth) - ref))
        assert errs[0] > errs[1] > errs[2]

    def test_linear_in_integrand(self, disk):
        _, rule = disk
        rng = np.random.default_rng(0)
        a = rng.standard_normal(rule.volume_x.shape[0])
        b = rng.standard_normal(rule.volume_x.shape[0])
        lhs = integrate_volume(rule, 2.0 * a + 3.0 * b)
        rhs = 2.0 * integrate_volume(rule, a) + 3.0 * integrate_volume(rule, b)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_nonfinite_names_node(self, disk):
        _, rule = disk
        vals = np.ones(rule.volume_x.shape[0])
        vals[17] = np.nan
        with pytest.raises(NonFiniteFieldError, match="node 17"):
            integrate_volume(rule, vals)

    def test_bitwise_deterministic(self, disk):
        _, rule = disk
        vals = np.sin(rule.volume_x[:, 0] * 3.0)
        assert integrate_volume(rule, vals) == integrate_volume(rule, vals)
