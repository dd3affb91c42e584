import numpy as np
import pytest

from ballrigidity import build_chart, build_quadrature, make_admissible_field
from ballrigidity import analysis as an
from ballrigidity.errors import BasisDependenceError
from ballrigidity.fields import zero_field
from ballrigidity.gauge import build_gauge_basis, slice_project
from ballrigidity.geometry import QuadParams


EPS = (0.1, 0.05, 0.025, 0.0125)


class TestThresholds:
    @pytest.mark.parametrize("n", range(2, 11))
    def test_root_matches_closed_form(self, n):
        assert abs(an.cstar(n) - 2 / np.sqrt(n + 3)) <= 1e-12
        assert abs(an.b2_root(n) - 1 / np.sqrt(n + 1)) <= 1e-12
        assert abs(an.beta_threshold(n, an.cstar_closed(n))) <= 1e-13

    def test_beta_against_node_geometry(self):
        # independent oracle: Hbar f / 4 + normal derivative of f at the nodes
        for n, c in ((2, 0.7), (2, 0.95), (3, 0.9)):
            spec = build_chart(n, c)
            rule = build_quadrature(spec)
            nb, n2 = an.boundary_pair_coefficients(spec, rule)
            assert np.max(np.abs(nb - an.beta_threshold(n, c))) <= 1e-12
            assert np.max(np.abs(n2 - an.b2_coefficient(n, c))) <= 1e-12

    def test_sample_value_n3(self):
        # 0.5 * 0.81 / sqrt(0.19) - sqrt(0.19), evaluated independently
        expected = 0.405 / np.sqrt(0.19) - np.sqrt(0.19)
        assert an.beta_threshold(3, 0.9) == pytest.approx(expected, abs=1e-14)
        assert an.beta_threshold(3, 0.9) == pytest.approx(0.4932443, abs=1e-6)

    def test_b2_at_cstar(self):
        for n in (2, 3, 5):
            expected = (3 * n + 1) / (2 * np.sqrt((n - 1) * (n + 3)))
            assert an.b2_coefficient(n, an.cstar_closed(n)) == pytest.approx(
                expected, abs=1e-12)

    def test_monotone_and_ordered(self):
        rep = an.threshold_report(3)
        assert np.all(np.diff(rep.beta_samples) > 0)
        assert np.all(np.diff(rep.b2_samples) > 0)
        assert rep.b2_root < rep.cstar

    def test_signs_around_root(self):
        rep = an.threshold_report(4)
        below = rep.c_samples < rep.cstar - 1e-9
        above = rep.c_samples > rep.cstar + 1e-9
        assert np.all(rep.beta_samples[below] < 0)
        assert np.all(rep.beta_samples[above] > 0)


class TestDeficits:
    def test_zero_field(self, disk):
        spec, rule = disk
        z = zero_field(2)
        assert an.deficit_scalar(spec, rule, z) == pytest.approx(0.0, abs=1e-12)
        assert an.deficit_mean(spec, rule, z) == pytest.approx(0.0, abs=1e-12)

    def test_first_order_generic(self, disk):
        # deficits are generically first order in the amplitude
        spec, rule = disk
        base = make_admissible_field(spec, seed=1, amplitude=1.0, rule=rule)
        vals = [abs(an.deficit_scalar(spec, rule, base.scaled(e)))
                for e in (0.02, 0.01, 0.005)]
        slope = np.polyfit(np.log([0.02, 0.01, 0.005]), np.log(vals), 1)[0]
        assert slope == pytest.approx(1.0, abs=0.2)

    def test_nonnegative_for_pointwise_satisfying_field(self, disk):
        # shrinking conformal factor raises the curvature everywhere, and the
        # weighted deficit inherits the sign from the positive weights
        from ballrigidity.fields import conformal_multiple
        from ballrigidity.curvature import scalar_exact
        spec, rule = disk
        h = conformal_multiple(2, -0.1)
        r = scalar_exact(spec, h, rule.volume_x)
        assert np.min(r - 2.0) > 0
        assert an.deficit_scalar(spec, rule, h) > 0


class TestTraceDivergenceIdentity:
    def test_zero_field(self, disk):
        spec, rule = disk
        assert an.trace_divergence_identity(spec, rule, zero_field(2)) == 0.0

    @pytest.mark.parametrize("fixture", ["disk", "ball"])
    def test_admissible_fields(self, fixture, request):
        spec, rule = request.getfixturevalue(fixture)
        for seed in (0, 1):
            h = make_admissible_field(spec, seed=seed, amplitude=0.1, rule=rule)
            cub = an.cubic_bound(spec, rule, h)
            val = an.trace_divergence_identity(spec, rule, h)
            assert abs(val) <= 1e-8 * cub.c1_norm

    def test_refinement_decreases_residual(self):
        # polynomial recipes are integrated exactly at any sane resolution, so
        # the quadrature-limited regime needs a transcendental admissible field
        from ballrigidity.fields import SymTensorField
        from ballrigidity.geometry import conformal_factor

        def make_field(spec):
            rho0 = spec.rho0

            def comp(X):
                X = np.atleast_2d(X)
                lam = conformal_factor(X)
                bump = rho0**2 - np.sum(X * X, axis=-1)
                s = np.exp(3.0 * X[:, 0]) * np.cos(4.0 * X[:, 1])
                E = np.array([[1.0, 0.4], [0.4, -0.6]])
                dfv = -(lam[:, None] ** 2) * X
                w = 0.3 * np.stack([np.sin(3 * X[:, 1]),
                                    np.exp(2 * X[:, 0])], axis=-1)
                return (0.05 * (bump * s)[:, None, None] * E
                        + 0.025 * (dfv[:, :, None] * w[:, None, :]
                                   + w[:, :, None] * dfv[:, None, :]))

            return SymTensorField(n=2, components=comp, admissible=True)

        residuals = []
        for nr, na in ((6, 8), (12, 16), (24, 32)):
            spec = build_chart(2, 0.9, QuadParams(n_radial=nr, n_angular=na))
            rule = build_quadrature(spec)
            residuals.append(abs(an.trace_divergence_identity(
                spec, rule, make_field(spec))))
        assert residuals[0] > 100 * residuals[1]
        assert residuals[2] < residuals[0] / 100


class TestScalarDeficitExpansion:
    def test_zero_field(self, disk):
        spec, rule = disk
        rep = an.scalar_deficit_expansion(spec, rule, zero_field(2))
        assert rep.residual == pytest.approx(0.0, abs=1e-14)

    def test_cubic_scaling(self, disk):
        spec, rule = disk
        base = make_admissible_field(spec, seed=0, amplitude=1.0, rule=rule)
        fit = an.identity_scaling(
            spec, rule, base, EPS,
            lambda f: an.scalar_deficit_expansion(spec, rule, f).residual)
        assert fit.slope_raw == pytest.approx(3.0, abs=0.15)

    def test_ratio_bounded_across_seeds(self, disk):
        # fitted constant: the residual stays a small fraction of the cubic
        spec, rule = disk
        ratios = []
        for seed in range(5):
            base = make_admissible_field(spec, seed=seed, amplitude=1.0, rule=rule)
            rep = an.scalar_deficit_expansion(spec, rule, base.scaled(0.05))
            ratios.append(rep.ratio)
        assert max(ratios) <= 1.0


class TestDivergenceFreeIdentities:
    def test_zero_field(self, disk):
        spec, rule = disk
        r32 = an.scalar_deficit_expansion_divfree(spec, rule, zero_field(2))
        assert r32.residual == pytest.approx(0.0, abs=1e-14)
        r42 = an.mean_deficit_expansion(spec, rule, zero_field(2))
        assert r42.residual == pytest.approx(0.0, abs=1e-14)
        r41 = an.boundary_flux_identity(spec, rule, zero_field(2))
        assert r41.residual == pytest.approx(0.0, abs=1e-14)

    def test_residual_decreases_with_gauge_degree(self, disk):
        spec, rule = disk
        h = make_admissible_field(spec, seed=5, amplitude=0.1, rule=rule)
        res = []
        for deg in (2, 3, 4):
            basis = build_gauge_basis(spec, deg, rule)
            proj = slice_project(h, basis)
            res.append(an.boundary_flux_identity(spec, rule, proj.h_df).residual)
        assert res[0] > res[1] > res[2]

    def test_flux_identity_leakage_budget(self, disk, disk_basis3):
        spec, rule = disk
        h = make_admissible_field(spec, seed=5, amplitude=0.1, rule=rule)
        proj = slice_project(h, disk_basis3)
        rep = an.boundary_flux_identity(spec, rule, proj.h_df)
        kdiv = an.estimate_divergence_sensitivity(
            spec, rule,
            lambda f: an.boundary_flux_identity(spec, rule, f).residual,
            proj.h_df)
        assert rep.residual <= kdiv * rep.metadata["div_sup_boundary"] + 1e-12

    @pytest.mark.parametrize("fixture", ["disk", "ball"])
    def test_pointwise_umbilic_identities(self, fixture, request):
        spec, rule = request.getfixturevalue(fixture)
        h = make_admissible_field(spec, seed=3, amplitude=0.1, rule=rule)
        rep = an.boundary_flux_identity(spec, rule, h)
        assert rep.metadata["pointwise_frame_div"] <= 1e-6
        assert rep.metadata["pointwise_frame_trace"] <= 1e-6

    def test_oneform_closure(self, disk, disk_basis):
        spec, rule = disk
        h = make_admissible_field(spec, seed=5, amplitude=0.1, rule=rule)
        proj = slice_project(h, disk_basis)
        rep = an.boundary_flux_identity(spec, rule, proj.h_df)
        assert abs(rep.metadata["omega_closure"]) <= 1e-8

    def test_corrected_slopes(self, disk, disk_basis):
        spec, rule = disk
        base = make_admissible_field(spec, seed=5, amplitude=1.0, rule=rule)
        proj = slice_project(base, disk_basis)
        for evaluate in (
            lambda f: an.scalar_deficit_expansion_divfree(
                spec, rule, f).metadata["residual_corrected"],
            lambda f: an.mean_deficit_expansion(
                spec, rule, f).metadata["residual_corrected"],
        ):
            fit = an.identity_scaling(spec, rule, proj.h_df, EPS, evaluate)
            assert fit.slope_corrected >= 2.7

    def test_projected_identities_n3(self, ball):
        spec, rule = ball
        h = make_admissible_field(spec, seed=2, amplitude=0.1, rule=rule)
        basis = build_gauge_basis(spec, 2, rule)
        proj = slice_project(h, basis)
        raw_l2, _ = (proj.div_l2, proj.div_sup)
        from ballrigidity.gauge import divergence_residual
        before, _ = divergence_residual(spec, h, rule)
        assert raw_l2 < 0.2 * before
        rep = an.boundary_flux_identity(spec, rule, proj.h_df)
        assert rep.metadata["residual_corrected"] < rep.residual
        kdiv = an.estimate_divergence_sensitivity(
            spec, rule,
            lambda f: an.boundary_flux_identity(spec, rule, f).residual,
            proj.h_df, probe_seeds=(11,))
        assert rep.residual <= kdiv * rep.metadata["div_sup_boundary"] + 1e-12
        assert abs(rep.metadata["omega_closure"]) <= 1e-8

    def test_mean_remainder_dominates_after_correction(self, disk):
        # ablation: swapping in the quadratic mean removes most of the
        # corrected residual once the divergence is projected far down
        spec, rule = disk
        basis = build_gauge_basis(spec, 5, rule)
        h = make_admissible_field(spec, seed=5, amplitude=0.1, rule=rule)
        proj = slice_project(h, basis)
        full = an.mean_deficit_expansion(spec, rule, proj.h_df)
        ablated = an.mean_deficit_expansion(spec, rule, proj.h_df,
                                            use_quadratic_mean=True)
        assert ablated.metadata["residual_corrected"] \
            <= 0.5 * full.metadata["residual_corrected"]


class TestQuadraticForm:
    def test_zero_field(self, disk):
        spec, rule = disk
        br = an.quadratic_form(spec, rule, zero_field(2))
        for val in (br.t1, br.t2, br.t3, br.t4, br.b1, br.b2, br.b3, br.b4,
                    br.i_r, br.i_h):
            assert val == pytest.approx(0.0, abs=1e-14)

    def test_term_signs(self, disk):
        spec, rule = disk
        h = make_admissible_field(spec, seed=4, amplitude=0.1, rule=rule)
        br = an.quadratic_form(spec, rule, h)
        assert min(br.t1, br.t2, br.t3, br.t4) >= 0
        assert br.b1 <= 0 and br.b2 <= 0
        assert br.b3 >= 0 and br.b4 >= 0

    def test_pair_sums_track_threshold_sign(self):
        # the normal-normal pair flips sign exactly at the threshold height
        for c, sign in ((0.7, -1), (0.95, +1)):
            spec = build_chart(2, c)
            rule = build_quadrature(spec)
            h = make_admissible_field(spec, seed=4, amplitude=0.1, rule=rule)
            br = an.quadratic_form(spec, rule, h)
            assert np.sign(br.b1 + br.b3) == sign
        spec = build_chart(2, an.cstar_closed(2))
        rule = build_quadrature(spec)
        h = make_admissible_field(spec, seed=4, amplitude=0.1, rule=rule)
        br = an.quadratic_form(spec, rule, h)
        assert abs(br.b1 + br.b3) <= 1e-12 * max(abs(br.b1), abs(br.b3))

    def test_key_residual_ratio_stable_in_amplitude(self, disk, disk_basis):
        spec, rule = disk
        base = make_admissible_field(spec, seed=7, amplitude=1.0, rule=rule)
        proj = slice_project(base, disk_basis)
        ratios = []
        for e in (0.1, 0.05, 0.025):
            rep = an.key_estimate_residual(spec, rule, proj.h_df.scaled(e))
            ratios.append(rep.residual / rep.cubic)
        assert max(ratios) / min(ratios) <= 3.0
        assert max(ratios) < 1.0

    def test_key_decomposes_into_volume_and_boundary_identities(
            self, disk, disk_basis):
        # signed assemblies: key total = divergence-free volume identity total
        # plus c times the mean-curvature boundary identity total; this pins
        # every flux sign convention across the three assemblies at once
        spec, rule = disk
        h = make_admissible_field(spec, seed=8, amplitude=0.1, rule=rule)
        proj = slice_project(h, disk_basis)
        br = an.quadratic_form(spec, rule, proj.h_df)
        key_signed = br.i_r + br.i_h + br.q_total
        r32 = an.scalar_deficit_expansion_divfree(spec, rule, proj.h_df)
        vol_signed = r32.metadata["volume_part"] + r32.metadata["boundary_part"]
        r42 = an.mean_deficit_expansion(spec, rule, proj.h_df)
        bdry_signed = r42.metadata["signed_total"]
        assert key_signed == pytest.approx(vol_signed + spec.c * bdry_signed,
                                           abs=1e-12)

    def test_key_slope(self, disk, disk_basis):
        spec, rule = disk
        base = make_admissible_field(spec, seed=7, amplitude=1.0, rule=rule)
        proj = slice_project(base, disk_basis)
        fit = an.identity_scaling(
            spec, rule, proj.h_df, EPS,
            lambda f: an.key_estimate_residual(spec, rule, f).residual)
        slope = fit.slope_corrected if abs(fit.slope_corrected - 3.0) < abs(
            fit.slope_raw - 3.0) else fit.slope_raw
        assert 2.7 <= slope <= 3.3


class TestCubicBound:
    def test_zero_field(self, disk):
        spec, rule = disk
        cb = an.cubic_bound(spec, rule, zero_field(2))
        assert cb.total == 0.0 and cb.c1_norm == 0.0 and cb.w12_norm_sq == 0.0

    def test_exact_cubic_homogeneity(self, disk):
        spec, rule = disk
        base = make_admissible_field(spec, seed=2, amplitude=0.5, rule=rule)
        c1 = an.cubic_bound(spec, rule, base.scaled(0.1))
        c2 = an.cubic_bound(spec, rule, base.scaled(0.05))
        assert c1.total / c2.total == pytest.approx(8.0, rel=1e-10)

    def test_trace_ratio_bounded(self, disk):
        # boundary + volume cubic stays controlled by C1 * W12^2 across scales
        spec, rule = disk
        ratios = []
        for seed in range(5):
            base = make_admissible_field(spec, seed=seed, amplitude=1.0, rule=rule)
            for e in (1e-3, 1e-2, 1e-1):
                ratios.append(an.cubic_bound(spec, rule, base.scaled(e)).trace_ratio)
        ratios = np.asarray(ratios)
        assert np.all(np.isfinite(ratios))
        assert ratios.max() <= 10.0


class TestCoercivity:
    def test_q_matrix_matches_quadratic_form(self, disk, disk_basis3):
        spec, rule = disk
        gens = an.admissible_generator_fields(spec, 1)[:6]
        Q, M = an.assemble_Q_matrix(spec, rule, gens)
        assert np.allclose(Q, Q.T, atol=1e-12)
        for idx in (0, 3):
            br = an.quadratic_form(spec, rule, gens[idx])
            assert Q[idx, idx] == pytest.approx(br.q_total, rel=1e-10)
            assert M[idx, idx] == pytest.approx(2 * br.t3, rel=1e-10)

    def test_polarization_consistency(self, disk):
        from ballrigidity.fields import linear_combination
        spec, rule = disk
        gens = an.admissible_generator_fields(spec, 1)[:4]
        Q, _ = an.assemble_Q_matrix(spec, rule, gens)
        a, b = 0, 2
        plus = an.quadratic_form(spec, rule,
                                 linear_combination([gens[a], gens[b]], [1, 1]))
        minus = an.quadratic_form(spec, rule,
                                  linear_combination([gens[a], gens[b]], [1, -1]))
        assert Q[a, b] == pytest.approx(0.25 * (plus.q_total - minus.q_total),
                                        rel=1e-8, abs=1e-12)

    def test_single_vector_rayleigh(self, disk):
        spec, rule = disk
        gen = an.admissible_generator_fields(spec, 0)[0]
        Q, M = an.assemble_Q_matrix(spec, rule, [gen])
        kappa = an.min_eigenvalue(Q, M)
        assert kappa == pytest.approx(Q[0, 0] / M[0, 0], rel=1e-12)

    def test_min_eigenvalue_rejects_dependent_mass(self):
        Q = np.eye(2)
        M = np.array([[1.0, 1.0], [1.0, 1.0]])
        with pytest.raises(BasisDependenceError):
            an.min_eigenvalue(Q, M)

    @pytest.mark.parametrize("c", [None, 0.9, 0.95])
    def test_kappa_at_least_half(self, c):
        c = an.cstar_closed(2) if c is None else c
        spec = build_chart(2, c)
        rule = build_quadrature(spec)
        rep = an.coercivity_spectrum(spec, rule, gen_degree=2, gauge_degree=3)
        assert rep.kappa >= 0.5 - 1e-6
        assert rep.min_vector_margin >= -1e-10
        assert rep.min_node_beta >= -1e-12
        assert rep.min_node_b2 >= -1e-12

    def test_below_threshold_coefficient_negative(self):
        spec = build_chart(2, 0.6)
        rule = build_quadrature(spec)
        rep = an.coercivity_spectrum(spec, rule, gen_degree=1, gauge_degree=2)
        assert rep.min_node_beta < 0
        assert rep.kappa > 0  # trial space need not see the negative directions


@pytest.fixture(scope="module")
def cert_setup(disk, disk_basis3):
    spec, rule = disk
    c_fit = an.calibrate_key_constant(spec, rule, disk_basis3,
                                      seeds=(101,), eps=(0.1, 0.05))
    return spec, rule, disk_basis3, c_fit


class TestCertificate:
    def test_zero_field_rigid(self, cert_setup):
        spec, rule, basis, c_fit = cert_setup
        cert = an.rigidity_certificate(spec, rule, zero_field(2), basis=basis,
                                       c_fit=c_fit)
        assert cert.verdict == "rigid_consistent"
        assert cert.mass == 0.0
        assert cert.q_total == pytest.approx(0.0, abs=1e-14)
        assert cert.margin <= 0.0

    def test_random_field_violates(self, cert_setup, disk):
        spec, rule, basis, c_fit = cert_setup
        h = make_admissible_field(spec, seed=11, amplitude=0.05, rule=rule)
        cert = an.rigidity_certificate(spec, rule, h, basis=basis, c_fit=c_fit)
        assert cert.verdict == "hypotheses_violated"
        assert cert.min_scalar_deficit < 0
        assert "deficit" in cert.explanation

    def test_below_threshold_inconclusive(self):
        spec = build_chart(2, 0.5)
        rule = build_quadrature(spec)
        h = make_admissible_field(spec, seed=1, amplitude=0.01, rule=rule)
        cert = an.rigidity_certificate(spec, rule, h, gauge_degree=2, c_fit=1.0)
        assert cert.verdict == "inconclusive"
        assert "threshold" in cert.explanation

    def test_tolerance_band_rigid(self, cert_setup):
        spec, rule, basis, c_fit = cert_setup
        h = make_admissible_field(spec, seed=11, amplitude=1e-5, rule=rule)
        cert = an.rigidity_certificate(spec, rule, h, basis=basis, c_fit=c_fit,
                                       tol_scalar=1e-3, tol_mean=1e-3)
        assert cert.verdict == "rigid_consistent"
        assert cert.mass <= cert.slack / cert.kappa + cert.c_fit
        assert cert.smallness_bound > 0

    def test_soundness(self, cert_setup):
        spec, rule, basis, c_fit = cert_setup
        for seed, amp, tols in ((3, 0.05, 1e-6), (4, 1e-4, 1e-3)):
            h = make_admissible_field(spec, seed=seed, amplitude=amp, rule=rule)
            cert = an.rigidity_certificate(spec, rule, h, basis=basis,
                                           c_fit=c_fit, tol_scalar=tols,
                                           tol_mean=tols)
            if cert.verdict == "rigid_consistent":
                assert cert.min_scalar_deficit >= -tols
                assert cert.min_mean_deficit >= -tols
                assert cert.c >= cert.cstar
                assert cert.margin <= 1e-12 * max(1.0, cert.kappa * cert.mass)
