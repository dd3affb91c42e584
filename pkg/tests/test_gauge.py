import dataclasses

import numpy as np
import pytest

from ballrigidity import (
    eigen_divfree_field,
    lie_derivative_metric,
    make_admissible_field,
)
from ballrigidity.errors import GramConditionError
from ballrigidity.fields import tangential_block_sup
from ballrigidity.gauge import (
    _pivoted_cholesky_keep,
    build_gauge_basis,
    divergence_residual,
    random_boundary_vector_field,
    slice_project,
)


class TestBasis:
    def test_degree_zero_dimension(self, disk):
        spec, rule = disk
        basis = build_gauge_basis(spec, 0, rule)
        assert basis.n_raw == 2
        assert basis.dimension == 2
        assert basis.eigvals[0] > 0

    def test_gram_positive_definite(self, disk_basis):
        assert disk_basis.eigvals[0] > 0
        assert disk_basis.cond < 1e6

    def test_elements_vanish_on_boundary(self, disk, disk_basis):
        spec, rule = disk
        Xb = rule.boundary_x
        for xi in disk_basis.xis[:5]:
            assert np.max(np.abs(xi.components(Xb))) <= 1e-13

    def test_lie_fields_admissible(self, disk, disk_basis):
        spec, rule = disk
        for fld in disk_basis.lie_fields[:5]:
            assert tangential_block_sup(fld, rule.boundary) <= 1e-8

    def test_rank_filter_drops_duplicates(self):
        gram = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        kept = _pivoted_cholesky_keep(gram, rel_tol=1e-20)
        assert len(kept) == 2


class TestProjection:
    def test_pure_gauge_annihilated(self, disk, disk_basis):
        spec, rule = disk
        hg = lie_derivative_metric(disk_basis.xis[5])
        res = slice_project(hg, disk_basis)
        assert res.norm_h_df <= 1e-10 * res.norm_h

    def test_divfree_fixed(self, disk, disk_basis):
        spec, rule = disk
        he = eigen_divfree_field(spec, 2, amplitude=0.1, rule=rule)
        res = slice_project(he, disk_basis)
        assert np.max(np.abs(res.coefficients_normalized)) <= 1e-8
        assert res.norm_gauge <= 1e-8 * res.norm_h

    def test_divergence_monotone_in_degree(self, disk):
        spec, rule = disk
        h = make_admissible_field(spec, seed=3, amplitude=0.1, rule=rule)
        l2s = []
        for deg in (2, 3, 4):
            basis = build_gauge_basis(spec, deg, rule)
            l2s.append(slice_project(h, basis).div_l2)
        assert l2s[0] > l2s[1] > l2s[2]

    def test_pythagoras(self, disk, disk_basis):
        spec, rule = disk
        h = make_admissible_field(spec, seed=6, amplitude=0.1, rule=rule)
        res = slice_project(h, disk_basis)
        split = abs(res.norm_h**2 - res.norm_h_df**2 - res.norm_gauge**2)
        assert split <= 1e-9 * res.norm_h**2

    def test_idempotent(self, disk, disk_basis):
        spec, rule = disk
        h = make_admissible_field(spec, seed=6, amplitude=0.1, rule=rule)
        first = slice_project(h, disk_basis)
        second = slice_project(first.h_df, disk_basis)
        assert second.norm_gauge <= 1e-10 * first.norm_h

    def test_boundary_condition_preserved(self, disk, disk_basis):
        spec, rule = disk
        h = make_admissible_field(spec, seed=2, amplitude=0.1, rule=rule)
        res = slice_project(h, disk_basis)
        assert res.h_df.admissible
        assert tangential_block_sup(res.h_df, rule.boundary) <= 1e-8

    def test_weak_divergence_duality(self, disk, disk_basis):
        # <h_df, L_xi gbar> = -2 <div h_df, xi> for boundary-vanishing xi
        spec, rule = disk
        from ballrigidity.fields import jet_at
        h = make_admissible_field(spec, seed=5, amplitude=0.1, rule=rule)
        res = slice_project(h, disk_basis)
        xi = random_boundary_vector_field(spec, seed=21, degree=3)
        L = lie_derivative_metric(xi)
        wfac = rule.volume_w * rule.volume_point.lam**-4
        ip = np.einsum("pjk,pjk,p->", res.h_df.components(rule.volume_x),
                       L.components(rule.volume_x), wfac)
        jet = jet_at(res.h_df, rule.volume_point, with_second=False)
        ip2 = np.sum(rule.volume_w * rule.volume_point.lam**-2
                     * np.einsum("pl,pl->p", jet.div, xi.components(rule.volume_x)))
        scale = res.norm_h_df * np.sqrt(np.einsum(
            "pjk,pjk,p->", L.components(rule.volume_x),
            L.components(rule.volume_x), wfac))
        assert abs(ip + 2 * ip2) <= 1e-8 * max(scale, 1e-300)

    def test_condition_guard(self, disk, disk_basis):
        spec, rule = disk
        h = make_admissible_field(spec, seed=1, amplitude=0.1, rule=rule)
        bad = dataclasses.replace(disk_basis, cond=1e13)
        with pytest.raises(GramConditionError, match="degree"):
            slice_project(h, bad)

    def test_divergence_residual_cases(self, disk, disk_basis):
        spec, rule = disk
        from ballrigidity.fields import zero_field
        l2, sup = divergence_residual(spec, zero_field(2), rule)
        assert l2 == 0.0 and sup == 0.0
        he = eigen_divfree_field(spec, 2, amplitude=0.1, rule=rule)
        l2e, _ = divergence_residual(spec, he, rule)
        assert l2e <= 1e-6
