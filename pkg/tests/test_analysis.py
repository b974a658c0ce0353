"""Ensemble statistics, coverage floors, variance bounds, membership."""

import math

import numpy as np
import pytest

from ppvc import analysis, engine
from ppvc.analysis import Ensemble
from ppvc.errors import DomainError


def cfg_small(**kw):
    base = dict(
        n=6, faulty=frozenset({5}), dim=2, T=30, seed=11,
        noise=engine.NoiseSchedule(scale=1.0, decay=0.75),
        gamma=engine.GammaPolicy.fixed(0.8),
        byz=engine.ByzantineStrategy(kind="box",
                                     box=((-0.5, -0.2), (0.2, 0.5))),
        initial_box=((-1.0, 1.0), (-1.0, 1.0)),
        policy="random_subset_in",
    )
    base.update(kw)
    return engine.SimConfig(**base)


class TestEnsemble:
    def test_validates_shape(self):
        with pytest.raises(DomainError):
            Ensemble(finals=np.zeros(3))
        with pytest.raises(DomainError):
            Ensemble(finals=np.zeros((0, 2)))

    def test_run_ensemble_deterministic(self):
        cfg = cfg_small()
        a = analysis.run_ensemble(cfg, 6)
        b = analysis.run_ensemble(cfg, 6)
        assert a.finals.tobytes() == b.finals.tobytes()
        assert a.config_digest == b.config_digest

    def test_worker_count_does_not_change_result(self):
        cfg = cfg_small(T=10)
        seq = analysis.run_ensemble(cfg, 4, jobs=1)
        par = analysis.run_ensemble(cfg, 4, jobs=2)
        assert seq.finals.tobytes() == par.finals.tobytes()

    def test_stats_hand_case(self):
        e = Ensemble(finals=np.array([[0.0, 0.0], [2.0, 0.0]]))
        mean, cov = analysis.ensemble_stats(e)
        assert mean.tolist() == [1.0, 0.0]
        assert cov.tolist() == [[2.0, 0.0], [0.0, 0.0]]

    def test_stats_need_two_runs(self):
        with pytest.raises(DomainError):
            analysis.ensemble_stats(Ensemble(finals=np.zeros((1, 2))))


class TestRegularizeCov:
    def test_full_rank_identity_projector(self):
        proj, red, d_eff = analysis.regularize_cov(np.diag([4.0, 1.0]))
        assert d_eff == 2
        # dominant direction first
        assert np.allclose(np.abs(proj), np.eye(2))
        assert np.allclose(red, np.diag([4.0, 1.0]))

    def test_drops_tiny_directions(self):
        proj, red, d_eff = analysis.regularize_cov(np.diag([1.0, 1e-14]))
        assert d_eff == 1
        assert proj.shape == (2, 1)
        assert abs(abs(proj[0, 0]) - 1.0) < 1e-12
        assert red.shape == (1, 1)

    def test_projector_orthonormal(self):
        rng = np.random.default_rng(2)
        A = rng.normal(size=(3, 3))
        cov = A @ A.T
        proj, red, d_eff = analysis.regularize_cov(cov)
        assert d_eff == 3
        assert np.allclose(proj.T @ proj, np.eye(3), atol=1e-12)
        assert np.allclose(proj @ red @ proj.T, cov, atol=1e-10)

    def test_zero_covariance_rejected(self):
        with pytest.raises(DomainError):
            analysis.regularize_cov(np.zeros((2, 2)))

    def test_asymmetric_rejected(self):
        with pytest.raises(DomainError):
            analysis.regularize_cov(np.array([[1.0, 0.5], [0.0, 1.0]]))


class TestCoverage:
    def test_gaussian_reference(self):
        rng = np.random.default_rng(5)
        e = Ensemble(finals=rng.normal(size=(20000, 2)))
        rep = analysis.mahalanobis_coverage(e, [2, 3, 4, 5])
        assert rep.d_eff == 2
        # chi-squared(2) CDF at 4 is 1 - e^{-2} = 0.8647
        assert abs(rep.empirical[2] - (1 - math.exp(-2))) < 0.01
        assert rep.all_passed
        for emp, flo in zip(rep.empirical, rep.floors):
            assert emp >= flo - 0.04

    def test_floor_values(self):
        rng = np.random.default_rng(6)
        e = Ensemble(finals=rng.normal(size=(500, 2)))
        rep = analysis.mahalanobis_coverage(e, [2.0, 4.0])
        assert rep.floors == (0.0, 0.5)

    def test_singular_ensemble_uses_retained_subspace(self):
        rng = np.random.default_rng(7)
        finals = np.zeros((400, 2))
        finals[:, 0] = rng.normal(size=400)
        e = Ensemble(finals=finals)
        rep = analysis.mahalanobis_coverage(e, [4.0])
        assert rep.d_eff == 1
        assert rep.floors[0] == 0.75
        assert rep.all_passed

    def test_needs_enough_runs(self):
        with pytest.raises(DomainError):
            analysis.mahalanobis_coverage(Ensemble(finals=np.zeros((3, 2))),
                                          [2.0])

    def test_chi_positive(self):
        rng = np.random.default_rng(8)
        e = Ensemble(finals=rng.normal(size=(50, 2)))
        with pytest.raises(DomainError):
            analysis.mahalanobis_coverage(e, [0.0])


class TestVarianceBound:
    def test_reference_bound(self):
        rng = np.random.default_rng(9)
        e = Ensemble(finals=rng.normal(size=(100, 2)))
        rep = analysis.variance_bound_check(e, 2.0, 0.75)
        assert abs(rep.bound - 9.142857142857142) < 1e-15
        assert rep.all_passed

    def test_zero_decay_bound_is_scale_squared(self):
        rng = np.random.default_rng(10)
        e = Ensemble(finals=0.1 * rng.normal(size=(100, 2)))
        rep = analysis.variance_bound_check(e, 1.0, 0.0)
        assert rep.bound == 1.0

    def test_flags_excess_variance(self):
        rng = np.random.default_rng(11)
        e = Ensemble(finals=10.0 * rng.normal(size=(200, 2)))
        rep = analysis.variance_bound_check(e, 1.0, 0.5)
        assert not rep.all_passed
        assert "FAIL" in "\n".join(rep.lines())


class TestMembership:
    def initials(self):
        return np.array([[-3.0, -2.0], [3.0, -2.0], [3.0, 2.0],
                         [-3.0, 2.0], [0.0, 0.0]])

    def test_floor_formula(self):
        pts = self.initials()
        finals = np.zeros((40, 2))  # all at the center
        e = Ensemble(finals=finals)
        rep = analysis.hull_membership_report(pts, [1], {1: 0.5},
                                              1.0, 0.75, e)
        # l_1 = 2 (mean at 0, range [-2, 2]); power = 1/(1-0.5625)
        power = 1.0 / (1 - 0.5625)
        want = 1.0 - power / (2.5 * 2.5)
        assert abs(rep.factors[0] - want) < 1e-12
        assert abs(rep.floor - want) < 1e-12
        assert rep.membership == 1.0
        assert rep.passed

    def test_floor_zero_when_factor_nonpositive(self):
        pts = self.initials()
        e = Ensemble(finals=np.zeros((10, 2)))
        rep = analysis.hull_membership_report(pts, [1], {1: 0.1},
                                              3.0, 0.75, e)
        assert rep.factors[0] < 0.0
        assert rep.floor == 0.0
        assert rep.passed  # no positive floor to enforce

    def test_geometric_bound(self):
        pts = self.initials()
        e = Ensemble(finals=np.zeros((10, 2)))
        rep = analysis.hull_membership_report(pts, [1], {1: 0.3},
                                              1.0, 0.75, e)
        mu = math.hypot(6.0, 4.0)
        assert abs(rep.dh_bound - (math.sqrt(1.0) * mu + 0.3)) < 1e-12
        assert rep.geometric_bound_holds

    def test_membership_counts_outsiders(self):
        pts = self.initials()
        finals = np.zeros((10, 2))
        finals[0] = (0.0, 9.0)  # far outside the widened hull
        e = Ensemble(finals=finals)
        rep = analysis.hull_membership_report(pts, [1], {1: 0.5},
                                              1.0, 0.75, e)
        assert rep.membership == 0.9

    def test_dimension_mismatch(self):
        with pytest.raises(DomainError):
            analysis.hull_membership_report(
                self.initials(), [1], {1: 0.5}, 1.0, 0.75,
                Ensemble(finals=np.zeros((5, 3))))


class TestAgreementTrace:
    def test_noiseless_run_converges(self):
        cfg = cfg_small(noise=engine.NoiseSchedule(scale=0.0, decay=0.75),
                        T=120)
        res = engine.run(cfg, keep_trajectory=True)
        trace = analysis.agreement_trace(res)
        assert trace.shape == (121,)
        assert trace[-1] < 1e-6
        assert trace[0] > trace[-1]

    def test_requires_trajectory(self):
        cfg = cfg_small(T=5)
        res = engine.run(cfg)
        with pytest.raises(DomainError):
            analysis.agreement_trace(res)
