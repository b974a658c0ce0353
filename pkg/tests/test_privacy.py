"""Privacy accounting: CGP constant, divergences, DP schedule, audits."""

import math

import numpy as np
import pytest

from ppvc import engine, privacy
from ppvc.errors import DomainError


def params(n=6, scale=2.0, decay=0.75, gamma_low=0.4):
    return privacy.CgpParams(n_agents=n, scale=scale, decay=decay,
                             gamma_low=gamma_low)


class TestCgpRho:
    def test_reference_value(self):
        # n v^2 / (2 lambda^2 (v^2 - (1-gl)^2)) at (6, 2, 0.75, 0.4):
        # 6 * 0.5625 / (8 * (0.5625 - 0.36)) = 3.375 / 1.62
        rho = privacy.cgp_rho(params())
        assert abs(rho - 2.0833333333333335) < 1e-12

    def test_gamma_to_one_limit(self):
        rho = privacy.cgp_rho(params(gamma_low=1.0 - 1e-12))
        assert abs(rho - 6 / 8.0) < 1e-6

    def test_domain_boundary(self):
        with pytest.raises(DomainError):
            params(gamma_low=0.25)  # 1 - decay exactly
        with pytest.raises(DomainError):
            params(gamma_low=0.1)

    def test_monotone_in_scale_and_decay(self):
        rhos = [privacy.cgp_rho(params(scale=s))
                for s in (1.0, 1.5, 2.0, 3.0)]
        assert all(a > b for a, b in zip(rhos, rhos[1:]))
        # larger decay with the same gamma widens the margin, shrinking rho
        rhos = [privacy.cgp_rho(params(decay=v, gamma_low=0.75))
                for v in (0.6, 0.7, 0.8, 0.9)]
        assert all(a > b for a, b in zip(rhos, rhos[1:]))

    def test_rejects_bad_params(self):
        with pytest.raises(DomainError):
            params(scale=0.0)
        with pytest.raises(DomainError):
            params(decay=1.0)
        with pytest.raises(DomainError):
            params(n=0)


class TestRenyiGaussian:
    def test_hand_values(self):
        assert privacy.renyi_gaussian(2.0, [1.0, 0.0], 1.0) == 1.0
        assert privacy.renyi_gaussian(2.0, [0.0, 0.0], 3.0) == 0.0
        got = privacy.renyi_gaussian(4.0, [0.1, 0.0, 0.0], 1.6)
        assert abs(got - 4 * 0.01 / 3.2) < 1e-15

    def test_monte_carlo_cross_check(self):
        shift = np.array([0.3, -0.4])
        exact = privacy.renyi_gaussian(2.0, shift, 1.3)
        mc = privacy.renyi_gaussian_mc(shift, 1.3, 400000,
                                       np.random.default_rng(12))
        assert abs(mc - exact) < 0.05 * exact

    def test_alpha_must_exceed_one(self):
        with pytest.raises(DomainError):
            privacy.renyi_gaussian(1.0, [1.0], 1.0)


class TestDivergenceTruncated:
    def test_zero_shift_is_zero(self):
        trace = np.zeros((50, 4, 2))
        assert privacy.divergence_truncated(2.0, trace, 2.0, 0.75, 50) == 0.0

    def test_single_agent_closed_form(self):
        # fixed gamma: trace(h) = (1-g)^h delta, total divergence
        # a ||delta||^2 / (2 l^2) * v^2 / (v^2 - (1-g)^2) as T -> inf
        g, lam, v = 0.4, 2.0, 0.75
        delta = np.array([[0.2, -0.1]])
        T = 2000
        h = np.arange(T)[:, None, None]
        trace = (1 - g) ** h * delta[None, :, :]
        for alpha in (1.5, 2.0, 4.0, 8.0):
            got = privacy.divergence_truncated(alpha, trace, lam, v, T)
            want = alpha * float(delta.ravel() @ delta.ravel()) \
                / (2 * lam * lam) * v * v / (v * v - (1 - g) ** 2)
            assert abs(got - want) < 1e-12 * want

    def test_alpha_linearity_exact(self):
        rng = np.random.default_rng(3)
        trace = 0.6 ** np.arange(30)[:, None, None] \
            * rng.normal(size=(1, 5, 2)) * 0.1
        base = privacy.divergence_truncated(2.0, trace, 2.0, 0.75, 30) / 2.0
        for alpha in (1.5, 3.0, 7.25, 64.0):
            got = privacy.divergence_truncated(alpha, trace, 2.0, 0.75, 30)
            assert got == alpha * base

    def test_nondecreasing_in_horizon(self):
        rng = np.random.default_rng(4)
        trace = 0.5 ** np.arange(40)[:, None, None] \
            * rng.normal(size=(1, 3, 2))
        vals = [privacy.divergence_truncated(2.0, trace, 1.5, 0.8, h)
                for h in range(41)]
        assert all(b >= a for a, b in zip(vals, vals[1:]))

    def test_horizon_beyond_trace_rejected(self):
        trace = np.zeros((10, 2, 2))
        with pytest.raises(DomainError):
            privacy.divergence_truncated(2.0, trace, 1.0, 0.75, horizon=11)

    def test_compose(self):
        assert privacy.cgp_compose([1.0, 2.5, 0.5]) == 4.0
        with pytest.raises(DomainError):
            privacy.cgp_compose([1.0, -0.1])


class TestDpEpsilon:
    def test_reference_values(self):
        e0 = privacy.dp_epsilon(0, 1.0, 0.05, 2.0, 0.75, 0.4)
        e1 = privacy.dp_epsilon(1, 1.0, 0.05, 2.0, 0.75, 0.4)
        assert abs(e0 - 1.26864) < 1e-5
        assert abs(e1 - 1.01491) < 1e-5

    def test_geometric_in_h_exact(self):
        e0 = privacy.dp_epsilon(0, 1.0, 0.05, 2.0, 0.75, 0.4)
        ratio = (1.0 - 0.4) / 0.75
        for h in range(1, 40):
            assert privacy.dp_epsilon(h, 1.0, 0.05, 2.0, 0.75, 0.4) \
                == e0 * ratio ** h

    def test_rejects_bad_arguments(self):
        with pytest.raises(DomainError):
            privacy.dp_epsilon(-1, 1.0, 0.05, 2.0, 0.75, 0.4)
        with pytest.raises(DomainError):
            privacy.dp_epsilon(0, 1.0, 0.0, 2.0, 0.75, 0.4)
        with pytest.raises(DomainError):
            privacy.dp_epsilon(0, 1.0, 0.05, 0.0, 0.75, 0.4)


class TestAudit:
    def cfg(self):
        return engine.SimConfig(
            n=6, faulty=frozenset({5}), dim=2, T=400, seed=777,
            noise=engine.NoiseSchedule(scale=2.0, decay=0.75),
            gamma=engine.GammaPolicy.fixed(0.4),
            byz=engine.ByzantineStrategy(kind="box",
                                         box=((-0.7, -0.4), (0.4, 0.7))),
            initial_box=((-1.0, 1.0), (-1.0, 1.0)),
            policy="complete")

    def test_full_audit_passes(self):
        cfg = self.cfg()
        rng = np.random.default_rng(8)
        delta = rng.normal(size=(5, 2))
        delta *= 0.2 / np.linalg.norm(delta, axis=1, keepdims=True)
        _, _, trace = engine.run_coupled(cfg, delta)
        p = params()
        for alpha in (1.5, 2.0, 4.0, 8.0):
            audit = privacy.audit_divergence(alpha, delta, trace, p)
            assert audit.passed
            assert audit.value <= audit.bound
            assert abs(audit.dist - 0.2) < 1e-12

    def test_report_lines(self):
        cfg = self.cfg()
        delta = np.zeros((5, 2))
        delta[0, 0] = 0.1
        _, _, trace = engine.run_coupled(cfg, delta)
        p = params()
        audits = [privacy.audit_divergence(a, delta, trace, p)
                  for a in (1.5, 2.0)]
        rep = privacy.privacy_report(p, audits=audits, dp_horizons=(0, 1),
                                     transmitted_gap=1e-15)
        assert rep.all_passed
        text = "\n".join(rep.lines())
        assert "cgp_rho" in text
        assert "alpha 1.5" in text

    def test_audit_bound_uses_max_norm(self):
        # two agents shifted by different amounts: the bound scales with
        # the largest per-agent norm
        cfg = self.cfg()
        delta = np.zeros((5, 2))
        delta[0] = (0.2, 0.0)
        delta[1] = (0.0, 0.05)
        _, _, trace = engine.run_coupled(cfg, delta)
        audit = privacy.audit_divergence(2.0, delta, trace, params())
        assert abs(audit.dist - 0.2) < 1e-15
        rho = privacy.cgp_rho(params())
        assert abs(audit.bound - 2.0 * rho * 0.04) < 1e-15


class TestTheoremConstantConsistency:
    def test_divergence_stays_under_cgp_bound_on_grid(self):
        # pure closed-form check across a parameter grid: the per-agent
        # geometric divergence sum must stay below alpha * rho * dist^2
        for lam in (1.0, 2.0, 3.0):
            for v in (0.6, 0.75, 0.9):
                for g in (1 - v + 0.05, 0.5 * (1 - v + 1), 0.95):
                    if not g < 1.0:
                        continue
                    p = privacy.CgpParams(n_agents=4, scale=lam, decay=v,
                                          gamma_low=g)
                    rho = privacy.cgp_rho(p)
                    T = 3000
                    h = np.arange(T)[:, None, None]
                    delta = np.full((4, 1), 0.3)
                    trace = (1 - g) ** h * delta[None, :, :]
                    got = privacy.divergence_truncated(2.0, trace, lam, v, T)
                    dist = 0.3
                    assert got <= 2.0 * rho * dist * dist * (1 + 1e-12)
