"""Closed-form privacy accounting for the noisy consensus protocol.

The protocol's transmitted sequence is a Gaussian mechanism with a
geometrically decaying scale, so its privacy loss admits exact
expressions.  This module provides the concentrated geo-privacy (CGP)
constant of the coupled system, the exact truncated Renyi divergence
between the transmitted distributions of two runs started from nearby
initial states, CGP composition, and the per-iteration differential
privacy schedule.  Everything here is pure arithmetic on parameters or
on the shift trace produced by ``engine.run_coupled``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import DomainError

__all__ = [
    "CgpParams",
    "DivergenceAudit",
    "PrivacyReport",
    "audit_divergence",
    "cgp_compose",
    "cgp_rho",
    "divergence_truncated",
    "dp_epsilon",
    "privacy_report",
    "renyi_gaussian",
    "renyi_gaussian_mc",
]


@dataclass(frozen=True)
class CgpParams:
    """Parameters entering the CGP constant of the coupled system.

    n_agents is the total agent count (normal plus faulty); scale and
    decay are the noise schedule scalars (per-step standard deviation
    scale * decay**t); gamma_low is the lower bound of the step-size
    policy.  The constant is finite only when gamma_low > 1 - decay,
    which is the same condition the engine enforces for noisy runs.
    """

    n_agents: int
    scale: float
    decay: float
    gamma_low: float

    def __post_init__(self):
        if self.n_agents < 1:
            raise DomainError("n_agents must be at least 1")
        if not self.scale > 0.0:
            raise DomainError("scale must be positive")
        if not 0.0 < self.decay < 1.0:
            raise DomainError("decay must lie in (0, 1)")
        if not 0.0 < self.gamma_low < 1.0:
            raise DomainError("gamma_low must lie in (0, 1)")
        if not self.gamma_low > 1.0 - self.decay:
            raise DomainError(
                "gamma_low must exceed 1 - decay; otherwise the residual "
                "initial-state shift does not decay below the noise scale "
                "and the privacy constant diverges"
            )


def cgp_rho(params: CgpParams) -> float:
    """CGP constant of the full transmitted sequence.

    rho = n * decay^2 / (2 * scale^2 * (decay^2 - (1 - gamma_low)^2)).
    The divergence between the transmitted distributions of two runs
    whose initial states differ by at most ``dist`` (max per-agent gap)
    is bounded by alpha * rho * dist**2 for every order alpha > 1.

    Strictly decreasing in both scale and decay: more noise, or noise
    that persists longer relative to the contraction of the shift,
    hides the initial states better.
    """
    u2 = params.decay * params.decay
    g2 = (1.0 - params.gamma_low) * (1.0 - params.gamma_low)
    return params.n_agents * u2 / (2.0 * params.scale * params.scale * (u2 - g2))


def renyi_gaussian(alpha: float, shift, sigma2: float) -> float:
    """Renyi divergence of order alpha between N(0, sigma2*I) and
    N(shift, sigma2*I): alpha * ||shift||^2 / (2 * sigma2).
    """
    if not alpha > 1.0:
        raise DomainError("alpha must exceed 1")
    if not sigma2 > 0.0:
        raise DomainError("sigma2 must be positive")
    s = np.asarray(shift, dtype=np.float64).ravel()
    return float(alpha * (s @ s) / (2.0 * sigma2))


def renyi_gaussian_mc(shift, sigma2: float, n_draws: int,
                      rng: np.random.Generator) -> float:
    """Monte Carlo estimate of the order-2 Renyi divergence between
    N(0, sigma2*I) and N(shift, sigma2*I), as a diagnostic cross-check
    of the closed form.

    Uses the identity D_2(P||Q) = log E_{x~P}[P(x)/Q(x)]; the density
    ratio reduces to exp((||mu||^2 - 2 x.mu) / (2 sigma2)) so only the
    projection of each draw onto the shift direction is needed.
    """
    if not sigma2 > 0.0:
        raise DomainError("sigma2 must be positive")
    if n_draws < 1:
        raise DomainError("n_draws must be at least 1")
    s = np.asarray(shift, dtype=np.float64).ravel()
    mu2 = float(s @ s)
    if mu2 == 0.0:
        return 0.0
    # x ~ P = N(0, sigma2 I); only x.mu matters, a scalar Gaussian.
    proj = rng.normal(0.0, math.sqrt(sigma2 * mu2), size=n_draws)
    log_ratio = (mu2 - 2.0 * proj) / (2.0 * sigma2)
    # log-mean-exp for stability
    m = float(np.max(log_ratio))
    return m + math.log(float(np.mean(np.exp(log_ratio - m))))


def divergence_truncated(alpha: float, shift_trace, scale: float,
                         decay: float, horizon: int) -> float:
    """Exact Renyi divergence (order alpha) between the transmitted
    sequences of a coupled pair of runs, truncated to iterations
    h < horizon.

    shift_trace is the (T, n_normal, dim) array from run_coupled: the
    residual mean gap of agent i's transmitted value at iteration h.
    Each (h, i) term contributes the Gaussian divergence with variance
    scale^2 * decay^(2h); independence across agents and iterations
    makes the total an exact finite sum.  Nonnegative, nondecreasing in
    the horizon, and exactly linear in alpha.
    """
    if not alpha > 1.0:
        raise DomainError("alpha must exceed 1")
    if not scale > 0.0:
        raise DomainError("scale must be positive")
    if not 0.0 < decay < 1.0:
        raise DomainError("decay must lie in (0, 1)")
    trace = np.asarray(shift_trace, dtype=np.float64)
    if trace.ndim != 3:
        raise DomainError("shift_trace must have shape (T, n_normal, dim)")
    if not 0 <= horizon <= trace.shape[0]:
        raise DomainError(
            "truncation horizon %d exceeds trace length %d"
            % (horizon, trace.shape[0])
        )
    if horizon == 0:
        return 0.0
    head = trace[:horizon]
    sq = np.einsum("hij,hij->h", head, head)
    # Divide by the per-step variance decay; the numerator shrinks
    # strictly faster than the denominator whenever the engine's
    # step-size constraint holds, so the ratio stays tame.  Squared
    # shifts that underflowed to zero contribute zero even if the
    # variance factor underflows too.
    var_decay = np.power(decay * decay, np.arange(horizon, dtype=np.float64))
    terms = np.zeros_like(sq)
    nz = sq > 0.0
    terms[nz] = sq[nz] / var_decay[nz]
    # fsum gives the correctly rounded sum, which makes the result
    # exactly nondecreasing in the horizon; keeping alpha as the final
    # factor makes it exactly linear in alpha.
    base = math.fsum(terms) / (2.0 * scale * scale)
    return alpha * base


def cgp_compose(rhos: Sequence[float]) -> float:
    """Compose CGP guarantees of independent mechanisms: the constants
    simply add.
    """
    total = 0.0
    for r in rhos:
        if r < 0.0:
            raise DomainError("CGP constants must be nonnegative")
        total += float(r)
    return total


def dp_epsilon(h: int, ell: float, delta_h: float, scale: float,
               decay: float, gamma_low: float) -> float:
    """Per-iteration differential privacy level of the transmitted
    value at iteration h, for initial states at distance at most ell.

    Viewing iteration h's transmitted value as one Gaussian-mechanism
    query with sensitivity ell * (1 - gamma_low)^h and noise standard
    deviation scale * decay^h, the standard (eps, delta) requirement
    gives eps(h) = sqrt(2 ln(1.25/delta)) * (ell/scale) * q^h with
    q = (1 - gamma_low) / decay.  Any valid eps must be at least this;
    the function returns the bound itself.  The schedule is exactly
    geometric in h with ratio q, so it decreases iff
    gamma_low > 1 - decay.
    """
    if h < 0:
        raise DomainError("iteration index must be nonnegative")
    if not ell > 0.0:
        raise DomainError("ell must be positive")
    if not 0.0 < delta_h < 1.0:
        raise DomainError("delta_h must lie in (0, 1)")
    if not scale > 0.0:
        raise DomainError("scale must be positive")
    if not 0.0 < decay < 1.0:
        raise DomainError("decay must lie in (0, 1)")
    if not 0.0 < gamma_low < 1.0:
        raise DomainError("gamma_low must lie in (0, 1)")
    ratio = (1.0 - gamma_low) / decay
    # Single power of the combined ratio keeps the schedule exactly
    # geometric: eps(h) == eps(0) * ratio**h bit for bit.
    return math.sqrt(2.0 * math.log(1.25 / delta_h)) * (ell / scale) * ratio ** h


@dataclass(frozen=True)
class DivergenceAudit:
    """One audited coupled pair: the exact truncated divergence of its
    transmitted sequences against the CGP bound alpha * rho * dist^2.

    dist is the maximum per-agent initial-state gap (the metric the
    guarantee is stated in); sum_sq = sum_i ||delta_i||^2 is reported
    as a diagnostic only.
    """

    alpha: float
    shifts: np.ndarray
    horizon: int
    value: float
    bound: float
    dist: float
    sum_sq: float

    @property
    def passed(self) -> bool:
        return self.value <= self.bound


def audit_divergence(alpha: float, shifts, shift_trace,
                     params: CgpParams, horizon: Optional[int] = None
                     ) -> DivergenceAudit:
    """Audit one coupled run: compare the exact truncated divergence of
    its transmitted sequences to the CGP bound.

    shifts is the (n_normal, dim) array of per-agent initial-state gaps
    and shift_trace the (T, n_normal, dim) residual trace, both as
    produced by engine.run_coupled.  horizon defaults to the full trace
    length.
    """
    delta = np.asarray(shifts, dtype=np.float64)
    if delta.ndim != 2:
        raise DomainError("shifts must have shape (n_normal, dim)")
    trace = np.asarray(shift_trace, dtype=np.float64)
    if horizon is None:
        horizon = trace.shape[0]
    norms = np.sqrt(np.einsum("ij,ij->i", delta, delta))
    dist = float(np.max(norms)) if norms.size else 0.0
    sum_sq = float(np.einsum("ij,ij->", delta, delta))
    value = divergence_truncated(alpha, trace, params.scale, params.decay,
                                 horizon)
    bound = alpha * cgp_rho(params) * dist * dist
    return DivergenceAudit(alpha=float(alpha), shifts=delta.copy(),
                           horizon=int(horizon), value=value, bound=bound,
                           dist=dist, sum_sq=sum_sq)


@dataclass(frozen=True)
class PrivacyReport:
    """Aggregated privacy accounting for one configuration: the CGP
    constant, per-order divergence audits, and the per-iteration DP
    schedule, plus the measured transmitted-sequence gap of the coupled
    run (which must be noise-level small for the audit to be about the
    right object).
    """

    params: CgpParams
    rho: float
    dist: float
    audits: tuple = field(default_factory=tuple)
    dp_horizons: tuple = field(default_factory=tuple)
    dp_epsilons: tuple = field(default_factory=tuple)
    dp_ell: float = 1.0
    dp_delta: float = 0.05
    transmitted_gap: Optional[float] = None

    @property
    def all_passed(self) -> bool:
        return all(a.passed for a in self.audits)

    def lines(self) -> list:
        """Render the report as text lines (17 significant digits so
        every number round-trips).
        """

        def f(x):
            return format(float(x), ".17g")

        p = self.params
        out = [
            "privacy report",
            "agents %d  scale %s  decay %s  gamma_low %s"
            % (p.n_agents, f(p.scale), f(p.decay), f(p.gamma_low)),
            "cgp_rho %s" % f(self.rho),
            "dist %s" % f(self.dist),
        ]
        if self.transmitted_gap is not None:
            out.append("transmitted_gap %s" % f(self.transmitted_gap))
        if self.audits:
            out.append("divergence audits (order, value, bound, status):")
            for a in self.audits:
                out.append(
                    "  alpha %s  value %s  bound %s  %s"
                    % (f(a.alpha), f(a.value), f(a.bound),
                       "pass" if a.passed else "FAIL")
                )
        if self.dp_horizons:
            out.append(
                "dp schedule (ell %s, delta %s):" % (f(self.dp_ell),
                                                     f(self.dp_delta))
            )
            for h, e in zip(self.dp_horizons, self.dp_epsilons):
                out.append("  h %d  epsilon %s" % (h, f(e)))
        return out


def privacy_report(params: CgpParams, audits=(), dp_horizons=(),
                   dp_ell: Optional[float] = None, dp_delta: float = 0.05,
                   transmitted_gap: Optional[float] = None) -> PrivacyReport:
    """Assemble a PrivacyReport from audits and a DP table request."""
    audits = tuple(audits)
    dist = max((a.dist for a in audits), default=0.0)
    if dp_ell is None:
        dp_ell = dist if dist > 0.0 else 1.0
    eps = tuple(
        dp_epsilon(h, dp_ell, dp_delta, params.scale, params.decay,
                   params.gamma_low)
        for h in dp_horizons
    )
    return PrivacyReport(params=params, rho=cgp_rho(params), dist=dist,
                         audits=audits, dp_horizons=tuple(dp_horizons),
                         dp_epsilons=eps, dp_ell=float(dp_ell),
                         dp_delta=float(dp_delta),
                         transmitted_gap=transmitted_gap)
