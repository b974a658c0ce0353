"""Ensemble statistics and accuracy checks over Monte Carlo runs.

Collects final values from repeated seeded runs into an Ensemble,
estimates the distribution of the consensus value, and evaluates the
protocol's accuracy guarantees empirically: Mahalanobis coverage of the
final value around its mean (with a projection step when the covariance
is singular, as happens whenever some dimensions carry no noise),
per-dimension variance bounds implied by the geometric noise decay, and
hull-membership rates against the widened initial hull together with
the deterministic Hausdorff bound relating the two hulls.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import engine, geometry
from .errors import DomainError

__all__ = [
    "CoverageReport",
    "Ensemble",
    "MembershipReport",
    "VarianceReport",
    "agreement_trace",
    "ensemble_stats",
    "hull_membership_report",
    "mahalanobis_coverage",
    "regularize_cov",
    "run_ensemble",
    "variance_bound_check",
]

COVARIANCE_NOTE = ("covariance estimated from the same ensemble it scores; "
                   "the reuse biases D_M^2 down, which only strengthens the "
                   "coverage floors")


@dataclass(frozen=True)
class Ensemble:
    """Final values of R independent runs of one configuration."""

    finals: np.ndarray
    config_digest: str = ""

    def __post_init__(self):
        arr = np.asarray(self.finals, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise DomainError("finals must be a nonempty (R, dim) array")
        object.__setattr__(self, "finals", arr)

    @property
    def n_runs(self) -> int:
        return self.finals.shape[0]

    @property
    def dim(self) -> int:
        return self.finals.shape[1]


def _consensus_point(result: engine.RunResult) -> np.ndarray:
    # The final states agree up to the residual noise floor; their mean
    # is the run's consensus value.
    return result.final.mean(axis=0)


def _run_final(args):
    cfg, idx = args
    return idx, _consensus_point(engine.run(cfg, run_index=idx))


def run_ensemble(cfg: engine.SimConfig, runs: int, jobs: int = 1) -> Ensemble:
    """Execute `runs` independent runs (run_index 0..runs-1) and collect
    their final values.

    Every run derives its own random streams from the configuration
    seed and its run index, so the result is a pure function of
    (cfg, runs) no matter how many workers execute it.  If any run
    fails, the whole ensemble is abandoned and the failure of the
    lowest run index is re-raised.
    """
    if runs < 1:
        raise DomainError("runs must be at least 1")
    digest = engine.config_digest(cfg)
    finals = np.empty((runs, cfg.dim))
    if jobs <= 1:
        for idx in range(runs):
            finals[idx] = _consensus_point(engine.run(cfg, run_index=idx))
        return Ensemble(finals=finals, config_digest=digest)

    failures = {}
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = {pool.submit(_run_final, (cfg, idx)): idx
                   for idx in range(runs)}
        for fut in futures:
            idx = futures[fut]
            try:
                _, finals[idx] = fut.result()
            except Exception as exc:  # noqa: BLE001 - reported below
                failures[idx] = exc
    if failures:
        first = min(failures)
        raise RuntimeError(
            "ensemble aborted: run %d of %d failed" % (first, runs)
        ) from failures[first]
    return Ensemble(finals=finals, config_digest=digest)


def ensemble_stats(e: Ensemble):
    """Unbiased sample mean and covariance (divisor R-1) of the finals."""
    if e.n_runs < 2:
        raise DomainError("need at least 2 runs for covariance estimation")
    mean = e.finals.mean(axis=0)
    centered = e.finals - mean
    cov = centered.T @ centered / (e.n_runs - 1)
    cov = 0.5 * (cov + cov.T)
    return mean, cov


def regularize_cov(cov, rel_tol: float = 1e-10):
    """Split a possibly singular covariance into its effective support.

    Eigenvalues below rel_tol times the largest are treated as exact
    zeros (dimensions the final value does not actually vary in, e.g.
    noise-free coordinates of a converged protocol).  Returns
    (projector, cov_reduced, d_eff): the projector's columns are an
    orthonormal basis of the retained eigenspace, cov_reduced is the
    diagonal positive definite covariance in that basis.
    """
    c = np.asarray(cov, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise DomainError("covariance must be square")
    scale = float(np.max(np.abs(c))) if c.size else 0.0
    if not np.allclose(c, c.T, atol=1e-12 * max(scale, 1.0), rtol=0.0):
        raise DomainError("covariance must be symmetric")
    vals, vecs = np.linalg.eigh(c)
    vals = vals[::-1]
    vecs = vecs[:, ::-1]
    top = float(vals[0])
    if top <= 0.0:
        raise DomainError("zero-variance ensemble: no retained directions")
    keep = vals > rel_tol * top
    if not np.any(keep):
        raise DomainError("zero-variance ensemble: no retained directions")
    projector = vecs[:, keep]
    cov_reduced = np.diag(vals[keep])
    return projector, cov_reduced, int(np.count_nonzero(keep))


@dataclass(frozen=True)
class CoverageReport:
    """Empirical P{D_M^2 <= chi} against the distribution-free floor
    1 - d_eff/chi, evaluated in the retained subspace of the sample
    covariance.
    """

    chis: tuple
    empirical: tuple
    floors: tuple
    passes: tuple
    d_eff: int
    n_runs: int
    slack: float
    note: str = COVARIANCE_NOTE

    @property
    def all_passed(self) -> bool:
        return all(self.passes)

    def lines(self) -> list:
        out = ["coverage report (d_eff %d, runs %d, slack %s)"
               % (self.d_eff, self.n_runs, format(self.slack, ".17g"))]
        for chi, emp, flo, ok in zip(self.chis, self.empirical, self.floors,
                                     self.passes):
            out.append("  chi %s  empirical %s  floor %s  %s"
                       % (format(chi, ".17g"), format(emp, ".17g"),
                          format(flo, ".17g"), "pass" if ok else "FAIL"))
        out.append("  note: %s" % self.note)
        return out


def mahalanobis_coverage(e: Ensemble, chis, rel_tol: float = 1e-10,
                         slack: float = 0.04) -> CoverageReport:
    """Fraction of runs whose squared Mahalanobis distance from the
    sample mean is at most chi, for each requested chi, against the
    floor 1 - d_eff/chi.

    The distance is evaluated in the retained subspace after dropping
    near-zero variance directions, so ensembles from configurations
    that inject noise on only some dimensions are handled by the same
    path.
    """
    chis = tuple(float(c) for c in chis)
    if any(c <= 0.0 for c in chis):
        raise DomainError("chi values must be positive")
    if e.n_runs < e.dim + 2:
        raise DomainError(
            "need at least dim+2=%d runs, got %d" % (e.dim + 2, e.n_runs))
    mean, cov = ensemble_stats(e)
    projector, cov_reduced, d_eff = regularize_cov(cov, rel_tol)
    coords = (e.finals - mean) @ projector
    zero = np.zeros(d_eff)
    dm2 = np.array([geometry.mahalanobis_sq(z, zero, cov_reduced)
                    for z in coords])
    empirical = tuple(float(np.mean(dm2 <= chi)) for chi in chis)
    floors = tuple(1.0 - d_eff / chi for chi in chis)
    passes = tuple(emp >= flo - slack
                   for emp, flo in zip(empirical, floors))
    return CoverageReport(chis=chis, empirical=empirical, floors=floors,
                          passes=passes, d_eff=d_eff, n_runs=e.n_runs,
                          slack=slack)


@dataclass(frozen=True)
class VarianceReport:
    """Per-dimension sample variance against the stationary bound
    scale^2 / (1 - decay^2).
    """

    variances: tuple
    bound: float
    passes: tuple
    slack: float

    @property
    def all_passed(self) -> bool:
        return all(self.passes)

    def lines(self) -> list:
        out = ["variance report (bound %s, slack %s)"
               % (format(self.bound, ".17g"), format(self.slack, ".17g"))]
        for k, (v, ok) in enumerate(zip(self.variances, self.passes)):
            out.append("  dim %d  variance %s  %s"
                       % (k, format(v, ".17g"), "pass" if ok else "FAIL"))
        return out


def variance_bound_check(e: Ensemble, scale: float, decay: float,
                         slack: float = 0.05) -> VarianceReport:
    """Check each dimension's sample variance against the total injected
    noise power scale^2 / (1 - decay^2); the protocol's averaging can
    only shrink variance below that.
    """
    if e.n_runs < 2:
        raise DomainError("need at least 2 runs for variance estimation")
    if scale < 0.0:
        raise DomainError("scale must be nonnegative")
    if not 0.0 <= decay < 1.0:
        raise DomainError("decay must lie in [0, 1)")
    bound = scale * scale / (1.0 - decay * decay)
    variances = tuple(float(v) for v in e.finals.var(axis=0, ddof=1))
    passes = tuple(v <= bound * (1.0 + slack) for v in variances)
    return VarianceReport(variances=variances, bound=bound, passes=passes,
                          slack=slack)


@dataclass(frozen=True)
class MembershipReport:
    """Hull-membership accounting when noise rides on a subset of
    dimensions.

    The initial hull, its extrusion over the noisy-dimension ranges,
    and the margin-widened extrusion are rebuilt from the initial
    states; the report carries the deterministic Hausdorff bound
    between initial and widened hulls, the per-noisy-dimension
    probability factors, their product floor, and the empirical
    membership rate of the ensemble finals in the widened hull.
    """

    noisy_dims: tuple
    margins: tuple
    l_values: tuple
    factors: tuple
    floor: float
    membership: float
    n_runs: int
    dh_initial_widened: float
    dh_bound: float
    mu_initial: float
    slack: float
    initial_hull: geometry.Polytope = field(repr=False, compare=False,
                                            default=None)
    swept_hull: geometry.Polytope = field(repr=False, compare=False,
                                          default=None)
    widened_hull: geometry.Polytope = field(repr=False, compare=False,
                                            default=None)

    @property
    def geometric_bound_holds(self) -> bool:
        return self.dh_initial_widened <= self.dh_bound + 1e-12

    @property
    def passed(self) -> bool:
        if not self.geometric_bound_holds:
            return False
        if self.floor <= 0.0:
            return True
        return self.membership >= self.floor - self.slack

    def lines(self) -> list:
        f = lambda x: format(float(x), ".17g")  # noqa: E731
        out = [
            "hull membership report (runs %d, slack %s)"
            % (self.n_runs, f(self.slack)),
            "  noisy dims %s  margins %s"
            % (list(self.noisy_dims), [f(m) for m in self.margins]),
            "  hausdorff(initial, widened) %s  bound %s  %s"
            % (f(self.dh_initial_widened), f(self.dh_bound),
               "pass" if self.geometric_bound_holds else "FAIL"),
            "  hull diameter %s" % f(self.mu_initial),
        ]
        for k, l, fac in zip(self.noisy_dims, self.l_values, self.factors):
            out.append("  dim %d  l %s  factor %s" % (k, f(l), f(fac)))
        out.append("  floor %s  membership %s  %s"
                   % (f(self.floor), f(self.membership),
                      "pass" if self.passed else "FAIL"))
        return out


def hull_membership_report(normal_initials, noisy_dims, margins,
                           scale: float, decay: float, e: Ensemble,
                           tol: float = geometry.DEFAULT_TOL,
                           slack: float = 0.02) -> MembershipReport:
    """Evaluate where the final values land relative to the widened
    hull when only `noisy_dims` carry noise.

    For each noisy dimension k, l_k measures how deep the ensemble mean
    sits inside the initial-state range of that dimension; the
    per-dimension factor 1 - (scale^2/(1-decay^2)) / (l_k + r_k)^2 is a
    Chebyshev-style lower bound on staying within the widened range,
    and the floor is the product over noisy dimensions (reported as 0
    when any factor is nonpositive).  The Hausdorff distance between
    the initial hull and the widened hull is compared to the
    deterministic bound sqrt(d/2) * diameter + sqrt(sum r_k^2).
    """
    pts = np.asarray(normal_initials, dtype=np.float64)
    if pts.ndim != 2:
        raise DomainError("normal_initials must be (n, dim)")
    if scale < 0.0:
        raise DomainError("scale must be nonnegative")
    if not 0.0 <= decay < 1.0:
        raise DomainError("decay must lie in [0, 1)")
    d = pts.shape[1]
    if e.dim != d:
        raise DomainError("ensemble dimension does not match initial states")
    noisy = sorted(set(int(k) for k in noisy_dims))
    if isinstance(margins, dict):
        marg = tuple(float(margins[k]) for k in noisy)
    else:
        marg = tuple(float(margins) for _ in noisy)

    hull_a = geometry.convex_hull(pts)
    hull_b, hull_c = geometry.build_swept_hulls(
        pts, noisy, dict(zip(noisy, marg)))
    dh = geometry.hausdorff(hull_a, hull_c)
    mu = geometry.diameter(hull_a)
    dh_bound = math.sqrt(d / 2.0) * mu + math.sqrt(sum(r * r for r in marg))

    mean = e.finals.mean(axis=0)
    power = scale * scale / (1.0 - decay * decay)
    l_values, factors = [], []
    for k, r in zip(noisy, marg):
        lo, hi = float(pts[:, k].min()), float(pts[:, k].max())
        l_k = min(mean[k] - lo, hi - mean[k])
        reach = l_k + r
        factor = 1.0 - power / (reach * reach) if reach > 0.0 else -math.inf
        l_values.append(float(l_k))
        factors.append(float(factor))
    floor = math.prod(factors) if all(fc > 0.0 for fc in factors) else 0.0

    inside = hull_c.contains_many(e.finals, tol=tol)
    membership = float(np.mean(inside))
    return MembershipReport(
        noisy_dims=tuple(noisy), margins=marg, l_values=tuple(l_values),
        factors=tuple(factors), floor=floor, membership=membership,
        n_runs=e.n_runs, dh_initial_widened=dh, dh_bound=dh_bound,
        mu_initial=mu, slack=slack, initial_hull=hull_a, swept_hull=hull_b,
        widened_hull=hull_c)


def agreement_trace(run: engine.RunResult) -> np.ndarray:
    """Max pairwise distance among normal agents at each iteration."""
    if run.trajectory is None:
        raise DomainError("run was executed without keep_trajectory")
    traj = run.trajectory
    diff = traj[:, :, None, :] - traj[:, None, :, :]
    dists = np.sqrt(np.einsum("tijk,tijk->tij", diff, diff))
    return dists.max(axis=(1, 2))
