"""Experiment configuration files.

A single YAML document describes everything one invocation needs: the
simulation itself, how many Monte Carlo runs, which traces to retain,
and the requested analyses, privacy audits, and plots.  Validation
errors always name the offending field path (`noise.scale`, ...), since
configs are edited by hand far more often than they are generated.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml

from . import engine
from .errors import ConfigError

__all__ = [
    "ExperimentConfig",
    "load_config",
    "parse_config",
    "privacy_shifts",
]

KEEP_CHOICES = ("finals", "trajectories", "transmitted")
PLOT_CHOICES = ("initials", "finals_hulls", "mahalanobis")


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: a simulation plus everything asked of its output."""

    sim: engine.SimConfig
    name: str = "experiment"
    runs: int = 1
    keep: tuple = ("finals",)
    chis: tuple = ()
    margins: dict | None = None
    coverage_slack: float = 0.04
    variance_slack: float = 0.05
    membership_slack: float = 0.02
    plots: tuple = ()
    alphas: tuple = ()
    n_shifts: int = 0
    max_shift: float = 0.25
    shifts: tuple | None = None
    dp_horizons: tuple = (0, 1, 2, 3, 4)
    dp_delta: float = 0.05

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be at least 1", field="runs")
        bad = [k for k in self.keep if k not in KEEP_CHOICES]
        if bad:
            raise ConfigError("unknown keep choices %s" % bad, field="keep")
        bad = [p for p in self.plots if p not in PLOT_CHOICES]
        if bad:
            raise ConfigError("unknown plot kinds %s" % bad, field="plots")
        if self.margins is not None:
            mask = self.sim.noise.mask
            if mask is None:
                raise ConfigError(
                    "hull membership analysis needs noise restricted to a "
                    "proper subset of dimensions (set noise.dims)",
                    field="analysis.margins")
            noisy = set(int(k) for k in mask)
            extra = sorted(set(self.margins) - noisy)
            if extra:
                raise ConfigError(
                    "margins given for noise-free dimensions %s" % extra,
                    field="analysis.margins")
            if any(float(v) < 0 for v in self.margins.values()):
                raise ConfigError("margins must be nonnegative",
                                  field="analysis.margins")
        if self.alphas and any(a <= 1.0 for a in self.alphas):
            raise ConfigError("divergence orders must exceed 1",
                              field="privacy.alphas")
        if not 0.0 < self.dp_delta < 1.0:
            raise ConfigError("dp_delta must lie in (0, 1)",
                              field="privacy.dp_delta")
        if self.shifts is not None:
            arr = np.asarray(self.shifts, dtype=float)
            nbar = self.sim.n_normal
            if arr.ndim != 3 or arr.shape[1:] != (nbar, self.sim.dim):
                raise ConfigError(
                    "explicit shifts must be a list of (%d, %d) matrices"
                    % (nbar, self.sim.dim), field="privacy.shifts")

    @property
    def wants_privacy(self) -> bool:
        return bool(self.alphas) and (self.n_shifts > 0
                                      or self.shifts is not None)


def _ctx(path: str, key: str) -> str:
    return key if not path else "%s.%s" % (path, key)


def _mapping(value, path: str) -> dict:
    if not isinstance(value, dict):
        raise ConfigError("expected a mapping", field=path)
    return value


def _get(m: dict, key: str, path: str, default=None, required: bool = False):
    if key not in m:
        if required:
            raise ConfigError("missing required field", field=_ctx(path, key))
        return default
    return m[key]


def _int(value, path: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError("expected an integer, got %r" % (value,),
                          field=path)
    return value


def _num(value, path: str) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError("expected a number, got %r" % (value,), field=path)
    return float(value)


def _int_list(value, path: str) -> tuple:
    if not isinstance(value, (list, tuple)):
        raise ConfigError("expected a list of integers", field=path)
    return tuple(_int(v, path) for v in value)


def _num_list(value, path: str) -> tuple:
    if not isinstance(value, (list, tuple)):
        raise ConfigError("expected a list of numbers", field=path)
    return tuple(_num(v, path) for v in value)


def _point_list(value, path: str, dim: int) -> tuple:
    if not isinstance(value, (list, tuple)) or not value:
        raise ConfigError("expected a nonempty list of points", field=path)
    rows = []
    for i, row in enumerate(value):
        coords = _num_list(row, "%s[%d]" % (path, i))
        if len(coords) != dim:
            raise ConfigError("point must have %d coordinates" % dim,
                              field="%s[%d]" % (path, i))
        rows.append(coords)
    return tuple(rows)


def parse_config(doc: dict) -> ExperimentConfig:
    """Build an ExperimentConfig from a parsed YAML mapping."""
    m = _mapping(doc, "")

    known = {"name", "seed", "agents", "faulty", "dim", "horizon", "policy",
             "noise", "gamma", "initial", "byzantine", "runs", "keep",
             "budget", "tol", "analysis", "plots", "privacy"}
    unknown = sorted(set(m) - known)
    if unknown:
        raise ConfigError("unknown fields %s" % unknown, field=unknown[0])

    name = str(_get(m, "name", "", default="experiment"))
    seed = _int(_get(m, "seed", "", required=True), "seed")
    n = _int(_get(m, "agents", "", required=True), "agents")
    dim = _int(_get(m, "dim", "", required=True), "dim")
    horizon = _int(_get(m, "horizon", "", required=True), "horizon")
    faulty = _int_list(_get(m, "faulty", "", default=[]), "faulty")

    pol = _mapping(_get(m, "policy", "", default={"kind": "complete"}),
                   "policy")
    kind = str(_get(pol, "kind", "policy", required=True))
    policy_k = _get(pol, "k", "policy")
    if policy_k is not None:
        policy_k = _int(policy_k, "policy.k")
    window_len = _int(_get(pol, "window_len", "policy", default=1),
                      "policy.window_len")

    nz = _mapping(_get(m, "noise", "", required=True), "noise")
    scale = _num(_get(nz, "scale", "noise", required=True), "noise.scale")
    decay = _num(_get(nz, "decay", "noise", required=True), "noise.decay")
    dims = _get(nz, "dims", "noise")
    mask = _int_list(dims, "noise.dims") if dims is not None else None

    gm = _mapping(_get(m, "gamma", "", required=True), "gamma")
    glow = _num(_get(gm, "low", "gamma", required=True), "gamma.low")
    ghigh = _num(_get(gm, "high", "gamma", default=glow), "gamma.high")

    init = _mapping(_get(m, "initial", "", required=True), "initial")
    if ("box" in init) == ("states" in init):
        raise ConfigError("exactly one of box / states required",
                          field="initial")
    initial_box = initial_states = None
    if "box" in init:
        box = _point_list(init["box"], "initial.box", 2)
        if len(box) != dim:
            raise ConfigError("box needs one [lo, hi] pair per dimension",
                              field="initial.box")
        initial_box = box
    else:
        initial_states = _point_list(init["states"], "initial.states", dim)

    bz = _mapping(_get(m, "byzantine", "",
                       default={"kind": "box",
                                "box": [[-1.0, 1.0]] * dim}), "byzantine")
    bkind = str(_get(bz, "kind", "byzantine", default="box"))
    if bkind not in ("box", "fixed"):
        raise ConfigError("kind must be 'box' or 'fixed'",
                          field="byzantine.kind")
    per_recipient = _get(bz, "per_recipient", "byzantine", default=True)
    if not isinstance(per_recipient, bool):
        raise ConfigError("expected true/false",
                          field="byzantine.per_recipient")
    bbox = bpoint = None
    if bkind == "box":
        bbox = _point_list(_get(bz, "box", "byzantine", required=True),
                           "byzantine.box", 2)
        if len(bbox) != dim:
            raise ConfigError("box needs one [lo, hi] pair per dimension",
                              field="byzantine.box")
    else:
        bpoint = _num_list(_get(bz, "point", "byzantine", required=True),
                           "byzantine.point")
        if len(bpoint) != dim:
            raise ConfigError("point must have %d coordinates" % dim,
                              field="byzantine.point")

    try:
        sim = engine.SimConfig(
            n=n, faulty=faulty, dim=dim,
            noise=engine.NoiseSchedule(scale=scale, decay=decay, mask=mask),
            gamma=engine.GammaPolicy(low=glow, high=ghigh),
            T=horizon,
            byz=engine.ByzantineStrategy(kind=bkind, box=bbox, point=bpoint,
                                         per_recipient=per_recipient),
            seed=seed, policy=kind, policy_k=policy_k, window_len=window_len,
            initial_states=initial_states, initial_box=initial_box,
            budget=_int(_get(m, "budget", "", default=2000), "budget"),
            tol=_num(_get(m, "tol", "", default=1e-9), "tol"))
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    runs = _int(_get(m, "runs", "", default=1), "runs")
    keep = _get(m, "keep", "", default=["finals"])
    if not isinstance(keep, (list, tuple)):
        raise ConfigError("expected a list", field="keep")
    keep = tuple(str(k) for k in keep)

    chis: tuple = ()
    margins = None
    cov_slack, var_slack, mem_slack = 0.04, 0.05, 0.02
    an = _get(m, "analysis", "")
    if an is not None:
        an = _mapping(an, "analysis")
        if "chis" in an:
            chis = _num_list(an["chis"], "analysis.chis")
        if "margins" in an:
            mg = an["margins"]
            if isinstance(mg, dict):
                margins = {_int(k, "analysis.margins"):
                           _num(v, "analysis.margins") for k, v in mg.items()}
            elif mask is not None:
                margins = {k: _num(mg, "analysis.margins") for k in mask}
            else:
                margins = {}
        cov_slack = _num(_get(an, "coverage_slack", "analysis", default=0.04),
                         "analysis.coverage_slack")
        var_slack = _num(_get(an, "variance_slack", "analysis", default=0.05),
                         "analysis.variance_slack")
        mem_slack = _num(_get(an, "membership_slack", "analysis",
                              default=0.02), "analysis.membership_slack")

    plots = _get(m, "plots", "", default=[])
    if not isinstance(plots, (list, tuple)):
        raise ConfigError("expected a list", field="plots")
    plots = tuple(str(p) for p in plots)

    alphas: tuple = ()
    n_shifts, max_shift, shifts = 0, 0.25, None
    dp_horizons: tuple = (0, 1, 2, 3, 4)
    dp_delta = 0.05
    pv = _get(m, "privacy", "")
    if pv is not None:
        pv = _mapping(pv, "privacy")
        alphas = _num_list(_get(pv, "alphas", "privacy",
                                default=[1.5, 2.0, 4.0, 8.0]),
                           "privacy.alphas")
        n_shifts = _int(_get(pv, "n_shifts", "privacy", default=0),
                        "privacy.n_shifts")
        max_shift = _num(_get(pv, "max_shift", "privacy", default=0.25),
                         "privacy.max_shift")
        if "shifts" in pv:
            raw = pv["shifts"]
            if not isinstance(raw, (list, tuple)):
                raise ConfigError("expected a list of shift matrices",
                                  field="privacy.shifts")
            shifts = tuple(_point_list(s, "privacy.shifts[%d]" % i, dim)
                           for i, s in enumerate(raw))
        elif n_shifts < 1:
            raise ConfigError(
                "privacy audit needs n_shifts >= 1 or explicit shifts",
                field="privacy.n_shifts")
        dp_horizons = _int_list(_get(pv, "dp_horizons", "privacy",
                                     default=[0, 1, 2, 3, 4]),
                                "privacy.dp_horizons")
        dp_delta = _num(_get(pv, "dp_delta", "privacy", default=0.05),
                        "privacy.dp_delta")

    return ExperimentConfig(
        sim=sim, name=name, runs=runs, keep=keep, chis=chis, margins=margins,
        coverage_slack=cov_slack, variance_slack=var_slack,
        membership_slack=mem_slack, plots=plots, alphas=alphas,
        n_shifts=n_shifts, max_shift=max_shift, shifts=shifts,
        dp_horizons=dp_horizons, dp_delta=dp_delta)


def load_config(path) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("cannot read config: %s" % exc) from exc
    except yaml.YAMLError as exc:
        raise ConfigError("invalid YAML: %s" % exc) from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    return parse_config(doc)


def privacy_shifts(exp: ExperimentConfig) -> np.ndarray:
    """Shift matrices for the privacy audit, shape (count, n_normal, dim).

    Explicit shifts are used verbatim.  Otherwise each matrix is drawn
    from the config-scope stream: directions restricted to the noisy
    dimensions, per-agent norms between 0.4 and 1.0 times max_shift so
    every agent moves but none beyond the cap.
    """
    sim = exp.sim
    if exp.shifts is not None:
        return np.asarray(exp.shifts, dtype=float)
    nbar, d = sim.n_normal, sim.dim
    mask = sim.noise.mask_vector(d)
    rng = engine.derive_stream(sim.seed, engine.SCOPE_CONFIG,
                               engine.LABEL_SHIFTS)
    raw = rng.normal(size=(exp.n_shifts, nbar, d)) * mask
    norms = np.sqrt(np.einsum("sij,sij->si", raw, raw))
    lo = np.argmax(mask)
    fallback = np.zeros(d)
    fallback[lo] = 1.0
    bad = norms < 1e-12
    if np.any(bad):
        raw[bad] = fallback
        norms[bad] = 1.0
    target = exp.max_shift * rng.uniform(0.4, 1.0, size=norms.shape)
    return raw * (target / norms)[:, :, None]
