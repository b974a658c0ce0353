"""The consensus protocol engine.

One iteration, for each normal agent i: transmit the noise-masked state
y_i(t) = x_i(t) + eta_i(t), collect the in-neighborhood multiset of
transmitted values (noisy normal states plus whatever Byzantine in-neighbors
sent to i), compute a depth-verified centerpoint s_i(t) of that multiset,
and update x_i(t+1) = gamma_i(t) * s_i(t) + (1 - gamma_i(t)) * x_i(t). The
injected noise is zero-mean Gaussian with per-dimension standard deviation
scale * decay^t on the masked dimensions and exactly zero elsewhere.

Randomness is split into independent per-purpose streams derived from the
config seed, so the draw for one purpose can never shift another purpose's
sequence. Initial states are derived from the seed alone (not the run
index): every run of an ensemble starts from the same initial states, and
run_index varies the schedule, noise, Byzantine, and step-size draws.

All draws are made in fixed shapes up front (noise for every agent and
iteration, Byzantine messages for every potential recipient, step sizes for
every agent and iteration), which makes a run bit-reproducible regardless
of schedule structure and lets the hot loop run in compiled code.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from . import network
from ._kernels import CP_DEGENERATE, CP_EXHAUSTED, _centerpoint_into, _run_core
from .errors import ConfigError, SearchExhausted

# Sub-stream derivation labels. Config-scope streams use spawn_key
# (SCOPE_CONFIG, label); run-scope streams use (SCOPE_RUN, run_index, label).
SCOPE_CONFIG = 0
SCOPE_RUN = 1
LABEL_INIT = 0
LABEL_SCHEDULE = 1
LABEL_NOISE = 2
LABEL_BYZ = 3
LABEL_GAMMA = 4
LABEL_SHIFTS = 5


def derive_stream(seed: int, *path: int) -> np.random.Generator:
    """A generator for one purpose, derived from the master seed and a path."""
    ss = np.random.SeedSequence(entropy=int(seed),
                                spawn_key=tuple(int(p) for p in path))
    return np.random.default_rng(ss)


@dataclass(frozen=True)
class NoiseSchedule:
    """Decaying Gaussian noise: per-dim std scale * decay^t on masked dims.

    scale = 0 turns noise off (noiseless test configs); decay must lie in
    (0, 1). mask holds zero-based dimension indices; None means all.
    """

    scale: float
    decay: float
    mask: frozenset | None = None

    def __post_init__(self):
        if self.scale < 0:
            raise ConfigError("noise scale must be >= 0", field="noise.scale")
        if not (0 < self.decay < 1):
            raise ConfigError("noise decay must be in (0,1)", field="noise.decay")
        if self.mask is not None:
            object.__setattr__(self, "mask", frozenset(int(k) for k in self.mask))
            if not self.mask:
                raise ConfigError("noise mask must be non-empty (or None)",
                                  field="noise.mask")

    def std_at(self, t: int) -> float:
        return self.scale * self.decay ** t

    def mask_vector(self, dim: int) -> np.ndarray:
        m = np.zeros(dim)
        dims = range(dim) if self.mask is None else sorted(self.mask)
        for k in dims:
            if not 0 <= k < dim:
                raise ConfigError(f"mask dimension {k} outside 0..{dim - 1}",
                                  field="noise.mask")
            m[k] = 1.0
        return m


@dataclass(frozen=True)
class GammaPolicy:
    """Step-size bounds; each agent draws gamma uniformly in [low, high].

    low == high realizes the fixed-step-size mode used by most experiments
    (the degenerate uniform draw returns the value exactly and keeps the
    stream layout identical between modes).
    """

    low: float
    high: float

    def __post_init__(self):
        if not (0 < self.low <= self.high < 1):
            raise ConfigError("need 0 < low <= high < 1", field="gamma")

    @classmethod
    def fixed(cls, value: float) -> "GammaPolicy":
        return cls(low=value, high=value)


@dataclass(frozen=True)
class ByzantineStrategy:
    """What faulty agents transmit.

    kind "box": uniform draw per dimension inside `box` (shape (d, 2) of
    lo/hi). kind "fixed": always `point`. kind "custom": `fn(t, faulty_rank,
    recipient_row, rng) -> (d,) array`, evaluated for every potential
    recipient. per_recipient False collapses to one shared message per
    faulty agent per iteration (the "malicious" special case).
    """

    kind: str
    box: tuple | None = None
    point: tuple | None = None
    fn: object = None
    per_recipient: bool = True

    def __post_init__(self):
        if self.kind not in ("box", "fixed", "custom"):
            raise ConfigError(f"unknown byzantine kind {self.kind!r}", field="byz")
        if self.kind == "box":
            if self.box is None:
                raise ConfigError("box strategy needs box", field="byz.box")
            arr = np.asarray(self.box, float)
            if arr.ndim != 2 or arr.shape[1] != 2 or np.any(arr[:, 0] >= arr[:, 1]):
                raise ConfigError("box must be (d,2) with lo < hi per dim",
                                  field="byz.box")
            object.__setattr__(self, "box", tuple(map(tuple, arr)))
        if self.kind == "fixed":
            if self.point is None:
                raise ConfigError("fixed strategy needs point", field="byz.point")
            object.__setattr__(self, "point",
                               tuple(float(v) for v in np.asarray(self.point).ravel()))
        if self.kind == "custom" and not callable(self.fn):
            raise ConfigError("custom strategy needs a callable fn", field="byz.fn")


@dataclass(frozen=True)
class SimConfig:
    """Full specification of one simulation (and, with run_index, one run)."""

    n: int
    faulty: frozenset
    dim: int
    noise: NoiseSchedule
    gamma: GammaPolicy
    T: int
    byz: ByzantineStrategy
    seed: int
    policy: str = "complete"
    policy_k: int | None = None
    window_len: int = 1
    initial_states: tuple | None = None
    initial_box: tuple | None = None
    budget: int = 2000
    tol: float = 1e-9

    def __post_init__(self):
        object.__setattr__(self, "faulty", frozenset(int(f) for f in self.faulty))
        if self.dim not in (2, 3):
            raise ConfigError("dim must be 2 or 3", field="dim")
        if self.policy not in network.POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}, choose from "
                              f"{list(network.POLICIES)}", field="policy")
        if self.policy == "random_k_in" and (self.policy_k is None
                                             or self.policy_k < 1):
            raise ConfigError("random_k_in needs policy k >= 1",
                              field="policy.k")
        if self.T < 1:
            raise ConfigError("T must be >= 1", field="T")
        if any(f < 0 or f >= self.n for f in self.faulty):
            raise ConfigError("faulty ids outside 0..n-1", field="faulty")
        nbar = self.n - len(self.faulty)
        if nbar < self.dim + 1:
            raise ConfigError(
                f"need at least dim+1={self.dim + 1} normal agents, got {nbar}",
                field="n")
        if self.noise.scale > 0 and not (self.gamma.low > 1 - self.noise.decay):
            raise ConfigError(
                "gamma.low must exceed 1 - noise.decay", field="gamma.low")
        if (self.initial_states is None) == (self.initial_box is None):
            raise ConfigError(
                "exactly one of initial_states / initial_box required",
                field="initial_states")
        if self.initial_states is not None:
            arr = np.asarray(self.initial_states, float)
            if arr.shape != (nbar, self.dim):
                raise ConfigError(
                    f"initial_states must be ({nbar},{self.dim})",
                    field="initial_states")
            object.__setattr__(self, "initial_states", tuple(map(tuple, arr)))
        if self.initial_box is not None:
            arr = np.asarray(self.initial_box, float)
            if arr.shape != (self.dim, 2) or np.any(arr[:, 0] > arr[:, 1]):
                raise ConfigError("initial_box must be (dim,2) with lo <= hi",
                                  field="initial_box")
            object.__setattr__(self, "initial_box", tuple(map(tuple, arr)))
        # Validate the mask indices against dim.
        self.noise.mask_vector(self.dim)

    @property
    def normal_ids(self) -> list:
        return [a for a in range(self.n) if a not in self.faulty]

    @property
    def n_normal(self) -> int:
        return self.n - len(self.faulty)


@dataclass(frozen=True)
class RunResult:
    """Outcome of one run: final normal states plus requested traces."""

    final: np.ndarray
    gamma_trace: np.ndarray
    schedule_digest: str
    seed: int
    run_index: int
    trajectory: np.ndarray | None = None
    transmitted: np.ndarray | None = None
    n_degenerate: int = 0


def resolve_initials(cfg: SimConfig) -> np.ndarray:
    """Initial normal states: explicit matrix, or box draw from the seed.

    Box draws derive from (seed, init) only, with no run-index component, so
    all runs of an ensemble share initial states.
    """
    nbar = cfg.n_normal
    if cfg.initial_states is not None:
        return np.array(cfg.initial_states, float)
    box = np.asarray(cfg.initial_box, float)
    g = derive_stream(cfg.seed, SCOPE_CONFIG, LABEL_INIT)
    u = g.random((nbar, cfg.dim))
    return box[:, 0] + (box[:, 1] - box[:, 0]) * u


def sample_noise(t: int, sched: NoiseSchedule, stream: np.random.Generator,
                 dim: int) -> np.ndarray:
    """One agent's noise vector at iteration t.

    Draws all `dim` components from the stream and zeroes the unmasked ones,
    so stream consumption is independent of the mask.
    """
    raw = stream.normal(size=dim) * sched.std_at(t)
    return raw * sched.mask_vector(dim)


def byzantine_messages(strategy: ByzantineStrategy, t: int, out_neighbors,
                       stream: np.random.Generator, dim: int) -> dict:
    """Messages a faulty agent addresses to each listed out-neighbor."""
    out = sorted(out_neighbors)
    if strategy.kind == "fixed":
        p = np.asarray(strategy.point, float)
        return {i: p.copy() for i in out}
    if strategy.kind == "box":
        box = np.asarray(strategy.box, float)
        n_draw = len(out) if strategy.per_recipient else 1
        u = stream.random((n_draw, dim))
        pts = box[:, 0] + (box[:, 1] - box[:, 0]) * u
        if strategy.per_recipient:
            return {i: pts[j] for j, i in enumerate(out)}
        return {i: pts[0].copy() for i in out}
    msgs = {}
    shared = None
    for j, i in enumerate(out):
        if strategy.per_recipient or shared is None:
            shared = np.asarray(strategy.fn(t, 0, i, stream), float)
        msgs[i] = shared.copy()
    return msgs


def _predraw_noise(cfg: SimConfig, stream: np.random.Generator) -> np.ndarray:
    """(T, n_normal, dim) noise block; masked dims zeroed after drawing."""
    T, nbar, d = cfg.T, cfg.n_normal, cfg.dim
    raw = stream.normal(size=(T, nbar, d))
    stds = cfg.noise.scale * cfg.noise.decay ** np.arange(T)
    raw *= stds[:, None, None]
    raw *= cfg.noise.mask_vector(d)
    return raw


def _predraw_byz(cfg: SimConfig, stream: np.random.Generator) -> np.ndarray:
    """(T, F, n_normal, dim) Byzantine message block.

    Messages are drawn for every potential normal recipient whether or not
    the schedule delivers them, so the stream position never depends on the
    schedule. With per_recipient False the per-iteration draw is shared.
    """
    T, nbar, d = cfg.T, cfg.n_normal, cfg.dim
    F = len(cfg.faulty)
    if F == 0:
        return np.zeros((T, 0, nbar, d))
    n_r = nbar if cfg.byz.per_recipient else 1
    if cfg.byz.kind == "fixed":
        block = np.broadcast_to(np.asarray(cfg.byz.point, float),
                                (T, F, nbar, d)).copy()
        return block
    if cfg.byz.kind == "box":
        box = np.asarray(cfg.byz.box, float)
        u = stream.random((T, F, n_r, d))
        block = box[:, 0] + (box[:, 1] - box[:, 0]) * u
        if not cfg.byz.per_recipient:
            block = np.broadcast_to(block, (T, F, nbar, d)).copy()
        return block
    block = np.empty((T, F, n_r, d))
    for t in range(T):
        for f in range(F):
            for r in range(n_r):
                block[t, f, r] = np.asarray(cfg.byz.fn(t, f, r, stream), float)
    if not cfg.byz.per_recipient:
        block = np.broadcast_to(block, (T, F, nbar, d)).copy()
    return block


def _predraw_gammas(cfg: SimConfig, stream: np.random.Generator) -> np.ndarray:
    """(T, n_normal) step sizes, uniform in [low, high]."""
    u = stream.random((cfg.T, cfg.n_normal))
    return cfg.gamma.low + (cfg.gamma.high - cfg.gamma.low) * u


def _schedule_rows(cfg: SimConfig, run_index: int):
    """Neighbor arrays in engine row encoding plus the schedule digest.

    Row encoding: values < n_normal are normal row indices; n_normal + f is
    the f-th faulty agent (sorted order).
    """
    rng = derive_stream(cfg.seed, SCOPE_RUN, run_index, LABEL_SCHEDULE)
    nbrs, counts, windows = network.generate_neighbor_arrays(
        cfg.policy, cfg.n, cfg.faulty, cfg.dim, cfg.T, cfg.window_len, rng,
        k=cfg.policy_k)
    digest = network.schedule_digest_arrays(nbrs, counts, cfg.n, cfg.faulty)
    # Length n + 1: variable-width policies pad rows with id n beyond each
    # row's count. The pad slot is never read by the kernel, but the remap
    # must stay in bounds.
    code = np.full(cfg.n + 1, cfg.n_normal + len(cfg.faulty), dtype=np.int64)
    for r, a in enumerate(cfg.normal_ids):
        code[a] = r
    for f, a in enumerate(sorted(cfg.faulty)):
        code[a] = cfg.n_normal + f
    return code[nbrs], counts, windows, digest


def run(cfg: SimConfig, run_index: int = 0, keep_trajectory: bool = False,
        keep_transmitted: bool = False) -> RunResult:
    """Execute one full run; bit-deterministic given (cfg, run_index)."""
    nbar, d, T = cfg.n_normal, cfg.dim, cfg.T
    x = resolve_initials(cfg).copy()
    nbrs, counts, _, digest = _schedule_rows(cfg, run_index)
    noise = _predraw_noise(cfg, derive_stream(cfg.seed, SCOPE_RUN, run_index,
                                              LABEL_NOISE))
    byz = _predraw_byz(cfg, derive_stream(cfg.seed, SCOPE_RUN, run_index,
                                          LABEL_BYZ))
    gammas = _predraw_gammas(cfg, derive_stream(cfg.seed, SCOPE_RUN, run_index,
                                                LABEL_GAMMA))
    traj = np.empty((T + 1, nbar, d)) if keep_trajectory else np.empty((1, 1, 1))
    ys = np.empty((T, nbar, d)) if keep_transmitted else np.empty((1, 1, 1))
    status, t_fail, i_fail, n_degen = _run_core(
        x, nbrs, counts, np.ascontiguousarray(noise),
        np.ascontiguousarray(byz), np.ascontiguousarray(gammas),
        cfg.tol, cfg.budget, traj, ys, keep_trajectory, keep_transmitted)
    if status == 1:
        raise SearchExhausted(
            f"centerpoint search exhausted at t={t_fail}, normal row {i_fail}"
            f" (run_index {run_index})")
    return RunResult(final=x, gamma_trace=gammas, schedule_digest=digest,
                     seed=cfg.seed, run_index=run_index,
                     trajectory=traj if keep_trajectory else None,
                     transmitted=ys if keep_transmitted else None,
                     n_degenerate=int(n_degen))


def run_streams(cfg: SimConfig, run_index: int = 0) -> dict:
    """Per-purpose generators for composing a run step by step."""
    return {
        "noise": derive_stream(cfg.seed, SCOPE_RUN, run_index, LABEL_NOISE),
        "byz": derive_stream(cfg.seed, SCOPE_RUN, run_index, LABEL_BYZ),
        "gamma": derive_stream(cfg.seed, SCOPE_RUN, run_index, LABEL_GAMMA),
    }


def step(states: np.ndarray, g: network.DiGraph, t: int, cfg: SimConfig,
         streams: dict, check_resilience: bool = False) -> np.ndarray:
    """One protocol iteration over an explicit graph, in plain Python.

    Consumes the per-purpose streams with the same fixed-shape convention as
    run(), so composing step() over a run's schedule reproduces run() bit
    for bit. With check_resilience, verifies that each computed centerpoint
    lies in the hull of the normal in-neighbors' transmitted values whenever
    the fault-fraction condition holds for that agent (a debug invariant;
    violations raise).
    """
    from . import geometry

    nbar, d = cfg.n_normal, cfg.dim
    if states.shape != (nbar, d):
        raise ValueError(f"states must be ({nbar},{d})")
    noise = streams["noise"].normal(size=(nbar, d)) * cfg.noise.std_at(t)
    noise *= cfg.noise.mask_vector(d)
    F = len(cfg.faulty)
    faulty_sorted = sorted(cfg.faulty)
    n_r = nbar if cfg.byz.per_recipient else 1
    if cfg.byz.kind == "box" and F:
        box = np.asarray(cfg.byz.box, float)
        u = streams["byz"].random((F, n_r, d))
        byz_block = box[:, 0] + (box[:, 1] - box[:, 0]) * u
        if not cfg.byz.per_recipient:
            byz_block = np.broadcast_to(byz_block, (F, nbar, d))
    elif cfg.byz.kind == "fixed" and F:
        byz_block = np.broadcast_to(np.asarray(cfg.byz.point, float),
                                    (F, nbar, d))
    elif F:
        byz_block = np.empty((F, n_r, d))
        for f in range(F):
            for r in range(n_r):
                byz_block[f, r] = np.asarray(
                    cfg.byz.fn(t, f, r, streams["byz"]), float)
        if not cfg.byz.per_recipient:
            byz_block = np.broadcast_to(byz_block, (F, nbar, d))
    gam = cfg.gamma.low + (cfg.gamma.high - cfg.gamma.low) \
        * streams["gamma"].random(nbar)

    y = states + noise
    normal_ids = cfg.normal_ids
    row_of = {a: r for r, a in enumerate(normal_ids)}
    frank_of = {a: f for f, a in enumerate(faulty_sorted)}
    new = np.empty_like(states)
    s_buf = np.empty(d)
    for r, i in enumerate(normal_ids):
        nbrs_i = g.in_neighbors(i)
        cloud = np.empty((len(nbrs_i), d))
        normal_rows = []
        for a, j in enumerate(nbrs_i):
            if j in row_of:
                cloud[a] = y[row_of[j]]
                normal_rows.append(row_of[j])
            else:
                cloud[a] = byz_block[frank_of[j], r]
        dep, status = _centerpoint_into(cloud, cfg.tol, cfg.budget, s_buf)
        if status == CP_EXHAUSTED:
            raise SearchExhausted(f"centerpoint search exhausted at t={t},"
                                  f" agent {i}")
        if check_resilience:
            n_f = len(nbrs_i) - len(normal_rows)
            if n_f < len(nbrs_i) / (d + 1) and normal_rows:
                hull = geometry.convex_hull(y[normal_rows])
                gap = geometry.distance_to(hull, s_buf)
                if gap > 1e-9:
                    raise AssertionError(
                        f"resilience violated at t={t}, agent {i}: centerpoint"
                        f" {gap:.3e} outside the normal in-neighbor hull")
        new[r] = gam[r] * s_buf + (1.0 - gam[r]) * states[r]
    return new


def run_coupled(cfg: SimConfig, shifts, run_index: int = 0):
    """Paired runs for the privacy audit: shifted start, compensating noise.

    The second run starts at x(0) + shifts and perturbs its noise by
    eta'(h) = eta(h) - prefix(h) * shift, where prefix(h) is the running
    product of (1 - gamma_i(t)) for t < h. Both runs share the schedule,
    step sizes, Byzantine draws, and raw noise, which makes the transmitted
    sequences identical up to floating-point accumulation.

    Returns (base_result, shifted_result, shift_trace) with shift_trace of
    shape (T, n_normal, dim) holding the per-iteration noise gap
    prefix(h) * shift (the quantity whose scaled norms sum to the divergence).
    """
    nbar, d, T = cfg.n_normal, cfg.dim, cfg.T
    delta = np.asarray(shifts, float)
    if delta.shape != (nbar, d):
        raise ValueError(f"shifts must be ({nbar},{d})")
    mask = cfg.noise.mask_vector(d)
    if np.any((delta != 0) & (mask == 0)):
        raise ValueError("shifts must vanish on unmasked dimensions"
                         " (no noise there to absorb them)")

    x0 = resolve_initials(cfg)
    nbrs, counts, _, digest = _schedule_rows(cfg, run_index)
    noise = np.ascontiguousarray(_predraw_noise(
        cfg, derive_stream(cfg.seed, SCOPE_RUN, run_index, LABEL_NOISE)))
    byz = np.ascontiguousarray(_predraw_byz(
        cfg, derive_stream(cfg.seed, SCOPE_RUN, run_index, LABEL_BYZ)))
    gammas = np.ascontiguousarray(_predraw_gammas(
        cfg, derive_stream(cfg.seed, SCOPE_RUN, run_index, LABEL_GAMMA)))

    # prefix[h, i] = prod_{t < h} (1 - gamma_i(t)); prefix[0] = 1.
    prefix = np.empty((T, nbar))
    prefix[0] = 1.0
    if T > 1:
        prefix[1:] = np.cumprod(1.0 - gammas[:-1], axis=0)
    shift_trace = prefix[:, :, None] * delta[None, :, :]
    noise_b = noise - shift_trace

    results = []
    for x_init, nz in ((x0.copy(), noise), ((x0 + delta).copy(), noise_b)):
        traj = np.empty((1, 1, 1))
        ys = np.empty((T, nbar, d))
        x = x_init
        status, t_fail, i_fail, n_degen = _run_core(
            x, nbrs, counts, np.ascontiguousarray(nz), byz, gammas,
            cfg.tol, cfg.budget, traj, ys, False, True)
        if status == 1:
            raise SearchExhausted(
                f"centerpoint search exhausted at t={t_fail}, row {i_fail}")
        results.append(RunResult(
            final=x, gamma_trace=gammas, schedule_digest=digest, seed=cfg.seed,
            run_index=run_index, trajectory=None, transmitted=ys,
            n_degenerate=int(n_degen)))
    return results[0], results[1], shift_trace


def build_schedule(cfg: SimConfig, run_index: int = 0) -> network.GraphSchedule:
    """The DiGraph-form schedule a given run uses (for inspection/replay)."""
    rng = derive_stream(cfg.seed, SCOPE_RUN, run_index, LABEL_SCHEDULE)
    return network.generate_schedule(
        cfg.policy, cfg.n, cfg.faulty, cfg.dim, cfg.T, cfg.window_len, rng,
        k=cfg.policy_k)


def config_digest(cfg: SimConfig) -> str:
    """Stable hash of every field that influences run output, so files
    derived from different configurations never look interchangeable.
    """

    def fmt(x):
        if isinstance(x, float):
            return format(x, ".17g")
        if isinstance(x, (tuple, list)):
            return "(" + ",".join(fmt(v) for v in x) + ")"
        return str(x)

    byz = cfg.byz
    parts = [
        "n=%d" % cfg.n,
        "faulty=%s" % fmt(tuple(sorted(cfg.faulty))),
        "dim=%d" % cfg.dim,
        "noise=%s,%s,%s" % (fmt(cfg.noise.scale), fmt(cfg.noise.decay),
                            fmt(tuple(cfg.noise.mask) if cfg.noise.mask
                                is not None else ())),
        "gamma=%s,%s" % (fmt(cfg.gamma.low), fmt(cfg.gamma.high)),
        "T=%d" % cfg.T,
        "byz=%s,%s,%s,%s,%s" % (
            byz.kind,
            fmt(byz.box) if byz.box is not None else "-",
            fmt(byz.point) if byz.point is not None else "-",
            getattr(byz.fn, "__qualname__", "-") if byz.fn else "-",
            byz.per_recipient),
        "seed=%d" % cfg.seed,
        "policy=%s,%s,%d" % (cfg.policy, cfg.policy_k, cfg.window_len),
        "init=%s|%s" % (
            fmt(cfg.initial_states) if cfg.initial_states is not None else "-",
            fmt(cfg.initial_box) if cfg.initial_box is not None else "-"),
        "budget=%d" % cfg.budget,
        "tol=%s" % fmt(cfg.tol),
    ]
    return hashlib.sha256(";".join(parts).encode()).hexdigest()
