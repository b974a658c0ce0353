"""Time-varying directed communication graphs and schedule generation.

Agents are numbered 0..n-1. A directed edge (j, i) means j transmits to i,
so j is an in-neighbor of i. Schedules are validated against two
constraints: the per-graph fault-fraction condition (every normal agent has
strictly fewer faulty in-neighbors than |in-neighborhood|/(dim+1)) and
window-wise joint reachability of the normal-agent subgraphs (some normal
vertex is reachable from every other normal vertex in the window's union
graph).

Faulty agents receive no in-edges in generated schedules: they ignore
incoming messages, so their in-edges carry no information.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .errors import InfeasiblePolicy

POLICIES = ("complete", "random_k_in", "random_subset_in",
            "all_normals_plus_one_faulty")


@dataclass(frozen=True)
class DiGraph:
    """Directed graph without self-loops; edges are (from, to) pairs."""

    n: int
    edges: frozenset

    def __post_init__(self):
        for (a, b) in self.edges:
            if a == b:
                raise ValueError(f"self-loop at {a}")
            if not (0 <= a < self.n and 0 <= b < self.n):
                raise ValueError(f"edge ({a},{b}) outside 0..{self.n - 1}")

    def in_neighbors(self, i: int) -> list:
        return sorted(a for (a, b) in self.edges if b == i)

    def adjacency(self) -> np.ndarray:
        m = np.zeros((self.n, self.n), dtype=bool)
        for (a, b) in self.edges:
            m[a, b] = True
        return m


@dataclass(frozen=True)
class GraphSchedule:
    """A graph per iteration plus the window boundaries used for reachability.

    `windows` lists the start index of each window; windows partition [0, T).
    """

    horizon: int
    graphs: tuple
    windows: tuple = field(default=(0,))

    def __post_init__(self):
        if len(self.graphs) != self.horizon:
            raise ValueError("graphs length must equal horizon")
        w = list(self.windows)
        if not w or w[0] != 0 or any(b <= a for a, b in zip(w, w[1:])):
            raise ValueError("windows must start at 0 and strictly increase")
        if w[-1] >= self.horizon and self.horizon > 0:
            raise ValueError("window start beyond horizon")

    def window_slices(self):
        bounds = list(self.windows) + [self.horizon]
        return [(bounds[i], bounds[i + 1]) for i in range(len(self.windows))]


def union_graph(graphs) -> DiGraph:
    """Edge union of graphs sharing the same vertex count."""
    graphs = list(graphs)
    if not graphs:
        raise ValueError("need at least one graph")
    n = graphs[0].n
    if any(g.n != n for g in graphs):
        raise ValueError("graphs must share n")
    edges = frozenset().union(*(g.edges for g in graphs))
    return DiGraph(n=n, edges=edges)


def _closure(adj: np.ndarray) -> np.ndarray:
    """Reflexive-transitive reachability closure of a boolean adjacency."""
    n = adj.shape[0]
    reach = adj | np.eye(n, dtype=bool)
    while True:
        nxt = reach | (reach @ reach)
        if (nxt == reach).all():
            return reach
        reach = nxt


def is_jointly_reachable(graphs) -> bool:
    """True iff some vertex is reachable from every vertex in the union graph."""
    u = union_graph(graphs)
    if u.n == 1:
        return True
    reach = _closure(u.adjacency())
    return bool(np.any(reach.all(axis=0)))


def restrict_to_normals(g: DiGraph, faulty) -> DiGraph:
    """Induced subgraph on normal agents, reindexed to 0..n_normal-1."""
    normal = sorted(set(range(g.n)) - set(faulty))
    pos = {a: r for r, a in enumerate(normal)}
    edges = frozenset((pos[a], pos[b]) for (a, b) in g.edges
                      if a in pos and b in pos)
    return DiGraph(n=len(normal), edges=edges)


def check_repeated_reachability(schedule: GraphSchedule, faulty) -> bool:
    """Every window's normal-restricted graph subsequence is jointly reachable."""
    n = schedule.graphs[0].n if schedule.graphs else 0
    faulty = set(faulty)
    if any(f < 0 or f >= n for f in faulty):
        raise ValueError("faulty set outside agent range")
    for a, b in schedule.window_slices():
        sub = [restrict_to_normals(g, faulty) for g in schedule.graphs[a:b]]
        if not is_jointly_reachable(sub):
            return False
    return True


def fault_condition_ok(g: DiGraph, faulty, dim: int) -> bool:
    """Fault-fraction condition: every normal agent i has strictly fewer
    faulty in-neighbors than |in-neighborhood(i)| / (dim + 1).

    An empty in-neighborhood fails (0 < 0 is false), which matches the
    convention that an isolated agent has no resilience guarantee.
    """
    faulty = set(faulty)
    for i in range(g.n):
        if i in faulty:
            continue
        nbrs = g.in_neighbors(i)
        n_f = sum(1 for j in nbrs if j in faulty)
        if not (n_f < len(nbrs) / (dim + 1)):
            return False
    return True


def _policy_neighbor_count(policy, n, n_normal, k):
    if policy == "complete":
        return n - 1
    if policy == "random_k_in":
        if k is None:
            raise ValueError("random_k_in requires k")
        return int(k)
    if policy == "random_subset_in":
        return n - 1
    if policy == "all_normals_plus_one_faulty":
        return n_normal
    raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")


def generate_neighbor_arrays(policy: str, n: int, faulty, dim: int, T: int,
                             window_len: int, rng: np.random.Generator,
                             k: int | None = None, retries: int = 1000):
    """Vectorized schedule generation in array form.

    Returns (nbrs, counts, windows): nbrs has shape (T, n_normal, max_in)
    holding agent ids of each normal agent's in-neighbors sorted ascending,
    counts the per-(t, agent) in-neighbor count, windows the window start
    tuple. Every graph satisfies the fault-fraction condition; every window
    is jointly reachable on the normal subgraph (regenerate-and-check with
    `retries` attempts per window).
    """
    faulty = sorted(set(faulty))
    normal = [a for a in range(n) if a not in set(faulty)]
    nbar = len(normal)
    if nbar < 1:
        raise InfeasiblePolicy("no normal agents")
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    kk = _policy_neighbor_count(policy, n, nbar, k)
    if kk < 1 or kk > n - 1:
        raise InfeasiblePolicy(f"in-neighbor count {kk} outside 1..{n - 1}")

    # Feasibility of the fault condition for the policy's worst draw.
    n_faulty = len(faulty)
    if policy == "complete":
        if not (n_faulty < (n - 1) / (dim + 1)):
            raise InfeasiblePolicy(
                f"complete graph violates the fault condition: {n_faulty} faulty"
                f" among {n - 1} in-neighbors with dim {dim}")
    elif policy == "random_k_in":
        unavoidable = max(0, kk - (nbar - 1))
        if not (unavoidable < kk / (dim + 1)):
            raise InfeasiblePolicy(
                f"random_k_in with k={kk} cannot satisfy the fault condition:"
                f" at least {unavoidable} faulty in-neighbors are unavoidable")
    elif policy == "random_subset_in":
        if nbar < 2:
            raise InfeasiblePolicy(
                "random_subset_in needs at least two normal agents")
    elif policy == "all_normals_plus_one_faulty":
        if n_faulty < 1:
            raise InfeasiblePolicy("policy needs at least one faulty agent")
        if not (1 < nbar / (dim + 1)):
            raise InfeasiblePolicy(
                f"policy needs more than {dim + 1} normal agents, got {nbar}")

    faulty_arr = np.array(faulty, dtype=np.int64)
    # One extra slot so the padding id `n` (used by variable-width policies)
    # reads as faulty and is skipped everywhere.
    is_faulty = np.zeros(n + 1, dtype=bool)
    is_faulty[n] = True
    if faulty_arr.size:
        is_faulty[faulty_arr] = True
    # Candidate in-neighbors per normal agent: everyone but itself.
    cands = np.empty((nbar, n - 1), dtype=np.int64)
    for r, a in enumerate(normal):
        cands[r] = [j for j in range(n) if j != a]
    cand_faulty = is_faulty[cands]
    pos = np.full(n + 1, -1, dtype=np.int64)
    pos[np.array(normal, dtype=np.int64)] = np.arange(nbar)

    def draw_block(wlen):
        """(wlen, nbar, kk) in-neighbor agent ids, fault condition enforced."""
        if policy == "complete":
            return np.broadcast_to(cands, (wlen, nbar, n - 1)).copy()
        if policy == "random_k_in":
            keys = rng.random((wlen, nbar, n - 1))
            sel = np.argpartition(keys, kk - 1, axis=2)[:, :, :kk]
            big = np.broadcast_to(cands, (wlen, nbar, n - 1))
            picked = np.take_along_axis(big, sel, axis=2)
            bigf = np.broadcast_to(cand_faulty, (wlen, nbar, n - 1))
            for _ in range(retries):
                nf = np.take_along_axis(bigf, sel, axis=2).sum(axis=2)
                bad = ~(nf < kk / (dim + 1))
                if not bad.any():
                    break
                rows = np.argwhere(bad)
                rekeys = rng.random((len(rows), n - 1))
                resel = np.argpartition(rekeys, kk - 1, axis=1)[:, :kk]
                sel[bad] = resel
                picked[bad] = np.take_along_axis(cands[rows[:, 1]], resel, axis=1)
            else:
                raise InfeasiblePolicy(
                    "could not draw fault-condition-satisfying rows")
            return np.sort(picked, axis=2)
        if policy == "random_subset_in":
            # Uniform over the nonempty candidate subsets that satisfy the
            # fault condition: include each candidate with probability 1/2,
            # then redraw the rows that land outside the admissible family.
            mask = rng.random((wlen, nbar, n - 1)) < 0.5
            bigf = np.broadcast_to(cand_faulty, (wlen, nbar, n - 1))
            for _ in range(retries):
                cnt = mask.sum(axis=2)
                nf = (mask & bigf).sum(axis=2)
                bad = (cnt == 0) | ~(nf < cnt / (dim + 1))
                if not bad.any():
                    break
                mask[bad] = rng.random((int(bad.sum()), n - 1)) < 0.5
            else:
                raise InfeasiblePolicy(
                    "could not draw fault-condition-satisfying rows")
            big = np.broadcast_to(cands, (wlen, nbar, n - 1))
            # Pad unselected slots with id n so real ids sort to the front.
            return np.sort(np.where(mask, big, n), axis=2)
        # all_normals_plus_one_faulty
        others = np.empty((nbar, nbar - 1), dtype=np.int64)
        for r, a in enumerate(normal):
            others[r] = [b for b in normal if b != a]
        picks = rng.integers(0, faulty_arr.size, size=(wlen, nbar))
        fcol = faulty_arr[picks][:, :, None]
        block = np.concatenate(
            [np.broadcast_to(others, (wlen, nbar, nbar - 1)), fcol], axis=2)
        return np.sort(block, axis=2)

    def normal_adjacency(block):
        """(wlen, nbar, nbar) adjacency of the normal subgraphs (j -> i)."""
        wlen = block.shape[0]
        adj = np.zeros((wlen, nbar, nbar), dtype=bool)
        tt, rr, _ = np.indices(block.shape)
        keep = ~is_faulty[block]
        adj[tt[keep], pos[block[keep]], rr[keep]] = True
        return adj

    def windows_ok(adj, starts, wends):
        """Joint reachability per window from stacked per-t adjacencies."""
        unions = np.stack([adj[a:b].any(axis=0) for a, b in zip(starts, wends)])
        reach = unions | np.eye(nbar, dtype=bool)
        for _ in range(max(1, int(np.ceil(np.log2(max(nbar, 2)))) + 1)):
            reach = reach | (np.matmul(reach.astype(np.uint8),
                                       reach.astype(np.uint8)) > 0)
        return reach.all(axis=1).any(axis=1)

    windows = tuple(range(0, T, window_len))
    wstarts = np.array(windows)
    wends = np.minimum(wstarts + window_len, T)

    block = draw_block(T)
    adj = normal_adjacency(block)
    ok = windows_ok(adj, wstarts, wends)
    for wi in np.flatnonzero(~ok):
        a, b = int(wstarts[wi]), int(wends[wi])
        for attempt in range(retries):
            sub = draw_block(b - a)
            sadj = normal_adjacency(sub)
            if windows_ok(sadj, np.array([0]), np.array([b - a]))[0]:
                block[a:b] = sub
                break
        else:
            raise InfeasiblePolicy(
                f"window at t={a} failed reachability after {retries} tries")

    if policy == "random_subset_in":
        counts = (block < n).sum(axis=2).astype(np.int64)
    else:
        counts = np.full((T, nbar), kk, dtype=np.int64)
    return block, counts, windows


def arrays_to_schedule(nbrs: np.ndarray, counts: np.ndarray, windows, n: int,
                       faulty) -> GraphSchedule:
    """Materialize DiGraph objects from array-form schedule data."""
    T, nbar, _ = nbrs.shape
    normal = [a for a in range(n) if a not in set(faulty)]
    graphs = []
    for t in range(T):
        edges = set()
        for r in range(nbar):
            i = normal[r]
            for a in range(counts[t, r]):
                edges.add((int(nbrs[t, r, a]), i))
        graphs.append(DiGraph(n=n, edges=frozenset(edges)))
    return GraphSchedule(horizon=T, graphs=tuple(graphs), windows=tuple(windows))


def generate_schedule(policy: str, n: int, faulty, dim: int, T: int,
                      window_len: int = 1, rng: np.random.Generator | None = None,
                      k: int | None = None, retries: int = 1000) -> GraphSchedule:
    """Generate a validated GraphSchedule (object form).

    Deterministic given the rng state. Raises InfeasiblePolicy when the
    policy cannot satisfy the fault condition or a window fails reachability
    within the retry budget.
    """
    if rng is None:
        rng = np.random.default_rng(0)
    nbrs, counts, windows = generate_neighbor_arrays(
        policy, n, faulty, dim, T, window_len, rng, k=k, retries=retries)
    sched = arrays_to_schedule(nbrs, counts, windows, n, faulty)
    if policy == "complete":
        # The complete policy means the complete digraph; give faulty agents
        # their (otherwise irrelevant) in-edges too.
        extra = frozenset((j, f) for f in sorted(set(faulty))
                          for j in range(n) if j != f)
        graphs = tuple(DiGraph(n=n, edges=g.edges | extra) for g in sched.graphs)
        sched = GraphSchedule(horizon=T, graphs=graphs, windows=sched.windows)
    return sched


def schedule_to_lines(schedule: GraphSchedule) -> list:
    """Serialize: one line per iteration, `t from>to from>to ...`."""
    lines = []
    for t, g in enumerate(schedule.graphs):
        pairs = " ".join(f"{a}>{b}" for (a, b) in sorted(g.edges))
        lines.append(f"{t} {pairs}".rstrip())
    return lines


def schedule_from_lines(lines, n: int, windows=(0,)) -> GraphSchedule:
    """Parse the line format produced by schedule_to_lines."""
    graphs = []
    for expected_t, line in enumerate(lines):
        parts = line.split()
        if not parts:
            raise ValueError("empty schedule line")
        t = int(parts[0])
        if t != expected_t:
            raise ValueError(f"iteration {t} out of order (expected {expected_t})")
        edges = set()
        for tok in parts[1:]:
            a, b = tok.split(">")
            edges.add((int(a), int(b)))
        graphs.append(DiGraph(n=n, edges=frozenset(edges)))
    return GraphSchedule(horizon=len(graphs), graphs=tuple(graphs),
                         windows=tuple(windows))


def schedule_digest_arrays(nbrs: np.ndarray, counts: np.ndarray, n: int,
                           faulty) -> str:
    """Stable digest of an array-form schedule."""
    h = hashlib.sha256()
    h.update(np.int64(n).tobytes())
    h.update(np.array(sorted(faulty), dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(nbrs, dtype=np.int64).tobytes())
    h.update(np.ascontiguousarray(counts, dtype=np.int64).tobytes())
    return h.hexdigest()
