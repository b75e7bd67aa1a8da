"""Time-varying topology: schedules, centralities, spectra and generators.

Adjacency matrices are dense ``numpy`` arrays of 0/1 integers. Graphs here
are small (a few hundred nodes at most), so dense storage keeps every
operation simple and fast enough.
"""

from __future__ import annotations

import bisect
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .errors import DomainError, GenerationError

CONNECT_RETRIES = 100


def check_adjacency(adjacency, n_nodes=None) -> np.ndarray:
    """Return ``adjacency`` as an int array after validating it."""
    a = np.asarray(adjacency)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DomainError(f"adjacency must be square, got shape {a.shape}")
    if n_nodes is not None and a.shape[0] != n_nodes:
        raise DomainError(f"adjacency is {a.shape[0]}x{a.shape[0]}, expected {n_nodes}")
    if not np.all((a == 0) | (a == 1)):
        raise DomainError("adjacency entries must be 0 or 1")
    if not np.array_equal(a, a.T):
        raise DomainError("adjacency must be symmetric")
    if np.any(np.diag(a) != 0):
        raise DomainError("adjacency must have a zero diagonal")
    return a.astype(np.int64)


@dataclass(frozen=True)
class Segment:
    t_start: float
    t_end: float
    adjacency: np.ndarray


@dataclass(frozen=True)
class TopologySchedule:
    """Contiguous sequence of (interval, adjacency) pairs starting at 0."""

    segments: tuple[Segment, ...]
    n_nodes: int = field(init=False)

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise DomainError("schedule needs at least one segment")
        n = np.asarray(segs[0].adjacency).shape[0]
        if n < 1:
            raise DomainError("schedule needs at least one node")
        fixed = []
        for i, seg in enumerate(segs):
            a = check_adjacency(seg.adjacency, n)
            a.setflags(write=False)
            t0, t1 = float(seg.t_start), float(seg.t_end)
            if not t1 > t0:
                raise DomainError(f"segment {i} has non-positive length ({t0}, {t1})")
            if i == 0 and t0 != 0.0:
                raise DomainError("first segment must start at t=0")
            if i > 0 and t0 != fixed[-1].t_end:
                raise DomainError(f"segment {i} starts at {t0}, previous ends at {fixed[-1].t_end}")
            fixed.append(Segment(t0, t1, a))
        object.__setattr__(self, "segments", tuple(fixed))
        object.__setattr__(self, "n_nodes", int(n))

    @classmethod
    def from_intervals(cls, intervals: Sequence[tuple[float, float]], matrices: Sequence) -> "TopologySchedule":
        if len(intervals) != len(matrices):
            raise DomainError("need one adjacency matrix per interval")
        return cls(tuple(Segment(a, b, np.asarray(m)) for (a, b), m in zip(intervals, matrices)))

    @property
    def horizon_end(self) -> float:
        return self.segments[-1].t_end

    @property
    def breakpoints(self) -> list[float]:
        return [s.t_start for s in self.segments] + [self.horizon_end]

    @property
    def intervals(self) -> list[tuple[float, float]]:
        return [(s.t_start, s.t_end) for s in self.segments]

    def __len__(self):
        return len(self.segments)

    def segment_index(self, t: float) -> int:
        if not 0.0 <= t <= self.horizon_end:
            raise DomainError(f"t={t} outside [0, {self.horizon_end}]")
        starts = [s.t_start for s in self.segments]
        return min(bisect.bisect_right(starts, t) - 1, len(starts) - 1)

    def adjacency_at(self, t: float) -> np.ndarray:
        return self.segments[self.segment_index(t)].adjacency

    def n_distinct(self) -> int:
        seen: list[np.ndarray] = []
        for s in self.segments:
            if not any(np.array_equal(s.adjacency, m) for m in seen):
                seen.append(s.adjacency)
        return len(seen)

    def to_dict(self) -> dict:
        return {
            "n_nodes": self.n_nodes,
            "segments": [
                {"t_start": s.t_start, "t_end": s.t_end, "adjacency": s.adjacency.tolist()}
                for s in self.segments
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TopologySchedule":
        try:
            segs = tuple(
                Segment(float(s["t_start"]), float(s["t_end"]), np.asarray(s["adjacency"], dtype=np.int64))
                for s in data["segments"]
            )
        except (KeyError, TypeError) as exc:
            raise DomainError(f"malformed schedule: {exc}") from exc
        sched = cls(segs)
        if "n_nodes" in data and int(data["n_nodes"]) != sched.n_nodes:
            raise DomainError("n_nodes does not match adjacency size")
        return sched


@dataclass(frozen=True)
class GraphSnapshot:
    adjacency: np.ndarray
    service_weights: np.ndarray

    def __post_init__(self):
        a = check_adjacency(self.adjacency)
        w = np.asarray(self.service_weights, dtype=float)
        if w.shape != (a.shape[0],):
            raise DomainError("need one service weight per node")
        if not np.all(np.isfinite(w)) or np.any(w < 0):
            raise DomainError("service weights must be finite and non-negative")
        object.__setattr__(self, "adjacency", a)
        object.__setattr__(self, "service_weights", w)


# --- centralities -----------------------------------------------------------

def neighbors(adjacency: np.ndarray) -> list[list[int]]:
    return [list(np.flatnonzero(row)) for row in np.asarray(adjacency)]


def k_shell(adjacency) -> np.ndarray:
    """Core number of every node by iterative peeling."""
    a = check_adjacency(adjacency)
    n = a.shape[0]
    nbrs = neighbors(a)
    degree = a.sum(axis=1).astype(int)
    shell = np.zeros(n, dtype=int)
    removed = np.zeros(n, dtype=bool)
    k = 0
    remaining = n
    while remaining:
        k = max(k, int(degree[~removed].min()))
        stack = [v for v in range(n) if not removed[v] and degree[v] <= k]
        while stack:
            v = stack.pop()
            if removed[v]:
                continue
            removed[v] = True
            remaining -= 1
            shell[v] = k
            for u in nbrs[v]:
                if not removed[u]:
                    degree[u] -= 1
                    if degree[u] <= k:
                        stack.append(u)
    return shell


def betweenness(adjacency) -> np.ndarray:
    """Unnormalized shortest-path betweenness over unordered pairs (Brandes)."""
    a = check_adjacency(adjacency)
    n = a.shape[0]
    nbrs = neighbors(a)
    score = np.zeros(n)
    for s in range(n):
        order = []
        preds: list[list[int]] = [[] for _ in range(n)]
        sigma = np.zeros(n)
        sigma[s] = 1.0
        dist = np.full(n, -1)
        dist[s] = 0
        queue = deque([s])
        while queue:
            v = queue.popleft()
            order.append(v)
            for w in nbrs[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        dep = np.zeros(n)
        for w in reversed(order):
            for v in preds[w]:
                dep[v] += sigma[v] / sigma[w] * (1.0 + dep[w])
            if w != s:
                score[w] += dep[w]
    # every unordered pair was counted from both ends
    return score / 2.0


# --- spectra ----------------------------------------------------------------

def spectral_radius(matrix) -> float:
    m = np.asarray(matrix, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DomainError(f"spectral radius needs a square matrix, got shape {m.shape}")
    if m.size == 0:
        return 0.0
    if not np.all(np.isfinite(m)):
        raise DomainError("matrix has non-finite entries")
    if np.array_equal(m, m.T):
        return float(np.max(np.abs(np.linalg.eigvalsh(m))))
    return float(np.max(np.abs(np.linalg.eigvals(m))))


def threshold_matrix(infection_rates, adjacency, recovery_rates) -> np.ndarray:
    a = np.asarray(adjacency, dtype=float)
    lam = np.asarray(infection_rates, dtype=float)
    rec = np.asarray(recovery_rates, dtype=float)
    n = a.shape[0] if a.ndim == 2 else -1
    if a.ndim != 2 or a.shape[1] != n or lam.shape != (n,) or rec.shape != (n,):
        raise DomainError("rates and adjacency dimensions disagree")
    if np.any(lam < 0) or np.any(rec < 0):
        raise DomainError("rates must be non-negative")
    return lam[:, None] * a - np.diag(rec)


def epidemic_threshold(infection_rates, adjacency, recovery_rates) -> float:
    """Real part of the rightmost eigenvalue of diag(infection)·A − diag(recovery).

    Negative means the contagion dies out, positive means it spreads.
    """
    m = threshold_matrix(infection_rates, adjacency, recovery_rates)
    if m.size == 0:
        return 0.0
    return float(np.max(np.linalg.eigvals(m).real))


# --- utility ----------------------------------------------------------------

def largest_component(adjacency, keep: np.ndarray | None = None) -> int:
    a = np.asarray(adjacency)
    if keep is not None:
        a = a[np.ix_(keep, keep)]
    if a.shape[0] == 0:
        return 0
    _, labels = connected_components(csr_matrix(a), directed=False)
    return int(np.bincount(labels).max())


def is_connected(adjacency) -> bool:
    a = np.asarray(adjacency)
    return a.shape[0] > 0 and largest_component(a) == a.shape[0]


def network_utility(snapshot: GraphSnapshot, removed: Iterable[int] = (), mode: str = "lcc") -> float:
    """Service utility left after taking ``removed`` nodes offline.

    ``mode="lcc"`` weights the surviving service by the share of surviving
    nodes that sit in the largest connected component; ``mode="sum"`` is the
    plain weight sum. ``mode="component"`` keeps only the service of the
    heaviest surviving component. Unlike "lcc" it never increases when more
    nodes are removed (dropping a light node can raise the lcc share).
    """
    n = snapshot.adjacency.shape[0]
    keep = np.ones(n, dtype=bool)
    removed = list(removed)
    if removed:
        idx = np.asarray(removed, dtype=int)
        if np.any((idx < 0) | (idx >= n)):
            raise DomainError("removed nodes must be valid node indices")
        keep[idx] = False
    n_keep = int(keep.sum())
    if n_keep == 0:
        return 0.0
    total = float(snapshot.service_weights[keep].sum())
    if mode == "sum":
        return total
    kept = np.flatnonzero(keep)
    if mode == "component":
        sub = csr_matrix(snapshot.adjacency[np.ix_(kept, kept)])
        _, labels = connected_components(sub, directed=False)
        return float(np.bincount(labels, weights=snapshot.service_weights[kept]).max())
    if mode != "lcc":
        raise DomainError(f"unknown utility mode {mode!r}")
    return total * largest_component(snapshot.adjacency, kept) / n_keep


# --- generators -------------------------------------------------------------

def ring_lattice(n: int, mean_degree: int) -> np.ndarray:
    a = np.zeros((n, n), dtype=np.int64)
    for i in range(n):
        for j in range(1, mean_degree // 2 + 1):
            a[i, (i + j) % n] = a[(i + j) % n, i] = 1
    return a


def _rewire(n, mean_degree, rewire_prob, rng) -> np.ndarray:
    a = ring_lattice(n, mean_degree)
    for j in range(1, mean_degree // 2 + 1):
        for i in range(n):
            v = (i + j) % n
            if rng.random() >= rewire_prob or not a[i, v]:
                continue
            free = np.flatnonzero(a[i] == 0)
            free = free[free != i]
            if free.size == 0:
                continue
            w = int(free[rng.integers(free.size)])
            a[i, v] = a[v, i] = 0
            a[i, w] = a[w, i] = 1
    return a


def generate_small_world(n: int, mean_degree: int, rewire_prob: float, seed) -> np.ndarray:
    """Connected Watts–Strogatz graph; bit-identical for a given seed."""
    if n < 3:
        raise DomainError("need at least 3 nodes")
    if mean_degree % 2 or mean_degree < 2 or mean_degree >= n:
        raise DomainError("mean_degree must be even, >= 2 and < n")
    if not 0.0 <= rewire_prob <= 1.0:
        raise DomainError("rewire_prob must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    for _ in range(CONNECT_RETRIES):
        a = _rewire(n, mean_degree, rewire_prob, rng)
        if is_connected(a):
            return a
    raise GenerationError(f"no connected graph after {CONNECT_RETRIES} attempts")


SCHEDULE_KINDS = ("static", "periodic", "general")


def generate_schedule(
    kind: str,
    n: int,
    segment_spec: Sequence[tuple[float, float]],
    seed,
    mean_degree: int = 4,
    rewire_prob: float = 0.1,
    n_base: int = 2,
) -> TopologySchedule:
    """Build a schedule over ``segment_spec`` intervals.

    static reuses one graph, periodic cycles through ``n_base`` graphs and
    general draws a fresh graph for every interval.
    """
    if kind not in SCHEDULE_KINDS:
        raise DomainError(f"unknown schedule kind {kind!r}")
    intervals = [(float(a), float(b)) for a, b in segment_spec]
    if not intervals:
        raise DomainError("segment_spec is empty")
    if intervals[0][0] != 0.0 or any(intervals[i][1] != intervals[i + 1][0] for i in range(len(intervals) - 1)):
        raise DomainError("segment_spec intervals must be contiguous from 0")
    root = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = root.spawn(len(intervals) if kind == "general" else max(n_base, 1))
    if kind == "static":
        base = generate_small_world(n, mean_degree, rewire_prob, seeds[0])
        mats = [base] * len(intervals)
    elif kind == "periodic":
        if n_base < 1:
            raise DomainError("periodic schedules need n_base >= 1")
        bases = [generate_small_world(n, mean_degree, rewire_prob, s) for s in seeds]
        mats = [bases[i % n_base] for i in range(len(intervals))]
    else:
        mats = [generate_small_world(n, mean_degree, rewire_prob, s) for s in seeds]
    return TopologySchedule.from_intervals(intervals, mats)


def read_edge_list(lines: Iterable[str], n_nodes: int | None = None) -> np.ndarray:
    """Parse "i j" lines (0-based) into a symmetric adjacency matrix."""
    edges = []
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DomainError(f"line {lineno}: expected 'i j', got {raw!r}")
        i, j = int(parts[0]), int(parts[1])
        if i == j or i < 0 or j < 0:
            raise DomainError(f"line {lineno}: invalid edge {i} {j}")
        edges.append((i, j))
    n = n_nodes if n_nodes is not None else (1 + max(max(e) for e in edges) if edges else 0)
    a = np.zeros((n, n), dtype=np.int64)
    for i, j in edges:
        if i >= n or j >= n:
            raise DomainError(f"edge {i} {j} exceeds n_nodes={n}")
        a[i, j] = a[j, i] = 1
    return a


def write_edge_list(adjacency) -> str:
    a = check_adjacency(adjacency)
    rows, cols = np.nonzero(np.triu(a, 1))
    return "".join(f"{i} {j}\n" for i, j in zip(rows, cols))
