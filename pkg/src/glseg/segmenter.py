"""Multiclass Ginzburg-Landau segmentation on a neighbor graph.

The energy of a state ``u`` over graph vertices is

    E(u) = eps/2 * sum_i sum_j w^_ij rho(u_i, u_j)^2
         + 1/(2 eps) * sum_i {u_i}^2 ({u_i} - 1)^2
         + sum_i lambda_i/2 * (u_i - u0_i)^2

with ``w^_ij = w_ij / sqrt(d_i d_j)`` and the double sum running over
ordered pairs. It is minimized by explicit gradient steps. When a step moves
a vertex across a class boundary, the vertex keeps the fractional part of
the step but its integer part is re-chosen greedily to minimize its local
smoothing cost.

Every sweep reads the previous state only and writes a fresh buffer, so
the result does not depend on vertex order or on how vertices are split
across worker threads.
"""

from __future__ import annotations

import logging
import math
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import potential as pot
from .errors import ConfigurationError, DivergenceError
from .graph import NeighborGraph

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FixedEps:
    eps: float = 1.0

    def validate(self) -> None:
        if not self.eps > 0:
            raise ConfigurationError(f"eps must be positive, got {self.eps}")


@dataclass(frozen=True)
class AnnealedEps:
    """Geometric eps schedule.

    ``sweeps_per_stage`` sweeps are run at each eps, after which eps is
    multiplied by ``1 - decrement``. The stage whose eps first reaches
    ``eps_final`` or below is the last one run.
    """

    eps0: float = 2.0
    eps_final: float = 0.1
    decrement: float = 0.1
    sweeps_per_stage: int = 40

    def validate(self) -> None:
        if not (self.eps0 > 0 and self.eps_final > 0):
            raise ConfigurationError("eps values must be positive")
        if not self.eps0 > self.eps_final:
            raise ConfigurationError("eps0 must exceed eps_final")
        if not 0 < self.decrement < 1:
            raise ConfigurationError(f"decrement must lie in (0, 1), got {self.decrement}")
        if self.sweeps_per_stage < 1:
            raise ConfigurationError("sweeps_per_stage must be positive")

    def stages(self) -> list[float]:
        out = []
        eps = self.eps0
        while True:
            out.append(eps)
            if eps <= self.eps_final:
                return out
            eps = eps * (1.0 - self.decrement)


@dataclass(frozen=True)
class SolverConfig:
    n_classes: int
    dt: float = 0.01
    m_max: int = 800
    schedule: FixedEps | AnnealedEps = field(default_factory=FixedEps)
    seed: int = 0
    # start labeled vertices at their class value instead of a random draw
    init_fidelity: bool = True

    def validate(self) -> None:
        if self.n_classes < 2:
            raise ConfigurationError(f"need at least 2 classes, got {self.n_classes}")
        if not self.dt > 0:
            raise ConfigurationError(f"dt must be positive, got {self.dt}")
        if self.m_max < 0:
            raise ConfigurationError(f"m_max must be nonnegative, got {self.m_max}")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        self.schedule.validate()

    def eps_per_sweep(self) -> np.ndarray:
        """The eps in force at every sweep; its length is the sweep count."""
        s = self.schedule
        if isinstance(s, FixedEps):
            return np.full(self.m_max, s.eps)
        return np.repeat(np.asarray(s.stages()), s.sweeps_per_stage)


@dataclass(frozen=True, eq=False)
class FidelityData:
    """Known labels: vertex indices, their classes and a uniform weight ``lam``."""

    indices: np.ndarray
    labels: np.ndarray
    lam: float = 30.0

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        lab = np.asarray(self.labels, dtype=np.int64)
        if idx.shape != lab.shape or idx.ndim != 1:
            raise ConfigurationError("fidelity indices and labels must be 1-D and equal length")
        if np.unique(idx).size != idx.size:
            raise ConfigurationError("duplicate fidelity index")
        if idx.size and not self.lam > 0:
            raise ConfigurationError(f"fidelity weight must be positive, got {self.lam}")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "labels", lab)

    @classmethod
    def empty(cls) -> "FidelityData":
        return cls(np.zeros(0, np.int64), np.zeros(0, np.int64), 1.0)

    @classmethod
    def from_mapping(cls, mapping: dict[int, int], lam: float = 30.0) -> "FidelityData":
        items = sorted(mapping.items())
        return cls(np.array([i for i, _ in items], np.int64), np.array([k for _, k in items], np.int64), lam)

    def __len__(self) -> int:
        return self.indices.size

    def validate(self, n: int, n_classes: int) -> None:
        if self.indices.size and (self.indices.min() < 0 or self.indices.max() >= n):
            raise ConfigurationError("fidelity index out of range")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= n_classes):
            raise ConfigurationError("fidelity label outside [0, K-1]")

    def weights(self, n: int) -> np.ndarray:
        lam = np.zeros(n)
        lam[self.indices] = self.lam
        return lam

    def targets(self, n: int) -> np.ndarray:
        u0 = np.zeros(n)
        u0[self.indices] = self.labels
        return u0


@dataclass(frozen=True)
class EnergyBreakdown:
    smoothing: float
    potential: float
    fidelity: float

    @property
    def total(self) -> float:
        return self.smoothing + self.potential + self.fidelity


@dataclass
class SegmentationResult:
    final_state: np.ndarray
    labels: np.ndarray
    energy_trace: list[EnergyBreakdown]
    eps_trace: np.ndarray
    iterations_run: int
    wall_time: float
    warnings: list[str] = field(default_factory=list)


# ---------------------------------------------------------------------------
# energy and gradient
# ---------------------------------------------------------------------------


def initialize(n: int, n_classes: int, seed: int = 0) -> np.ndarray:
    """Independent uniform draws on ``(0, K)`` shifted down by one half."""
    if n < 1:
        raise ConfigurationError("need at least one vertex")
    rng = np.random.default_rng(seed)
    u = rng.uniform(0.0, n_classes, size=n)
    # uniform() samples [0, K); the open interval excludes the endpoint 0
    while np.any(u == 0.0):
        u[u == 0.0] = rng.uniform(0.0, n_classes, size=int(np.sum(u == 0.0)))
    return u - 0.5


def energy(u, graph: NeighborGraph, fid: FidelityData, eps: float) -> EnergyBreakdown:
    u = np.asarray(u, dtype=np.float64)
    rh = pot.rhat(u)
    lab = pot.label_of(u)
    i, j = graph.rows, graph.indices
    r = pot.rho_from_parts(rh[i], rh[j], lab[i] == lab[j])
    smoothing = 0.5 * eps * float(np.sum(graph.normalized * r * r))
    potential = float(np.sum(pot.well(u))) / eps
    fidelity = 0.5 * fid.lam * float(np.sum((u[fid.indices] - fid.labels) ** 2)) if len(fid) else 0.0
    return EnergyBreakdown(smoothing, potential, fidelity)


class _SweepState:
    """Per-sweep quantities shared by all vertex blocks (read-only)."""

    def __init__(self, u: np.ndarray, lam: np.ndarray, u0: np.ndarray):
        self.u = u
        self.rh = pot.rhat(u)
        self.rd = pot.rhat_deriv(u)
        self.lab = pot.label_of(u)
        self.lam = lam
        self.u0 = u0


def _smoothing_sum(graph: NeighborGraph, st: _SweepState, lo: int, hi: int) -> np.ndarray:
    """sum_j w^_ij (rhat_i +/- rhat_j) over neighbors, for vertices lo..hi-1."""
    a, b = graph.indptr[lo], graph.indptr[hi]
    i = graph.rows[a:b]
    j = graph.indices[a:b]
    sign = np.where(st.lab[i] != st.lab[j], 1.0, -1.0)
    terms = graph.normalized[a:b] * (st.rh[i] + sign * st.rh[j])
    return np.bincount(i - lo, weights=terms, minlength=hi - lo)


def _gradient_block(graph: NeighborGraph, st: _SweepState, eps: float, lo: int, hi: int) -> np.ndarray:
    G = _smoothing_sum(graph, st, lo, hi) * st.rd[lo:hi]
    u = st.u[lo:hi]
    # d/du_i of the ordered double sum picks up both (i, j) and (j, i)
    return 2.0 * eps * G + pot.well_deriv(u) / eps + st.lam[lo:hi] * (u - st.u0[lo:hi])


def gradient(u, graph: NeighborGraph, fid: FidelityData, eps: float) -> np.ndarray:
    """Full energy gradient at ``u`` (exact wherever the energy is differentiable)."""
    u = np.asarray(u, dtype=np.float64)
    st = _SweepState(u, fid.weights(u.size), fid.targets(u.size))
    return _gradient_block(graph, st, eps, 0, u.size)


def gradient_component(i: int, u, graph: NeighborGraph, fid: FidelityData, eps: float) -> float:
    """Energy gradient with respect to vertex ``i`` alone."""
    u = np.asarray(u, dtype=np.float64)
    nb = slice(graph.indptr[i], graph.indptr[i + 1])
    j = graph.indices[nb]
    rh_i, rh_j = pot.rhat(u[i]), pot.rhat(u[j])
    sign = np.where(pot.label_of(u[j]) != pot.label_of(u[i]), 1.0, -1.0)
    G = float(np.sum(graph.normalized[nb] * (rh_i + sign * rh_j))) * pot.rhat_deriv(u[i])
    lam = fid.weights(u.size)[i]
    u0 = fid.targets(u.size)[i]
    return float(2.0 * eps * G + pot.well_deriv(u[i]) / eps + lam * (u[i] - u0))


# ---------------------------------------------------------------------------
# greedy class reassignment
# ---------------------------------------------------------------------------


def _candidate_costs(
    graph: NeighborGraph, u: np.ndarray, vertices: np.ndarray, fracs: np.ndarray, n_classes: int
) -> np.ndarray:
    """Local smoothing cost of ``k + frac`` for each listed vertex and each k.

    Returns an array of shape ``(len(vertices), n_classes)``.
    """
    start = graph.indptr[vertices]
    count = graph.indptr[vertices + 1] - start
    owner = np.repeat(np.arange(vertices.size), count)
    offsets = np.arange(count.sum()) - np.repeat(np.cumsum(count) - count, count)
    e = np.repeat(start, count) + offsets
    j = graph.indices[e]
    w = graph.normalized[e]
    rh_j = pot.rhat(u[j])
    lab_j = pot.label_of(u[j])

    costs = np.empty((vertices.size, n_classes))
    for k in range(n_classes):
        v = (k + fracs)[owner]
        r = pot.rho_from_parts(pot.rhat(v), rh_j, pot.label_of(v) == lab_j)
        costs[:, k] = np.bincount(owner, weights=w * r * r, minlength=vertices.size)
    return costs


def greedy_reassign(i: int, u_new_frac: float, u, graph: NeighborGraph, n_classes: int) -> float:
    """New state ``k + u_new_frac`` for vertex ``i`` with the cheapest smoothing cost.

    Ties go to the smallest ``k``.
    """
    u = np.asarray(u, dtype=np.float64)
    costs = _candidate_costs(graph, u, np.array([i]), np.array([u_new_frac]), n_classes)
    return float(int(np.argmin(costs[0])) + u_new_frac)


# ---------------------------------------------------------------------------
# iteration
# ---------------------------------------------------------------------------


def _sweep_block(graph, st: _SweepState, cfg: SolverConfig, eps: float, lo: int, hi: int) -> np.ndarray:
    u = st.u[lo:hi]
    proposed = u - cfg.dt * _gradient_block(graph, st, eps, lo, hi)
    changed = np.flatnonzero(pot.label_of(proposed) != st.lab[lo:hi])
    if changed.size:
        f = pot.frac(proposed[changed])
        costs = _candidate_costs(graph, st.u, changed + lo, np.atleast_1d(f), cfg.n_classes)
        proposed[changed] = np.argmin(costs, axis=1) + f
    return proposed


def _blocks(n: int, workers: int) -> list[tuple[int, int]]:
    edges = np.linspace(0, n, max(1, min(workers, n)) + 1).astype(int)
    return [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def sweep(
    u,
    graph: NeighborGraph,
    fid: FidelityData,
    cfg: SolverConfig,
    eps: float,
    *,
    iteration: int = 0,
    executor: ThreadPoolExecutor | None = None,
    workers: int = 1,
    _lam: np.ndarray | None = None,
    _u0: np.ndarray | None = None,
) -> np.ndarray:
    """One gradient sweep over every vertex; returns the new state.

    Raises :class:`DivergenceError` if any new value is non-finite.
    """
    u = np.asarray(u, dtype=np.float64)
    n = u.size
    lam = fid.weights(n) if _lam is None else _lam
    u0 = fid.targets(n) if _u0 is None else _u0
    st = _SweepState(u, lam, u0)
    blocks = _blocks(n, workers)
    # overflow is reported below as a DivergenceError
    with np.errstate(over="ignore", invalid="ignore"):
        if executor is None or len(blocks) == 1:
            parts = [_sweep_block(graph, st, cfg, eps, lo, hi) for lo, hi in blocks]
        else:
            parts = list(executor.map(lambda b: _sweep_block(graph, st, cfg, eps, *b), blocks))
    new = np.concatenate(parts)
    bad = np.flatnonzero(~np.isfinite(new))
    if bad.size:
        raise DivergenceError(iteration, bad[0])
    return new


def run(
    graph: NeighborGraph,
    fid: FidelityData,
    cfg: SolverConfig,
    *,
    workers: int = 1,
    record_energy: bool = True,
    initial_state: np.ndarray | None = None,
) -> SegmentationResult:
    """Minimize the energy from a random start for the configured number of sweeps.

    There is no early stopping: the sweep budget (``m_max``, or the
    annealing schedule) is always spent in full.
    """
    cfg.validate()
    n = graph.n
    fid.validate(n, cfg.n_classes)
    notes = []
    if len(fid) == 0:
        notes.append("no fidelity points: labels drift without supervision")
    else:
        missing = sorted(set(range(cfg.n_classes)) - set(fid.labels.tolist()))
        if missing:
            notes.append(f"classes without fidelity points: {missing}")
    for msg in notes:
        warnings.warn(msg, stacklevel=2)

    t0 = time.perf_counter()
    if initial_state is None:
        u = initialize(n, cfg.n_classes, cfg.seed)
        if cfg.init_fidelity:
            # greedy reassignment ignores the fidelity term, so a labeled vertex
            # that starts inside another class's domain can stay there for good
            u[fid.indices] = fid.labels
    else:
        u = np.array(initial_state, dtype=np.float64)
    eps_seq = cfg.eps_per_sweep()
    lam, u0 = fid.weights(n), fid.targets(n)
    trace: list[EnergyBreakdown] = []

    executor = ThreadPoolExecutor(max_workers=workers) if workers > 1 else None
    try:
        for m, eps in enumerate(eps_seq):
            u = sweep(u, graph, fid, cfg, float(eps), iteration=m + 1,
                      executor=executor, workers=workers, _lam=lam, _u0=u0)
            if record_energy:
                e = energy(u, graph, fid, float(eps))
                if not math.isfinite(e.total):
                    raise DivergenceError(m + 1, int(np.argmax(~np.isfinite(u))))
                trace.append(e)
    finally:
        if executor is not None:
            executor.shutdown()

    wall = time.perf_counter() - t0
    logger.debug("ran %d sweeps on %d vertices in %.3fs", eps_seq.size, n, wall)
    return SegmentationResult(
        final_state=u,
        labels=pot.clamp_labels(pot.label_of(u), cfg.n_classes),
        energy_trace=trace,
        eps_trace=eps_seq,
        iterations_run=int(eps_seq.size),
        wall_time=wall,
        warnings=notes,
    )
