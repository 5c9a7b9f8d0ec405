"""Slotted Monte Carlo simulation of the bipolar ALOHA network with LCFS-R buffers.

Within slot t: packets arrive (replacing any buffered one), non-empty links
go active with probability p, every active receiver decodes iff its SINR
exceeds theta, and ages update.

Two engines share these semantics. :func:`step_slot` is the literal
reference: it draws an exponential fade for every active pair and sums the
interference densely. :func:`simulate_topologies` is the production engine.
It uses the fact that, given the active set, Rayleigh fading makes the
decoding events Bernoulli with probability

    exp(-theta d_jj^alpha / rho) * prod_{k active} 1 / (1 + theta (d_jj / d_jk)^alpha)

and realises that product without truncation: interferers within ``R_c`` are
summed exactly through a sparse matrix, and the far field is applied as a
thinned Poisson process of "kill marks" whose acceptance probability makes
each far interferer block the link with exactly its own probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.spatial import cKDTree

from .config import NetworkConfig
from .topology import ALOHA, ARRIVALS, FADING, TOPOLOGY, Topology, sample_topology, substream, torus_distance

FAR_FIELD = 4
CHUNK = 32
UNDEFINED = float("nan")


@dataclass
class LinkStates:
    """Per-link simulation state for a set of links (arrays of equal length).

    ``generation`` is -1 for an empty buffer, otherwise the arrival slot of
    the buffered packet.
    """

    generation: np.ndarray
    age: np.ndarray
    attempts: np.ndarray
    successes: np.ndarray
    active_slots: np.ndarray
    nonempty_slots: np.ndarray
    age_sum: np.ndarray
    measured_slots: int = 0

    @classmethod
    def fresh(cls, n: int) -> "LinkStates":
        z = lambda: np.zeros(n, dtype=np.int32)
        return cls(np.full(n, -1, dtype=np.int32), np.ones(n, dtype=np.int32),
                   z(), z(), z(), z(), np.zeros(n, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.age)

    def advance(self, t: int, arrivals, active, success, measure: bool = True,
                check: bool = True) -> None:
        """Apply one slot's outcome; ``active`` and ``success`` are boolean masks."""
        gen = np.where(arrivals, t, self.generation)
        nonempty = gen >= 0
        if check:
            if np.any(active & ~nonempty):
                raise ValueError("an empty link cannot be active")
            if np.any(success & ~active):
                raise ValueError("only active links can deliver")
        self.age = np.where(success, t - gen + 1, self.age + 1)
        self.generation = np.where(success, -1, gen)
        if measure:
            self.attempts += active
            self.successes += success
            self.active_slots += active
            self.nonempty_slots += nonempty
            self.age_sum += self.age
            self.measured_slots += 1


def empirical_active_fraction(state: LinkStates):
    if state.measured_slots <= 0:
        raise ValueError("no measured slots")
    return state.active_slots / state.measured_slots


def empirical_success_prob(state: LinkStates):
    """successes / attempts; NaN (the undefined marker) where a link never transmitted."""
    attempts = np.asarray(state.attempts)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(attempts > 0, state.successes / np.maximum(attempts, 1), UNDEFINED)


def step_slot(topology: Topology, states: LinkStates, cfg: NetworkConfig,
              rng: np.random.Generator, t: int, fades=None, measure: bool = True) -> LinkStates:
    """Reference slot update with explicit fades and a dense SINR evaluation.

    ``fades`` (test hook) replaces the random fades: an (N, N) array whose
    entry [j, k] is the gain from transmitter k to receiver j.
    """
    n = len(topology)
    arrivals = rng.random(n) < cfg.xi
    nonempty = (states.generation >= 0) | arrivals
    active = nonempty & (rng.random(n) < cfg.p)
    success = np.zeros(n, dtype=bool)
    idx = np.flatnonzero(active)
    if idx.size:
        d = topology.cross_distances(idx)[:, idx]
        H = rng.exponential(1.0, size=d.shape) if fades is None else np.asarray(fades)[np.ix_(idx, idx)]
        gain = H * d ** (-cfg.alpha)
        signal = np.diag(gain).copy()
        interference = gain.sum(axis=1) - signal
        sinr = cfg.p_tx * signal / (cfg.p_tx * interference + cfg.noise)
        success[idx] = sinr > cfg.theta
    states.advance(t, arrivals, active, success, measure)
    return states


@dataclass
class SimReport:
    avg_aoi: np.ndarray
    emp_success_prob: np.ndarray
    emp_active_prob: np.ndarray
    nonempty_fraction: np.ndarray
    attempts: np.ndarray
    topology_index: np.ndarray
    network_avg_aoi: float
    network_avg_aoi_stderr: float
    slots_simulated: int
    topology_count: int
    empty_topologies: int = 0
    flags: list = field(default_factory=list)
    lifetimes: np.ndarray | None = None

    @property
    def per_link(self):
        return list(zip(self.avg_aoi.tolist(), self.emp_success_prob.tolist(),
                        self.emp_active_prob.tolist()))


def _far_radius(cfg: NetworkConfig, n_per_topology: float, r_max: float) -> float:
    """Near-field radius balancing sparse-matrix work against far-field marks."""
    radii = np.geomspace(max(2 * r_max, 0.5), cfg.window / 2, 200)
    near = cfg.lambda_ * math.pi * radii ** 2
    marks = 80.0 * np.log1p(cfg.theta * (r_max / radii) ** cfg.alpha) * cfg.p * max(n_per_topology, 1.0)
    return float(radii[np.argmin(near + marks)])


class _Batch:
    """Several independent topologies simulated side by side."""

    def __init__(self, topologies, cfg: NetworkConfig, seed: int, offset: int, xi, p,
                 radius: float | None = None):
        self.cfg = cfg
        self.sizes = np.array([len(tp) for tp in topologies], dtype=np.int64)
        self.starts = np.concatenate([[0], np.cumsum(self.sizes)])
        self.n = int(self.starts[-1])
        self.window = topologies[0].window if topologies else cfg.window
        self.tx = np.concatenate([tp.tx for tp in topologies]) if self.n else np.zeros((0, 2))
        self.rx = np.concatenate([tp.rx for tp in topologies]) if self.n else np.zeros((0, 2))
        self.length = torus_distance(self.tx, self.rx, self.window)
        self.topo_of = np.repeat(np.arange(len(topologies)), self.sizes)
        self.xi = np.broadcast_to(np.asarray(cfg.xi if xi is None else xi, dtype=float), (self.n,))
        self.p = np.broadcast_to(np.asarray(cfg.p if p is None else p, dtype=float), (self.n,))
        self.noise_exp = cfg.theta * self.length ** cfg.alpha / cfg.rho
        r_max = float(self.length.max()) if self.n else cfg.r
        mean_n = self.n / max(len(topologies), 1)
        self.radius = _far_radius(cfg, mean_n, r_max) if radius is None else float(radius)
        self.wbar = math.log1p(cfg.theta * (r_max / self.radius) ** cfg.alpha)
        self.near = self._near_matrix(topologies)
        self.streams = [{purpose: substream(seed, offset + i, purpose)
                         for purpose in (ARRIVALS, ALOHA, FADING, FAR_FIELD)}
                        for i in range(len(topologies))]

    def _near_matrix(self, topologies):
        rows, cols, vals = [], [], []
        for i, tp in enumerate(topologies):
            if len(tp) < 2:
                continue
            box = tp.window
            rx_tree = cKDTree(tp.rx, boxsize=box)
            tx_tree = cKDTree(tp.tx, boxsize=box)
            rec = rx_tree.sparse_distance_matrix(tx_tree, self.radius, output_type="ndarray")
            keep = rec["i"] != rec["j"]
            j = rec["i"][keep] + self.starts[i]
            k = rec["j"][keep] + self.starts[i]
            d = torus_distance(self.rx[j], self.tx[k], self.window)
            rows.append(j)
            cols.append(k)
            vals.append(np.log1p(self.cfg.theta * (self.length[j] / d) ** self.cfg.alpha))
        if not rows:
            return sparse.csr_matrix((self.n, self.n))
        return sparse.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                                 shape=(self.n, self.n))

    def draws(self, purpose: int, count: int) -> np.ndarray:
        """(count, n) uniforms, each topology's columns from its own substream."""
        if not self.n:
            return np.zeros((count, 0))
        return np.concatenate([s[purpose].random((count, size))
                               for s, size in zip(self.streams, self.sizes)], axis=1)

    def far_kills(self, active: np.ndarray) -> np.ndarray:
        killed = np.zeros(self.n, dtype=bool)
        if self.wbar <= 0:
            return killed
        act = np.flatnonzero(active)
        bounds = np.searchsorted(act, self.starts)
        js, ks, us = [], [], []
        for i, s in enumerate(self.streams):
            a = act[bounds[i]:bounds[i + 1]]
            if a.size < 2:
                continue
            rng = s[FAR_FIELD]
            m = rng.poisson(self.wbar * a.size * a.size)
            if m == 0:
                continue
            js.append(a[rng.integers(0, a.size, m)])
            ks.append(a[rng.integers(0, a.size, m)])
            us.append(rng.random(m))
        if not js:
            return killed
        j, k, u = np.concatenate(js), np.concatenate(ks), np.concatenate(us)
        d = torus_distance(self.rx[j], self.tx[k], self.window)
        far = (j != k) & (d > self.radius)
        w = np.log1p(self.cfg.theta * (self.length[j[far]] / d[far]) ** self.cfg.alpha)
        killed[j[far][u[far] * self.wbar < w]] = True
        return killed


def simulate_topologies(topologies, cfg: NetworkConfig, seed: int | None = None,
                        warmup_slots: int | None = None, measure_slots: int | None = None,
                        realization_offset: int = 0, xi=None, p=None,
                        record_lifetimes: bool = False, radius: float | None = None) -> SimReport:
    """Run the fast engine on given topologies (also the fixed-topology test hook).

    ``xi`` and ``p`` may be per-link arrays. With ``record_lifetimes`` the
    report carries, for every packet that left the buffer during measurement,
    its time in the system: slots until delivery (inclusive) or until the
    slot of the arrival that replaced it.
    """
    seed = cfg.seed if seed is None else seed
    warmup = cfg.warmup_slots if warmup_slots is None else warmup_slots
    measure = cfg.measure_slots if measure_slots is None else measure_slots
    if measure < 1:
        raise ValueError("measure_slots must be at least 1")
    batch = _Batch(list(topologies), cfg, seed, realization_offset, xi, p, radius)
    states = LinkStates.fresh(batch.n)
    lifetimes = []
    total = warmup + measure
    t = 0
    while t < total:
        count = min(CHUNK, total - t)
        u_arr = batch.draws(ARRIVALS, count)
        u_alo = batch.draws(ALOHA, count)
        u_fad = batch.draws(FADING, count)
        for row in range(count):
            arrivals = u_arr[row] < batch.xi
            measuring = t >= warmup
            if record_lifetimes and measuring:
                replaced = arrivals & (states.generation >= 0)
                lifetimes.append(t - states.generation[replaced])
            nonempty = (states.generation >= 0) | arrivals
            active = nonempty & (u_alo[row] < batch.p)
            expo = batch.noise_exp + batch.near @ active.astype(float)
            success = active & (u_fad[row] < np.exp(-expo)) & ~batch.far_kills(active)
            if record_lifetimes and measuring:
                gen = np.where(arrivals, t, states.generation)
                lifetimes.append(t - gen[success] + 1)
            states.advance(t, arrivals, active, success, measuring, check=False)
            t += 1
    return _report(states, batch, measure, total, len(batch.sizes),
                   np.concatenate(lifetimes) if record_lifetimes else None)


def _report(states: LinkStates, batch: _Batch, measure: int, total: int, count: int,
            lifetimes) -> SimReport:
    avg = states.age_sum / measure
    sizes = batch.sizes
    flags = []
    empty = int(np.sum(sizes == 0))
    if empty:
        flags.append("empty_topology")
    per_topo = np.array([avg[batch.starts[i]:batch.starts[i + 1]].mean()
                         for i in range(count) if sizes[i] > 0])
    network = float(avg.mean()) if batch.n else UNDEFINED
    stderr = float(per_topo.std(ddof=1) / math.sqrt(per_topo.size)) if per_topo.size > 1 else UNDEFINED
    return SimReport(avg, empirical_success_prob(states), empirical_active_fraction(states),
                     states.nonempty_slots / measure, states.attempts.copy(), batch.topo_of,
                     network, stderr, total, count, empty, flags, lifetimes)


def sample_topologies(cfg: NetworkConfig, topology_count: int, seed: int | None = None):
    seed = cfg.seed if seed is None else seed
    return [sample_topology(cfg, substream(seed, i, TOPOLOGY)) for i in range(topology_count)]


def run_simulation(cfg: NetworkConfig, topology_count: int = 1, rng=None) -> SimReport:
    """Sample ``topology_count`` topologies and simulate them.

    ``rng`` may be an integer seed (default ``cfg.seed``) or a Generator, from
    which a seed is drawn. Topology i and its dynamics use substreams keyed by
    (seed, i), so sweeps over xi or p reuse the same topologies and uniforms.
    """
    if topology_count < 1:
        raise ValueError("topology_count must be at least 1")
    if isinstance(rng, np.random.Generator):
        seed = int(rng.integers(0, 2 ** 63))
    else:
        seed = cfg.seed if rng is None else int(rng)
    return simulate_topologies(sample_topologies(cfg, topology_count, seed), cfg, seed)
