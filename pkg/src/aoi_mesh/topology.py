"""Poisson bipolar topologies on a square torus."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import NetworkConfig

# spawn-key slots for the per-purpose substreams of one realization
TOPOLOGY, ARRIVALS, ALOHA, FADING = range(4)


def substream(seed: int, realization: int, purpose: int) -> np.random.Generator:
    """Independent generator for one (realization, purpose) pair of a master seed."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(realization, purpose))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True, eq=False)
class Topology:
    """Transmitter/receiver positions, shape (N, 2) each, on an L x L torus."""

    tx: np.ndarray
    rx: np.ndarray
    window: float

    def __post_init__(self):
        for a in (self.tx, self.rx):
            a.setflags(write=False)

    def __len__(self) -> int:
        return len(self.tx)

    @classmethod
    def from_points(cls, tx, rx, window: float) -> "Topology":
        tx = _wrap(np.asarray(tx, dtype=float).reshape(-1, 2), window)
        rx = _wrap(np.asarray(rx, dtype=float).reshape(-1, 2), window)
        return cls(tx, rx, float(window))

    def permuted(self, order) -> "Topology":
        order = np.asarray(order)
        return Topology(self.tx[order].copy(), self.rx[order].copy(), self.window)

    def cross_distances(self, rows=slice(None)) -> np.ndarray:
        """d[j, k] = torus distance from transmitter k to receiver j, for receivers ``rows``."""
        return torus_distance(self.rx[rows, None, :], self.tx[None, :, :], self.window)

    def link_lengths(self) -> np.ndarray:
        return torus_distance(self.tx, self.rx, self.window)


def _wrap(x, window: float) -> np.ndarray:
    x = np.mod(x, window)
    # np.mod rounds tiny negatives up to exactly ``window``
    return np.where(x >= window, 0.0, x)


def torus_distance(a, b, window: float) -> np.ndarray:
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    d = np.minimum(d, window - d)
    return np.hypot(d[..., 0], d[..., 1])


def sample_topology(cfg: NetworkConfig, rng: np.random.Generator) -> Topology:
    """Poisson(lambda L^2) transmitters, each with a receiver at distance r, uniform bearing."""
    L = cfg.window
    n = rng.poisson(cfg.lambda_ * L * L)
    tx = rng.uniform(0.0, L, size=(n, 2))
    phi = rng.uniform(0.0, 2.0 * np.pi, size=n)
    rx = tx + cfg.r * np.column_stack((np.cos(phi), np.sin(phi)))
    return Topology(tx, _wrap(rx, L), L)


def single_link(cfg: NetworkConfig) -> Topology:
    """One isolated dipole; test hook for the no-interference regime."""
    c = cfg.window / 2
    return Topology.from_points([[c, c]], [[c + cfg.r, c]], cfg.window)


def isolated_links(cfg: NetworkConfig, count: int, spacing: float = 1e4) -> Topology:
    """``count`` dipoles on a square lattice ``spacing`` apart; test hook for
    independent copies of an interference-free link."""
    side = int(np.ceil(np.sqrt(count)))
    ij = np.array([(i, j) for i in range(side) for j in range(side)][:count], dtype=float)
    tx = (ij + 0.5) * spacing
    return Topology.from_points(tx, tx + [cfg.r, 0.0], side * spacing)
