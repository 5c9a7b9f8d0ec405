"""Per-topology mean-field solver.

Queues at different links are treated as independent, so each link is a
Geo/Geo/1/2 queue with replacement whose service rate ``p * mu_j`` depends on
the activity of every other link. The coupled system

    mu_j = exp(-theta r^alpha / rho) * prod_{k != j} (1 - a_k g_jk)
    a_k  = p xi / (xi + (1 - xi) p mu_k)

is solved by Jacobi-style Picard iteration.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .config import NetworkConfig
from .errors import ConvergenceError
from .topology import Topology


def _check_unit(name, x, allow_zero=False):
    x = np.asarray(x, dtype=float)
    lo_ok = x >= 0 if allow_zero else x > 0
    if not np.all(lo_ok & (x <= 1)):
        bracket = "[0,1]" if allow_zero else "(0,1]"
        raise ValueError(f"{name} out of {bracket}")
    return x


def active_prob(xi, p, mu):
    """Stationary probability that a link transmits in a slot."""
    xi, p, mu = (_check_unit(n, v) for n, v in (("xi", xi), ("p", p), ("mu", mu)))
    out = p * xi / (xi + (1 - xi) * p * mu)
    return out if out.ndim else float(out)


def conditional_aoi(xi, p, mu):
    """Average AoI of a link with per-attempt success probability ``mu``."""
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0):
        raise ValueError("mu must be positive: AoI is unbounded at mu = 0")
    xi, p, mu = (_check_unit(n, v) for n, v in (("xi", xi), ("p", p), ("mu", mu)))
    out = 1 / xi + 1 / (p * mu) - 1
    return out if out.ndim else float(out)


def interference_factors(topology: Topology, cfg: NetworkConfig, rows=slice(None)) -> np.ndarray:
    """g[j, k] = 1 / (1 + d_kj^alpha / (theta r^alpha)); zero on the diagonal.

    ``1 - a_k g[j, k]`` is the probability that transmitter k does not cause
    an outage at receiver j under Rayleigh fading.
    """
    d = topology.cross_distances(rows)
    with np.errstate(over="ignore"):
        g = 1.0 / (1.0 + (d / cfg.r) ** cfg.alpha / cfg.theta)
    idx = np.arange(len(topology))[rows]
    g[np.arange(len(idx)), idx] = 0.0
    return g


def success_prob_given_activity(topology: Topology, j: int, a, cfg: NetworkConfig) -> float:
    """Success probability of link j when link k is active with probability ``a[k]``."""
    a = _check_unit("a", a, allow_zero=True)
    g = interference_factors(topology, cfg, rows=slice(j, j + 1))[0]
    return float(np.exp(-cfg.noise_exponent + np.sum(np.log1p(-a * g))))


def success_probs(g: np.ndarray, a: np.ndarray, cfg: NetworkConfig) -> np.ndarray:
    """Vector form of success_prob_given_activity for a precomputed factor matrix."""
    return np.exp(-cfg.noise_exponent + np.log1p(-g * a[None, :]).sum(axis=1))


@dataclass
class MeanFieldSolution:
    mu: np.ndarray
    a: np.ndarray
    cond_aoi: np.ndarray
    iterations: int
    residual: float
    residual_history: list = field(default_factory=list)
    damped: bool = False

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["link_id", "mu", "a", "cond_aoi"])
            for i, row in enumerate(zip(self.mu, self.a, self.cond_aoi)):
                w.writerow([i, *(repr(float(v)) for v in row)])


def solve_fixed_point(topology: Topology, cfg: NetworkConfig, tol: float = 1e-6,
                      max_iter: int = 200, damping: float | None = None,
                      g: np.ndarray | None = None) -> MeanFieldSolution:
    """Picard iteration on the per-link success probabilities.

    Starts from the interference-free bound ``exp(-theta r^alpha / rho)``.
    Damping 0.5 switches on automatically when the residual fails to reach a
    new minimum for 10 consecutive iterations. Raises ConvergenceError after
    ``max_iter`` iterations.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    n = len(topology)
    if g is None:
        g = interference_factors(topology, cfg)
    mu = np.full(n, cfg.mu_max)
    history = []
    best, since_best = np.inf, 0
    beta = damping
    for it in range(1, max_iter + 1):
        a = cfg.p * cfg.xi / (cfg.xi + (1 - cfg.xi) * cfg.p * mu)
        new = success_probs(g, a, cfg) if n else mu
        if beta:
            new = beta * mu + (1 - beta) * new
        res = float(np.max(np.abs(new - mu))) if n else 0.0
        history.append(res)
        mu = new
        if res < tol:
            a = cfg.p * cfg.xi / (cfg.xi + (1 - cfg.xi) * cfg.p * mu)
            return MeanFieldSolution(mu, a, 1 / cfg.xi + 1 / (cfg.p * mu) - 1, it, res,
                                     history, bool(beta))
        if res < best:
            best, since_best = res, 0
        else:
            since_best += 1
        if beta is None and since_best >= 10:
            beta = 0.5
    raise ConvergenceError(f"mean-field iteration did not converge in {max_iter} iterations",
                           history[-1], history)
