"""Distribution of the conditional success probability and the network average AoI.

The CDF F of a typical link's success probability solves a fixed-point
equation: F determines how active the interferers are, which determines the
moment generating function of ``log mu``, which Gil-Pelaez inversion turns
back into F. :func:`picard_solve` iterates that map on a grid.

Inversion detail: the characteristic function of ``log mu`` decays only like
``exp(-kappa omega^delta)``, far too slowly to truncate at any practical
omega. We subtract the one-sided stable law with the same large-omega
behaviour, whose CDF is available through Kanter's integral, and invert only
the (rapidly vanishing) remainder numerically.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import expit

from .config import NetworkConfig
from .errors import ConvergenceError, DivergenceError
from .kernels import ck_table, interference_exponent, inverse_moment_exponent, series_exponent

T_MIN = 1e-4
OMEGA_MAX = 200.0
TRUNCATION_K = 30
FLAG_MASS = 0.01
REFUSE_MASS = 0.1


class TruncationWarning(RuntimeWarning):
    pass


def interference_scale(cfg: NetworkConfig) -> float:
    """lambda pi r^2 theta^delta, the mean number of interferers in the outage disk."""
    return cfg.lambda_ * math.pi * cfg.r ** 2 * cfg.theta ** cfg.delta


def activity_ratio(cfg: NetworkConfig, t):
    """Activity of an interferer whose own success probability is ``t``."""
    t = np.asarray(t, dtype=float)
    return cfg.p * cfg.xi / (cfg.xi + (1 - cfg.xi) * cfg.p * t)


def success_grid(cfg: NetworkConfig, t_min: float = T_MIN, c_min: float = 1e-10,
                 ratio: float = 1.15, step: float = 0.1) -> np.ndarray:
    """Grid on [t_min, 1] that is geometric in log(mu_max / t) close to mu_max.

    Near mu_max the CDF rises steeply at low density, so spacing shrinks to a
    relative 1e-10 there; below it is uniform in log t with spacing ``step``.
    """
    mu_max = cfg.mu_max
    if mu_max <= t_min:
        raise ValueError("noise-only success probability is below the grid floor")
    c_max = math.log(mu_max / t_min)
    cs = [c_min]
    while cs[-1] * (ratio - 1) < step and cs[-1] < c_max:
        cs.append(cs[-1] * ratio)
    cs = np.concatenate([cs, np.arange(cs[-1] + step, c_max, step), [c_max]])
    cs = cs[cs <= c_max]
    t = np.sort(mu_max * np.exp(-cs))
    tail = [mu_max] + ([1.0] if mu_max < 1.0 else [])
    return np.unique(np.concatenate([t, tail]))


@dataclass
class SuccessCdf:
    """Left-continuous CDF F(t) = P(mu < t) sampled on ``grid``.

    Mass below grid[0] is lumped at grid[0]; each increment between grid
    points is placed at the cell midpoint.
    """

    grid: np.ndarray
    values: np.ndarray
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    max_violation: float = 0.0
    tail_estimate: float = 0.0

    @property
    def mass_below_grid(self) -> float:
        return float(self.values[0])

    def support(self):
        """Atoms (t, weight) of the discretised distribution."""
        mid = 0.5 * (self.grid[1:] + self.grid[:-1])
        points = np.concatenate([[self.grid[0]], mid])
        weights = np.concatenate([[self.values[0]], np.diff(self.values)])
        return points, weights

    def __call__(self, u):
        return np.interp(u, self.grid, self.values, left=0.0, right=1.0)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t", "F"])
            for t, v in zip(self.grid, self.values):
                w.writerow([repr(float(t)), repr(float(v))])

    @classmethod
    def from_samples(cls, grid, samples) -> "SuccessCdf":
        """Empirical P(mu < t) of sampled success probabilities on ``grid``."""
        grid = np.asarray(grid, dtype=float)
        s = np.sort(np.asarray(samples, dtype=float))
        values = np.searchsorted(s, grid, side="left") / s.size
        values[-1] = 1.0
        return cls(grid, values)

    @classmethod
    def point_mass(cls, grid, at_index: int) -> "SuccessCdf":
        values = np.zeros(len(grid))
        values[at_index:] = 1.0
        return cls(np.asarray(grid, dtype=float), values)


def monotone_projection(values) -> np.ndarray:
    return np.clip(np.maximum.accumulate(np.asarray(values, dtype=float)), 0.0, 1.0)


def _tanh_sinh(a: float, b: float, h: float = 1 / 8, kmax: float = 3.3, floor: float = 1e-30):
    k = np.arange(-int(kmax / h), int(kmax / h) + 1) * h
    u = 0.5 * np.pi * np.sinh(k)
    x = 2 * expit(2 * u)  # 1 + tanh(u), accurate near -1
    w = 0.5 * np.pi * h * np.cosh(k) / np.cosh(u) ** 2
    nodes = a + 0.5 * (b - a) * x
    weights = 0.5 * (b - a) * w
    keep = (nodes > floor) & (nodes < b)
    return nodes[keep], weights[keep]


def omega_rule(omega_max: float = OMEGA_MAX, head: float = 1.0, panel: float = 1.0,
               order: int = 16):
    """Nodes/weights on (0, omega_max]: tanh-sinh on (0, head], Gauss-Legendre panels after.

    The integrand carries an omega^(delta-1) singularity at the origin.
    """
    n0, w0 = _tanh_sinh(0.0, head)
    x, w = leggauss(order)
    edges = np.arange(head, omega_max + 0.5 * panel, panel)
    left = edges[:-1, None]
    width = np.diff(edges)[:, None]
    nodes = (left + 0.5 * width * (x + 1)).ravel()
    weights = (0.5 * width * w).ravel()
    return np.concatenate([n0, nodes]), np.concatenate([w0, weights])


def _kanter_nodes(n: int = 200):
    x, w = leggauss(n)
    return 0.5 * np.pi * (x + 1), 0.5 * w


def stable_reference_cdf(c, kappa: float, delta: float, nodes=None) -> np.ndarray:
    """P(kappa^(1/delta) X > c) for X positive stable with E exp(-s X) = exp(-s^delta).

    Kanter: P(X <= x) = (1/pi) int_0^pi exp(-A(phi) x^(-delta/(1-delta))) dphi.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    out = np.ones_like(c)
    pos = c > 0
    if kappa <= 0:
        out[pos] = 0.0
        return out
    phi, w = nodes if nodes is not None else _kanter_nodes()
    A = ((np.sin(delta * phi) / np.sin(phi)) ** (1 / (1 - delta))
         * np.sin((1 - delta) * phi) / np.sin(delta * phi))
    logz = (math.log(kappa) - delta * np.log(c[pos])) / (1 - delta)
    z = np.exp(np.minimum(logz, 700.0))
    # w already carries the 1/pi normalisation
    out[pos] = -np.expm1(-np.outer(z, A)) @ w
    return np.clip(out, 0.0, 1.0)


class GilPelaezInverter:
    """Maps a discretised success-probability law to F on ``eval_points``.

    Everything that does not depend on the atom weights (activity factors,
    interference exponents on the omega rule, Fourier kernels) is computed once.
    """

    def __init__(self, cfg: NetworkConfig, atoms, eval_points, omega_max: float = OMEGA_MAX):
        self.cfg = cfg
        self.delta = cfg.delta
        self.scale = interference_scale(cfg)
        self.atoms = np.asarray(atoms, dtype=float)
        self.b = activity_ratio(cfg, self.atoms)
        self.b_delta = self.b ** self.delta
        self.omega, self.weights = omega_rule(omega_max)
        self.omega_max = omega_max
        omega_all = np.concatenate([self.omega, [omega_max]])
        if self.scale > 0:
            self.G = interference_exponent(self.b, 1j * omega_all, cfg.alpha)
        else:
            self.G = np.zeros((self.b.size, omega_all.size), dtype=complex)
        self.ref_shape = (1j * omega_all) ** self.delta
        self.eval_points = np.asarray(eval_points, dtype=float)
        self.c = np.log(cfg.mu_max) - np.log(self.eval_points)
        self.inside = self.c > 0
        phase = np.outer(self.c[self.inside], self.omega)
        self.cos = np.cos(phase) * (self.weights / self.omega)
        self.sin = np.sin(phase) * (self.weights / self.omega)
        self.kanter = _kanter_nodes()

    def characteristic(self, weights, omega_index=slice(None)):
        """E[mu^(j omega)] without the deterministic noise phase."""
        expo = weights @ self.G[:, omega_index]
        return np.exp(-self.scale * expo)

    def cdf(self, weights):
        """Raw (unprojected) F at eval_points, and a truncation-tail estimate."""
        weights = np.asarray(weights, dtype=float)
        kappa = self.scale * math.gamma(1 - self.delta) * float(weights @ self.b_delta)
        m = np.exp(-self.scale * (weights @ self.G))
        rem = m - np.exp(-kappa * self.ref_shape)
        rem_nodes, rem_end = rem[:-1], rem[-1]
        out = np.ones(self.eval_points.size)
        c = self.c[self.inside]
        ref = stable_reference_cdf(c, kappa, self.delta, self.kanter)
        # Im{e^{j w c} R} = cos(wc) Im R + sin(wc) Re R
        corr = self.cos @ rem_nodes.imag + self.sin @ rem_nodes.real
        tail = np.zeros_like(c)
        big = c * self.omega_max >= 2.0
        tail[big] = (np.exp(1j * self.omega_max * c[big]) * rem_end).real / (c[big] * self.omega_max)
        out[self.inside] = ref - (corr + tail) / math.pi
        return out, float(np.max(np.abs(tail)) / math.pi) if tail.size else 0.0


@dataclass
class MgfContext:
    cfg: NetworkConfig
    F: SuccessCdf
    K: int = TRUNCATION_K
    ck_cache: np.ndarray = None
    tail_ratio: float = 0.0

    def __post_init__(self):
        if self.ck_cache is None:
            self.ck_cache = ck_table(self.cfg.alpha, self.K)


def activity_moments(cfg: NetworkConfig, F: SuccessCdf, K: int) -> np.ndarray:
    """Q(k) = int (p xi / (xi + (1 - xi) p t))^k F(dt) for k = 1..K."""
    points, weights = F.support()
    b = activity_ratio(cfg, points)
    return np.array([weights @ b ** k for k in range(1, K + 1)])


def mgf_eval(ctx: MgfContext, omega, method: str = "exact"):
    """E[mu^(j omega)] under the law ``ctx.F`` of the interferers' success probabilities.

    ``method="series"`` truncates the binomial series at ``ctx.K`` terms and
    warns when the last term exceeds 1e-8 of the partial sum; ``"exact"``
    uses the resummed exponent.
    """
    cfg = ctx.cfg
    omega = np.asarray(omega, dtype=float)
    s = 1j * np.atleast_1d(omega)
    scale = interference_scale(cfg)
    if method == "series":
        total, ratio = series_exponent(s, activity_moments(cfg, ctx.F, ctx.K), cfg.alpha, ctx.K)
        ctx.tail_ratio = float(np.max(ratio)) if scale > 0 else 0.0
        if ctx.tail_ratio > 1e-8:
            warnings.warn(f"binomial series tail ratio {ctx.tail_ratio:.2e} at K={ctx.K}",
                          TruncationWarning, stacklevel=2)
    elif method == "exact":
        points, weights = ctx.F.support()
        total = weights @ interference_exponent(activity_ratio(cfg, points), s, cfg.alpha) \
            if scale > 0 else np.zeros(s.shape, dtype=complex)
    else:
        raise ValueError(f"unknown method {method!r}")
    with np.errstate(over="ignore", invalid="ignore"):  # a diverging series is already flagged
        out = np.exp(-s * cfg.noise_exponent - scale * total)
    return out if omega.ndim else complex(out[0])


def gil_pelaez_cdf(ctx: MgfContext, u, omega_max: float = OMEGA_MAX):
    """F(u) = P(mu < u) for the law of a typical link given interferer law ``ctx.F``.

    Values are clamped to [0, 1]; a TruncationWarning is raised when the
    estimated omega-truncation error exceeds 1e-3.
    """
    u_arr = np.atleast_1d(np.asarray(u, dtype=float))
    if np.any((u_arr <= 0) | (u_arr >= 1)):
        raise ValueError("u must lie in (0, 1)")
    points, weights = ctx.F.support()
    inv = GilPelaezInverter(ctx.cfg, points, u_arr, omega_max)
    raw, err = inv.cdf(weights)
    if err > 1e-3:
        warnings.warn(f"Gil-Pelaez truncation error estimate {err:.2e}", TruncationWarning,
                      stacklevel=2)
    out = np.clip(raw, 0.0, 1.0)
    return out if np.ndim(u) else float(out[0])


def picard_solve(cfg: NetworkConfig, grid=None, tol: float = 1e-6, max_iter: int = 100,
                 omega_max: float = OMEGA_MAX) -> SuccessCdf:
    """Successive approximation of the success-probability CDF.

    Starts from all mass at the grid floor, where every interferer is active
    with probability p, and stops once the sup-norm change of the projected
    CDF drops below ``tol``. Raises ConvergenceError with the residual history.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    grid = success_grid(cfg) if grid is None else np.asarray(grid, dtype=float)
    F = SuccessCdf(grid, np.ones(len(grid)))
    points, _ = F.support()
    inv = GilPelaezInverter(cfg, points, grid, omega_max)
    history = []
    for it in range(1, max_iter + 1):
        _, weights = F.support()
        raw, tail = inv.cdf(weights)
        values = monotone_projection(raw)
        values[grid >= cfg.mu_max] = 1.0
        violation = float(np.max(np.maximum.accumulate(raw) - raw))
        res = float(np.max(np.abs(values - F.values)))
        history.append(res)
        F = SuccessCdf(grid, values, it, history, violation, tail)
        if res < tol:
            return F
    raise ConvergenceError(f"Picard iteration did not converge in {max_iter} iterations",
                           history[-1], history)


def network_aoi(cfg: NetworkConfig, F: SuccessCdf) -> float:
    """1/xi - 1 + int F(dt) / (p t), midpoint Riemann-Stieltjes sum on F's grid.

    Raises DivergenceError when more than 10% of the mass sits below the grid.
    """
    if F.mass_below_grid > REFUSE_MASS:
        raise DivergenceError(
            f"{F.mass_below_grid:.3f} of the success-probability mass lies below "
            f"t = {F.grid[0]:.1e}; the average AoI is suspected to diverge")
    points, weights = F.support()
    return 1 / cfg.xi - 1 + float(np.sum(weights / points)) / cfg.p


def network_aoi_moment(cfg: NetworkConfig, F: SuccessCdf) -> float:
    """Same quantity through E[1/mu] = M(-1), evaluated in closed form from F.

    Infinite when p = xi = 1 at positive density: arbitrarily close, always-on
    interferers make E[1/mu] diverge.
    """
    points, weights = F.support()
    keep = weights > 0
    expo = weights[keep] @ inverse_moment_exponent(activity_ratio(cfg, points[keep]), cfg.alpha) \
        if cfg.lambda_ > 0 else 0.0
    return 1 / cfg.xi - 1 + math.exp(cfg.noise_exponent + interference_scale(cfg) * expo) / cfg.p


def aoi_flags(cfg: NetworkConfig, F: SuccessCdf) -> list[str]:
    flags = []
    always_on = cfg.p == 1 and cfg.xi == 1 and cfg.lambda_ > 0
    if F.mass_below_grid > FLAG_MASS or always_on:
        flags.append("divergence_suspected")
    return flags


def noise_limited_aoi(cfg: NetworkConfig) -> float:
    """Closed form in the lambda -> 0 limit."""
    return 1 / cfg.xi + math.exp(cfg.noise_exponent) / cfg.p - 1
