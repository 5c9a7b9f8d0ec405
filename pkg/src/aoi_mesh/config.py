"""Network configuration, unit conversion and the ``key = value`` config format."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from pathlib import Path


class ConfigError(ValueError):
    """Invalid configuration value. ``field`` names the offending key."""

    def __init__(self, field: str, message: str, line: int | None = None):
        self.field = field
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


def dbm_to_watts(x: float) -> float:
    return 10.0 ** (x / 10.0) * 1e-3


def db_to_linear(x: float) -> float:
    return 10.0 ** (x / 10.0)


@dataclass(frozen=True)
class NetworkConfig:
    """Physical and protocol parameters of a Poisson bipolar network.

    Defaults are the reference deployment: alpha = 3.8, theta = 0 dB,
    P_tx = 17 dBm, noise = -90 dBm and r = 0.5 m, simulated on a 300 m torus.
    """

    lambda_: float = 1e-2
    r: float = 0.5
    alpha: float = 3.8
    theta: float = 1.0
    p_tx: float = dbm_to_watts(17.0)
    noise: float = dbm_to_watts(-90.0)
    xi: float = 0.5
    p: float = 1.0
    window: float = 300.0
    seed: int = 0
    warmup_slots: int = 1000
    measure_slots: int = 4000

    @property
    def rho(self) -> float:
        return self.p_tx / self.noise

    @property
    def delta(self) -> float:
        return 2.0 / self.alpha

    @property
    def noise_exponent(self) -> float:
        """theta * r**alpha / rho, the noise-only outage exponent."""
        return self.theta * self.r ** self.alpha / self.rho

    @property
    def mu_max(self) -> float:
        """Interference-free success probability; an upper bound on every link."""
        return math.exp(-self.noise_exponent)

    def replace(self, **changes) -> "NetworkConfig":
        return dataclasses.replace(self, **changes)


# ``lambda`` is a Python keyword, so the dataclass field carries a trailing underscore.
FIELD_KEYS = {f.name.rstrip("_"): f.name for f in dataclasses.fields(NetworkConfig)}
ALTERNATE_KEYS = {
    "theta_db": ("theta", db_to_linear),
    "p_tx_dbm": ("p_tx", dbm_to_watts),
    "noise_dbm": ("noise", dbm_to_watts),
}


def _check(ok: bool, field: str, message: str) -> None:
    if not ok:
        raise ConfigError(field, message)


def validate_config(cfg: NetworkConfig) -> NetworkConfig:
    """Range-check every field; returns a copy with ints coerced.

    Raises ConfigError naming the field and its legal range.
    """
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        _check(isinstance(v, (int, float)) and math.isfinite(v),
               f.name.rstrip("_"), f"{f.name.rstrip('_')} must be a finite number, got {v!r}")
    _check(cfg.lambda_ >= 0, "lambda", "lambda out of [0, inf)")
    _check(cfg.r > 0, "r", "r must be positive")
    _check(cfg.alpha > 2, "alpha", "alpha must exceed 2")
    _check(cfg.theta > 0, "theta", "theta must be positive")
    _check(cfg.p_tx > 0, "p_tx", "p_tx must be positive")
    _check(cfg.noise > 0, "noise", "noise must be positive")
    _check(0 < cfg.xi <= 1, "xi", "xi out of (0,1]")
    _check(0 < cfg.p <= 1, "p", "p out of (0,1]")
    _check(cfg.window > 2 * cfg.r, "window", "window must exceed 2*r")
    _check(0 <= cfg.seed < 2 ** 64 and float(cfg.seed).is_integer(), "seed",
           "seed out of [0, 2^64)")
    for name in ("warmup_slots", "measure_slots"):
        v = getattr(cfg, name)
        _check(v >= 0 and float(v).is_integer(), name, f"{name} must be a nonnegative integer")
    return cfg.replace(seed=int(cfg.seed), warmup_slots=int(cfg.warmup_slots),
                       measure_slots=int(cfg.measure_slots))


def parse_value(key: str, text: str, line: int | None = None) -> tuple[str, float | int]:
    """Map one ``key = value`` pair onto a NetworkConfig field name and SI value."""
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(key, f"malformed value for {key}: {text!r}", line) from None
    if key in ALTERNATE_KEYS:
        name, conv = ALTERNATE_KEYS[key]
        return name, conv(value)
    if key not in FIELD_KEYS:
        raise ConfigError(key, f"unknown key {key!r}", line)
    name = FIELD_KEYS[key]
    if name in ("seed", "warmup_slots", "measure_slots"):
        if not value.is_integer():
            raise ConfigError(key, f"{key} must be an integer, got {text!r}", line)
        return name, int(text) if text.strip().lstrip("+-").isdigit() else int(value)
    return name, value


def read_key_values(path: str | Path) -> list[tuple[int, str, str]]:
    """Read flat UTF-8 ``key = value`` lines. Blank lines and ``#`` comments are skipped."""
    out = []
    text = Path(path).read_text(encoding="utf-8")
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("", f"expected 'key = value', got {raw!r}", lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        out.append((lineno, key, value))
    return out


def load_config(path: str | Path, base: NetworkConfig | None = None) -> NetworkConfig:
    """Parse a config file containing NetworkConfig keys only."""
    changes = {}
    for lineno, key, value in read_key_values(path):
        name, v = parse_value(key, value, lineno)
        changes[name] = v
    cfg = (base or NetworkConfig()).replace(**changes)
    return validate_config(cfg)
