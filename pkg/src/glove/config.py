"""Scenario configuration: defaults, key=value file parsing, and validation.

Config files are line oriented::

    # comment
    N = 6
    hurst = 0.75
    self_node = false

Blank lines and ``#`` comments are ignored. Keys are the field names of
:class:`ScenarioConfig`. Values are parsed according to the field type.
Later sources win: defaults, then the file, then command-line overrides.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s
BOLTZMANN = 1.380649e-23  # J/K


class ConfigError(ValueError):
    """Raised for unknown keys or out-of-range values. ``key`` names the culprit."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class BandPlan:
    K: int
    B: float
    f: tuple[float, ...]
    g_abs: tuple[float, ...]

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if self.B <= 0:
            raise ValueError("B must be > 0")
        if len(self.f) != self.K or len(self.g_abs) != self.K:
            raise ValueError("f and g_abs must have K entries")
        if any(b <= a for a, b in zip(self.f, self.f[1:])):
            raise ValueError("carrier frequencies must be strictly increasing")
        if any(g < 0 for g in self.g_abs):
            raise ValueError("absorption coefficients must be >= 0")


@dataclass(frozen=True)
class ArraySpec:
    M_x: int
    M_y: int
    d0: float
    S_max: int
    G_tx: float
    G_rx: float

    def __post_init__(self):
        if self.M_x < 1 or self.M_y < 1:
            raise ValueError("M_x and M_y must be >= 1")
        if self.d0 <= 0:
            raise ValueError("d0 must be > 0")
        if self.S_max < 2:
            raise ValueError("S_max must be >= 2")

    @property
    def elements(self) -> int:
        return self.M_x * self.M_y


def _opt_float(value: str) -> float | None:
    if value.strip().lower() in ("", "none", "null"):
        return None
    return float(value)


def _bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {value!r}")


@dataclass
class ScenarioConfig:
    # fleet and geometry
    N: int = 25
    region_x: float = 1000.0
    region_y: float = 1000.0
    altitude: float = 100.0
    v_max: float = 100.0
    d_max: float = 500.0
    connected_init: bool = True
    # spectrum
    K: int = 5
    bandwidth: float = 5e9
    f_start: float = 287.5e9
    g_abs: float = 0.005
    # arrays
    m_x: int = 4
    m_y: int = 4
    d0: float = 5e-4
    s_max: int = 64
    gain_tx_dbi: float = 5.0
    gain_rx_dbi: float = 5.0
    p_max_dbm: float = 30.0
    # noise, interference, misalignment
    noise_temp: float = 296.0
    noise_power: float | None = None
    interf_mean: float = 0.1
    interf_std: float = 0.05
    misalign_sigma: float = 0.0
    misalign_w_eq: float = 0.1
    misalign_a0: float = 1.0
    # traffic and buffers
    buffer_capacity: int = 500_000
    packet_bits: int = 16_000
    slot: float = 0.1
    mean_rate: float = 10e9
    hurst: float = 0.8
    traffic_std: float = 0.1
    # routing
    hop_weight: float = 1.0
    loss_weight: float = 1.0
    # reward
    chi1: float = 10.0
    chi2: float = 5000.0
    chi3: float = 0.1
    t_max: float | None = None
    l_max: float | None = None
    # learning
    kappa: float = 0.5
    kappa_in_target: bool = True
    lr_actor: float = 2e-5
    lr_critic: float = 1e-2
    noise_scale: float = 0.05
    safe_init_target: float = 0.95
    hidden_actor: int = 64
    hidden_critic: int = 64
    self_node: bool = True
    steps: int = 1000
    seed: int = 0

    def __post_init__(self):
        self.validate()

    # -- derived quantities -------------------------------------------------

    @property
    def band_plan(self) -> BandPlan:
        f = tuple(self.f_start + (k + 0.5) * self.bandwidth for k in range(self.K))
        return BandPlan(self.K, self.bandwidth, f, (self.g_abs,) * self.K)

    @property
    def array_spec(self) -> ArraySpec:
        return ArraySpec(
            self.m_x,
            self.m_y,
            self.d0,
            self.s_max,
            10 ** (self.gain_tx_dbi / 20),
            10 ** (self.gain_rx_dbi / 20),
        )

    @property
    def p_max(self) -> float:
        """Maximum transmit power in watts."""
        return 10 ** ((self.p_max_dbm - 30) / 10)

    @property
    def noise(self) -> float:
        """Per-sub-band noise power in watts (thermal unless overridden)."""
        if self.noise_power is not None:
            return self.noise_power
        return BOLTZMANN * self.noise_temp * self.bandwidth

    @property
    def expected_packets(self) -> float:
        return self.mean_rate * self.slot / self.packet_bits

    @property
    def traffic_sigma_bits(self) -> float:
        return self.traffic_std * self.mean_rate * self.slot

    # -- validation ------------------------------------------------------------

    def validate(self) -> None:
        positive = [
            "region_x", "region_y", "altitude", "d_max", "bandwidth", "f_start",
            "d0", "noise_temp", "misalign_w_eq", "slot", "packet_bits",
            "buffer_capacity", "N", "K", "m_x", "m_y", "hidden_actor",
            "hidden_critic",
        ]
        for key in positive:
            if not getattr(self, key) > 0:
                raise ConfigError(key, "must be > 0")
        nonneg = [
            "v_max", "g_abs", "interf_mean", "interf_std", "misalign_sigma",
            "mean_rate", "traffic_std", "hop_weight", "loss_weight", "chi1",
            "chi2", "chi3", "lr_actor", "lr_critic", "noise_scale", "steps",
        ]
        for key in nonneg:
            if not getattr(self, key) >= 0:
                raise ConfigError(key, "must be >= 0")
        for key in ("region_x", "region_y", "d_max", "bandwidth", "slot", "mean_rate"):
            if not math.isfinite(getattr(self, key)):
                raise ConfigError(key, "must be finite")
        if not 0.5 <= self.hurst < 1.0:
            raise ConfigError("hurst", "must satisfy 0.5 <= hurst < 1")
        if not 0.0 < self.misalign_a0 <= 1.0:
            raise ConfigError("misalign_a0", "must satisfy 0 < a0 <= 1")
        if not 0.0 <= self.kappa <= 1.0:
            raise ConfigError("kappa", "must lie in [0, 1]")
        if not 0.0 < self.safe_init_target < 1.0:
            raise ConfigError("safe_init_target", "must lie in (0, 1)")
        if self.s_max < 2:
            raise ConfigError("s_max", "must be >= 2")
        if self.N > self.s_max:
            raise ConfigError("N", "must not exceed s_max (one sub-array per link)")
        if self.noise_power is not None and not self.noise_power > 0:
            raise ConfigError("noise_power", "must be > 0")
        if self.hop_weight + self.loss_weight <= 0:
            raise ConfigError("hop_weight", "hop_weight + loss_weight must be > 0")

    def replace(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_items(self) -> list[tuple[str, Any]]:
        return [(f.name, getattr(self, f.name)) for f in fields(self)]


_PARSERS: dict[str, Any] = {}
for _f in fields(ScenarioConfig):
    _t = _f.type
    if _t == "int":
        _PARSERS[_f.name] = lambda v: int(float(v)) if float(v).is_integer() else int(v)
    elif _t == "float":
        _PARSERS[_f.name] = float
    elif _t == "bool":
        _PARSERS[_f.name] = _bool
    elif _t == "float | None":
        _PARSERS[_f.name] = _opt_float
    else:  # pragma: no cover - guards new field types
        raise TypeError(f"no parser for {_f.name}: {_t}")


def parse_pairs(lines: Iterable[str]) -> dict[str, Any]:
    """Parse ``key=value`` lines into typed values. Unknown keys are rejected."""
    out: dict[str, Any] = {}
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(key, "unknown key")
        try:
            out[key] = _PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(key, f"bad value {value!r} ({exc})") from None
    return out


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | Iterable[str] | None = None,
) -> ScenarioConfig:
    """Build a config from defaults, an optional file, then overrides.

    ``overrides`` may be a mapping of already-typed values or an iterable of
    ``"key=value"`` strings as given on the command line.
    """
    values: dict[str, Any] = {}
    if path is not None:
        values.update(parse_pairs(Path(path).read_text().splitlines()))
    if overrides:
        if isinstance(overrides, Mapping):
            for key in overrides:
                if key not in _PARSERS:
                    raise ConfigError(key, "unknown key")
            values.update(overrides)
        else:
            values.update(parse_pairs(overrides))
    return ScenarioConfig(**values)


def dump_config(cfg: ScenarioConfig) -> str:
    return "".join(f"{k} = {'none' if v is None else v}\n" for k, v in cfg.to_items())


STREAMS = ("mobility", "traffic", "channel", "exploration", "init", "placement")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for one named noise source under a master seed."""
    return np.random.default_rng([seed, STREAMS.index(name)])
