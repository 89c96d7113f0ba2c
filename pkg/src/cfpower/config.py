"""System parameters, key-value config files and seeded random streams."""

from __future__ import annotations

import dataclasses
import math
import zlib
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np


class ConfigError(ValueError):
    """Raised for inconsistent or unparsable system parameters."""


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    """Parameters of one cell-free deployment.

    Defaults reproduce the reference scenario: 9 APs with 2 antennas each,
    5 UEs in a 150 m x 150 m wrap-around square, 1 W per AP, 100 mW pilots
    and -94 dBm noise.
    """

    L: int = 9
    K: int = 5
    N: int = 2
    area_side: float = 150.0
    ap_height: float = 10.0
    tau_c: int = 200
    tau_p: int = 5
    tau_d: int = 195
    p_ul: float = 0.1
    p_dl_max: float = 1.0
    noise_power: float = dbm_to_watt(-94.0)
    pathloss_intercept: float = -30.5
    pathloss_exponent_coeff: float = 36.7
    mc_realizations: int = 1000
    master_seed: int = 0
    # explicit AP (x, y) coordinates; empty means the default square grid
    ap_positions: tuple = ()
    correlation_model: str = "diagonal"
    dcc_policy: str = "all"
    dcc_q: int = 0
    orthogonal_pilots: bool = True

    def __post_init__(self):
        if self.L < 1 or self.K < 0 or self.N < 1:
            raise ConfigError("L and N must be >= 1 and K >= 0")
        if self.tau_p < 1 or self.tau_p + self.tau_d > self.tau_c:
            raise ConfigError(
                f"need 1 <= tau_p and tau_p + tau_d <= tau_c, got "
                f"tau_p={self.tau_p}, tau_d={self.tau_d}, tau_c={self.tau_c}")
        if self.orthogonal_pilots and self.tau_p < self.K:
            raise ConfigError(f"orthogonal pilots need tau_p >= K ({self.tau_p} < {self.K})")
        for name in ("p_ul", "p_dl_max", "noise_power", "area_side"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive")
        if self.ap_height < 0:
            raise ConfigError("ap_height must be nonnegative")
        if self.mc_realizations < 1:
            raise ConfigError("mc_realizations must be >= 1")
        if self.ap_positions and len(self.ap_positions) != self.L:
            raise ConfigError(f"{len(self.ap_positions)} explicit AP positions for L={self.L}")
        if not 0 <= self.master_seed < 2**64:
            raise ConfigError("master_seed must fit in 64 bits")

    @property
    def prelog(self) -> float:
        return self.tau_d / self.tau_c

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


def _parse_value(name: str, raw: str, default):
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{name}: not a boolean: {raw!r}")
    if isinstance(default, int):
        return int(raw, 0)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        # "x1,y1; x2,y2; ..."
        if not raw:
            return ()
        try:
            return tuple(tuple(float(c) for c in p.split(",")) for p in raw.split(";") if p.strip())
        except ValueError as exc:
            raise ConfigError(f"{name}: bad point list {raw!r}") from exc
    return raw


def parse_config(text: str, **overrides) -> SystemConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) into a config."""
    defaults = {f.name: f.default for f in fields(SystemConfig)}
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key == "noise_power_dbm":
            values["noise_power"] = dbm_to_watt(float(raw))
            continue
        if key not in defaults:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            values[key] = _parse_value(key, raw, defaults[key])
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: {exc}") from exc
    values.update({k: v for k, v in overrides.items() if v is not None})
    return SystemConfig(**values)


def load_config(path, **overrides) -> SystemConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(encoding="utf-8"), **overrides)


def format_config(config: SystemConfig) -> str:
    lines = []
    for f in fields(SystemConfig):
        value = getattr(config, f.name)
        if isinstance(value, tuple):
            value = "; ".join(",".join(repr(c) for c in p) for p in value)
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def _stream_id(tag: str) -> int:
    return zlib.crc32(tag.encode("ascii"))


def sample_seed(master_seed: int, sample_index: int) -> int:
    """64-bit seed owning every random draw of one network realization."""
    seq = np.random.SeedSequence(entropy=master_seed, spawn_key=(sample_index,))
    return int(seq.generate_state(1, np.uint64)[0])


def stream_rng(seed: int, stream: str) -> np.random.Generator:
    """Generator for one purpose (UE drop, channel draws, ...) of a sample.

    Streams are keyed through the SeedSequence spawn key, so draws never
    depend on how many samples were generated before, or by which worker.
    """
    seq = np.random.SeedSequence(entropy=seed, spawn_key=(_stream_id(stream),))
    return np.random.Generator(np.random.PCG64(seq))


def sample_rng(master_seed: int, sample_index: int, stream: str) -> np.random.Generator:
    return stream_rng(sample_seed(master_seed, sample_index), stream)


def is_perfect_square(n: int) -> bool:
    return n >= 1 and math.isqrt(n) ** 2 == n
