"""Network geometry, large-scale fading and correlated Rayleigh channels."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .config import ConfigError, SystemConfig, is_perfect_square, stream_rng

RngLike = Union[int, np.random.Generator]

# custom correlation models map (beta, N) to an N x N Hermitian PSD matrix
CorrelationModel = Callable[[float, int], np.ndarray]


def _as_rng(seed: RngLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def place_aps(config: SystemConfig) -> np.ndarray:
    """AP coordinates, shape ``(L, 3)``.

    Without explicit positions the APs sit at the centres of a sqrt(L) x
    sqrt(L) partition of the square, all at ``ap_height``.
    """
    if config.ap_positions:
        xy = np.asarray(config.ap_positions, dtype=float)
        if xy.shape != (config.L, 2):
            raise ConfigError("ap_positions must hold L (x, y) pairs")
    else:
        if not is_perfect_square(config.L):
            raise ConfigError(f"L={config.L} is not a perfect square; give ap_positions explicitly")
        per_side = math.isqrt(config.L)
        ticks = config.area_side * (2 * np.arange(per_side) + 1) / (2 * per_side)
        gx, gy = np.meshgrid(ticks, ticks, indexing="xy")
        xy = np.column_stack([gx.ravel(), gy.ravel()])
    return np.column_stack([xy, np.full(config.L, config.ap_height)])


def drop_ues(config: SystemConfig, seed: RngLike) -> np.ndarray:
    """K uniformly distributed UE positions at ground level, shape ``(K, 3)``."""
    rng = _as_rng(seed)
    xy = rng.uniform(0.0, config.area_side, size=(config.K, 2))
    return np.column_stack([xy, np.zeros(config.K)])


def wrap_distance(p: np.ndarray, q: np.ndarray, side: float) -> np.ndarray:
    """Horizontal distance on a torus of the given side length."""
    delta = np.abs(np.asarray(p, float)[..., :2] - np.asarray(q, float)[..., :2]) % side
    delta = np.minimum(delta, side - delta)
    return np.hypot(delta[..., 0], delta[..., 1])


def link_distance(ap, ue, config: SystemConfig) -> np.ndarray:
    """3D AP-UE distance with wrap-around in the horizontal plane."""
    horizontal = wrap_distance(ap, ue, config.area_side)
    return np.sqrt(horizontal**2 + config.ap_height**2)


def pathloss_db(d, config: SystemConfig | None = None) -> np.ndarray:
    """Channel gain in dB at distance ``d`` meters."""
    config = config or SystemConfig()
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise ValueError("distance must be positive")
    return config.pathloss_intercept - config.pathloss_exponent_coeff * np.log10(d)


def db_to_linear(x):
    return 10.0 ** (np.asarray(x, dtype=float) / 10.0)


def _diagonal(beta: float, N: int) -> np.ndarray:
    return beta * np.eye(N, dtype=complex)


CORRELATION_MODELS: dict[str, CorrelationModel] = {"diagonal": _diagonal}


def build_correlation(beta: float, model: str | CorrelationModel = "diagonal", N: int = 1,
                      atol: float = 1e-12) -> np.ndarray:
    """Spatial correlation matrix with normalized trace ``beta``.

    ``model`` is a registered name or a callable ``(beta, N) -> matrix``.
    Custom outputs are validated (Hermitian PSD) and rescaled so that
    ``trace(R) = N * beta``.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    fn = CORRELATION_MODELS[model] if isinstance(model, str) else model
    R = np.asarray(fn(beta, N), dtype=complex)
    if R.shape != (N, N):
        raise ValueError(f"correlation model returned shape {R.shape}, expected {(N, N)}")
    scale = max(np.max(np.abs(R)), beta)
    if not np.allclose(R, R.conj().T, atol=atol * scale, rtol=0):
        raise ValueError("correlation matrix is not Hermitian")
    R = 0.5 * (R + R.conj().T)
    if np.linalg.eigvalsh(R).min() < -atol * scale:
        raise ValueError("correlation matrix is not positive semidefinite")
    trace = np.trace(R).real
    if trace <= 0:
        raise ValueError("correlation matrix has zero trace")
    return R * (N * beta / trace)


def psd_sqrt(R: np.ndarray, atol: float = 1e-12) -> np.ndarray:
    """Hermitian square root of a (batch of) PSD matrices."""
    w, V = np.linalg.eigh(R)
    scale = np.maximum(np.abs(w).max(axis=-1, keepdims=True), np.finfo(float).tiny)
    if np.any(w < -atol * scale):
        raise np.linalg.LinAlgError("matrix is not positive semidefinite")
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)[..., None, :]) @ V.conj().swapaxes(-1, -2)


def select_dcc(beta: np.ndarray, policy: str = "all", q: int = 0) -> np.ndarray:
    """Boolean serving mask of shape ``(K, L)``; column l is the set D_l.

    ``policy="all"`` serves every UE from every AP; ``"top"`` assigns each UE
    to its ``q`` strongest APs.
    """
    beta = np.asarray(beta, dtype=float)
    K, L = beta.shape
    if policy == "all":
        return np.ones((K, L), dtype=bool)
    if policy == "top":
        if not 1 <= q <= L:
            raise ConfigError(f"cluster size q={q} outside [1, {L}]")
        order = np.argsort(-beta, axis=1, kind="stable")[:, :q]
        mask = np.zeros((K, L), dtype=bool)
        np.put_along_axis(mask, order, True, axis=1)
        return mask
    raise ConfigError(f"unknown DCC policy {policy!r}")


@dataclass
class NetworkRealization:
    """One user drop: positions, large-scale fading and correlation."""

    ap_positions: np.ndarray   # (L, 3)
    ue_positions: np.ndarray   # (K, 3)
    beta: np.ndarray           # (K, L), linear
    correlation: np.ndarray    # (K, L, N, N)
    served: np.ndarray         # (K, L) bool, served[k, l] <=> k in D_l

    @property
    def K(self) -> int:
        return self.beta.shape[0]

    @property
    def L(self) -> int:
        return self.beta.shape[1]

    @property
    def N(self) -> int:
        return self.correlation.shape[-1]

    @property
    def dcc(self) -> list[set[int]]:
        return [set(np.flatnonzero(self.served[:, l]).tolist()) for l in range(self.L)]

    @property
    def beta_db(self) -> np.ndarray:
        return 10.0 * np.log10(self.beta)

    def correlation_sqrt(self) -> np.ndarray:
        cached = getattr(self, "_sqrt", None)
        if cached is None:
            cached = psd_sqrt(self.correlation)
            self._sqrt = cached
        return cached


@dataclass
class ChannelSample:
    """Channel vectors of ``M`` coherence blocks, ``h`` shape ``(M, K, L, N)``."""

    h: np.ndarray

    @property
    def count(self) -> int:
        return self.h.shape[0]


def realization_from_beta(beta: np.ndarray, config: SystemConfig, ue_positions=None) -> NetworkRealization:
    beta = np.asarray(beta, dtype=float)
    K, L = beta.shape
    N = config.N
    if config.correlation_model == "diagonal":
        R = beta[:, :, None, None] * np.eye(N)
        R = R.astype(complex)
    else:
        R = np.empty((K, L, N, N), dtype=complex)
        for k in range(K):
            for l in range(L):
                R[k, l] = build_correlation(beta[k, l], config.correlation_model, N)
    served = select_dcc(beta, config.dcc_policy, config.dcc_q)
    if ue_positions is None:
        ue_positions = np.full((K, 3), np.nan)
    return NetworkRealization(place_aps(config), np.asarray(ue_positions, float), beta, R, served)


def generate_realization(config: SystemConfig, seed: int) -> NetworkRealization:
    """Drop UEs with the sample seed ``seed`` and compute beta, R and the DCC."""
    aps = place_aps(config)
    ues = drop_ues(config, stream_rng(seed, "ue-drop"))
    d = link_distance(aps[None, :, :], ues[:, None, :], config)
    beta = db_to_linear(pathloss_db(d, config))
    return realization_from_beta(beta, config, ues)


def draw_channels(realization: NetworkRealization, seed: RngLike, count: int = 1) -> ChannelSample:
    """Draw ``count`` independent blocks of h_kl ~ CN(0, R_kl)."""
    rng = _as_rng(seed)
    K, L, N = realization.K, realization.L, realization.N
    z = rng.standard_normal((count, K, L, N, 2))
    z = (z[..., 0] + 1j * z[..., 1]) / np.sqrt(2.0)
    sqrt_r = realization.correlation_sqrt()
    h = np.einsum("klnm,cklm->ckln", sqrt_r, z)
    return ChannelSample(h)
