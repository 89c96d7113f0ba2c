"""Monte-Carlo SINR coefficients and SINR/SE evaluation for any power allocation.

With gamma_kl = sqrt(rho_kl) the effective SINR of UE k is

    SINR_k = (sum_l gamma_kl a_kl)^2 / (sum_l sum_i gamma_il^2 b_kil + sigma^2)

where a_kl = |E{h_kl^H D_kl w_kl}| and b_kil = E{|h_kl^H D_il w_il|^2}, minus
a_kl^2 when i == k.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .estimation import assign_pilots, mmse_estimate, received_pilot
from .geometry import NetworkRealization, RngLike, _as_rng, draw_channels
from .precoding import precode

log = logging.getLogger(__name__)

CHUNK = 2000
MIN_REALIZATIONS = 100


@dataclass
class SinrCoefficients:
    a: np.ndarray    # (K, L)
    b: np.ndarray    # (K, K, L), b[k, i, l]
    sigma2: float
    mc_count: int

    @property
    def K(self) -> int:
        return self.a.shape[0]

    @property
    def L(self) -> int:
        return self.a.shape[1]

    def scaled(self, factor: float) -> "SinrCoefficients":
        """Scale a, sqrt(b) and sigma by ``factor``; every SINR is unchanged."""
        return SinrCoefficients(self.a * factor, self.b * factor**2, self.sigma2 * factor**2, self.mc_count)


def _simulate_blocks(realization: NetworkRealization, scheme: str, config: SystemConfig,
                     rng: np.random.Generator, count: int):
    """Yield ``(h, w)`` for successive chunks of coherence blocks."""
    assignment = assign_pilots(realization.K, config.tau_p)
    # separate streams make the draws independent of the chunk size
    channel_rng, noise_rng = rng.spawn(2)
    done = 0
    while done < count:
        m = min(CHUNK, count - done)
        sample = draw_channels(realization, channel_rng, m)
        y = received_pilot(sample, assignment, config, noise_rng)
        est = mmse_estimate(y, realization, assignment, config)
        w = precode(est.h_hat, realization.served, scheme, config).w
        yield sample.h, w
        done += m


def _link_gains(h: np.ndarray, w: np.ndarray) -> np.ndarray:
    # g[c, k, i, l] = h_kl^H w_il
    return np.einsum("ckln,ciln->ckil", h.conj(), w)


def estimate_coefficients(realization: NetworkRealization, scheme: str, config: SystemConfig,
                          seed: RngLike, count: int | None = None) -> SinrCoefficients:
    """Monte-Carlo estimate of ``a`` and ``b`` over ``count`` coherence blocks."""
    count = config.mc_realizations if count is None else count
    if count < MIN_REALIZATIONS:
        log.warning("only %d Monte-Carlo realizations; coefficients will be noisy", count)
    rng = _as_rng(seed)
    K, L = realization.K, realization.L
    sum_signal = np.zeros((K, L), dtype=complex)
    sum_power = np.zeros((K, K, L))
    kk = np.arange(K)
    for h, w in _simulate_blocks(realization, scheme, config, rng, count):
        g = _link_gains(h, w)
        sum_signal += g[:, kk, kk, :].sum(axis=0)
        sum_power += (g.real**2 + g.imag**2).sum(axis=0)
    mean_signal = sum_signal / count
    a = np.abs(mean_signal)
    b = sum_power / count
    var = b[kk, kk, :] - a**2
    floor = -1e-9 * np.maximum(b[kk, kk, :], np.finfo(float).tiny)
    if np.any(var < floor):
        raise FloatingPointError("negative self-interference variance beyond rounding")
    b[kk, kk, :] = np.maximum(var, 0.0)
    return SinrCoefficients(a, b, config.noise_power, count)


def compute_sinr(gamma: np.ndarray, coeffs: SinrCoefficients) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float)
    signal = np.einsum("kl,kl->k", gamma, coeffs.a) ** 2
    interference = np.einsum("il,kil->k", gamma**2, coeffs.b)
    return signal / (interference + coeffs.sigma2)


def compute_se(sinr, config: SystemConfig) -> np.ndarray:
    """Spectral efficiency in bit/s/Hz with the downlink prelog tau_d / tau_c."""
    return config.prelog * np.log2(1.0 + np.asarray(sinr, dtype=float))


def direct_sinr(gamma: np.ndarray, realization: NetworkRealization, scheme: str,
                config: SystemConfig, seed: RngLike, count: int, batches: int = 20):
    """SINR of a fixed allocation from the joint (all-AP) hardening bound.

    Unlike :func:`compute_sinr` this averages the combined received signal
    sum_l gamma_il h_kl^H w_il rather than per-AP coefficients.  Returns the
    estimate and its batch-means standard error, both shape ``(K,)``.
    """
    rng = _as_rng(seed)
    gamma = np.asarray(gamma, dtype=float)
    K = realization.K
    kk = np.arange(K)
    per_block_signal, per_block_power = [], []
    for h, w in _simulate_blocks(realization, scheme, config, rng, count):
        v = np.einsum("ckil,il->cki", _link_gains(h, w), gamma)
        per_block_signal.append(v[:, kk, kk])
        per_block_power.append((np.abs(v) ** 2).sum(axis=2))
    signal = np.concatenate(per_block_signal)
    power = np.concatenate(per_block_power)

    def sinr_of(sig, pw):
        m = np.abs(sig.mean(axis=0)) ** 2
        return m / (pw.mean(axis=0) - m + config.noise_power)

    estimate = sinr_of(signal, power)
    parts = [sinr_of(s, p) for s, p in zip(np.array_split(signal, batches), np.array_split(power, batches))]
    se = np.std(parts, axis=0, ddof=1) / np.sqrt(batches)
    return estimate, se
