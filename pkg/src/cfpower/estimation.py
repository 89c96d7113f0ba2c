"""Uplink pilot transmission and per-AP MMSE channel estimation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .geometry import ChannelSample, NetworkRealization, RngLike, _as_rng


@dataclass(frozen=True)
class PilotAssignment:
    """Pilot index (0-based) of every UE."""

    pilot_of_ue: tuple
    tau_p: int

    @property
    def groups(self) -> list[list[int]]:
        out = [[] for _ in range(self.tau_p)]
        for k, t in enumerate(self.pilot_of_ue):
            out[t].append(k)
        return out


def assign_pilots(K: int, tau_p: int) -> PilotAssignment:
    """Orthogonal pilots when ``tau_p >= K``, round-robin reuse otherwise."""
    if tau_p < 1:
        raise ValueError("tau_p must be >= 1")
    return PilotAssignment(tuple(k % tau_p for k in range(K)), tau_p)


@dataclass
class ChannelEstimate:
    h_hat: np.ndarray    # (M, K, L, N)
    phi: np.ndarray      # (tau_p, L, N, N)
    est_cov: np.ndarray  # (K, L, N, N)


def received_pilot(sample: ChannelSample, assignment: PilotAssignment, config: SystemConfig,
                   seed: RngLike | None = None) -> np.ndarray:
    """Received pilot signals, shape ``(M, tau_p, L, N)``.

    ``seed=None`` gives a noiseless observation.
    """
    h = sample.h
    M, K, L, N = h.shape
    y = np.zeros((M, assignment.tau_p, L, N), dtype=complex)
    scale = np.sqrt(assignment.tau_p * config.p_ul)
    for k, t in enumerate(assignment.pilot_of_ue):
        y[:, t] += scale * h[:, k]
    if seed is not None:
        rng = _as_rng(seed)
        n = rng.standard_normal(y.shape + (2,))
        y += np.sqrt(config.noise_power / 2.0) * (n[..., 0] + 1j * n[..., 1])
    return y


def compute_phi(assignment: PilotAssignment, realization: NetworkRealization,
                config: SystemConfig) -> np.ndarray:
    """Pilot-signal correlation matrices, shape ``(tau_p, L, N, N)``."""
    L, N = realization.L, realization.N
    phi = np.zeros((assignment.tau_p, L, N, N), dtype=complex)
    phi += config.noise_power * np.eye(N)
    for k, t in enumerate(assignment.pilot_of_ue):
        phi[t] += assignment.tau_p * config.p_ul * realization.correlation[k]
    return phi


def estimator_matrices(assignment: PilotAssignment, realization: NetworkRealization,
                       config: SystemConfig):
    """Return ``(phi, A, est_cov)`` with ``h_hat_kl = A_kl @ y_{t_k, l}``."""
    phi = compute_phi(assignment, realization, config)
    t = np.asarray(assignment.pilot_of_ue, dtype=int)
    R = realization.correlation
    # R Phi^-1 = (Phi^-1 R)^H since both are Hermitian
    phi_inv_r = np.linalg.solve(phi[t], R)
    r_phi_inv = phi_inv_r.conj().swapaxes(-1, -2)
    A = np.sqrt(assignment.tau_p * config.p_ul) * r_phi_inv
    est_cov = assignment.tau_p * config.p_ul * (r_phi_inv @ R)
    est_cov = 0.5 * (est_cov + est_cov.conj().swapaxes(-1, -2))
    return phi, A, est_cov


def estimate_covariance(realization: NetworkRealization, config: SystemConfig,
                        assignment: PilotAssignment | None = None) -> np.ndarray:
    """Covariance of the MMSE estimate, shape ``(K, L, N, N)``."""
    assignment = assignment or assign_pilots(realization.K, config.tau_p)
    return estimator_matrices(assignment, realization, config)[2]


def mmse_estimate(y_p: np.ndarray, realization: NetworkRealization, assignment: PilotAssignment,
                  config: SystemConfig) -> ChannelEstimate:
    phi, A, est_cov = estimator_matrices(assignment, realization, config)
    t = np.asarray(assignment.pilot_of_ue, dtype=int)
    h_hat = np.einsum("klnm,cklm->ckln", A, y_p[:, t])
    return ChannelEstimate(h_hat, phi, est_cov)
