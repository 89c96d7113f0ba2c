"""MR and RZF precoding with per-block (short-term) normalization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import SystemConfig

SCHEMES = ("mr", "rzf")


@dataclass
class PrecoderSet:
    """Unit-norm precoders ``w`` of shape ``(M, K, L, N)``; unserved links are zero."""

    w: np.ndarray
    scheme: str


def _mask(h_hat: np.ndarray, served: np.ndarray) -> np.ndarray:
    return h_hat * np.asarray(served, dtype=bool)[None, :, :, None]


def mr_precoder(h_hat: np.ndarray, served: np.ndarray) -> np.ndarray:
    return _mask(h_hat, served)


def rzf_precoder(h_hat: np.ndarray, served: np.ndarray, config: SystemConfig) -> np.ndarray:
    """Unnormalized RZF directions, each AP regularizing with its own served UEs."""
    hm = _mask(h_hat, served)
    N = hm.shape[-1]
    p = config.p_ul
    gram = p * np.einsum("ckln,cklm->clnm", hm, hm.conj())
    gram += config.noise_power * np.eye(N)
    rhs = p * hm.transpose(0, 2, 3, 1)  # (M, L, N, K)
    # scale out the tiny physical units so the 2x2 solves stay well conditioned
    unit = config.noise_power
    sol = np.linalg.solve(gram / unit, rhs / unit)
    return sol.transpose(0, 3, 1, 2)


def normalize(directions: np.ndarray, served: np.ndarray, scheme: str = "") -> PrecoderSet:
    served = np.broadcast_to(np.asarray(served, dtype=bool)[None, :, :], directions.shape[:3])
    norms = np.linalg.norm(directions, axis=-1)
    if np.any(norms[served] == 0):
        raise FloatingPointError("zero precoding direction on a served link")
    safe = np.where(served, norms, 1.0)
    w = np.where(served[..., None], directions / safe[..., None], 0.0)
    return PrecoderSet(w, scheme)


def precode(h_hat: np.ndarray, served: np.ndarray, scheme: str, config: SystemConfig) -> PrecoderSet:
    scheme = scheme.lower()
    if scheme == "mr":
        directions = mr_precoder(h_hat, served)
    elif scheme == "rzf":
        directions = rzf_precoder(h_hat, served, config)
    else:
        raise ValueError(f"unknown precoding scheme {scheme!r}; expected one of {SCHEMES}")
    return normalize(directions, served, scheme)
