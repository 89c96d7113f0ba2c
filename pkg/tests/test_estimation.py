import numpy as np
import pytest

from cfpower.estimation import (assign_pilots, compute_phi, estimate_covariance, mmse_estimate,
                                received_pilot)
from cfpower.geometry import ChannelSample, NetworkRealization, draw_channels, realization_from_beta


@pytest.mark.parametrize("K,tau_p,expected", [(5, 5, (0, 1, 2, 3, 4)), (4, 2, (0, 1, 0, 1)), (1, 3, (0,))])
def test_assign_pilots(K, tau_p, expected):
    a = assign_pilots(K, tau_p)
    assert a.pilot_of_ue == expected
    assert sorted(k for g in a.groups for k in g) == list(range(K))


def test_assign_pilots_rejects_zero():
    with pytest.raises(ValueError):
        assign_pilots(3, 0)


def _single(cfg, beta=1e-9, N=2, K=1, tau_p=1):
    c = cfg.replace(L=1, K=K, N=N, tau_p=tau_p, orthogonal_pilots=tau_p >= K)
    return c, realization_from_beta(np.full((K, 1), beta), c)


def test_received_pilot_noiseless(cfg, rng):
    c, real = _single(cfg, K=2, tau_p=1)
    h = rng.standard_normal((3, 2, 1, 2)) + 1j * rng.standard_normal((3, 2, 1, 2))
    y = received_pilot(ChannelSample(h), assign_pilots(2, 1), c)
    assert np.allclose(y[:, 0], np.sqrt(c.p_ul) * (h[:, 0] + h[:, 1]))
    assert np.all(received_pilot(ChannelSample(np.zeros_like(h)), assign_pilots(2, 1), c) == 0)


def test_received_pilot_orthogonal(cfg, rng):
    c, _ = _single(cfg, K=2, tau_p=2)
    h = rng.standard_normal((1, 2, 1, 2)) + 0j
    y = received_pilot(ChannelSample(h), assign_pilots(2, 2), c)
    assert np.allclose(y[0, 1], np.sqrt(2 * c.p_ul) * h[0, 1])


def test_phi_closed_forms(cfg):
    beta = 1e-9
    c, real = _single(cfg, beta=beta, K=1, tau_p=2)
    phi = compute_phi(assign_pilots(1, 2), real, c)
    assert np.allclose(phi[0, 0], (2 * c.p_ul * beta + c.noise_power) * np.eye(2), rtol=1e-13)
    # pilot 1 is unused
    assert np.allclose(phi[1, 0], c.noise_power * np.eye(2), rtol=1e-13)


def test_phi_minus_noise_is_psd(cfg):
    real = realization_from_beta(np.random.default_rng(3).random((5, 1)) * 1e-9, cfg.replace(L=1))
    phi = compute_phi(assign_pilots(5, 2), real, cfg.replace(L=1, orthogonal_pilots=False, tau_p=2))
    for t in range(2):
        assert np.linalg.eigvalsh(phi[t, 0] - cfg.noise_power * np.eye(2)).min() >= -1e-25


def test_scalar_mmse_closed_form(cfg, rng):
    beta = 3e-10
    c, real = _single(cfg, beta=beta, N=1)
    y = rng.standard_normal((4, 1, 1, 1)) + 1j * rng.standard_normal((4, 1, 1, 1))
    est = mmse_estimate(y, real, assign_pilots(1, 1), c)
    scale = np.sqrt(c.p_ul) * beta / (c.p_ul * beta + c.noise_power)
    assert np.allclose(est.h_hat[:, 0, 0, 0], scale * y[:, 0, 0, 0], rtol=1e-12)


def test_noiseless_limit_recovers_channel(cfg, rng):
    c = cfg.replace(L=1, K=1, N=2, tau_p=1, noise_power=1e-30)
    real = realization_from_beta(np.array([[1e-6]]), c)
    h = draw_channels(real, 1, 5)
    y = received_pilot(h, assign_pilots(1, 1), c)
    est = mmse_estimate(y, real, assign_pilots(1, 1), c)
    assert np.allclose(est.h_hat, h.h, rtol=1e-9, atol=0)


def _link_statistics(c, real, n, seed):
    assignment = assign_pilots(real.K, c.tau_p)
    rng = np.random.default_rng(seed)
    sample = draw_channels(real, rng, n)
    est = mmse_estimate(received_pilot(sample, assignment, c, rng), real, assignment, c)
    return sample.h, est


def test_estimate_covariance_matches_samples(cfg):
    # beta chosen so pilot SNR is about 0 dB: the estimate is neither h nor 0
    c = cfg.replace(L=1, K=1, N=2, tau_p=1)
    beta = c.noise_power / c.p_ul
    real = realization_from_beta(np.array([[beta]]), c)
    n = 100_000
    h, est = _link_statistics(c, real, n, 5)
    hh = est.h_hat[:, 0, 0, :]
    sample_cov = hh.T @ hh.conj() / n
    target = est.est_cov[0, 0]
    assert np.linalg.norm(sample_cov - target) <= 0.05 * np.linalg.norm(target)
    # error orthogonal to the estimate: cross covariance at the sampling noise level
    err = h[:, 0, 0, :] - hh
    cross = hh.T @ err.conj() / n
    assert np.linalg.norm(cross) <= 5 * beta / np.sqrt(n) * 2


def test_estimate_covariance_dominated_by_r(cfg):
    real = realization_from_beta(np.random.default_rng(0).random((5, 1)) * 1e-8, cfg.replace(L=1))
    for c in (cfg.replace(L=1), cfg.replace(L=1, tau_p=2, orthogonal_pilots=False)):
        est_cov = estimate_covariance(real, c)
        for k in range(5):
            gap = real.correlation[k, 0] - est_cov[k, 0]
            assert np.linalg.eigvalsh(gap).min() >= -1e-10 * real.beta[k, 0]
            assert np.linalg.eigvalsh(est_cov[k, 0]).min() >= -1e-10 * real.beta[k, 0]


def test_contaminated_estimates_are_collinear(cfg, rng):
    # UEs sharing a pilot with R = beta I get estimates proportional to the same y
    c = cfg.replace(L=1, K=2, N=2, tau_p=1, orthogonal_pilots=False)
    real = realization_from_beta(np.array([[1e-9], [4e-9]]), c)
    h, est = _link_statistics(c, real, 3, 8)
    ratio = est.h_hat[:, 1, 0, :] / est.h_hat[:, 0, 0, :]
    assert np.allclose(ratio, 4.0)


def test_decoupled_with_orthogonal_pilots(cfg):
    # changing UE 1's channel must not change UE 0's estimate
    c = cfg.replace(L=1, K=2, N=2, tau_p=2)
    real = realization_from_beta(np.array([[1e-9], [2e-9]]), c)
    a = assign_pilots(2, 2)
    h = draw_channels(real, 2, 4)
    h2 = ChannelSample(h.h.copy())
    h2.h[:, 1] *= -3
    e1 = mmse_estimate(received_pilot(h, a, c, 9), real, a, c)
    e2 = mmse_estimate(received_pilot(h2, a, c, 9), real, a, c)
    assert np.array_equal(e1.h_hat[:, 0], e2.h_hat[:, 0])


def test_network_realization_shapes(cfg):
    real = realization_from_beta(np.full((5, 9), 1e-9), cfg)
    assert isinstance(real, NetworkRealization)
    assert estimate_covariance(real, cfg).shape == (5, 9, 2, 2)
