import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from glwalk.errors import TuningWarning, UndefinedESSError, WrongSamplerError
from glwalk.potential import HamiltonianSpec, gaussian, gaussian_plus_logcosh, hamiltonian
from glwalk.sampler import (
    FieldConfig,
    RngStream,
    _pair_delta_energy,
    effective_sample_size,
    read_config_csv,
    run_exchange_mcmc,
    sample_canonical_gaussian,
    sample_canonical_mcmc,
    sample_equilibrium,
    write_config_csv,
)

GAUSS = HamiltonianSpec(gaussian())
ANH = HamiltonianSpec(gaussian_plus_logcosh(1.0))

# Importance-sampling oracle, N=8, rho=0, a=1: exact Gaussian canonical draws
# reweighted by exp(-sum log cosh), 4e7 draws (batch-means s.e.).
IS_C00, IS_C00_SE = 0.509887, 0.000059
IS_C01, IS_C01_SE = -0.072826, 0.000027


def _mean_se(x):
    return x.mean(), x.std(ddof=1) / np.sqrt(x.size)


@pytest.mark.parametrize("rho", [0.0, 1.5, -2.0])
def test_gaussian_sum_exact(rho):
    cfg = sample_canonical_gaussian(16, rho, 0, replicas=100)
    cfg.check_sum(1e-12)
    np.testing.assert_allclose(cfg.eta.mean(axis=1), rho, atol=1e-14)


def test_gaussian_variance_and_covariance():
    eta = sample_canonical_gaussian(16, 0.0, 1, replicas=100_000).eta
    v, v_se = _mean_se(eta[:, 0] ** 2)
    c, c_se = _mean_se(eta[:, 0] * eta[:, 1])
    assert abs(v - 0.9375) < 3 * v_se
    assert abs(c + 1 / 16) < 3 * c_se


def test_gaussian_covariance_matrix():
    N = 6
    eta = sample_canonical_gaussian(N, 0.0, 2, replicas=200_000).eta
    C = eta.T @ eta / eta.shape[0]
    target = np.eye(N) - 1.0 / N
    # entrywise s.e. is at most sqrt(2/n) for unit-scale Gaussians
    assert np.max(np.abs(C - target)) < 4 * np.sqrt(2 / eta.shape[0])


def test_gaussian_sampler_rejects_anharmonic():
    with pytest.raises(WrongSamplerError):
        sample_canonical_gaussian(8, 0.0, 0, h=ANH)


def test_stream_reproducible():
    a = RngStream(7).generator("x", 3).standard_normal(5)
    b = RngStream(7).generator("x", 3).standard_normal(5)
    c = RngStream(7).generator("x", 4).standard_normal(5)
    d = RngStream(7).child(1).generator("x", 3).standard_normal(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c) and not np.array_equal(a, d)


def test_mcmc_gaussian_cold_start_variance():
    N = 8
    cfg = sample_canonical_mcmc(GAUSS, N, 0.0, rng=3, replicas=10_000)
    v, se = _mean_se(cfg.eta[:, 0] ** 2)
    assert abs(v - (1 - 1 / N)) < 3 * se


def test_mcmc_cold_start_needs_burn_in():
    with pytest.raises(ValueError):
        sample_canonical_mcmc(GAUSS, 8, 0.0, sweeps=10, rng=0)


@pytest.mark.parametrize("h", [ANH, HamiltonianSpec(gaussian_plus_logcosh(1.0), gaussian())], ids=["product", "pair"])
def test_mcmc_conserves_sum_over_a_million_moves(h):
    R, N, sweeps = 1000, 10, 100  # R * N * sweeps = 1e6 proposals
    eta = sample_canonical_gaussian(N, 0.7, 4, replicas=R).eta
    s0 = eta.sum(axis=1).copy()
    run_exchange_mcmc(h, eta, sweeps, 5, sigma=1.0, pairing="bond")
    assert np.max(np.abs(eta.sum(axis=1) - s0)) < 1e-9


def test_equilibrium_matches_importance_sampling_oracle():
    eta = sample_equilibrium(ANH, 8, 0.0, 100_000, 11)
    # translation average over the ring; replicas are independent
    c00, se00 = _mean_se((eta * eta).mean(axis=1))
    c01, se01 = _mean_se((eta * np.roll(eta, -1, axis=1)).mean(axis=1))
    assert abs(c00 - IS_C00) < 3 * np.hypot(se00, IS_C00_SE)
    assert abs(c01 - IS_C01) < 3 * np.hypot(se01, IS_C01_SE)


def test_bond_mcmc_matches_importance_sampling_oracle():
    init = sample_canonical_gaussian(8, 0.0, 13, replicas=20_000)
    cfg = sample_canonical_mcmc(ANH, 8, 0.0, sweeps=200, rng=12, init=init)
    eta = cfg.eta
    c01, se = _mean_se((eta * np.roll(eta, -1, axis=1)).mean(axis=1))
    assert abs(c01 - IS_C01) < 3 * np.hypot(se, IS_C01_SE)


def test_tuning_warning():
    eta = np.zeros((4, 8))
    with pytest.warns(TuningWarning):
        run_exchange_mcmc(ANH, eta, 5, 0, sigma=100.0)


@pytest.mark.parametrize("h", [ANH, HamiltonianSpec(gaussian_plus_logcosh(1.0), gaussian_plus_logcosh(0.5))], ids=["product", "pair"])
def test_exchange_energy_difference_matches_hamiltonian(h):
    gen = np.random.default_rng(0)
    eta = gen.normal(size=(50, 5))
    left, right = np.array([1]), np.array([2])
    delta = gen.normal(size=(50, 1))
    moved = eta.copy()
    moved[:, 1] += delta[:, 0]
    moved[:, 2] -= delta[:, 0]
    dE = _pair_delta_energy(h, eta, left, right, delta, True)[:, 0]
    np.testing.assert_allclose(dE, hamiltonian(h, moved) - hamiltonian(h, eta), atol=1e-10)


@pytest.mark.parametrize("h", [ANH, HamiltonianSpec(gaussian_plus_logcosh(1.0), gaussian_plus_logcosh(0.5))], ids=["product", "pair"])
def test_detailed_balance_three_sites(h):
    # kernel density for moving mass delta across bond (0,1):
    # pi(eta) q(delta) min(1, exp(-dE)); q symmetric Gaussian
    sigma = 1.0
    x = np.linspace(-3, 3, 41)
    X, Y, D = np.meshgrid(x, x, np.linspace(-2, 2, 41), indexing="ij")
    eta = np.stack([X.ravel(), Y.ravel(), -(X + Y).ravel()], axis=1)
    d = D.ravel()[:, None]
    left, right = np.array([0]), np.array([1])
    fwd = _pair_delta_energy(h, eta, left, right, d, True)[:, 0]
    moved = eta.copy()
    moved[:, 0] += d[:, 0]
    moved[:, 1] -= d[:, 0]
    bwd = _pair_delta_energy(h, moved, left, right, -d, True)[:, 0]
    q = np.exp(-0.5 * (d[:, 0] / sigma) ** 2)
    flow_f = np.exp(-hamiltonian(h, eta)) * q * np.minimum(1, np.exp(-fwd))
    flow_b = np.exp(-hamiltonian(h, moved)) * q * np.minimum(1, np.exp(-bwd))
    cell = (x[1] - x[0]) ** 2 * (4 / 40)
    assert np.sum(np.abs(flow_f - flow_b)) * cell < 1e-8


def test_ess_white_noise():
    x = np.random.default_rng(0).standard_normal(10_000)
    assert effective_sample_size(x) == pytest.approx(10_000, rel=0.1)


def test_ess_ar1():
    n, phi = 200_000, 0.9
    gen = np.random.default_rng(1)
    e = gen.standard_normal(n)
    x = np.empty(n)
    x[0] = e[0] / np.sqrt(1 - phi**2)
    for k in range(1, n):
        x[k] = phi * x[k - 1] + e[k]
    assert effective_sample_size(x) == pytest.approx(n * (1 - phi) / (1 + phi), rel=0.15)


def test_ess_errors():
    with pytest.raises(UndefinedESSError):
        effective_sample_size(np.ones(200))
    with pytest.raises(ValueError):
        effective_sample_size(np.arange(50.0))


@settings(max_examples=20, deadline=None)
@given(N=st.integers(3, 20), rho=st.floats(-5, 5), seed=st.integers(0, 2**32))
def test_config_csv_roundtrip(N, rho, seed, tmp_path_factory):
    cfg = sample_canonical_gaussian(N, rho, seed)
    path = tmp_path_factory.mktemp("cfg") / "c.csv"
    write_config_csv(path, cfg, seed)
    back, s = read_config_csv(path)
    assert s == seed and back.rho == rho
    np.testing.assert_array_equal(back.eta, cfg.eta)
    assert path.read_text().startswith(f"# N={N} rho=")


def test_field_config_sum_check():
    with pytest.raises(ValueError):
        FieldConfig(np.array([1.0, 0, 0]), 0.0).check_sum()
