import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import ive

from glwalk import estimators as est
from glwalk.errors import ConfigurationError, DiagnosticError, HorizonError, ModelError, TruncationWarning
from glwalk.potential import HamiltonianSpec, gaussian, gaussian_plus_logcosh
from glwalk.sampler import sample_equilibrium
from glwalk.spectral import gaussian_exact_row

GAUSS = HamiltonianSpec(gaussian())
ANH = HamiltonianSpec(gaussian_plus_logcosh(1.0))
PAIR = HamiltonianSpec(gaussian(), gaussian())

# importance-sampling oracle, N=8, rho=0, a=1 (see test_sampler)
IS_C00, IS_C00_SE = 0.509887, 0.000059
IS_R1, IS_R1_SE = 1.727334, 0.000024


def tanh_sum():
    return est.local(
        (0, 1),
        lambda v: np.tanh(v[..., 0]) + np.tanh(v[..., 1]),
        lambda v: 1.0 - np.tanh(v) ** 2,
        "tanh(eta0)+tanh(eta1)",
    )


# ------------------------------------------------------------- observables


def test_observable_values_and_gradients():
    eta = np.random.default_rng(0).normal(size=(3, 7))
    f = est.v_prime_at(2)
    np.testing.assert_allclose(f.value(eta, ANH), ANH.V1.first(eta[:, 2]))
    g = f.grad(eta, ANH)
    assert np.count_nonzero(g[0]) == 1
    assert g[0, 2] == pytest.approx(ANH.V1.second(eta[0, 2]))
    np.testing.assert_allclose(est.site_value(-1).value(eta), eta[:, 6])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=5, max_size=9))
def test_bond_gradient_matches_finite_difference(vals):
    eta = np.array(vals)[None, :]
    obs = est.Observable("local", func=est.clipped_product(), label="clip")
    bg = obs.bond_grad(eta)[0]
    e = 1e-6
    for b in range(eta.shape[1]):
        up, dn = eta.copy(), eta.copy()
        j = (b + 1) % eta.shape[1]
        up[0, j] += e
        up[0, b] -= e
        dn[0, j] -= e
        dn[0, b] += e
        fd = (obs.value(up) - obs.value(dn))[0] / (2 * e)
        assert bg[b] == pytest.approx(fd, abs=1e-6)


def test_local_function_fd_fallback():
    eta = np.random.default_rng(1).normal(size=(4, 6))
    analytic = tanh_sum()
    numeric = est.local((0, 1), analytic.func.fn, None, "fd")
    np.testing.assert_allclose(numeric.grad(eta), analytic.grad(eta), atol=1e-8)


def test_translates_match_shifted_values():
    eta = np.random.default_rng(2).normal(size=(2, 6))
    obs = tanh_sum()
    t = obs.translates(eta)
    for j in range(6):
        np.testing.assert_allclose(t[:, j], obs.value(np.roll(eta, -j, axis=1)))


def test_smoothed_field_weights():
    obs = est.smoothed_field(est.triangle, 0.25, 0.5)
    assert obs.offsets == tuple(range(-2, 7))
    np.testing.assert_allclose(obs.weights, [0, 0.25, 0.5, 0.75, 1, 0.75, 0.5, 0.25, 0])
    sampled = est.smoothed_field(([-1, 0, 1], [0, 1, 0]), 0.25)
    np.testing.assert_allclose(sampled.weights, est.smoothed_field(est.triangle, 0.25).weights)
    with pytest.raises(ConfigurationError):
        est.smoothed_field(([-2, 0, 2], [0, 1, 0]), 0.25)


def test_support_bonds():
    assert est.site_value(0).support_bonds(8).tolist() == [0, 7]
    assert tanh_sum().support_bonds(8).tolist() == [0, 1, 7]


# -------------------------------------------------------------- statistics


def test_jackknife_matches_sample_covariance():
    gen = np.random.default_rng(3)
    x, y = gen.normal(size=(2, 5000))
    y = 0.5 * x + y
    e, se = est.covariance_jackknife(x * y, x, y)
    assert e == pytest.approx(np.cov(x, y, bias=True)[0, 1], abs=1e-12)
    assert 0.01 < se < 0.03


def test_cross_translates_brute_force():
    gen = np.random.default_rng(4)
    f, g = gen.normal(size=(2, 3, 9))
    c = est.cross_translates(f, g)
    for i in range(9):
        np.testing.assert_allclose(c[:, i], (f * np.roll(g, -i, axis=1)).mean(axis=1), atol=1e-12)


def test_ratio_se_constant_ratio():
    den = np.random.default_rng(5).uniform(1, 2, 100)
    r, se = est.ratio_se(3 * den, den)
    assert r == pytest.approx(3.0) and se == pytest.approx(0.0, abs=1e-12)


# ------------------------------------------------------ static covariances


@pytest.mark.parametrize("g,target", [(est.site_value(0), 1 - 1 / 16), (est.site_value(1), -1 / 16)])
def test_static_covariance_gaussian(g, target):
    e = est.static_covariance(est.site_value(0), g, GAUSS, 16, 0.0, 20_000, 0)
    assert abs(e.z(target)) < 3


def test_static_covariance_constant_is_zero():
    e = est.static_covariance(est.constant(2.0), est.constant(2.0), ANH, 8, 0.0, 200, 0)
    assert e.value == pytest.approx(0.0, abs=1e-12)


def test_static_covariance_needs_samples():
    with pytest.raises(ConfigurationError):
        est.static_covariance(est.site_value(0), est.site_value(0), GAUSS, 8, 0.0, 50, 0)


def test_susceptibility():
    assert abs(est.susceptibility(GAUSS, 16, 0.0, 20_000, 1).z(1 - 1 / 16)) < 3
    big = est.susceptibility(GAUSS, 1024, 0.0, 200, 2)
    assert big.value == pytest.approx(1.0, abs=0.01)
    anh = est.susceptibility(ANH, 8, 0.0, 50_000, 3)
    assert abs(anh.value - IS_C00) < 3 * np.hypot(anh.stderr, IS_C00_SE)


def test_v_prime_covariance_sum_rule():
    # <V'(eta_0); eta_i> = delta_{i0} - 1/N for any product measure
    eta = sample_equilibrium(ANH, 8, 0.3, 20_000, 4)
    for i, target in [(0, 1 - 1 / 8), (1, -1 / 8), (3, -1 / 8)]:
        e = est.static_covariance(est.v_prime_at(0), est.site_value(i), ANH, 8, 0.3, 0, None, eta=eta)
        assert abs(e.z(target)) < 3


# ---------------------------------------------------- dynamic covariances


def test_space_time_covariance_gaussian_oracle():
    N, times = 32, [0.0, 0.5]
    row = gaussian_exact_row(N, np.array(times))
    for i in (0, 1, 2):
        s = est.space_time_covariance(est.site_value(0), est.site_value(i), GAUSS, N, 0.0, times, 4000, 5, dt=0.005)
        for k in range(2):
            assert abs(s.estimate[k] - row[k, i]) < 3 * s.stderr[k]
    assert row[1, 1] == pytest.approx(ive(1, 1.0) - 1 / N, abs=1e-6)  # exp(-2t) I_1(2t) - 1/N at t = 0.5


def test_space_time_covariance_reversible():
    f, g = est.v_prime_at(0), est.site_value(1)
    a = est.space_time_covariance(f, g, ANH, 32, 0.0, [0.0, 0.5], 4000, 6, dt=0.01)
    b = est.space_time_covariance(g, f, ANH, 32, 0.0, [0.0, 0.5], 4000, 7, dt=0.01)
    assert abs(a.estimate[1] - b.estimate[1]) < 3 * np.hypot(a.stderr[1], b.stderr[1])


def test_space_time_horizon():
    with pytest.raises(HorizonError):
        est.space_time_covariance(est.site_value(0), est.site_value(0), GAUSS, 8, 0.0, [0.0, 5.0], 100, 0, dt=0.01)


def test_identity_gaussian_small():
    res = est.identity_check(GAUSS, 32, 0.0, [0.0, 0.5], [0, 1, 2], 2000, 8, dt=0.005)
    # t = 0, i = 0: the kernel side is exactly 1 - 1/N
    assert res.rhs.estimate[0] == pytest.approx(1 - 1 / 32) and res.rhs.stderr[0] == 0.0
    assert abs(res.lhs.estimate[0] - (1 - 1 / 32)) < 3 * res.lhs.stderr[0]
    assert res.max_abs_z < 3
    assert len(res.rows()) == 6


def test_gaussian_oracle_zscores():
    res = est.identity_check(GAUSS, 32, 0.0, [0.0, 0.5], [0, 1, 2], 2000, 8, dt=0.005)
    z_l, z_r = est.gaussian_oracle_zscores(res)
    # t = 0 kernel side is exact: zero error and zero z
    assert z_r[0] == 0.0
    assert est.z_rule(z_l) and est.z_rule(z_r)


@pytest.mark.parametrize(
    "z,ok",
    [
        (np.zeros(20), True),
        (np.r_[np.zeros(19), 3.5], True),
        (np.r_[np.zeros(19), 4.5], False),
        (np.r_[np.zeros(18), 3.5, 3.5], False),
        (np.r_[np.zeros(19), -np.inf], False),
    ],
)
def test_z_rule(z, ok):
    assert est.z_rule(z) is ok


def test_identity_anharmonic_small():
    res = est.identity_check(ANH, 64, 0.0, [0.5, 1.0], [0, 1, 2, 4], 2000, 9)
    assert res.fraction_within >= 0.95 and res.max_abs_z < 4
    np.testing.assert_allclose(res.rhs.estimate, res.rhs_raw.estimate - 1 / 64)


def test_identity_requires_product():
    with pytest.raises(ModelError):
        est.identity_check(PAIR, 16, 0.0, [0.1], [0], 10, 0)


def test_bounds_gaussian_ratio_is_one():
    res = est.bounds_check(GAUSS, 32, 0.0, [0.5, 1.0], [0, 1], 2000, 10, dt=0.005)
    r = res.ratio[res.tested]
    assert np.all(np.abs(r - 1) < 3 * res.stderr[res.tested])
    assert (res.lower, res.upper) == (1.0, 1.0)


@pytest.mark.parametrize("a", [0.1, 1.0])
def test_bounds_anharmonic_sandwich(a):
    h = HamiltonianSpec(gaussian_plus_logcosh(a))
    res = est.bounds_check(h, 32, 0.0, [0.5, 1.0], [0, 1], 2000, 11)
    assert res.lower == pytest.approx(1 / (1 + a)) and res.upper == 1.0
    assert res.tested.sum() >= 3 and res.all_within


# ----------------------------------------------------- occupation times


@pytest.mark.parametrize(
    "f,g,h,target",
    [
        (est.site_value(0), est.site_value(0), GAUSS, 1 - 1 / 8),
        (est.site_value(0), est.site_value(2), GAUSS, -1 / 8),
        (est.v_prime_at(0), est.site_value(1), ANH, -1 / 8),
    ],
    ids=["gauss-00", "gauss-02", "anh-vprime"],
)
def test_occupation_time_matches_static(f, g, h, target):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncationWarning)
        res = est.occupation_time_covariance(f, g, h, 8, 0.0, 15.0, 2000, 12)
    assert abs(res.estimate - target) < 3 * res.stderr + res.truncation_bound


def test_occupation_time_constant_f():
    res = est.occupation_time_covariance(est.constant(1.0), est.site_value(0), ANH, 8, 0.0, 5.0, 10, 0)
    assert res.estimate == 0.0 and res.stderr == 0.0


def test_occupation_time_truncation_warning():
    with pytest.warns(TruncationWarning):
        est.occupation_time_covariance(est.site_value(0), est.site_value(0), GAUSS, 8, 0.0, 0.2, 50, 0)


# ------------------------------------------------- diffusion coefficient


def test_msd_q_gaussian():
    q = est.diffusion_coefficient_msd(GAUSS, 128, 0.0, (2.0, 6.0), 400, 13, walks_per_replica=16)
    assert q.q == pytest.approx(2.0, rel=0.05)


def test_msd_q_anharmonic_step_halving():
    a = est.diffusion_coefficient_msd(ANH, 128, 0.0, (2.0, 6.0), 400, 14, walks_per_replica=16)
    b = est.diffusion_coefficient_msd(ANH, 128, 0.0, (2.0, 6.0), 400, 15, dt=a.series.metadata.get("dt", 0.025) / 2, walks_per_replica=16)
    assert 2.0 - a.ci <= a.q <= 4.0 + a.ci
    assert abs(a.q - b.q) < a.ci + b.ci


def test_msd_q_diagnostic():
    with pytest.raises(DiagnosticError):
        est.diffusion_coefficient_msd(GAUSS, 64, 0.0, (1.0, 2.0), 20, 0, walks_per_replica=2, min_r2=1.01)


# -------------------------------------------------------- variational q


def test_variational_empty_basis():
    r = est.variational_q_upper(ANH, 8, 0.0, [], 50_000, 16)
    assert abs(r.q_upper - 2 * IS_R1) < 3 * np.hypot(r.stderr, 2 * IS_R1_SE)
    assert r.q_upper == pytest.approx(r.trivial_bound)


def test_variational_gaussian_is_two():
    r = est.variational_q_upper(GAUSS, 16, 0.0, None, 5000, 17)
    assert r.trivial_bound == pytest.approx(2.0)
    assert abs(r.q_upper - 2.0) < max(3 * r.stderr, 1e-3)


def test_variational_anharmonic_improves_and_bounds():
    cat = est.basis_catalog(ANH)
    r = est.variational_q_upper(ANH, 16, 0.0, [cat["tanh0"], cat["tanh1"]], 10_000, 18)
    assert 2.0 <= r.q_upper <= r.trivial_bound + 3 * r.stderr
    full = est.variational_q_upper(ANH, 16, 0.0, None, 10_000, 18)
    assert full.q_upper < full.trivial_bound - 3 * full.stderr


def test_default_basis_drops_constant_curvature():
    assert len(est.default_basis(GAUSS)) == 4
    assert len(est.default_basis(ANH)) == 5


# ---------------------------------------------------- smoothed relaxation


def test_smoothed_zero_profile():
    r = est.smoothed_relaxation(GAUSS, 64, 0.0, lambda x: np.zeros_like(x), 0.125, 0.0, 1.0, 10, 0)
    assert r.estimate == 0.0 and r.exact == 0.0


def test_smoothed_far_away():
    # 5 sqrt(q t) = 3.5 at t = 0.25
    r = est.smoothed_relaxation(GAUSS, 256, 0.0, est.triangle, 0.125, 4.0, 0.25, 400, 19)
    assert abs(r.prediction) < 1e-5
    # on the torus only the zero-mode correction -sum(w)/N survives
    assert r.exact == pytest.approx(r.prediction_finite_volume, abs=1e-5)
    assert abs(r.estimate - r.exact) < 3 * r.stderr


def test_smoothed_gaussian_small():
    r = est.smoothed_relaxation(GAUSS, 128, 0.0, est.triangle, 0.125, 0.0, 1.0, 800, 20)
    assert abs(r.estimate - r.exact) < 3 * r.stderr + 0.1 * abs(r.exact)
    assert r.prediction == pytest.approx(est.gaussian_profile_prediction(est.triangle, 2.0, 1.0, 0.0))


# ------------------------------------------------ integration by parts


@pytest.fixture(scope="module")
def anh_fields():
    return sample_equilibrium(ANH, 8, 0.2, 100_000, 21)


@pytest.mark.parametrize(
    "f,g,b",
    [
        (est.site_value(0), est.site_value(1), 0),
        (est.v_prime_at(1), est.site_value(2), 1),
        (tanh_sum(), est.site_value(0), 7),
        (est.Observable("local", func=est.clipped_product(), label="clip"), tanh_sum(), 0),
        (tanh_sum(), tanh_sum(), 1),
    ],
)
def test_integration_by_parts(f, g, b, anh_fields):
    r = est.ibp_residual(f, g, b, ANH, anh_fields)
    assert abs(r.z) < 3


@pytest.mark.parametrize("h", [GAUSS, ANH], ids=["gauss", "anh"])
def test_dirichlet_slope_site_value(h):
    # grad of eta_0 has two unit bond components, so E(f, f) = 2
    r = est.dirichlet_slope(est.site_value(0), h, 16, 0.0, 8000, 22)
    assert r.value == pytest.approx(2.0, rel=0.1)
    eta = sample_equilibrium(h, 16, 0.0, 100, 0)
    assert est.dirichlet_form(est.site_value(0), h, eta).value == pytest.approx(2.0)


# ------------------------------------------------------ monotone coupling


def test_monotone_coupling_preserves_order():
    r = est.monotone_coupling_check(ANH, 16, 0.0, 200, 0.2, 1e-3, 23)
    assert r.ordered_pairs == r.pairs and r.fraction == 1.0


def test_monotone_correlation_nonnegative():
    s = est.space_time_covariance(est.site_value(0), tanh_sum(), ANH, 32, 0.0, [0.0, 0.5, 1.0], 2000, 24, dt=0.01)
    assert np.all(s.estimate >= -3 * s.stderr)
