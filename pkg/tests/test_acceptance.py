"""Acceptance suite: ten criteria at full statistical size.

Run with ``pytest -m acceptance -rA``; a summary line per criterion is printed
at the end of the session.  Replica counts come from the checked-in files in
``configs/acceptance``; ``GLWALK_ACCEPTANCE_SCALE`` (default 1) multiplies
them for quicker smoke runs, at which point the tolerances are no longer the
calibrated ones.
"""

import math
import os
from pathlib import Path

import numpy as np
import pytest

from glwalk import cli
from glwalk import estimators as est
from glwalk import spectral as sp
from glwalk.dynamics import evolve
from glwalk.potential import HamiltonianSpec, gaussian, gaussian_plus_logcosh
from glwalk.sampler import FieldConfig, RngStream, sample_equilibrium
from glwalk.walk import kernel_estimate

pytestmark = [pytest.mark.acceptance, pytest.mark.slow]

CONFIGS = Path(__file__).resolve().parents[1] / "configs" / "acceptance"
SCALE = float(os.environ.get("GLWALK_ACCEPTANCE_SCALE", "1"))

GAUSS = HamiltonianSpec(gaussian())
ANH = HamiltonianSpec(gaussian_plus_logcosh(1.0))


def load(name, **overrides):
    import yaml

    path = CONFIGS / f"{name}.yaml"
    with open(path) as fh:
        experiment = yaml.safe_load(fh)["experiment"]
    cfg = cli.load_config(experiment, str(path), overrides)
    if SCALE != 1:
        cfg = cfg.model_copy(update={"replicas": max(2, int(round(cfg.replicas * SCALE)))})
    return cfg


def joint(cfg):
    return est.joint_run(cfg.hamiltonian(), cfg.N, cfg.rho, cfg.times, cfg.offsets, cfg.replicas, RngStream(cfg.seed), cfg.dt, cfg.walks_per_replica, parallelism=cfg.parallelism)


def frac_max(z):
    z = np.abs(np.asarray(z))
    return f"{np.mean(z < 3):.3f} below 3, max {np.max(z):.2f}"


# ---------------------------------------------------------------- criterion 1


@pytest.mark.criterion(1)
@pytest.mark.parametrize("N", [4, 8, 64])
def test_witten_covariance_harmonic(N, record_property):
    w = sp.witten_check_gaussian(N)
    record_property("detail", f"N={N}: {w.max_discrepancy:.1e}")
    assert w.max_discrepancy < 1e-10


# ---------------------------------------------------------------- criterion 2


@pytest.fixture(scope="module")
def gaussian_identity():
    cfg = load("identity_gaussian")
    return est.identity_from_run(joint(cfg))


@pytest.mark.criterion(2)
def test_identity_harmonic_matches_closed_form(gaussian_identity, record_property):
    z_l, z_r = est.gaussian_oracle_zscores(gaussian_identity)
    record_property("detail", f"oracle z lhs {frac_max(z_l)}; rhs {frac_max(z_r)}")
    assert est.z_rule(z_l)
    assert est.z_rule(z_r)


@pytest.mark.criterion(2)
def test_identity_harmonic_sides_agree(gaussian_identity, record_property):
    record_property("detail", f"paired z {frac_max(gaussian_identity.z)}")
    assert gaussian_identity.fraction_within >= 0.95


# ------------------------------------------------------------ criteria 3 and 4


@pytest.fixture(scope="module")
def anharmonic_run():
    return joint(load("identity_anharmonic"))


@pytest.fixture(scope="module")
def anharmonic_run_half_dt():
    return joint(load("identity_anharmonic_half_dt"))


@pytest.mark.criterion(3)
def test_identity_anharmonic(anharmonic_run, record_property):
    res = est.identity_from_run(anharmonic_run)
    record_property("detail", f"dt={anharmonic_run.dt:g}: paired z {frac_max(res.z)}")
    assert res.fraction_within >= 0.95
    assert res.max_abs_z <= 4.0


@pytest.mark.criterion(3)
def test_identity_anharmonic_half_step(anharmonic_run, anharmonic_run_half_dt, record_property):
    a = est.identity_from_run(anharmonic_run)
    b = est.identity_from_run(anharmonic_run_half_dt)
    assert b.fraction_within >= 0.95 and b.max_abs_z <= 4.0
    # step-size stability: each side agrees between dt and dt/2
    z = [(x.estimate - y.estimate) / np.hypot(x.stderr, y.stderr) for x, y in ((a.lhs, b.lhs), (a.rhs, b.rhs))]
    record_property("detail", f"dt/2: paired z {frac_max(b.z)}; lhs dt vs dt/2 {frac_max(z[0])}; rhs {frac_max(z[1])}")
    assert est.z_rule(z[0])
    assert est.z_rule(z[1])


@pytest.mark.criterion(4)
def test_bounds_anharmonic(anharmonic_run, record_property):
    cfg = load("bounds_anharmonic")
    res = est.bounds_from_run(anharmonic_run, cfg.hamiltonian())
    r = res.ratio[res.tested]
    record_property("detail", f"{int(res.tested.sum())} points, ratio in [{r.min():.3f}, {r.max():.3f}], skipped {len(res.skipped)}")
    assert (res.lower, res.upper) == (0.5, 1.0)
    assert res.tested.sum() >= 10
    assert res.all_within


# ---------------------------------------------------------------- criterion 5


@pytest.mark.criterion(5)
def test_monotone_coupling(record_property):
    out = cli.execute(load("monotonicity"))
    s = out.summary
    record_property("detail", f"{s['ordered_pairs']}/{s['pairs']} ordered; correlation {np.round(s['correlation'], 4).tolist()}")
    if SCALE == 1:
        assert s["pairs"] == 1000
    assert out.checks["ordering"]
    assert out.checks["monotone_correlation"]


# ---------------------------------------------------------------- criterion 6


@pytest.mark.criterion(6)
def test_conservation_million_steps(record_property):
    rho = 0.5
    eta = sample_equilibrium(ANH, 64, rho, 4, 6)
    traj = evolve(FieldConfig(eta, rho), ANH, 1.0e4, 0.01, RngStream(6).generator("dynamics"))
    sums = traj["eta"].sum(axis=-1)
    drift = float(np.max(np.abs(sums[-1] - sums[0])) / (64 * rho))
    record_property("detail", f"relative sum drift {drift:.1e} over 1e6 steps")
    assert drift < 1e-9


@pytest.fixture(scope="module")
def ibp_fields():
    return sample_equilibrium(ANH, 16, 0.2, 400_000, 61)


def _tanh_pair():
    return est.local((0, 1), lambda v: np.tanh(v[..., 0]) + np.tanh(v[..., 1]), None, "tanh(eta0)+tanh(eta1)")


@pytest.mark.criterion(6)
@pytest.mark.parametrize(
    "f,g,b",
    [
        (est.site_value(0), est.site_value(1), 0),
        (est.v_prime_at(1), est.site_value(2), 1),
        (_tanh_pair(), est.site_value(0), 15),
        (est.Observable("local", func=est.clipped_product(), label="clip"), _tanh_pair(), 0),
        (_tanh_pair(), _tanh_pair(), 1),
    ],
    ids=["eta0-eta1", "vprime-eta2", "tanh-eta0", "clip-tanh", "tanh-tanh"],
)
def test_integration_by_parts(f, g, b, ibp_fields, record_property):
    r = est.ibp_residual(f, g, b, ANH, ibp_fields)
    record_property("detail", f"IBP z={r.z:+.2f}")
    assert abs(r.z) < 3


# ---------------------------------------------------------------- criterion 7


def _q(cfg):
    return est.diffusion_coefficient_msd(cfg.hamiltonian(), cfg.N, cfg.rho, cfg.fit_window, cfg.replicas, RngStream(cfg.seed), cfg.dt, cfg.walks_per_replica, parallelism=cfg.parallelism)


@pytest.fixture(scope="module")
def q_anharmonic():
    return _q(load("diffusion_anharmonic"))


@pytest.mark.criterion(7)
def test_diffusion_gaussian(record_property):
    q = _q(load("diffusion_gaussian"))
    record_property("detail", f"harmonic q={q.q:.4f}+-{q.stderr:.4f}")
    assert abs(q.q - 2.0) <= 0.1


@pytest.mark.criterion(7)
def test_diffusion_anharmonic(q_anharmonic, record_property):
    record_property("detail", f"anharmonic q={q_anharmonic.q:.4f}+-{q_anharmonic.stderr:.4f}")
    assert 2.0 <= q_anharmonic.q <= 4.0


@pytest.mark.criterion(7)
def test_variational_upper_bound(q_anharmonic, record_property):
    cfg = load("variational_anharmonic")
    v = est.variational_q_upper(cfg.hamiltonian(), cfg.N, cfg.rho, None, cfg.replicas, RngStream(cfg.seed).generator("cli-variational"))
    se = math.hypot(v.stderr, q_anharmonic.stderr)
    record_property("detail", f"variational {v.q_upper:.4f}+-{v.stderr:.4f}, 2<R1> {v.trivial_bound:.4f}")
    assert v.q_upper >= q_anharmonic.q - 3 * se
    assert v.q_upper <= v.trivial_bound + 3 * v.stderr


# ---------------------------------------------------------------- criterion 8


@pytest.mark.criterion(8)
def test_smoothed_relaxation_gaussian(record_property):
    cfg = load("smoothed_gaussian")
    out = cli.execute(cfg)
    r = out.result
    record_property("detail", f"estimate {r.estimate:.5f}+-{r.stderr:.5f}, exact {r.exact:.5f}")
    assert cfg.eps == 1 / 16 and cfg.t == 1.0
    assert abs(r.estimate - r.exact) <= 3 * r.stderr + 0.1 * abs(r.exact)


# ---------------------------------------------------------------- criterion 9


@pytest.fixture(scope="module")
def kernels():
    out = {}
    for t in (1, 4, 16):
        cfg = load(f"kernel_anharmonic_t{t}")
        out[t] = kernel_estimate(cfg.hamiltonian(), cfg.N, cfg.rho, cfg.t, cfg.replicas, RngStream(cfg.seed), cfg.dt, cfg.walks_per_replica, parallelism=cfg.parallelism)
    return out


@pytest.mark.criterion(9)
def test_kernel_center_scaling(kernels, record_property):
    c = {t: k.at(0)[0] * math.sqrt(t) for t, k in kernels.items()}
    record_property("detail", "sqrt(t) P(0): " + ", ".join(f"t={t}: {v:.4f}" for t, v in c.items()))
    assert max(c.values()) <= 2 * min(c.values())


@pytest.mark.criterion(9)
@pytest.mark.parametrize("t", [1, 4, 16])
def test_kernel_tail_log_linear(kernels, t, record_property):
    k = kernels[t]
    u = np.abs(k.offsets) / math.sqrt(t)
    sel = (u >= 1) & (u <= 3) & (k.probability > 0)
    slope, icpt = np.polyfit(u[sel], np.log(k.probability[sel]), 1)
    pred = icpt + slope * u[sel]
    y = np.log(k.probability[sel])
    r2 = 1 - np.sum((y - pred) ** 2) / np.sum((y - y.mean()) ** 2)
    record_property("detail", f"t={t}: tail slope {slope:.3f}, R2 {r2:.4f} over {int(sel.sum())} offsets")
    assert sel.sum() >= 6
    assert slope < 0
    assert r2 >= 0.95


# --------------------------------------------------------------- criterion 10


@pytest.mark.criterion(10)
@pytest.mark.parametrize("d", [1, 2])
@pytest.mark.parametrize("N", [3, 8, 32, 64, 128])
def test_spectrum_matches_circulant(N, d, record_property):
    ev = sp.q_spectrum(N, d)
    err = float(np.max(np.abs(ev - sp.circulant_spectrum(N, d))))
    if N == 128:
        record_property("detail", f"N=128 d={d}: {err:.1e}")
    assert err <= 1e-12


@pytest.mark.criterion(10)
@pytest.mark.parametrize("name", ["spectral_d1", "spectral_d2"])
def test_gap_inequality(name, record_property):
    cfg = load(name)
    rep = sp.discrete_gap_inequality(cfg.N, cfg.d, cfg.trials, RngStream(cfg.seed).generator("cli-gap"))
    record_property("detail", f"d={cfg.d}: min ratio - |lambda2| = {rep.min_ratio - abs(rep.lambda2):.1e} ({rep.argmin_kind})")
    assert rep.n_fields >= 10_000
    assert rep.holds


@pytest.mark.criterion(10)
@pytest.mark.parametrize("N", [8, 16, 32])
def test_dynamic_gap_gaussian(N, record_property):
    out = cli.execute(load(f"gap_gaussian_n{N}"))
    g = out.summary["dynamic"]
    record_property("detail", f"N={N}: rate {g['rate']:.5f}+-{g['stderr']:.5f} vs {g['gaussian_rate']:.5f}")
    assert out.checks["dynamic_matches"]


@pytest.mark.criterion(10)
def test_dynamic_gap_anharmonic(record_property):
    out = cli.execute(load("gap_anharmonic_n16"))
    g = out.summary["dynamic"]
    record_property("detail", f"anharmonic N=16: rate {g['rate']:.5f}+-{g['stderr']:.5f}, bound {g['bound']:.5f}")
    assert out.checks["dynamic_bound"]
