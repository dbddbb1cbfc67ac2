"""Monte Carlo estimators for static and space-time correlations, the walk
representation of correlations, relaxation bounds and the diffusion coefficient.

Conventions
-----------
* Fields are ``(replicas, N)`` arrays on the ring; ``f o tau_j`` denotes an
  observable evaluated on the field shifted by ``j``.
* Translation averaging: every estimator of an expectation of a local
  observable averages over all ``N`` translates of each replica, which is
  exact in law on the torus and costs one FFT.
* Standard errors are computed over independent replicas (jackknife or the
  delta method, which coincide to first order).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np
from scipy import integrate

from glwalk.dynamics import Integrator, check_step, record_steps
from glwalk.errors import (
    ConfigurationError,
    DiagnosticError,
    HorizonError,
    ModelError,
    RegularizationWarning,
    TruncationWarning,
)
from glwalk.parallel import BLOCK_SIZE, concat, map_blocks
from glwalk.potential import HamiltonianSpec, site_force
from glwalk.sampler import as_generator, sample_equilibrium
from glwalk.spectral import gaussian_exact_row, spectral_gap
from glwalk.walk import CorrelationSeries, default_dt, msd, simulate_joint, spread_starts

FD_STEP = 1e-6

# ------------------------------------------------------------------ observables


@dataclass(frozen=True)
class LocalFunction:
    """A function of the field values on a finite window of sites.

    Parameters
    ----------
    support : tuple of int
        Site offsets the function reads, relative to the origin.
    fn : callable
        Maps an array ``(..., len(support))`` of field values to ``(...)``.
    grad : callable, optional
        Partial derivatives, same input, output ``(..., len(support))``.
        Central finite differences are used when absent.
    """

    support: tuple[int, ...]
    fn: Callable
    grad: Callable | None = None
    name: str = "local"

    def __call__(self, vals):
        return self.fn(vals)

    def partials(self, vals: np.ndarray) -> np.ndarray:
        if self.grad is not None:
            return np.asarray(self.grad(vals), dtype=float)
        out = np.empty(vals.shape)
        for k in range(vals.shape[-1]):
            up, dn = vals.copy(), vals.copy()
            up[..., k] += FD_STEP
            dn[..., k] -= FD_STEP
            out[..., k] = (self.fn(up) - self.fn(dn)) / (2 * FD_STEP)
        return out


def _profile(phi) -> Callable:
    """Callable profile from a callable or a sampled ``(x, values)`` pair, zero off ``[-1, 1]``."""
    if callable(phi):
        fn = phi
    else:
        xs, ys = (np.asarray(a, dtype=float) for a in phi)
        if xs.min() < -1 - 1e-12 or xs.max() > 1 + 1e-12:
            raise ConfigurationError("sampled profile must live on [-1, 1]")
        fn = lambda x: np.interp(x, xs, ys, left=0.0, right=0.0)
    return lambda x: np.where(np.abs(x) <= 1.0, fn(np.clip(x, -1.0, 1.0)), 0.0)


def triangle(x):
    """Triangular bump ``max(0, 1 - |x|)``."""
    return np.maximum(0.0, 1.0 - np.abs(x))


@dataclass(frozen=True)
class Observable:
    """Local observable of the field with a known site gradient.

    Build instances with :func:`site_value`, :func:`v_prime_at`,
    :func:`smoothed_field`, :func:`local` or :func:`constant`.  Every kind is
    a weighted sum over a window of sites of either ``eta``, ``V1'(eta)`` or
    a :class:`LocalFunction`.
    """

    kind: str
    offsets: tuple[int, ...] = ()
    weights: tuple[float, ...] = ()
    func: LocalFunction | None = None
    value_const: float = 0.0
    label: str = ""

    @property
    def name(self) -> str:
        return self.label or self.kind

    @property
    def support(self) -> tuple[int, ...]:
        if self.kind == "local":
            return tuple(self.func.support)
        if self.kind == "constant":
            return ()
        return tuple(o for o, w in zip(self.offsets, self.weights) if w != 0.0)

    def _site_term(self, eta, h):
        if self.kind == "v_prime":
            if h is None:
                raise ValueError("v_prime observables need the Hamiltonian")
            return h.V1.first(eta)
        return eta

    def translates(self, eta: np.ndarray, h: HamiltonianSpec | None = None) -> np.ndarray:
        """``(..., N)`` array whose entry ``j`` is the observable on ``tau_j eta``."""
        eta = np.asarray(eta, dtype=float)
        if self.kind == "constant":
            return np.full(eta.shape, self.value_const)
        if self.kind == "local":
            vals = np.stack([np.roll(eta, -o, axis=-1) for o in self.func.support], axis=-1)
            return np.asarray(self.func(vals), dtype=float)
        base = self._site_term(eta, h)
        out = np.zeros_like(eta)
        for o, w in zip(self.offsets, self.weights):
            if w != 0.0:
                out += w * np.roll(base, -o, axis=-1)
        return out

    def value(self, eta: np.ndarray, h: HamiltonianSpec | None = None) -> np.ndarray:
        eta = np.asarray(eta, dtype=float)
        N = eta.shape[-1]
        if self.kind == "constant":
            return np.full(eta.shape[:-1], self.value_const)
        if self.kind == "local":
            idx = np.asarray(self.func.support) % N
            return np.asarray(self.func(eta[..., idx]), dtype=float)
        idx = np.asarray(self.offsets, dtype=int) % N
        base = self._site_term(eta[..., idx], h)
        return base @ np.asarray(self.weights)

    def grad(self, eta: np.ndarray, h: HamiltonianSpec | None = None) -> np.ndarray:
        """Site gradient ``d f / d eta_x`` at the origin translate, shape ``(..., N)``."""
        eta = np.asarray(eta, dtype=float)
        N = eta.shape[-1]
        out = np.zeros_like(eta)
        if self.kind == "constant":
            return out
        if self.kind == "local":
            idx = np.asarray(self.func.support) % N
            part = self.func.partials(eta[..., idx])
            for k, i in enumerate(idx):
                out[..., i] += part[..., k]
            return out
        for o, w in zip(self.offsets, self.weights):
            i = o % N
            if self.kind == "v_prime":
                out[..., i] += w * h.V1.second(eta[..., i])
            else:
                out[..., i] += w
        return out

    def bond_grad(self, eta: np.ndarray, h: HamiltonianSpec | None = None) -> np.ndarray:
        """``d_b f = df/deta_{i+1} - df/deta_i`` for every bond ``b = (i, i+1)``."""
        g = self.grad(eta, h)
        return np.roll(g, -1, axis=-1) - g

    def support_bonds(self, N: int) -> np.ndarray:
        """Bonds on which ``d_b f`` can be non-zero."""
        sites = {s % N for s in self.support}
        return np.array(sorted({(s - 1) % N for s in sites} | sites), dtype=np.int64)


def site_value(i: int = 0) -> Observable:
    return Observable("site", (int(i),), (1.0,), label=f"eta_{i}")


def v_prime_at(i: int = 0) -> Observable:
    return Observable("v_prime", (int(i),), (1.0,), label=f"V'(eta_{i})")


def constant(c: float = 1.0) -> Observable:
    return Observable("constant", value_const=float(c), label=f"const({c})")


def local(support, fn, grad=None, name: str = "local") -> Observable:
    return Observable("local", func=LocalFunction(tuple(int(s) for s in support), fn, grad, name), label=name)


def smoothed_field(phi, eps: float, x: float = 0.0) -> Observable:
    """``sum_i phi(eps i) eta_{i + floor(x/eps)}`` for a profile supported on ``[-1, 1]``.

    ``phi`` is a callable or a sampled profile ``(x_samples, values)``.
    """
    if not eps > 0:
        raise ConfigurationError("eps must be positive")
    prof = _profile(phi)
    K = int(math.floor(1.0 / eps + 1e-9))
    ks = np.arange(-K, K + 1)
    w = np.asarray(prof(eps * ks), dtype=float)
    s = int(math.floor(x / eps + 1e-9))
    return Observable("site", tuple(int(k + s) for k in ks), tuple(float(v) for v in w), label=f"smoothed(eps={eps},x={x})")


# ---------------------------------------------------------------- statistics


@dataclass
class Estimate:
    value: float
    stderr: float
    n: int

    def z(self, target: float) -> float:
        return (self.value - target) / self.stderr if self.stderr > 0 else (0.0 if self.value == target else math.inf)

    def to_dict(self) -> dict:
        return {"value": self.value, "stderr": self.stderr, "n": self.n}


def mean_se(x: np.ndarray, axis: int = 0) -> tuple[np.ndarray, np.ndarray]:
    n = x.shape[axis]
    m = x.mean(axis=axis)
    se = x.std(axis=axis, ddof=1) / math.sqrt(n) if n > 1 else np.zeros_like(m)
    return m, se


def covariance_jackknife(a: np.ndarray, b: np.ndarray, c: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Estimate ``E[a] - E[b] E[c]`` and its delete-one jackknife standard error.

    ``a, b, c`` are per-replica values along axis 0 (any trailing shape).
    """
    n = a.shape[0]
    Sa, Sb, Sc = a.sum(0), b.sum(0), c.sum(0)
    est = Sa / n - (Sb / n) * (Sc / n)
    if n < 2:
        return est, np.zeros_like(est)
    loo = (Sa - a) / (n - 1) - ((Sb - b) / (n - 1)) * ((Sc - c) / (n - 1))
    se = np.sqrt((n - 1) / n * np.sum((loo - loo.mean(0)) ** 2, axis=0))
    return est, se


def ratio_se(num: np.ndarray, den: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """``mean(num) / mean(den)`` with delta-method standard error over replicas."""
    n = num.shape[0]
    mn, md = num.mean(0), den.mean(0)
    r = mn / md
    infl = (num - r * den) / md
    return r, infl.std(0, ddof=1) / math.sqrt(n)


def cross_translates(f_t: np.ndarray, g_t: np.ndarray) -> np.ndarray:
    """``c[..., i] = (1/N) sum_j f_t[..., j] g_t[..., j + i]`` by FFT."""
    N = f_t.shape[-1]
    F = np.fft.rfft(f_t, axis=-1)
    G = np.fft.rfft(g_t, axis=-1)
    return np.fft.irfft(np.conj(F) * G, n=N, axis=-1) / N


# ---------------------------------------------------------- static estimators


def _equilibrium(h, N, rho, samples, rng, sampler=None):
    if sampler is not None:
        return np.asarray(sampler(h, N, rho, samples, rng))
    return sample_equilibrium(h, N, rho, samples, as_generator(rng, "static"))


def static_covariance(f: Observable, g: Observable, h: HamiltonianSpec, N: int, rho: float, samples: int, rng, translate: bool = True, eta=None) -> Estimate:
    """``<f; g>`` under the canonical measure with jackknife standard error.

    With ``translate=True`` every draw contributes the average over its
    ``N`` translates.  ``eta`` may supply pre-drawn equilibrium fields.
    """
    if samples < 100 and eta is None:
        raise ConfigurationError("static_covariance needs at least 100 samples")
    eta = _equilibrium(h, N, rho, samples, rng) if eta is None else np.asarray(eta, dtype=float)
    if translate:
        ft, gt = f.translates(eta, h), g.translates(eta, h)
        a, b, c = (ft * gt).mean(-1), ft.mean(-1), gt.mean(-1)
    else:
        fv, gv = f.value(eta, h), g.value(eta, h)
        a, b, c = fv * gv, fv, gv
    est, se = covariance_jackknife(a, b, c)
    return Estimate(float(est), float(se), eta.shape[0])


def susceptibility(h: HamiltonianSpec, N: int, rho: float, samples: int, rng, eta=None) -> Estimate:
    """``chi = <eta_0; eta_0>`` under ``mu_{rho,N}``."""
    return static_covariance(site_value(0), site_value(0), h, N, rho, samples, rng, eta=eta)


# ----------------------------------------------------- space-time correlations


def _horizon_check(h: HamiltonianSpec, N: int, t_max: float, extent: int = 0) -> None:
    spread = 3.0 * math.sqrt(2.0 * h.c_plus * t_max)
    if spread + extent > N / 2:
        raise HorizonError(f"diffusive spread {spread:.1f} (+{extent}) reaches half the torus N/2 = {N / 2}")


def _field_block(h, N, rho, dt, times, f, g, n, stream, block):
    eta = sample_equilibrium(h, N, rho, n, stream.generator("init", block))
    integ = Integrator(h, dt, stream.generator("dynamics", block))
    steps = record_steps(times, dt)
    ft = f.translates(eta, h)
    T = steps.size
    a = np.empty((n, T))
    c = np.empty((n, T))
    k = 0
    for s in range(int(steps[-1]) + 1):
        while k < T and steps[k] == s:
            gt = g.translates(eta, h)
            a[:, k] = (ft * gt).mean(-1)
            c[:, k] = gt.mean(-1)
            k += 1
        if s < steps[-1]:
            integ.step(eta)
    return {"a": a, "b": np.repeat(ft.mean(-1)[:, None], T, axis=1), "c": c}


def space_time_covariance(
    f: Observable,
    g: Observable,
    h: HamiltonianSpec,
    N: int,
    rho: float,
    times: Sequence[float],
    replicas: int,
    rng,
    dt: float | None = None,
    check_horizon: bool = True,
    block_size: int = BLOCK_SIZE,
    parallelism: int = 1,
) -> CorrelationSeries:
    """``<f(eta(0)); g(eta(t))>`` from equilibrium starts, translation averaged.

    Raises
    ------
    HorizonError
        If the diffusive spread over the horizon reaches half the torus
        (disable with ``check_horizon=False`` for deliberate finite-volume runs).
    """
    times = np.asarray(times, dtype=float)
    dt = default_dt(h) if dt is None else dt
    check_step(h, dt)
    if check_horizon:
        ext = max((abs(o) for o in f.support + g.support), default=0)
        _horizon_check(h, N, float(times.max()), ext)
    task = partial(_field_block, h, N, rho, dt, times, f, g)
    res = concat(map_blocks(task, replicas, rng, block_size=block_size, parallelism=parallelism))
    est, se = covariance_jackknife(res["a"], res["b"], res["c"])
    meta = {"N": N, "rho": rho, "dt": dt, "potential": h.to_dict(), "f": f.name, "g": g.name}
    return CorrelationSeries(f"<{f.name}(0);{g.name}(t)>", times, est, se, replicas, metadata=meta)


# ------------------------------------------------------ joint field/walk runs


def _joint_block(h, N, rho, dt, times, offsets, walks, n, stream, block):
    eta = sample_equilibrium(h, N, rho, n, stream.generator("init", block))
    vp0 = h.V1.first(eta)
    e0 = eta - rho
    T, K = len(times), len(offsets)
    lhs = np.empty((n, T, K))
    num = np.empty((n, T, K))
    ker = np.empty((n, T, K))
    offs = np.asarray(offsets)
    idx = offs % N

    def record(k, field, disp):
        centred = field - rho
        lhs[:, k] = cross_translates(vp0, centred)[:, idx]
        num[:, k] = cross_translates(e0, centred)[:, idx]
        ker[:, k] = (disp[:, :, None] == offs[None, None, :]).mean(axis=1)

    simulate_joint(h, eta, dt, times, stream.generator("dynamics", block), spread_starts(n, N, walks), on_record=record, wrap_limit=N // 4)
    return {"lhs": lhs, "num": num, "kernel": ker}


@dataclass
class JointRun:
    """Per-replica space-time data from joint field/walk runs.

    ``lhs[r, t, i]``: translation average of ``V'(eta_j(0)) (eta_{j+i}(t) - rho)``;
    ``num[r, t, i]``: the same with ``eta_j(0) - rho`` in place of ``V'``;
    ``kernel[r, t, i]``: fraction of the replica's walks at offset ``i``.
    """

    times: np.ndarray
    offsets: np.ndarray
    lhs: np.ndarray
    num: np.ndarray
    kernel: np.ndarray
    N: int
    rho: float
    dt: float
    walks_per_replica: int
    metadata: dict = field(default_factory=dict)

    @property
    def replicas(self) -> int:
        return self.lhs.shape[0]


def joint_run(
    h: HamiltonianSpec,
    N: int,
    rho: float,
    times: Sequence[float],
    offsets: Sequence[int],
    replicas: int,
    rng,
    dt: float | None = None,
    walks_per_replica: int = 16,
    block_size: int = BLOCK_SIZE,
    parallelism: int = 1,
) -> JointRun:
    """Evolve equilibrium fields with walks attached and record both sides of
    the correlation identity on the same trajectories (common random numbers)."""
    if not h.is_product:
        raise ModelError("the correlation identity is stated for product Hamiltonians")
    times = np.asarray(times, dtype=float)
    dt = default_dt(h) if dt is None else dt
    task = partial(_joint_block, h, N, rho, dt, times, tuple(int(o) for o in offsets), int(walks_per_replica))
    res = concat(map_blocks(task, replicas, rng, block_size=block_size, parallelism=parallelism))
    meta = {"N": N, "rho": rho, "dt": dt, "potential": h.to_dict(), "walks_per_replica": walks_per_replica}
    return JointRun(times, np.asarray(offsets), res["lhs"], res["num"], res["kernel"], N, rho, dt, walks_per_replica, meta)


def _grid_series(name, run: JointRun, est, se, extra=None) -> CorrelationSeries:
    T, K = est.shape
    times = np.repeat(run.times, K)
    index = np.tile(run.offsets, T)
    meta = dict(run.metadata)
    meta.update(extra or {})
    return CorrelationSeries(name, times, est.ravel(), se.ravel(), run.replicas, index, meta)


@dataclass
class IdentityResult:
    lhs: CorrelationSeries
    rhs: CorrelationSeries
    rhs_raw: CorrelationSeries
    z: np.ndarray
    diff: np.ndarray
    diff_stderr: np.ndarray

    @property
    def fraction_within(self) -> float:
        return float(np.mean(np.abs(self.z) < 3.0))

    @property
    def max_abs_z(self) -> float:
        return float(np.max(np.abs(self.z)))

    def rows(self):
        """``(t, i, lhs, lhs_se, rhs, rhs_se, rhs_raw, z)`` per grid point."""
        return [
            (float(t), int(i), float(a), float(sa), float(b), float(sb), float(c), float(z))
            for t, i, a, sa, b, sb, c, z in zip(
                self.lhs.times, self.lhs.index, self.lhs.estimate, self.lhs.stderr,
                self.rhs.estimate, self.rhs.stderr, self.rhs_raw.estimate, self.z,
            )
        ]


def identity_from_run(run: JointRun) -> IdentityResult:
    """Both sides of ``<V'(eta_0(0)); eta_i(t)> = P(X(t) = i) - 1/N``.

    The per-replica difference of the two sides gives the paired z-score.
    """
    rhs_rep = run.kernel - 1.0 / run.N
    lm, ls = mean_se(run.lhs)
    rm, rs = mean_se(rhs_rep)
    km, ks = mean_se(run.kernel)
    dm, ds = mean_se(run.lhs - rhs_rep)
    z = np.where(ds > 0, dm / np.where(ds > 0, ds, 1.0), 0.0)
    return IdentityResult(
        _grid_series("lhs", run, lm, ls),
        _grid_series("rhs", run, rm, rs, {"finite_volume_correction": -1.0 / run.N}),
        _grid_series("rhs_raw", run, km, ks),
        z.ravel(),
        dm.ravel(),
        ds.ravel(),
    )


def identity_check(
    h: HamiltonianSpec,
    N: int,
    rho: float,
    times: Sequence[float],
    offsets: Sequence[int],
    replicas: int,
    rng,
    dt: float | None = None,
    walks_per_replica: int = 16,
    block_size: int = BLOCK_SIZE,
    parallelism: int = 1,
) -> IdentityResult:
    """Paired estimate of both sides of the correlation/walk identity on a grid
    of times and offsets (common random numbers), with per-point z-scores."""
    run = joint_run(h, N, rho, times, offsets, replicas, rng, dt, walks_per_replica, block_size, parallelism)
    return identity_from_run(run)


def z_rule(z, fraction: float = 0.95, cap: float = 4.0) -> bool:
    """At least ``fraction`` of ``|z|`` below 3 and none above ``cap``.

    With dozens of grid points a per-point ``|z| < 3`` demand fails by chance
    alone, so grid-wide comparisons use this rule.
    """
    z = np.abs(np.asarray(z, dtype=float))
    return bool(np.mean(z < 3.0) >= fraction and np.all(z <= cap))


def gaussian_oracle_zscores(res: IdentityResult) -> tuple[np.ndarray, np.ndarray]:
    """``(side - exact) / s.e.`` for both sides against the closed-form
    harmonic covariance ``e^{tQ}(I - 11^T/N)``.  A side with zero standard
    error gets ``z = 0`` if it is exact to 1e-12 and ``inf`` otherwise."""
    N = int(res.lhs.metadata["N"])
    row = gaussian_exact_row(N, np.asarray(res.lhs.times))
    exact = row[np.arange(row.shape[0]), np.asarray(res.lhs.index) % N]
    out = []
    for side in (res.lhs, res.rhs):
        diff = side.estimate - exact
        se = side.stderr
        z = np.where(se > 0, diff / np.where(se > 0, se, 1.0), np.where(np.abs(diff) > 1e-12, np.inf, 0.0))
        out.append(z)
    return out[0], out[1]


@dataclass
class BoundsResult:
    times: np.ndarray
    offsets: np.ndarray
    ratio: np.ndarray
    stderr: np.ndarray
    lower: float
    upper: float
    tested: np.ndarray  # bool mask of points with |i| <= 2 sqrt(t) and a non-vanishing denominator
    skipped: list

    @property
    def violations(self) -> np.ndarray:
        lo = self.ratio + 3 * self.stderr < self.lower
        hi = self.ratio - 3 * self.stderr > self.upper
        return self.tested & (lo | hi)

    @property
    def all_within(self) -> bool:
        return not bool(self.violations.any())

    def rows(self):
        return [
            (float(t), int(i), float(r), float(s), bool(ok))
            for t, i, r, s, ok in zip(self.times, self.offsets, self.ratio, self.stderr, self.tested)
        ]


def bounds_from_run(run: JointRun, h: HamiltonianSpec, min_den_z: float = 5.0) -> BoundsResult:
    """Ratio ``<eta_0(0); eta_i(t)> / (P(X(t) = i) - 1/N)`` per grid point.

    Points with ``|i| > 2 sqrt(t)`` or a denominator within ``min_den_z``
    standard errors of zero are skipped and listed.
    """
    den = run.kernel - 1.0 / run.N
    r, se = ratio_se(run.num, den)
    dm, ds = mean_se(den)
    T, K = r.shape
    tt = np.repeat(run.times, K).reshape(T, K)
    ii = np.tile(run.offsets, T).reshape(T, K)
    near = np.abs(ii) <= 2.0 * np.sqrt(tt) + 1e-12
    solid = np.abs(dm) > min_den_z * np.maximum(ds, 1e-300)
    tested = near & solid
    skipped = [(float(t), int(i)) for t, i, n, s in zip(tt.ravel(), ii.ravel(), near.ravel(), solid.ravel()) if n and not s]
    return BoundsResult(tt.ravel(), ii.ravel(), r.ravel(), se.ravel(), 1.0 / h.c_plus, 1.0 / h.c_minus, tested.ravel(), skipped)


def bounds_check(h: HamiltonianSpec, N: int, rho: float, times, offsets, replicas: int, rng, dt=None, walks_per_replica: int = 16, **kw) -> BoundsResult:
    """Check ``1/C_+ <= <eta_0(0); eta_i(t)> / kernel <= 1/C_-`` within 3 s.e."""
    run = joint_run(h, N, rho, times, offsets, replicas, rng, dt, walks_per_replica, **kw)
    return bounds_from_run(run, h)


# -------------------------------------------------- occupation-time formula


@dataclass
class OccupationResult:
    estimate: float
    stderr: float
    truncation_bound: float
    t_max: float
    times: np.ndarray
    integrand: np.ndarray
    integrand_stderr: np.ndarray

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr, "truncation_bound": self.truncation_bound, "t_max": self.t_max}


def _translate_bond_grads(obs: Observable, eta: np.ndarray, h) -> np.ndarray:
    """``out[r, j, c] = d_c (obs o tau_j)`` at relative bond ``c``, shape ``(R, N, N)``."""
    N = eta.shape[-1]
    return np.stack([obs.bond_grad(np.roll(eta, -j, axis=-1), h) for j in range(N)], axis=1)


def _occupation_block(h, N, rho, dt, times, f, g, rel, n, stream, block):
    eta = sample_equilibrium(h, N, rho, n, stream.generator("init", block))
    F = _translate_bond_grads(f, eta, h)  # (n, N, N): translate j, relative bond
    starts = np.tile(np.arange(N), (n, 1))  # one walk per bond
    rows = np.arange(n)[:, None]
    vals = np.empty((n, len(times)))

    def record(k, field, disp):
        G = _translate_bond_grads(g, field, h)
        pos = (starts + disp) % N
        total = np.zeros(n)
        for s in rel:
            j = (np.arange(N) - s) % N  # translate served by walk b with relative bond s
            w = F[:, j, s]  # (n, N)
            at = G[rows, j[None, :], (pos - j[None, :]) % N]
            total += np.sum(w * at, axis=1)
        vals[:, k] = total / N

    simulate_joint(h, eta, dt, times, stream.generator("dynamics", block), starts, on_record=record)
    return {"vals": vals}


def occupation_time_covariance(
    f: Observable,
    g: Observable,
    h: HamiltonianSpec,
    N: int,
    rho: float,
    t_max: float,
    replicas: int,
    rng,
    dt: float | None = None,
    record_every: int = 10,
    tol: float = 1e-3,
    block_size: int = BLOCK_SIZE,
    parallelism: int = 1,
) -> OccupationResult:
    """``<f; g>`` from the walk representation
    ``sum_b int_0^T <d_b f(eta) E_b[d_{X(t)} g(eta(t))]> dt``.

    The estimate is averaged over the ``N`` translates of ``(f, g)``: each
    replica carries one walk per bond, and the walk started at ``b`` serves
    every translate ``f o tau_j`` whose gradient support contains ``b``.  Walks
    live on the torus.  The integral uses the trapezoid rule on the recording
    grid.  The tail beyond ``t_max`` is
    bounded by the level of the integrand at the end of the window divided by
    the decay rate ``C_minus |lambda_2|``; a :class:`TruncationWarning` is
    issued when that bound exceeds ``tol``.
    """
    bonds = f.support_bonds(N)
    if f.kind == "constant" or bonds.size == 0:
        return OccupationResult(0.0, 0.0, 0.0, float(t_max), np.zeros(1), np.zeros(1), np.zeros(1))
    dt = default_dt(h) if dt is None else dt
    n_steps = int(round(t_max / dt))
    rec = np.arange(0, n_steps + 1, record_every)
    if rec[-1] != n_steps:
        rec = np.append(rec, n_steps)
    times = rec * dt
    rel = tuple(int(b) for b in bonds)
    task = partial(_occupation_block, h, N, rho, dt, times, f, g, rel)
    vals = concat(map_blocks(task, replicas, rng, block_size=block_size, parallelism=parallelism))["vals"]
    per_rep = integrate.trapezoid(vals, times, axis=1)
    est, se = mean_se(per_rep)
    m, s = mean_se(vals)
    tail_n = max(2, len(times) // 10)
    tail_m, tail_s = mean_se(vals[:, -tail_n:].mean(axis=1))
    level = float(abs(tail_m) + 3.0 * tail_s)
    rate = h.c_minus * spectral_gap(N)
    bound = level / rate
    if bound > tol:
        warnings.warn(f"integrand not decayed at t_max = {t_max}: tail bound {bound:.3g} > {tol}", TruncationWarning, stacklevel=2)
    return OccupationResult(float(est), float(se), bound, float(times[-1]), times, m, s)


# ------------------------------------------------------ diffusion coefficient


@dataclass
class QEstimate:
    q: float
    stderr: float
    r_squared: float
    fit_window: tuple[float, float]
    series: CorrelationSeries | None = None

    @property
    def ci(self) -> float:
        """Half-width of the reported interval: three standard errors."""
        return 3.0 * self.stderr

    def to_dict(self) -> dict:
        return {"q": self.q, "stderr": self.stderr, "ci": self.ci, "r_squared": self.r_squared, "fit_window": list(self.fit_window)}


def diffusion_coefficient_msd(
    h: HamiltonianSpec,
    N: int,
    rho: float,
    fit_window: tuple[float, float],
    replicas: int,
    rng,
    dt: float | None = None,
    walks_per_replica: int = 32,
    n_times: int = 41,
    min_r2: float = 0.99,
    block_size: int = BLOCK_SIZE,
    parallelism: int = 1,
) -> QEstimate:
    """Slope of the walk's mean squared displacement over ``fit_window``.

    Raises
    ------
    DiagnosticError
        If the MSD is not linear over the window (``R^2 < min_r2``).
    HorizonError
        If any walk moves more than ``N/4`` bonds.
    """
    lo, hi = fit_window
    if not 0 <= lo < hi:
        raise ConfigurationError("fit window must satisfy 0 <= start < end")
    dt = default_dt(h) if dt is None else dt
    step = hi / (n_times - 1)
    step = max(dt, round(step / dt) * dt)
    times = np.arange(0, int(round(hi / step)) + 1) * step
    res = msd(h, N, rho, times, replicas, rng, dt, walks_per_replica, fit_window, block_size, parallelism)
    if not res.r_squared >= min_r2:
        raise DiagnosticError(f"MSD not linear over {fit_window}: R^2 = {res.r_squared:.4f} < {min_r2}")
    return QEstimate(res.slope, res.slope_stderr, res.r_squared, res.fit_window, res.series)


def clipped_product(c: float = 2.0) -> LocalFunction:
    """Smoothly clipped ``eta_0 eta_1``: ``c tanh(eta_0 eta_1 / c)``."""

    def fn(v):
        return c * np.tanh(v[..., 0] * v[..., 1] / c)

    def grad(v):
        s = 1.0 - np.tanh(v[..., 0] * v[..., 1] / c) ** 2
        return np.stack([s * v[..., 1], s * v[..., 0]], axis=-1)

    return LocalFunction((0, 1), fn, grad, "clip(eta0*eta1)")


def basis_catalog(h: HamiltonianSpec) -> dict[str, Observable]:
    """Named candidate functions for the variational bound."""
    th = lambda v: np.tanh(v[..., 0])
    dth = lambda v: (1.0 - np.tanh(v) ** 2)
    curv = lambda v: h.V1.second(v[..., 0])
    return {
        "v_prime": v_prime_at(0),
        "tanh0": local((0,), th, dth, "tanh(eta0)"),
        "tanh1": local((1,), th, dth, "tanh(eta1)"),
        "clip01": Observable("local", func=clipped_product(), label="clip(eta0*eta1)"),
        "curvature": local((0,), curv, None, "V''(eta0)"),
    }


def default_basis(h: HamiltonianSpec) -> list[Observable]:
    """``{V'(eta_0), tanh(eta_0), tanh(eta_1), clipped eta_0 eta_1, V''(eta_0)}``.

    At ``rho = 0`` the odd members and the reflection-symmetric product cannot
    lower the objective (their linear term vanishes by symmetry); the even
    function ``V''(eta_0)`` can.  It is omitted when ``V''`` is constant,
    since a constant has no bond gradient.
    """
    cat = basis_catalog(h)
    if h.V1.c_minus == h.V1.c_plus:
        del cat["curvature"]
    return list(cat.values())


@dataclass
class VariationalResult:
    q_upper: float
    stderr: float
    coefficients: np.ndarray
    mean_r1: float
    mean_r1_stderr: float
    basis: list[str]

    @property
    def trivial_bound(self) -> float:
        """``2 <R_1>``, the value at ``f = 0``."""
        return 2.0 * self.mean_r1

    def to_dict(self) -> dict:
        return {
            "q_upper": self.q_upper,
            "stderr": self.stderr,
            "coefficients": self.coefficients.tolist(),
            "two_mean_R1": self.trivial_bound,
            "two_mean_R1_stderr": 2.0 * self.mean_r1_stderr,
            "basis": self.basis,
        }


def _variational_terms(h, basis, eta):
    """Per-sample translation averages of ``R1``, ``R1 D``, ``R1 D D^T`` and the Dirichlet Gram matrix.

    ``D_k = phi_k - phi_k o tau_1`` and ``R1 = V1''(eta_1)`` at every translate.
    """
    R1 = np.roll(h.V1.second(eta), -1, axis=-1)  # translate j reads eta_{j+1}
    Phi = np.stack([b.translates(eta, h) for b in basis], axis=1)  # (n, K, N)
    D = Phi - np.roll(Phi, -1, axis=-1)
    r1 = R1.mean(-1)
    v = np.einsum("nkj,nj->nk", D, R1) / eta.shape[-1]
    M = np.einsum("nkj,nlj,nj->nkl", D, D, R1) / eta.shape[-1]
    # Dirichlet form of each basis function: sum over bonds of products of bond gradients
    G = np.stack([b.bond_grad(eta, h) for b in basis], axis=1)  # (n, K, N)
    E = np.einsum("nkb,nlb->nkl", G, G)
    return r1, v, M + E


def variational_q_upper(
    h: HamiltonianSpec,
    N: int,
    rho: float,
    basis: list[Observable] | None,
    samples: int,
    rng,
    ridge: float = 1e-8,
    eta=None,
) -> VariationalResult:
    """Upper bound on ``q`` from the variational formula restricted to a finite span.

    The objective ``<(1 - f + f o tau_1)^2 R1> + E(f, f)`` is quadratic in the
    coefficients of ``f``.  To keep the estimate an upper bound in
    expectation, the coefficients are fitted on one half of the samples and
    the objective is evaluated on the other half (and vice versa).
    """
    eta = _equilibrium(h, N, rho, samples, rng) if eta is None else np.asarray(eta, dtype=float)
    basis = default_basis(h) if basis is None else list(basis)
    n = eta.shape[0]
    r1, v, Q = _variational_terms(h, basis, eta) if basis else (h.V1.second(eta).mean(-1), None, None)
    r1m, r1s = mean_se(r1)
    if not basis:
        return VariationalResult(2.0 * float(r1m), 2.0 * float(r1s), np.zeros(0), float(r1m), float(r1s), [])
    K = len(basis)

    def solve(idx):
        vm = v[idx].mean(0)
        Qm = Q[idx].mean(0)
        Qm = 0.5 * (Qm + Qm.T)
        w = np.linalg.eigvalsh(Qm)
        if w.min() <= ridge * max(w.max(), 1.0):
            warnings.warn("variational quadratic form is near-singular; adding a ridge", RegularizationWarning, stacklevel=3)
            Qm = Qm + ridge * np.eye(K)
        return np.linalg.solve(Qm, vm)

    halves = [np.arange(0, n, 2), np.arange(1, n, 2)]
    obj = np.empty(n)
    coefs = []
    for fit, ev in ((halves[0], halves[1]), (halves[1], halves[0])):
        c = solve(fit)
        coefs.append(c)
        obj[ev] = r1[ev] - 2.0 * v[ev] @ c + np.einsum("k,nkl,l->n", c, Q[ev], c)
    m, s = mean_se(2.0 * obj)
    return VariationalResult(float(m), float(s), np.mean(coefs, axis=0), float(r1m), float(r1s), [b.name for b in basis])


# ------------------------------------------------------ smoothed relaxation


@dataclass
class SmoothedResult:
    estimate: float
    stderr: float
    prediction: float
    prediction_finite_volume: float
    exact: float | None
    q: float
    eps: float
    x: float
    t: float

    @property
    def z_prediction(self) -> float:
        return (self.estimate - self.prediction_finite_volume) / self.stderr if self.stderr > 0 else 0.0

    @property
    def z_exact(self) -> float | None:
        if self.exact is None:
            return None
        return (self.estimate - self.exact) / self.stderr if self.stderr > 0 else 0.0

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("estimate", "stderr", "prediction", "prediction_finite_volume", "exact", "q", "eps", "x", "t", "z_prediction", "z_exact")}


def gaussian_profile_prediction(phi, q: float, t: float, x: float) -> float:
    """``(2 pi q t)^{-1/2} int phi(y - x) exp(-y^2 / (2 q t)) dy``."""
    prof = _profile(phi)
    val, _ = integrate.quad(lambda y: float(prof(y - x)) * math.exp(-y * y / (2 * q * t)), x - 1.0, x + 1.0, limit=200)
    return val / math.sqrt(2 * math.pi * q * t)


def smoothed_relaxation(
    h: HamiltonianSpec,
    N: int,
    rho: float,
    phi,
    eps: float,
    x: float,
    t: float,
    replicas: int,
    rng,
    q: float = 2.0,
    dt: float | None = None,
    block_size: int = BLOCK_SIZE,
    parallelism: int = 1,
) -> SmoothedResult:
    """``<V'(eta_0(0)); sum_i phi(eps i) eta_{i + floor(x/eps)}(t/eps^2)>`` against the
    Gaussian-profile prediction with diffusion coefficient ``q``.

    The torus carries a zero-mode correction ``-sum_i phi(eps i)/N``, which is
    added to the prediction for the finite-volume comparison.  For the
    harmonic model the exact torus value is also returned.
    """
    g = smoothed_field(phi, eps, x)
    s = t / eps**2
    w = np.asarray(g.weights)
    pred = gaussian_profile_prediction(phi, q, t, x)
    pred_fv = pred - float(w.sum()) / N
    exact = None
    if h.is_gaussian:
        row = gaussian_exact_row(N, s)
        idx = np.asarray(g.offsets) % N
        exact = float(w @ row[idx])
    if not np.any(w):
        return SmoothedResult(0.0, 0.0, pred, pred_fv, exact, q, eps, x, t)
    dt = (0.05 / h.c_plus if dt is None else dt)
    s = round(s / dt) * dt
    series = space_time_covariance(v_prime_at(0), g, h, N, rho, [0.0, s], replicas, rng, dt, check_horizon=True, block_size=block_size, parallelism=parallelism)
    return SmoothedResult(float(series.estimate[-1]), float(series.stderr[-1]), pred, pred_fv, exact, q, eps, x, t)


# --------------------------------------------- integration by parts, Dirichlet


@dataclass
class IBPResult:
    residual: float
    stderr: float
    terms: tuple[float, float, float]

    @property
    def z(self) -> float:
        return self.residual / self.stderr if self.stderr > 0 else 0.0


def ibp_residual(f: Observable, g: Observable, bond: int, h: HamiltonianSpec, eta: np.ndarray) -> IBPResult:
    """``<f d_b g> + <g d_b f> - <f g d_b H>`` on equilibrium samples ``eta``.

    All three terms are evaluated on the same samples; the standard error is
    that of the per-sample residual.
    """
    eta = np.asarray(eta, dtype=float)
    N = eta.shape[-1]
    b = bond % N
    fv, gv = f.value(eta, h), g.value(eta, h)
    dbf = f.bond_grad(eta, h)[:, b]
    dbg = g.bond_grad(eta, h)[:, b]
    force = site_force(h, eta)
    dbH = force[:, (b + 1) % N] - force[:, b]
    t1, t2, t3 = fv * dbg, gv * dbf, fv * gv * dbH
    m, s = mean_se(t1 + t2 - t3)
    return IBPResult(float(m), float(s), (float(t1.mean()), float(t2.mean()), float(t3.mean())))


def dirichlet_form(f: Observable, h: HamiltonianSpec, eta: np.ndarray) -> Estimate:
    """``E(f, f) = <sum_b (d_b f)^2>`` on equilibrium samples."""
    g = f.bond_grad(np.asarray(eta, dtype=float), h)
    m, s = mean_se(np.sum(g * g, axis=-1))
    return Estimate(float(m), float(s), g.shape[0])


def dirichlet_slope(f: Observable, h: HamiltonianSpec, N: int, rho: float, replicas: int, rng, t_max: float = 0.2, n_times: int = 5, dt: float = 1e-3, **kw) -> Estimate:
    """``-d/dt <f(eta(0)); f(eta(t))>`` at ``t = 0+`` from a quadratic fit on a short grid.

    The fit is applied replica by replica (it is linear in the data), so the
    standard error accounts for the correlation across times.
    """
    times = np.linspace(0.0, t_max, n_times)
    times = np.round(times / dt) * dt
    task = partial(_field_block, h, N, rho, dt, times, f, f)
    res = concat(map_blocks(task, replicas, rng, **kw))
    est, _ = covariance_jackknife(res["a"], res["b"], res["c"])
    X = np.stack([np.ones_like(times), times, times**2], axis=1)
    L = np.linalg.pinv(X)[1]  # slope functional
    # influence values of the covariance per replica, then the slope per replica
    a, b, c = res["a"], res["b"], res["c"]
    infl = a - b.mean(0) * c - c.mean(0) * b
    per = -(infl @ L)
    return Estimate(float(-(est @ L)), float(per.std(ddof=1) / math.sqrt(per.size)), per.size)


# ------------------------------------------------------ monotone coupling


@dataclass
class MonotonicityResult:
    pairs: int
    ordered_pairs: int
    worst_violation: float
    tolerance_scale: float

    @property
    def fraction(self) -> float:
        return self.ordered_pairs / self.pairs


def monotone_coupling_check(h: HamiltonianSpec, N: int, rho: float, pairs: int, T: float, dt: float, rng, bump: float = 1.0, tol: float = 1e-8) -> MonotonicityResult:
    """Evolve ordered pairs ``eta_a <= eta_b`` with identical noise and count
    the pairs whose order survives at every step up to ``tol (1 + |eta|_inf)``.

    ``eta_a`` is an equilibrium field; ``eta_b`` adds independent exponential
    bumps of mean ``bump`` to each site.
    """
    check_step(h, dt)
    gen = as_generator(rng, "monotone")
    a = sample_equilibrium(h, N, rho, pairs, gen)
    b = a + gen.exponential(bump, size=a.shape)
    pair = np.stack([a, b])
    integ = Integrator(h, dt, gen)
    ok = np.ones(pairs, dtype=bool)
    worst = 0.0
    for _ in range(int(round(T / dt))):
        integ.step(pair, integ.noise(a.shape))
        scale = 1.0 + np.max(np.abs(pair), axis=(0, 2))
        gap = np.min(pair[1] - pair[0], axis=1)
        ok &= gap >= -tol * scale
        worst = max(worst, float(np.max(-gap / scale)))
    return MonotonicityResult(pairs, int(ok.sum()), worst, tol)
