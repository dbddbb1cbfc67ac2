"""Euler-Maruyama integration of the conservative Ginzburg-Landau SDE

    d eta_i = sum_{j = i +- 1} (dH/deta_j - dH/deta_i) dt
              + sqrt(2) (dB_{(i,i+1)} - dB_{(i-1,i)}).

Drift and noise are both written as a flux through each bond, so every step
changes ``eta_i`` by ``flux_{(i,i+1)} - flux_{(i-1,i)}`` and the total mass is
conserved up to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from glwalk.errors import ConfigurationError
from glwalk.potential import HamiltonianSpec, site_force
from glwalk.sampler import FieldConfig, as_generator

STABILITY = 0.1


@dataclass(frozen=True)
class BondNoise:
    """Per-bond Gaussian increments ``sqrt(2 dt) * xi_b`` for one step.

    Entry ``i`` of the last axis belongs to the bond ``(i, i+1)``.
    """

    increments: np.ndarray

    @classmethod
    def draw(cls, gen: np.random.Generator, shape, dt: float) -> "BondNoise":
        return cls(math.sqrt(2.0 * dt) * gen.standard_normal(shape))

    @classmethod
    def zeros(cls, shape) -> "BondNoise":
        return cls(np.zeros(shape))


@dataclass
class Trajectory:
    """Recorded observables; ``snapshots[name][k]`` belongs to ``times[k]``."""

    times: np.ndarray
    snapshots: dict[str, np.ndarray] = field(default_factory=dict)
    rho: float = 0.0

    def __getitem__(self, name):
        return self.snapshots[name]

    def configs(self, lattice=None) -> list[FieldConfig]:
        return [FieldConfig(e, self.rho, lattice) for e in self.snapshots["eta"]]


def check_step(h: HamiltonianSpec, dt: float) -> None:
    if not dt > 0:
        raise ConfigurationError(f"time step must be positive, got {dt}")
    if dt * h.c_plus > STABILITY * (1 + 1e-12):
        raise ConfigurationError(f"dt * C_plus = {dt * h.c_plus:.4g} exceeds the stability bound {STABILITY}")


def bond_flux(h: HamiltonianSpec, eta: np.ndarray, dt: float, increments=None) -> np.ndarray:
    """Mass transported across each bond ``(i, i+1)`` in one step."""
    f = site_force(h, eta)
    flux = np.roll(f, -1, axis=-1)
    flux -= f
    flux *= dt
    if increments is not None:
        flux = flux + increments
    return flux


def apply_flux(eta: np.ndarray, flux: np.ndarray) -> None:
    """In place: ``eta_i += flux_i - flux_{i-1}``."""
    eta += flux
    eta[..., 1:] -= flux[..., :-1]
    eta[..., 0] -= flux[..., -1]


def em_step(config, h: HamiltonianSpec, dt: float, noise: BondNoise | None = None):
    """One Euler-Maruyama step; returns a new field of the same type as ``config``."""
    check_step(h, dt)
    eta = np.array(getattr(config, "eta", config), dtype=float)
    incr = None if noise is None else noise.increments
    apply_flux(eta, bond_flux(h, eta, dt, incr))
    if isinstance(config, FieldConfig):
        return FieldConfig(eta, config.rho, config.lattice)
    return eta


def record_steps(times, dt: float) -> np.ndarray:
    """Step indices of a recording grid; times must sit on the dt grid."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise ConfigurationError("recording times must be non-negative and increasing")
    steps = np.rint(times / dt).astype(np.int64)
    if np.any(np.abs(steps * dt - times) > 1e-9 * np.maximum(1.0, times)):
        raise ConfigurationError("recording times must be multiples of dt")
    return steps


class Integrator:
    """Reusable stepper for a batch of fields driven by one generator."""

    def __init__(self, h: HamiltonianSpec, dt: float, gen: np.random.Generator):
        check_step(h, dt)
        self.h = h
        self.dt = dt
        self.scale = math.sqrt(2.0 * dt)
        self.gen = gen

    def noise(self, shape) -> np.ndarray:
        xi = self.gen.standard_normal(shape)
        xi *= self.scale
        return xi

    def step(self, eta: np.ndarray, increments: np.ndarray | None = None) -> None:
        if increments is None:
            increments = self.noise(eta.shape)
        apply_flux(eta, bond_flux(self.h, eta, self.dt, increments))


def _recorders(observables):
    if observables is None:
        return {"eta": lambda eta: eta.copy()}
    if callable(observables):
        return {"value": observables}
    return dict(observables)


def evolve(config, h: HamiltonianSpec, T: float, dt: float, rng, observables=None, times=None) -> Trajectory:
    """Integrate up to horizon ``T`` and record observables.

    Parameters
    ----------
    config : FieldConfig or ndarray
        Initial field(s); leading axes are independent replicas.
    observables : dict of name -> callable(eta), callable, or None
        Functions evaluated on the ``(..., N)`` field at each recording time.
        ``None`` records the full field under ``"eta"``.
    times : sequence of float, optional
        Recording grid (multiples of ``dt``, at most ``T``).  Defaults to ``[0, T]``.
    """
    if T < 0:
        raise ConfigurationError("horizon must be non-negative")
    check_step(h, dt)
    rho = getattr(config, "rho", None)
    eta = np.array(getattr(config, "eta", config), dtype=float)
    if rho is None:
        rho = float(eta.mean())
    times = np.array([0.0] if T == 0 else ([0.0, T] if times is None else times), dtype=float)
    if times.size and times[-1] > T + 1e-12:
        raise ConfigurationError("recording time beyond the horizon")
    steps = record_steps(times, dt)
    rec = _recorders(observables)
    out = {k: [] for k in rec}
    integ = Integrator(h, dt, as_generator(rng, "dynamics"))
    n_total = int(steps[-1]) if steps.size else 0
    k = 0
    for n in range(n_total + 1):
        while k < steps.size and steps[k] == n:
            for name, fn in rec.items():
                out[name].append(np.asarray(fn(eta)))
            k += 1
        if n < n_total:
            integ.step(eta)
    return Trajectory(times, {name: np.stack(v) for name, v in out.items()}, float(np.mean(rho)))


def coupled_evolve(config_a, config_b, h: HamiltonianSpec, T: float, dt: float, rng, observables=None, times=None):
    """Evolve two initial fields with identical bond noise (same-noise coupling)."""
    a = np.asarray(getattr(config_a, "eta", config_a), dtype=float)
    b = np.asarray(getattr(config_b, "eta", config_b), dtype=float)
    la, lb = getattr(config_a, "lattice", None), getattr(config_b, "lattice", None)
    if a.shape != b.shape or (la is not None and lb is not None and la != lb):
        raise ConfigurationError("coupled fields must live on the same lattice")
    if T < 0:
        raise ConfigurationError("horizon must be non-negative")
    check_step(h, dt)
    times = np.array([0.0] if T == 0 else ([0.0, T] if times is None else times), dtype=float)
    steps = record_steps(times, dt)
    rec = _recorders(observables)
    pair = np.stack([a, b])
    out = {k: [] for k in rec}
    integ = Integrator(h, dt, as_generator(rng, "dynamics"))
    n_total = int(steps[-1]) if steps.size else 0
    k = 0
    for n in range(n_total + 1):
        while k < steps.size and steps[k] == n:
            for name, fn in rec.items():
                out[name].append((np.asarray(fn(pair[0])), np.asarray(fn(pair[1]))))
            k += 1
        if n < n_total:
            integ.step(pair, integ.noise(a.shape))
    rho_a = float(np.mean(getattr(config_a, "rho", a.mean())))
    rho_b = float(np.mean(getattr(config_b, "rho", b.mean())))
    ta = Trajectory(times, {n: np.stack([x[0] for x in v]) for n, v in out.items()}, rho_a)
    tb = Trajectory(times, {n: np.stack([x[1] for x in v]) for n, v in out.items()}, rho_b)
    return ta, tb


def trajectory_rows(traj: Trajectory, name: str = "eta"):
    """Rows ``(t, site, value)`` for a single-replica field trajectory, or
    ``(t, observable, value)`` for scalar observables."""
    data = traj.snapshots[name]
    rows = []
    for t, snap in zip(traj.times, data):
        snap = np.asarray(snap)
        if snap.ndim == 0:
            rows.append((t, name, float(snap)))
        else:
            for i, v in enumerate(snap.reshape(-1)):
                rows.append((t, i, float(v)))
    return rows
