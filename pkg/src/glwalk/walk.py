"""The bond random walk X(t) driven by the evolving field.

From bond ``b = (i, i+1)`` the walk jumps to ``b + k`` at rate ``-d_b d_{b+k} H``:

    k = -2: V2''(eta_{i-1} + eta_i)     k = -1: V1''(eta_i)
    k = +1: V1''(eta_{i+1})             k = +2: V2''(eta_{i+1} + eta_{i+2})

The joint process is discretised on the field's Euler-Maruyama grid.  In each
substep the rates are read from the current field, at most one jump happens
(probability ``rate_k * dt`` for offset ``k``, one uniform partitioned by the
cumulative rates), then the field takes one step with independent noise.
Positions are stored as unwrapped integer displacements from the start bond.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import partial

import numpy as np

from glwalk.dynamics import Integrator, check_step, record_steps
from glwalk.errors import ConfigurationError, HorizonError, StepSizeError, UnsupportedDimensionError
from glwalk.lattice import Bond
from glwalk.parallel import BLOCK_SIZE, concat, map_blocks
from glwalk.potential import OFFSETS, HamiltonianSpec
from glwalk.sampler import FieldConfig, as_generator, sample_equilibrium

THINNING = 0.1


@dataclass(frozen=True)
class WalkState:
    bond: Bond
    clock: float = 0.0
    displacement: int = 0


@dataclass(frozen=True)
class JointState:
    field: FieldConfig
    walk: WalkState

    def __post_init__(self):
        if self.field.lattice.d != 1:
            raise UnsupportedDimensionError("the bond walk exists only in d = 1")
        self.field.lattice.check_bond(self.walk.bond)


def drift(h: HamiltonianSpec, joint: JointState) -> float:
    """``j = sum_k k * rate_k`` at the walk's bond (``R_1 - R_{-1}`` without V2)."""
    from glwalk.potential import jump_rates

    rates = jump_rates(h, joint.field, joint.walk.bond)
    return float(sum(k * r for k, r in rates.items()))


def default_dt(h: HamiltonianSpec) -> float:
    return min(0.01, THINNING / h.rate_bound, 0.1 / h.c_plus)


def check_substep(h: HamiltonianSpec, dt: float) -> None:
    check_step(h, dt)
    if dt * h.rate_bound > THINNING * (1 + 1e-12):
        raise StepSizeError(f"dt * (sum of rate bounds) = {dt * h.rate_bound:.4g} exceeds {THINNING}")


class WalkRates:
    """Vectorised lookup of the four jump rates at the walks' current bonds."""

    def __init__(self, h: HamiltonianSpec):
        self.h = h
        self.cols = [1, 2] if h.V2 is None else [0, 1, 2, 3]

    def __call__(self, eta: np.ndarray, bonds: np.ndarray) -> np.ndarray:
        N = eta.shape[-1]
        take = lambda s: np.take_along_axis(eta, s % N, axis=-1)
        ei = take(bonds)
        ej = take(bonds + 1)
        V1 = self.h.V1
        if self.h.V2 is None:
            return np.stack([V1.second(ei), V1.second(ej)], axis=-1)
        V2 = self.h.V2
        return np.stack(
            [V2.second(ei + take(bonds - 1)), V1.second(ei), V1.second(ej), V2.second(ej + take(bonds + 2))],
            axis=-1,
        )


def choose_jumps(rates: np.ndarray, u: np.ndarray, dt: float, cols) -> np.ndarray:
    """Offsets selected by one uniform per walk; 0 means no jump."""
    if len(cols) == 2 and OFFSETS[cols[0]] == -1 and OFFSETS[cols[1]] == 1:
        p_left = rates[..., 0] * dt
        p_any = p_left + rates[..., 1] * dt
        if np.any(p_any >= 1.0):
            raise StepSizeError("jump probabilities per substep sum to >= 1")
        return np.where(u < p_left, -1, np.where(u < p_any, 1, 0)).astype(np.int64)
    cum = np.cumsum(rates * dt, axis=-1)
    if np.any(cum[..., -1] >= 1.0):
        raise StepSizeError("jump probabilities per substep sum to >= 1")
    idx = (u[..., None] >= cum).sum(axis=-1)
    lookup = np.array([OFFSETS[c] for c in cols] + [0], dtype=np.int64)
    return lookup[idx]


def simulate_joint(h: HamiltonianSpec, eta: np.ndarray, dt: float, times, gen, starts: np.ndarray, on_record=None, wrap_limit=None):
    """Advance fields and walks together; return displacements at ``times``.

    Parameters
    ----------
    eta : ndarray (R, N)
        Initial fields, advanced in place.
    starts : ndarray (R, W) of int
        Starting bond index of each of the ``W`` walks carried by every field.
    on_record : callable(k, eta, disp), optional
        Called at every recording time (before the step taken at that time).
    wrap_limit : int, optional
        Raise :class:`HorizonError` if any ``|displacement|`` exceeds it.

    Returns
    -------
    ndarray (len(times), R, W) of int
    """
    check_substep(h, dt)
    steps = record_steps(times, dt)
    starts = np.asarray(starts, dtype=np.int64)
    R, W = starts.shape
    disp = np.zeros((R, W), dtype=np.int64)
    out = np.zeros((steps.size, R, W), dtype=np.int64)
    rates = WalkRates(h)
    integ = Integrator(h, dt, gen)
    n_total = int(steps[-1]) if steps.size else 0
    k = 0
    for n in range(n_total + 1):
        while k < steps.size and steps[k] == n:
            out[k] = disp
            if on_record is not None:
                on_record(k, eta, disp)
            k += 1
        if n == n_total:
            break
        r = rates(eta, starts + disp)
        u = gen.random((R, W))
        disp += choose_jumps(r, u, dt, rates.cols)
        integ.step(eta)
        if wrap_limit is not None and n % 64 == 0 and np.abs(disp).max() > wrap_limit:
            raise HorizonError(f"walk displacement exceeded N/4 = {wrap_limit} before t = {(n + 1) * dt:.4g}")
    if wrap_limit is not None and np.abs(out).max() > wrap_limit:
        raise HorizonError(f"walk displacement exceeded N/4 = {wrap_limit}")
    return out


def walk_substep(joint: JointState, h: HamiltonianSpec, dt: float, rng) -> JointState:
    """One substep of the joint process for a single field and walk."""
    check_substep(h, dt)
    gen = as_generator(rng, "walk")
    eta = np.array(joint.field.eta, dtype=float)[None, :]
    N = eta.shape[-1]
    rates = WalkRates(h)
    bond = np.array([[joint.walk.bond.origin]])
    jump = int(choose_jumps(rates(eta, bond), gen.random((1, 1)), dt, rates.cols)[0, 0])
    Integrator(h, dt, gen).step(eta)
    walk = WalkState(Bond((joint.walk.bond.origin + jump) % N, 0), joint.walk.clock + dt, joint.walk.displacement + jump)
    return JointState(FieldConfig(eta[0], joint.field.rho, joint.field.lattice), walk)


def frozen_jump_counts(h: HamiltonianSpec, eta: np.ndarray, bond: int, dt: float, substeps: int, rng) -> dict[int, int]:
    """Count single-substep jump outcomes from ``bond`` in a field held fixed."""
    check_substep(h, dt)
    gen = as_generator(rng, "walk")
    rates = WalkRates(h)
    r = rates(np.asarray(eta, dtype=float)[None, :], np.array([[bond]]))[0, 0]
    counts = {k: 0 for k in OFFSETS}
    done = 0
    chunk = 1 << 20
    while done < substeps:
        n = min(chunk, substeps - done)
        jumps = choose_jumps(np.broadcast_to(r, (n, r.size)), gen.random(n), dt, rates.cols)
        vals, cnt = np.unique(jumps, return_counts=True)
        for v, c in zip(vals, cnt):
            if v != 0:
                counts[int(v)] += int(c)
        done += n
    return counts


@dataclass
class KernelEstimate:
    """Annealed kernel ``P(X(t) = b0 + offset)`` with per-offset standard errors."""

    t: float
    offsets: np.ndarray
    probability: np.ndarray
    stderr: np.ndarray
    replicas: int
    walks_per_replica: int = 1
    metadata: dict = field(default_factory=dict)

    def at(self, offset: int) -> tuple[float, float]:
        idx = np.flatnonzero(self.offsets == offset)
        if idx.size == 0:
            return 0.0, 0.0
        return float(self.probability[idx[0]]), float(self.stderr[idx[0]])

    def rows(self):
        return [(int(o), float(p), float(s)) for o, p, s in zip(self.offsets, self.probability, self.stderr)]


def spread_starts(R: int, N: int, W: int) -> np.ndarray:
    """``W`` evenly spaced start bonds per replica."""
    base = (np.arange(W) * N) // W
    return np.broadcast_to(base, (R, W)).copy()


def _walk_block(h, N, rho, dt, times, walks, n, stream, block):
    gen_init = stream.generator("init", block)
    gen = stream.generator("dynamics", block)
    eta = sample_equilibrium(h, N, rho, n, gen_init)
    disp = simulate_joint(h, eta, dt, times, gen, spread_starts(n, N, walks), wrap_limit=N // 4)
    return {"disp": np.moveaxis(disp, 1, 0)}  # (R, T, W)


def run_walks(h: HamiltonianSpec, N: int, rho: float, times, replicas: int, rng, dt=None, walks_per_replica=1, block_size=BLOCK_SIZE, parallelism=1) -> np.ndarray:
    """Displacements ``(replicas, len(times), walks)`` from equilibrium starts."""
    dt = default_dt(h) if dt is None else dt
    task = partial(_walk_block, h, N, rho, dt, np.asarray(times, dtype=float), walks_per_replica)
    return concat(map_blocks(task, replicas, rng, block_size=block_size, parallelism=parallelism))["disp"]


def kernel_from_displacements(disp: np.ndarray, max_offset: int | None = None):
    """Per-offset mean and standard error from ``(R, W)`` displacements.

    Each replica contributes the fraction of its walks at each offset.
    """
    R, W = disp.shape
    K = int(np.abs(disp).max()) if max_offset is None else int(max_offset)
    offsets = np.arange(-K, K + 1)
    frac = np.stack([(disp == o).mean(axis=1) for o in offsets], axis=1)
    p = frac.mean(axis=0)
    se = frac.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros_like(p)
    return offsets, p, se


def kernel_estimate(h: HamiltonianSpec, N: int, rho: float, t: float, replicas: int, rng, dt=None, walks_per_replica=1, max_offset=None, block_size=BLOCK_SIZE, parallelism=1) -> KernelEstimate:
    """Monte Carlo estimate of the annealed kernel from equilibrium fields."""
    if t < 0:
        raise ConfigurationError("t must be non-negative")
    dt = default_dt(h) if dt is None else dt
    t_grid = [0.0, t] if t > 0 else [0.0]
    disp = run_walks(h, N, rho, t_grid, replicas, rng, dt, walks_per_replica, block_size, parallelism)[:, -1, :]
    offsets, p, se = kernel_from_displacements(disp, max_offset)
    return KernelEstimate(float(t), offsets, p, se, replicas, walks_per_replica, {"N": N, "rho": rho, "dt": dt})


@dataclass
class CorrelationSeries:
    """Time-indexed Monte Carlo estimates with standard errors."""

    name: str
    times: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    replicas: int
    index: np.ndarray | None = None
    metadata: dict = field(default_factory=dict)

    def rows(self):
        idx = self.index if self.index is not None else np.zeros(len(self.times), dtype=int)
        return [(self.name, int(i), float(t), float(e), float(s)) for i, t, e, s in zip(idx, self.times, self.estimate, self.stderr)]


@dataclass
class MSDResult:
    series: CorrelationSeries
    slope: float
    slope_stderr: float
    intercept: float
    r_squared: float
    fit_window: tuple[float, float]


def fit_msd(times, sq_disp: np.ndarray, window) -> tuple[float, float, float, float]:
    """Weighted least-squares slope of the MSD over ``window``.

    ``sq_disp`` holds per-replica squared displacements ``(R, T)``.  The slope
    is a fixed linear functional of the MSD curve, so applying it replica by
    replica yields a standard error that accounts for correlations in time.
    """
    times = np.asarray(times, dtype=float)
    lo, hi = window
    sel = (times >= lo - 1e-12) & (times <= hi + 1e-12)
    if sel.sum() < 3:
        raise ConfigurationError("MSD fit window needs at least three recording times")
    t = times[sel]
    y = sq_disp[:, sel]
    R = y.shape[0]
    mean = y.mean(axis=0)
    var = y.var(axis=0, ddof=1) if R > 1 else np.ones_like(mean)
    w = 1.0 / np.maximum(var, 1e-12 * max(var.max(), 1e-300))
    X = np.stack([np.ones_like(t), t], axis=1)
    A = np.linalg.solve(X.T @ (w[:, None] * X), (X * w[:, None]).T)  # (2, T)
    intercept, slope = A @ mean
    per_rep = y @ A[1]
    se = per_rep.std(ddof=1) / math.sqrt(R) if R > 1 else 0.0
    fitted = intercept + slope * t
    ss_res = float(np.sum((mean - fitted) ** 2))
    ss_tot = float(np.sum((mean - mean.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(se), float(intercept), r2


def msd(h: HamiltonianSpec, N: int, rho: float, times, replicas: int, rng, dt=None, walks_per_replica=1, fit_window=None, block_size=BLOCK_SIZE, parallelism=1) -> MSDResult:
    """Mean squared bond displacement ``E[X(t)^2]`` with a slope fit.

    Raises :class:`HorizonError` if any walk strays beyond ``N/4``.
    """
    times = np.asarray(times, dtype=float)
    disp = run_walks(h, N, rho, times, replicas, rng, dt, walks_per_replica, block_size, parallelism)
    sq = (disp.astype(float) ** 2).mean(axis=2)  # (R, T)
    R = sq.shape[0]
    est = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.zeros_like(est)
    if fit_window is None:
        fit_window = (times[len(times) // 2], times[-1]) if times[-1] > 0 else (0.0, 0.0)
    series = CorrelationSeries("msd", times, est, se, R, metadata={"N": N, "rho": rho, "dt": dt or default_dt(h), "walks_per_replica": walks_per_replica})
    if np.count_nonzero((times >= fit_window[0]) & (times <= fit_window[1])) >= 3:
        slope, sse, icpt, r2 = fit_msd(times, sq, fit_window)
    else:
        slope, sse, icpt, r2 = float("nan"), float("nan"), float("nan"), float("nan")
    return MSDResult(series, slope, sse, icpt, r2, tuple(fit_window))
