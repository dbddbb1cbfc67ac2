"""Equilibrium initial data: draws from the canonical Gibbs measure mu_{rho,N},
the product measure exp(-H) conditioned on sum(eta) = N * rho.

Two samplers are provided.  ``sample_canonical_gaussian`` is exact for the
harmonic potential; ``sample_canonical_mcmc`` is a Metropolis chain whose moves
exchange mass between two sites, so the constraint holds exactly at every step.
"""

from __future__ import annotations

import logging
import math
import warnings
import zlib
from dataclasses import dataclass, field

import numpy as np

from glwalk.errors import TuningWarning, UndefinedESSError, WrongSamplerError
from glwalk.lattice import Lattice, make_torus
from glwalk.potential import HamiltonianSpec

logger = logging.getLogger(__name__)

SUM_TOL = 1e-9


@dataclass(frozen=True)
class FieldConfig:
    """Field ``eta`` on the ring together with its conserved density.

    ``eta`` may carry leading replica axes; the last axis is the site index.
    """

    eta: np.ndarray
    rho: float
    lattice: Lattice = field(default=None, compare=False)

    def __post_init__(self):
        eta = np.asarray(self.eta, dtype=float)
        object.__setattr__(self, "eta", eta)
        if self.lattice is None:
            object.__setattr__(self, "lattice", make_torus(eta.shape[-1], 1))
        if eta.shape[-1] != self.lattice.n_sites:
            raise ValueError(f"field has {eta.shape[-1]} sites, lattice has {self.lattice.n_sites}")

    @property
    def N(self) -> int:
        return self.lattice.N

    def sum_defect(self) -> np.ndarray:
        return self.eta.sum(axis=-1) - self.lattice.n_sites * self.rho

    def check_sum(self, tol: float = SUM_TOL) -> None:
        defect = np.max(np.abs(self.sum_defect()))
        scale = 1.0 + abs(self.lattice.n_sites * self.rho)
        if defect > tol * scale:
            raise ValueError(f"field sum deviates from N*rho by {defect:.3e}")

    def replica(self, r: int) -> "FieldConfig":
        return FieldConfig(self.eta[r], self.rho, self.lattice)


def _tag(purpose: str) -> int:
    return zlib.crc32(purpose.encode())


@dataclass(frozen=True)
class RngStream:
    """Counter-based random stream keyed by ``(seed, stream, purpose, block)``.

    Every key yields an independent Philox generator, so results do not depend
    on which worker processes which block of replicas.
    """

    seed: int
    stream: int = 0

    def generator(self, purpose: str = "default", block: int = 0) -> np.random.Generator:
        ss = np.random.SeedSequence(int(self.seed), spawn_key=(int(self.stream), _tag(purpose), int(block)))
        key = ss.generate_state(2, dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, stream: int) -> "RngStream":
        return RngStream(self.seed, stream)


def as_generator(rng, purpose: str = "default", block: int = 0) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if isinstance(rng, RngStream):
        return rng.generator(purpose, block)
    return RngStream(int(rng)).generator(purpose, block)


def sample_canonical_gaussian(N: int, rho: float, rng, replicas: int | None = None, h: HamiltonianSpec | None = None) -> FieldConfig:
    """Exact draw(s) from the canonical measure of ``V(x) = x^2/2``.

    ``eta = rho + (g - mean(g))`` with ``g`` i.i.d. standard normal; the result
    has covariance ``I - 11^T/N``.
    """
    if h is not None and not h.is_gaussian:
        raise WrongSamplerError("exact canonical sampler requires V1 gaussian and V2 absent")
    gen = as_generator(rng, "sample")
    shape = (N,) if replicas is None else (replicas, N)
    g = gen.standard_normal(shape)
    eta = rho + (g - g.mean(axis=-1, keepdims=True))
    return FieldConfig(eta, rho, make_torus(N))


@dataclass
class MCMCInfo:
    sweeps: int
    acceptance: float
    sigma: float
    pairing: str


def _color_classes(N: int, period: int) -> list[np.ndarray]:
    """Groups of bonds whose exchange moves can be applied simultaneously."""
    if N < 3 * period:
        return [np.array([i]) for i in range(N)]
    m = period * (N // period)
    classes = [np.arange(r, m, period) for r in range(period)]
    classes += [np.array([i]) for i in range(m, N)]
    return classes


def _pair_delta_energy(h: HamiltonianSpec, eta, left, right, delta, bond_moves):
    x = eta[:, left]
    y = eta[:, right]
    V1 = h.V1
    dE = V1.value(x + delta) + V1.value(y - delta) - V1.value(x) - V1.value(y)
    if h.V2 is not None and bond_moves:
        N = eta.shape[-1]
        xl = eta[:, (left - 1) % N]
        yr = eta[:, (right + 1) % N]
        V2 = h.V2
        dE += V2.value(xl + x + delta) - V2.value(xl + x)
        dE += V2.value(y - delta + yr) - V2.value(y + yr)
    return dE


def run_exchange_mcmc(
    h: HamiltonianSpec,
    eta: np.ndarray,
    sweeps: int,
    rng,
    sigma: float = 1.0,
    pairing: str = "bond",
    adapt_sweeps: int = 0,
    target: float = 0.4,
) -> MCMCInfo:
    """Run the mass-exchange Metropolis chain in place on a ``(replicas, N)`` array.

    ``pairing="bond"`` proposes ``(eta_i, eta_{i+1}) -> (eta_i + d, eta_{i+1} - d)``
    on every bond once per sweep.  ``pairing="matching"`` pairs sites by a
    random perfect matching instead (only valid for product Hamiltonians) and
    mixes the long-wavelength modes in O(1) sweeps.  The proposal scale is
    adapted during the first ``adapt_sweeps`` sweeps and frozen afterwards.
    """
    gen = as_generator(rng, "mcmc")
    eta = np.atleast_2d(eta)
    R, N = eta.shape
    if pairing == "matching" and h.V2 is not None:
        raise ValueError("matching moves are only reversible for product Hamiltonians")
    if pairing not in ("bond", "matching"):
        raise ValueError(f"unknown pairing {pairing!r}")
    classes = _color_classes(N, 2 if h.V2 is None else 4)
    accepted = proposed = 0
    window_acc = window_prop = 0
    for sweep in range(sweeps):
        if pairing == "bond":
            groups = [(c, (c + 1) % N) for c in classes]
        else:
            groups = []
            for _ in range(2):
                perm = gen.permutation(N)
                half = N // 2
                groups.append((perm[:half], perm[half : 2 * half]))
        for left, right in groups:
            delta = sigma * gen.standard_normal((R, left.size))
            dE = _pair_delta_energy(h, eta, left, right, delta, pairing == "bond")
            u = gen.random((R, left.size))
            acc = np.log(u) < -dE
            d = np.where(acc, delta, 0.0)
            eta[:, left] += d
            eta[:, right] -= d
            n_acc = int(acc.sum())
            accepted += n_acc
            proposed += acc.size
            window_acc += n_acc
            window_prop += acc.size
        if sweep < adapt_sweeps and (sweep + 1) % 10 == 0:
            rate = window_acc / max(window_prop, 1)
            sigma *= math.exp(rate - target)
            window_acc = window_prop = 0
        if sweep + 1 == adapt_sweeps:
            accepted = proposed = 0
    acceptance = accepted / max(proposed, 1)
    if sweeps > adapt_sweeps and not 0.1 <= acceptance <= 0.9:
        warnings.warn(f"exchange MCMC acceptance {acceptance:.3f} outside [0.1, 0.9]", TuningWarning, stacklevel=2)
    return MCMCInfo(sweeps, acceptance, sigma, pairing)


def default_burn_in(N: int) -> int:
    return 100 * N


def sample_canonical_mcmc(
    h: HamiltonianSpec,
    N: int,
    rho: float,
    sweeps: int | None = None,
    rng=0,
    replicas: int | None = None,
    pairing: str = "bond",
    init=None,
    sigma: float = 1.0,
) -> FieldConfig:
    """Approximate draw(s) from ``mu_{rho,N}`` by mass-exchange Metropolis.

    Starting from the flat field ``eta = rho`` the chain needs the default
    burn-in of ``100 N`` sweeps; a warm start ``init`` (for instance an exact
    Gaussian canonical draw) may use fewer.  The first half of the sweeps adapts
    the proposal scale towards 40% acceptance.
    """
    sweeps = default_burn_in(N) if sweeps is None else int(sweeps)
    if init is None:
        if sweeps < default_burn_in(N):
            raise ValueError(f"cold start needs at least {default_burn_in(N)} sweeps")
        eta = np.full((1 if replicas is None else replicas, N), float(rho))
    else:
        eta = np.array(getattr(init, "eta", init), dtype=float).reshape(-1, N)
    info = run_exchange_mcmc(h, eta, sweeps, rng, sigma=sigma, pairing=pairing, adapt_sweeps=sweeps // 2)
    logger.debug("exchange MCMC: %s", info)
    out = eta[0] if replicas is None and eta.shape[0] == 1 else eta
    return FieldConfig(out, rho, make_torus(N))


def sample_equilibrium(h: HamiltonianSpec, N: int, rho: float, replicas: int, rng, sweeps: int | None = None) -> np.ndarray:
    """Equilibrium fields of shape ``(replicas, N)`` by the cheapest valid route.

    Harmonic: exact.  Product Hamiltonian: exact Gaussian draw refined by
    matching-exchange Metropolis.  Pair interaction: Gaussian start refined by
    bond-exchange Metropolis with the full default burn-in.
    """
    gen = as_generator(rng, "sample")
    g = gen.standard_normal((replicas, N))
    eta = rho + (g - g.mean(axis=-1, keepdims=True))
    if h.is_gaussian:
        return eta
    if h.is_product:
        n = 60 if sweeps is None else sweeps
        run_exchange_mcmc(h, eta, n, gen, sigma=1.5, pairing="matching", adapt_sweeps=n // 3)
    else:
        n = default_burn_in(N) if sweeps is None else sweeps
        run_exchange_mcmc(h, eta, n, gen, sigma=1.0, pairing="bond", adapt_sweeps=n // 2)
    return eta


def autocovariance(x: np.ndarray) -> np.ndarray:
    """Biased (1/n) autocovariance at all lags via FFT."""
    x = np.asarray(x, dtype=float)
    n = x.size
    y = x - x.mean()
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(y, m)
    return np.fft.irfft(f * np.conj(f), m)[:n] / n


def effective_sample_size(series) -> float:
    """ESS from the integrated autocorrelation time, truncated by Geyer's
    initial positive sequence rule."""
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or x.size < 100:
        raise ValueError("effective_sample_size needs a 1-d series of length >= 100")
    gamma = autocovariance(x)
    if gamma[0] <= 0.0 or np.ptp(x) == 0.0:
        raise UndefinedESSError("series is constant")
    n = x.size
    pairs = gamma[: 2 * (n // 2)].reshape(-1, 2).sum(axis=1)
    stop = np.flatnonzero(pairs <= 0.0)
    m = stop[0] if stop.size else pairs.size
    tau = (-gamma[0] + 2.0 * pairs[:m].sum()) / gamma[0]
    return float(n / max(tau, 1.0 / n))


def write_config_csv(path, config: FieldConfig, seed: int) -> None:
    """Single-column CSV of one field with a ``# N=.. rho=.. seed=..`` header."""
    from glwalk.io import atomic_write_text

    eta = np.asarray(config.eta)
    if eta.ndim != 1:
        raise ValueError("write_config_csv expects a single field; use io.write_table for batches")
    lines = [f"# N={config.N} rho={config.rho!r} seed={int(seed)}", "eta"]
    lines += [repr(float(v)) for v in eta]
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_config_csv(path) -> tuple[FieldConfig, int]:
    meta = {}
    values = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line.startswith("#"):
                for item in line[1:].split():
                    k, v = item.split("=", 1)
                    meta[k] = v
            elif line and line != "eta":
                values.append(float(line))
    config = FieldConfig(np.array(values), float(meta["rho"]), make_torus(int(meta["N"])))
    return config, int(meta["seed"])
