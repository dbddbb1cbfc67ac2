"""Exact linear algebra for the harmonic model and the simple-random-walk
generator ``Q`` on the torus, plus a dynamic estimate of the spectral gap.

For ``V(x) = x^2/2`` without pair term the bond Hessian is constant,
``Hess H = D D^T`` with ``D`` the bond-by-site incidence matrix, and the field
is an Ornstein-Uhlenbeck process with drift matrix ``A = -D^T D = Q``.  All
matrices involved are circulant, so their spectra are known in closed form.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from glwalk.dynamics import Integrator, check_step
from glwalk.errors import DiagnosticError, ModelError, SizeError
from glwalk.lattice import make_torus
from glwalk.potential import HamiltonianSpec, bond_hessian, gaussian
from glwalk.sampler import as_generator, sample_equilibrium

DENSE_LIMIT = 10_000
PINV_RTOL = 1e-10


@dataclass(frozen=True)
class WalkGenerator:
    """Generator of the rate-1 nearest-neighbour walk on ``(Z/NZ)^d``."""

    N: int
    d: int = 1

    @property
    def n_sites(self) -> int:
        return self.N**self.d

    def matrix(self) -> np.ndarray:
        if self.n_sites > DENSE_LIMIT:
            raise SizeError(f"dense Q for {self.n_sites} sites exceeds the limit {DENSE_LIMIT}")
        lat = make_torus(self.N, self.d)
        return lat.adjacency - 2.0 * self.d * np.eye(self.n_sites)

    def apply(self, phi: np.ndarray) -> np.ndarray:
        """``Q phi`` for a batch of fields ``(..., N^d)`` without forming ``Q``."""
        phi = np.asarray(phi, dtype=float)
        grid = phi.reshape(phi.shape[:-1] + (self.N,) * self.d)
        out = -2.0 * self.d * grid
        for k in range(self.d):
            ax = grid.ndim - self.d + k
            out = out + np.roll(grid, 1, axis=ax) + np.roll(grid, -1, axis=ax)
        return out.reshape(phi.shape)


def circulant_spectrum(N: int, d: int = 1) -> np.ndarray:
    """Eigenvalues ``sum_k (2 cos(2 pi m_k / N) - 2)`` of ``Q``, sorted descending."""
    one = 2.0 * np.cos(2.0 * np.pi * np.arange(N) / N) - 2.0
    ev = one
    for _ in range(d - 1):
        ev = np.add.outer(ev, one).ravel()
    return np.sort(ev)[::-1]


def q_spectrum(N: int, d: int = 1, method: str = "auto") -> np.ndarray:
    """Spectrum of ``Q`` sorted descending (``0 = lambda_1 > lambda_2 >= ...``).

    ``method="dense"`` diagonalises the matrix (at most ``10^4`` sites);
    ``"fourier"`` takes Rayleigh quotients of the plane waves, verified to be
    eigenvectors (see ``fourier_certificate``); ``"circulant"`` uses the
    Kronecker-sum formula; ``"auto"`` picks dense when it is allowed and
    fourier otherwise.
    """
    make_torus(N, d)
    n = N**d
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "fourier"
    if method == "dense":
        if n > DENSE_LIMIT:
            raise SizeError(f"dense spectrum for {n} sites exceeds the limit {DENSE_LIMIT}")
        ev = np.linalg.eigvalsh(WalkGenerator(N, d).matrix())
        return np.sort(ev)[::-1]
    if method == "fourier":
        cert = fourier_certificate(N, d)
        if cert.max_residual > 1e-10 or cert.max_norm_defect > 1e-10:
            raise DiagnosticError(f"plane waves fail the eigenvector check (residual {cert.max_residual:.2e})")
        return cert.eigenvalues
    if method == "circulant":
        return circulant_spectrum(N, d)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class FourierCertificate:
    """Numerical eigenpairs of ``Q`` from its Fourier modes.

    ``eigenvalues`` are Rayleigh quotients ``<v, Q v>`` for the ``N^d``
    unit-norm plane waves ``v``, computed with ``WalkGenerator.apply``;
    ``max_residual`` is ``max |Q v - lambda v|``.  The plane waves form an
    orthonormal basis, so a small residual certifies the full spectrum.
    """

    eigenvalues: np.ndarray
    max_residual: float
    max_norm_defect: float


def fourier_certificate(N: int, d: int = 1, batch: int = 256) -> FourierCertificate:
    """Certify the spectrum of ``Q`` on ``(Z/NZ)^d`` without a dense matrix."""
    make_torus(N, d)
    gen = WalkGenerator(N, d)
    waves = np.exp(2j * np.pi * np.outer(np.arange(N), np.arange(N)) / N) / math.sqrt(N)  # (m, x)
    freqs = np.array(list(itertools.product(range(N), repeat=d)))
    lam = np.empty(len(freqs))
    resid, norm_defect = 0.0, 0.0
    for lo in range(0, len(freqs), batch):
        m = freqs[lo : lo + batch]
        v = waves[m[:, 0]]
        for k in range(1, d):
            v = (v[:, :, None] * waves[m[:, k]][:, None, :]).reshape(len(m), -1)
        Qv = gen.apply(v.real) + 1j * gen.apply(v.imag)
        rq = np.sum(np.conj(v) * Qv, axis=1)
        lam[lo : lo + batch] = rq.real
        resid = max(resid, float(np.max(np.abs(Qv - rq[:, None] * v))), float(np.max(np.abs(rq.imag))))
        norm_defect = max(norm_defect, float(np.max(np.abs(np.sum(np.abs(v) ** 2, axis=1) - 1.0))))
    return FourierCertificate(np.sort(lam)[::-1], resid, norm_defect)


def spectral_gap(N: int, d: int = 1) -> float:
    """``|lambda_2(Q)| = 2 - 2 cos(2 pi / N)`` (independent of ``d``)."""
    make_torus(N, d)
    return 2.0 - 2.0 * math.cos(2.0 * math.pi / N)


@dataclass
class GapInequalityReport:
    min_ratio: float
    lambda2: float
    n_fields: int
    argmin_kind: str

    @property
    def holds(self) -> bool:
        return self.min_ratio >= abs(self.lambda2) - 1e-10


def gap_forms(phi: np.ndarray, N: int, d: int = 1) -> tuple[np.ndarray, np.ndarray]:
    """``g(phi) = |Q phi|^2`` and ``h(phi) = sum over bonds (phi_x - phi_y)^2``."""
    Qphi = WalkGenerator(N, d).apply(phi)
    g = np.sum(Qphi * Qphi, axis=-1)
    h = -np.sum(phi * Qphi, axis=-1)
    return g, h


def _fourier_modes(N: int, d: int, max_freq: int = 2) -> np.ndarray:
    grids = np.meshgrid(*([np.arange(N)] * d), indexing="ij")
    coords = np.stack([g.ravel() for g in grids])  # (d, n)
    modes = []
    rng_f = range(-max_freq, max_freq + 1)
    for m in itertools.product(rng_f, repeat=d):
        if not any(m):
            continue
        phase = 2.0 * np.pi * (np.asarray(m) @ coords) / N
        modes.append(np.cos(phase))
        modes.append(np.sin(phase))
    return np.array(modes)


def discrete_gap_inequality(N: int, d: int = 1, trials: int = 10_000, rng=0) -> GapInequalityReport:
    """Smallest observed ``g(phi) / h(phi)`` over random and low-frequency fields.

    The bound ``g >= |lambda_2| h`` is attained by the slowest Fourier modes.
    Constant fields (``h = 0``) are excluded.
    """
    if trials < 1:
        raise ValueError("need at least one trial")
    gen = as_generator(rng, "gap-inequality")
    n = N**d
    slow = _fourier_modes(N, d, max_freq=1)

    def random_fields(m):
        return gen.standard_normal((m, n))

    def slow_mixture(m):
        mix = gen.standard_normal((m, slow.shape[0])) @ slow
        return mix + 1e-3 * gen.standard_normal(mix.shape)

    # fields are generated in batches so large d = 2 tori stay within memory
    batch = max(1, min(trials, 2**22 // n))
    best, kind = math.inf, ""
    total = 0

    def scan(name, phi):
        nonlocal best, kind, total
        g, h = gap_forms(phi, N, d)
        keep = h > 1e-12 * np.sum(phi * phi, axis=-1)
        total += int(keep.sum())
        if keep.any():
            r = float(np.min(g[keep] / h[keep]))
            if r < best:
                best, kind = r, name

    for name, make in (("random", random_fields), ("slow-mixture", slow_mixture)):
        for lo in range(0, trials, batch):
            scan(name, make(min(batch, trials - lo)))
    scan("fourier", _fourier_modes(N, d))
    return GapInequalityReport(best, -spectral_gap(N, d), total, kind)


def gaussian_exact_row(N: int, t) -> np.ndarray:
    """``<eta_0(0); eta_m(t)>`` for the harmonic model, ``m = 0..N-1``.

    Computed as the first row of ``exp(tQ) (I - 11^T/N)`` by circulant
    diagonalisation; ``t`` may be an array, giving shape ``t.shape + (N,)``.
    """
    if N > 4096:
        raise SizeError("exact covariance supports N <= 4096")
    t = np.asarray(t, dtype=float)
    k = np.arange(N)
    lam = 2.0 * np.cos(2.0 * np.pi * k / N) - 2.0
    w = np.exp(np.multiply.outer(t, lam))
    w[..., 0] = 0.0  # zero mode removed by the constraint
    return np.real(np.fft.ifft(w, axis=-1))


def gaussian_exact_covariance(N: int, t: float) -> np.ndarray:
    """Matrix ``<eta_i(0); eta_j(t)>`` of the harmonic model on the ring."""
    row = gaussian_exact_row(N, t)
    idx = (np.arange(N)[None, :] - np.arange(N)[:, None]) % N
    return row[idx]


@dataclass
class WittenReport:
    N: int
    max_discrepancy: float
    null_modes: int
    covariance: np.ndarray = field(repr=False)


def _pinv_one_null(M: np.ndarray) -> tuple[np.ndarray, int]:
    w, U = np.linalg.eigh(M)
    tol = PINV_RTOL * np.max(np.abs(w))
    null = np.abs(w) <= tol
    if int(null.sum()) != 1:
        raise ModelError(f"expected exactly one null mode, found {int(null.sum())}")
    inv = np.where(null, 0.0, 1.0 / np.where(null, 1.0, w))
    return (U * inv) @ U.T, 1


def witten_check_gaussian(N: int, method: str = "auto") -> WittenReport:
    """Compare ``grad(eta_i) . (Hess H)^+ grad(eta_j)`` with ``delta_ij - 1/N``.

    For linear observables the bond gradients are constant, the ``L x Id`` part
    of the Witten Laplacian vanishes on them, and the representation reduces
    to the pseudo-inverse of the bond Hessian.
    """
    if N > 4096:
        raise SizeError("Witten check supports N <= 4096")
    if method == "auto":
        method = "dense" if N <= 512 else "circulant"
    target = np.eye(N) - 1.0 / N
    if method == "dense":
        lat = make_torus(N)
        D = lat.incidence
        hess = bond_hessian(HamiltonianSpec(gaussian()), np.zeros(N), lat)
        pinv, nulls = _pinv_one_null(hess)
        cov = D.T @ pinv @ D
    elif method == "circulant":
        # bond Hessian symbol 2 - 2cos; incidence symbol e^{i theta} - 1
        theta = 2.0 * np.pi * np.arange(N) / N
        mu = 2.0 - 2.0 * np.cos(theta)
        null = mu <= PINV_RTOL * mu.max()
        nulls = int(null.sum())
        if nulls != 1:
            raise ModelError(f"expected exactly one null mode, found {nulls}")
        dsym = np.exp(1j * theta) - 1.0
        sym = np.where(null, 0.0, np.abs(dsym) ** 2 / np.where(null, 1.0, mu))
        row = np.real(np.fft.ifft(sym))
        cov = row[(np.arange(N)[None, :] - np.arange(N)[:, None]) % N]
    else:
        raise ValueError(f"unknown method {method!r}")
    return WittenReport(N, float(np.max(np.abs(cov - target))), nulls, cov)


def commutation_check_gaussian(N: int) -> float:
    """Max discrepancy of ``grad(L g) = (L x Id + Hess H) grad g`` over linear ``g``.

    With ``L`` the (positive) generator, ``L (a . eta) = -(Q a) . eta``; the
    gradient of a linear function is ``D a`` and ``L x Id`` annihilates it.
    """
    lat = make_torus(N)
    D = lat.incidence
    Q = WalkGenerator(N).matrix()
    hess = bond_hessian(HamiltonianSpec(gaussian()), np.zeros(N), lat)
    lhs = -D @ Q
    rhs = hess @ D
    return float(np.max(np.abs(lhs - rhs)))


@dataclass
class PositivityReport:
    min_ratio: float
    c_minus: float

    @property
    def holds(self) -> bool:
        return self.min_ratio >= self.c_minus * (1 - 1e-12)


def hessian_positivity_check(h: HamiltonianSpec, eta: np.ndarray, trials: int = 1000, rng=0) -> PositivityReport:
    """Smallest ``F . Hess(H) F / |D^T F|^2`` over random bond vectors ``F``.

    For a product Hamiltonian ``Hess H = D diag(V'') D^T``, so the ratio is at
    least ``C_minus``.
    """
    if not h.is_product:
        raise ModelError("positivity check is stated for product Hamiltonians")
    eta = np.asarray(eta, dtype=float)
    lat = make_torus(eta.size)
    D = lat.incidence
    hess = bond_hessian(h, eta, lat)
    F = as_generator(rng, "positivity").standard_normal((trials, lat.n_bonds))
    num = np.einsum("tb,bc,tc->t", F, hess, F)
    div = F @ D
    den = np.sum(div * div, axis=1)
    keep = den > 1e-12
    return PositivityReport(float(np.min(num[keep] / den[keep])), h.c_minus)


@dataclass
class GapOrdering:
    N: int
    lam: float
    lam_tilde: float

    @property
    def holds(self) -> bool:
        return self.lam >= self.lam_tilde - 1e-12


def gap_ordering_gaussian(N: int) -> GapOrdering:
    """``lambda`` (gap of the harmonic generator) versus ``lambda~``.

    In the harmonic model the generator acts on linear functions through
    ``-Q``, so ``lambda = |lambda_2(Q)|``.  ``lambda~`` minimises the Rayleigh
    quotient of the Witten Laplacian over gradient fields; on constant
    gradients ``D a`` that is the Hessian restricted to the range of ``D``.
    """
    lat = make_torus(N)
    D = lat.incidence
    hess = bond_hessian(HamiltonianSpec(gaussian()), np.zeros(N), lat)
    ev = np.sort(np.linalg.eigvalsh(-WalkGenerator(N).matrix()))
    lam = float(ev[1])
    U, s, _ = np.linalg.svd(D, full_matrices=False)
    basis = U[:, s > PINV_RTOL * s.max()]  # range of D
    restricted = basis.T @ hess @ basis
    lam_tilde = float(np.min(np.linalg.eigvalsh(restricted)))
    return GapOrdering(N, lam, lam_tilde)


# ---------------------------------------------------------------- dynamic gap


@dataclass
class GapEstimate:
    """Decay rate of the slowest Fourier mode's autocorrelation."""

    N: int
    rate: float
    stderr: float
    r_squared: float
    fit_lags: tuple[float, float]
    gaussian_rate: float
    c_minus: float
    replicas: int
    horizon: float
    dt: float

    @property
    def k_empirical(self) -> float:
        return self.rate * self.N**2 / self.c_minus

    @property
    def bound(self) -> float:
        """``k C_minus / N^2`` with ``k`` calibrated on the harmonic model."""
        return self.c_minus * self.gaussian_rate

    def to_dict(self) -> dict:
        return {
            "N": self.N,
            "rate": self.rate,
            "stderr": self.stderr,
            "r_squared": self.r_squared,
            "fit_lags": list(self.fit_lags),
            "gaussian_rate": self.gaussian_rate,
            "bound": self.bound,
            "k_empirical": self.k_empirical,
            "replicas": self.replicas,
            "horizon": self.horizon,
            "dt": self.dt,
        }


def _fit_log_decay(lags: np.ndarray, acf: np.ndarray, floor: float):
    """Least-squares slope of ``log acf`` over lags until ``acf`` first drops below ``floor``."""
    norm = acf / acf[0]
    below = np.flatnonzero(norm < floor)
    stop = below[0] if below.size else norm.size
    if stop < 4:
        raise DiagnosticError("autocorrelation decays too fast to fit; reduce the sampling interval")
    x, y = lags[:stop], np.log(norm[:stop])
    slope, icpt = np.polyfit(x, y, 1)
    resid = y - (icpt + slope * x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 0.0
    return -float(slope), r2, float(x[-1])


def gap_estimate_dynamic(
    h: HamiltonianSpec,
    N: int,
    rho: float = 0.0,
    replicas: int = 16,
    rng=0,
    dt: float | None = None,
    horizon: float | None = None,
    floor: float = 0.2,
    min_r2: float = 0.95,
) -> GapEstimate:
    """Fit the decay rate of ``F = sum_x cos(2 pi x/N) eta_x`` along stationary runs.

    Each replica runs from equilibrium for ``horizon >= 5 N^2 / C_minus``;
    the non-centred autocovariance of ``F`` (whose mean is zero) is averaged
    over time origins and replicas, and ``log ACF`` is fitted by a line over
    the lags where the normalised ACF stays above ``floor``.  The standard
    error is the delete-one-replica jackknife.

    Raises
    ------
    DiagnosticError
        If the log-linear fit has ``R^2 < min_r2``.
    """
    if replicas < 2:
        raise ValueError("the jackknife needs at least two replicas")
    lam_g = spectral_gap(N)
    min_h = 5.0 * N**2 / h.c_minus
    horizon = min_h if horizon is None else float(horizon)
    if horizon < min_h * (1 - 1e-12):
        raise ValueError(f"horizon must be at least 5 N^2 / C_minus = {min_h:g}")
    if dt is None:
        dt = min(0.1 / h.c_plus, 0.005 / lam_g)
    check_step(h, dt)
    stride = max(1, int(round(0.02 / (lam_g * dt))))
    gen = as_generator(rng, "gap")
    eta = sample_equilibrium(h, N, rho, replicas, gen)
    integ = Integrator(h, dt, gen)
    mode = np.cos(2.0 * np.pi * np.arange(N) / N)
    n_rec = int(horizon / (dt * stride)) + 1
    series = np.empty((replicas, n_rec))
    for k in range(n_rec):
        series[:, k] = (eta - rho) @ mode
        if k + 1 < n_rec:
            for _ in range(stride):
                integ.step(eta)
    # non-centred autocovariance per replica, via FFT
    m = 1 << (2 * n_rec - 1).bit_length()
    f = np.fft.rfft(series, m, axis=1)
    acov = np.fft.irfft(f * np.conj(f), m, axis=1)[:, :n_rec]
    acov /= n_rec - np.arange(n_rec)
    max_lag = n_rec // 2
    acov = acov[:, :max_lag]
    lags = np.arange(max_lag) * dt * stride
    mean = acov.mean(axis=0)
    rate, r2, lag_hi = _fit_log_decay(lags, mean, floor)
    if r2 < min_r2:
        raise DiagnosticError(f"log-linear fit of the mode autocorrelation has R^2 = {r2:.3f} < {min_r2}")
    total = acov.sum(axis=0)
    jack = []
    for r in range(replicas):
        loo = (total - acov[r]) / (replicas - 1)
        norm = loo / loo[0]
        stop = np.searchsorted(lags, lag_hi, side="right")
        x, y = lags[:stop], np.log(np.maximum(norm[:stop], 1e-300))
        jack.append(-np.polyfit(x, y, 1)[0])
    jack = np.asarray(jack)
    se = math.sqrt((replicas - 1) / replicas * np.sum((jack - jack.mean()) ** 2))
    return GapEstimate(N, rate, se, r2, (0.0, lag_hi), lam_g, h.c_minus, replicas, horizon, dt)
