"""Single-site and pair potentials, the Hamiltonian, and its bond derivatives.

The Hamiltonian on the ring is

    H(eta) = sum_i V1(eta_i) + V2(eta_i + eta_{i+1}),

with both potentials uniformly convex, ``C_minus <= V'' <= C_plus``.  All
evaluation functions are vectorised over leading (replica) axes; the last axis
of a field array is the site index.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Mapping

import numpy as np
from scipy.interpolate import CubicSpline

from glwalk.errors import (
    ConvexityViolation,
    PotentialDomainError,
    UnsupportedDimensionError,
)
from glwalk.lattice import Bond, Lattice, make_torus

KINDS = ("gaussian", "gaussian_plus_logcosh", "user_table")
CONVEXITY_TOL = 1e-12
#: offsets of the walk jumps, in the column order used by :func:`rate_table`
OFFSETS = (-2, -1, 1, 2)


def _logcosh(x):
    return np.logaddexp(x, -x) - math.log(2.0)


@dataclass(frozen=True)
class PotentialSpec:
    """A convex potential ``V`` with declared bounds on ``V''``.

    Use the constructors :func:`gaussian`, :func:`gaussian_plus_logcosh` and
    :func:`table_potential` rather than building instances by hand.
    """

    kind: str
    params: Mapping[str, float] = field(default_factory=dict)
    c_minus: float = 1.0
    c_plus: float = 1.0
    table: tuple[tuple[float, ...], tuple[float, ...]] | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown potential kind {self.kind!r}; expected one of {KINDS}")
        if not (0.0 < self.c_minus <= self.c_plus < math.inf):
            raise ValueError(
                f"need 0 < C_minus <= C_plus < inf, got C_minus={self.c_minus}, C_plus={self.c_plus}"
            )
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))
        if self.kind == "user_table":
            if self.table is None:
                raise ValueError("user_table potential needs (x, V'') samples")
            object.__setattr__(self, "_spline", _TableIntegrals(*self.table, self.c_minus))

    def __hash__(self):
        return hash((self.kind, tuple(sorted(self.params.items())), self.c_minus, self.c_plus, self.table))

    def __reduce__(self):
        # mappingproxy does not pickle; rebuild from plain fields in worker processes
        return (PotentialSpec, (self.kind, dict(self.params), self.c_minus, self.c_plus, self.table))

    def __eq__(self, other):
        if not isinstance(other, PotentialSpec):
            return NotImplemented
        return (
            self.kind == other.kind
            and dict(self.params) == dict(other.params)
            and self.c_minus == other.c_minus
            and self.c_plus == other.c_plus
            and self.table == other.table
        )

    @property
    def a(self) -> float:
        return float(self.params.get("a", 0.0))

    def value(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            return 0.5 * x * x
        if self.kind == "gaussian_plus_logcosh":
            return 0.5 * x * x + self.a * _logcosh(x)
        return self._spline.v(x)

    def first(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            return x.copy()
        if self.kind == "gaussian_plus_logcosh":
            return x + self.a * np.tanh(x)
        return self._spline.v1(x)

    def second(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "gaussian":
            return np.ones_like(x)
        if self.kind == "gaussian_plus_logcosh":
            t = np.tanh(x)
            return 1.0 + self.a * (1.0 - t * t)
        return self._spline.v2(x)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, **dict(self.params), "c_minus": self.c_minus, "c_plus": self.c_plus}
        if self.table is not None:
            out["table"] = [list(self.table[0]), list(self.table[1])]
        return out


class _TableIntegrals:
    """``V''`` from a cubic spline, clamped to ``C_minus`` outside the table,
    integrated twice with the gauge ``V(0) = V'(0) = 0``."""

    def __init__(self, xs, v2s, c_minus):
        xs = np.asarray(xs, dtype=float)
        v2s = np.asarray(v2s, dtype=float)
        if xs.ndim != 1 or xs.shape != v2s.shape or xs.size < 4:
            raise ValueError("table needs at least 4 matching (x, V'') samples")
        if np.any(np.diff(xs) <= 0):
            raise ValueError("table x values must be strictly increasing")
        self.lo, self.hi = xs[0], xs[-1]
        self.c = float(c_minus)
        self.s = CubicSpline(xs, v2s)
        self.p1 = self.s.antiderivative(1)
        self.p2 = self.s.antiderivative(2)
        self.p1_hi = float(self.p1(self.hi))
        self.p2_hi = float(self.p2(self.hi))
        self.i1_0 = float(self._i1(np.array(0.0)))
        self.i2_0 = float(self._i2(np.array(0.0)))

    def v2(self, x):
        inside = (x >= self.lo) & (x <= self.hi)
        return np.where(inside, self.s(np.clip(x, self.lo, self.hi)), self.c)

    def _i1(self, x):
        xc = np.clip(x, self.lo, self.hi)
        return np.where(
            x < self.lo,
            self.c * (x - self.lo),
            np.where(x > self.hi, self.p1_hi + self.c * (x - self.hi), self.p1(xc)),
        )

    def _i2(self, x):
        xc = np.clip(x, self.lo, self.hi)
        below = 0.5 * self.c * (x - self.lo) ** 2
        above = self.p2_hi + self.p1_hi * (x - self.hi) + 0.5 * self.c * (x - self.hi) ** 2
        return np.where(x < self.lo, below, np.where(x > self.hi, above, self.p2(xc)))

    def v1(self, x):
        return self._i1(x) - self.i1_0

    def v(self, x):
        return self._i2(x) - self.i2_0 - self.i1_0 * x


def gaussian() -> PotentialSpec:
    """``V(x) = x^2 / 2``."""
    return PotentialSpec("gaussian", {}, 1.0, 1.0)


def gaussian_plus_logcosh(a: float) -> PotentialSpec:
    """``V(x) = x^2/2 + a log cosh x`` with ``1 <= V'' <= 1 + a``."""
    if a < 0:
        raise ValueError("logcosh amplitude a must be non-negative")
    return PotentialSpec("gaussian_plus_logcosh", {"a": float(a)}, 1.0, 1.0 + float(a))


def table_potential(x, v_second, c_minus=None, c_plus=None) -> PotentialSpec:
    """Potential whose ``V''`` interpolates the samples ``(x, v_second)``.

    Bounds default to the sample extrema.
    """
    x = tuple(float(v) for v in x)
    v2 = tuple(float(v) for v in v_second)
    c_minus = min(v2) if c_minus is None else float(c_minus)
    c_plus = max(v2) if c_plus is None else float(c_plus)
    return PotentialSpec("user_table", {}, c_minus, c_plus, table=(x, v2))


def load_table_csv(path, c_minus=None, c_plus=None) -> PotentialSpec:
    """Read a two-column ``x, V_second`` CSV (header row optional, ``#`` comments skipped)."""
    xs, vs = [], []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                x, v = float(row[0]), float(row[1])
            except ValueError:
                if xs:
                    raise
                continue  # header
            xs.append(x)
            vs.append(v)
    return table_potential(xs, vs, c_minus, c_plus)


def evaluate(p: PotentialSpec, x: float) -> tuple[float, float, float]:
    """Return ``(V(x), V'(x), V''(x))``."""
    if not np.isfinite(x):
        raise PotentialDomainError(f"potential evaluated at non-finite x={x}")
    return float(p.value(x)), float(p.first(x)), float(p.second(x))


@dataclass(frozen=True)
class ConvexityReport:
    min_second: float
    max_second: float
    argmin: float
    argmax: float
    c_minus: float
    c_plus: float
    passed: bool


def default_grid() -> np.ndarray:
    return np.linspace(-8.0, 8.0, 16001)


def validate_convexity(p: PotentialSpec, grid=None) -> ConvexityReport:
    """Certify ``C_minus <= V'' <= C_plus`` on a grid.

    Raises
    ------
    ConvexityViolation
        Naming the first grid point where a bound fails by more than 1e-12.
    """
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("convexity grid is empty")
    v2 = p.second(grid)
    bad = np.flatnonzero((v2 < p.c_minus - CONVEXITY_TOL) | (v2 > p.c_plus + CONVEXITY_TOL))
    if bad.size:
        k = bad[0]
        raise ConvexityViolation(
            f"V''({grid[k]:.6g}) = {v2[k]:.12g} outside declared [{p.c_minus}, {p.c_plus}]",
            x=float(grid[k]),
            value=float(v2[k]),
        )
    return ConvexityReport(
        float(v2.min()),
        float(v2.max()),
        float(grid[np.argmin(v2)]),
        float(grid[np.argmax(v2)]),
        p.c_minus,
        p.c_plus,
        True,
    )


@dataclass(frozen=True)
class HamiltonianSpec:
    """``H = sum V1(eta_i) + V2(eta_i + eta_{i+1})``; ``V2=None`` is the product case."""

    V1: PotentialSpec
    V2: PotentialSpec | None = None

    @property
    def is_product(self) -> bool:
        return self.V2 is None

    @property
    def is_gaussian(self) -> bool:
        return self.V2 is None and self.V1.kind == "gaussian"

    @property
    def c_minus(self) -> float:
        return self.V1.c_minus if self.V2 is None else min(self.V1.c_minus, self.V2.c_minus)

    @property
    def c_plus(self) -> float:
        return self.V1.c_plus if self.V2 is None else max(self.V1.c_plus, self.V2.c_plus)

    @property
    def rate_bound(self) -> float:
        """Upper bound on the total jump rate out of a bond."""
        total = 2.0 * self.V1.c_plus
        if self.V2 is not None:
            total += 2.0 * self.V2.c_plus
        return total

    def to_dict(self) -> dict:
        return {"V1": self.V1.to_dict(), "V2": None if self.V2 is None else self.V2.to_dict()}


def _eta(config) -> np.ndarray:
    return np.asarray(getattr(config, "eta", config), dtype=float)


def _check_1d(config):
    lattice = getattr(config, "lattice", None)
    if lattice is not None and lattice.d != 1:
        raise UnsupportedDimensionError("the ring Hamiltonian is defined for d = 1 only")


def hamiltonian(h: HamiltonianSpec, config) -> np.ndarray | float:
    """Energy of a field (or of each replica in a batch)."""
    _check_1d(config)
    eta = _eta(config)
    if not np.all(np.isfinite(eta)):
        raise PotentialDomainError("field contains non-finite values")
    e = h.V1.value(eta).sum(axis=-1)
    if h.V2 is not None:
        e = e + h.V2.value(eta + np.roll(eta, -1, axis=-1)).sum(axis=-1)
    return float(e) if np.ndim(e) == 0 else e


def site_force(h: HamiltonianSpec, eta: np.ndarray) -> np.ndarray:
    """``dH/deta_i`` for every site."""
    f = h.V1.first(eta)
    if h.V2 is not None:
        pair = h.V2.first(eta + np.roll(eta, -1, axis=-1))  # pair[i] ~ (i, i+1)
        f = f + pair + np.roll(pair, 1, axis=-1)
    return f


def bond_gradient(h: HamiltonianSpec, config, b: Bond):
    """``d_b H = dH/deta_j - dH/deta_i`` for ``b = (i, j)``."""
    _check_1d(config)
    eta = _eta(config)
    n = eta.shape[-1]
    i, j = b.origin % n, (b.origin + 1) % n
    f = site_force(h, eta)
    out = f[..., j] - f[..., i]
    return float(out) if np.ndim(out) == 0 else out


def rate_table(h: HamiltonianSpec, eta: np.ndarray) -> np.ndarray:
    """Jump rates out of every bond, shape ``(..., N, 4)`` in :data:`OFFSETS` order.

    Row ``i`` is the bond ``(i, i+1)``.
    """
    eta = np.asarray(eta, dtype=float)
    v1 = h.V1.second(eta)
    out = np.zeros(eta.shape + (4,))
    out[..., 1] = v1
    out[..., 2] = np.roll(v1, -1, axis=-1)
    if h.V2 is not None:
        pair = h.V2.second(eta + np.roll(eta, -1, axis=-1))
        out[..., 0] = np.roll(pair, 1, axis=-1)
        out[..., 3] = np.roll(pair, -1, axis=-1)
    return out


def jump_rates(h: HamiltonianSpec, config, b: Bond) -> dict[int, float]:
    """Rates ``-d_b d_{b+k} H`` from bond ``b`` to ``b + k``, keyed by ``k``."""
    lattice = getattr(config, "lattice", None)
    if (lattice is not None and lattice.d != 1) or b.direction != 0:
        raise UnsupportedDimensionError("jump rates are only defined for d = 1")
    eta = _eta(config)
    n = eta.shape[-1]
    i = b.origin % n
    v1 = h.V1.second(eta[..., [i, (i + 1) % n]])
    rates = {-2: 0.0, -1: v1[..., 0], 1: v1[..., 1], 2: 0.0}
    if h.V2 is not None:
        rates[-2] = h.V2.second(eta[..., i] + eta[..., (i - 1) % n])
        rates[2] = h.V2.second(eta[..., (i + 1) % n] + eta[..., (i + 2) % n])
    return {k: (float(v) if np.ndim(v) == 0 else v) for k, v in rates.items()}


def site_hessian(h: HamiltonianSpec, eta: np.ndarray, lattice: Lattice | None = None) -> np.ndarray:
    """Site-indexed Hessian of ``H`` for a single field.

    On a ``d``-dimensional torus ``V2`` acts on every bond ``(x, y)`` through
    ``V2(eta_x + eta_y)``, which for ``d = 1`` is the ring Hamiltonian.
    """
    eta = np.asarray(eta, dtype=float)
    lattice = lattice or make_torus(eta.shape[-1], 1)
    H = np.diag(h.V1.second(eta))
    if h.V2 is not None:
        for b in lattice.bonds:
            x, y = lattice.endpoints(b)
            c = float(h.V2.second(eta[x] + eta[y]))
            H[x, x] += c
            H[y, y] += c
            H[x, y] += c
            H[y, x] += c
    return H


def bond_hessian(h: HamiltonianSpec, eta: np.ndarray, lattice: Lattice | None = None) -> np.ndarray:
    """Bond-indexed Hessian ``[d_b d_c H]`` as a dense matrix."""
    eta = np.asarray(eta, dtype=float)
    lattice = lattice or make_torus(eta.shape[-1], 1)
    D = lattice.incidence
    return D @ site_hessian(h, eta, lattice) @ D.T


def hamiltonian_from_dict(spec: dict) -> HamiltonianSpec:
    return HamiltonianSpec(potential_from_dict(spec["V1"]), None if spec.get("V2") is None else potential_from_dict(spec["V2"]))


def potential_from_dict(spec: dict) -> PotentialSpec:
    kind = spec["kind"]
    if kind == "gaussian":
        return gaussian()
    if kind == "gaussian_plus_logcosh":
        return gaussian_plus_logcosh(spec.get("a", 0.0))
    if kind == "user_table":
        if "table" in spec:
            x, v = spec["table"]
            return table_potential(x, v, spec.get("c_minus"), spec.get("c_plus"))
        return load_table_csv(Path(spec["path"]), spec.get("c_minus"), spec.get("c_plus"))
    raise ValueError(f"unknown potential kind {kind!r}")
