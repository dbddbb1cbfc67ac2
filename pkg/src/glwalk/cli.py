"""Command-line driver: ``glwalk <experiment> --config run.yaml [--check]``.

Each experiment reads a YAML file whose keys are validated against a strict
schema (unknown keys are errors), certifies the potentials' convexity, runs,
and writes CSV tables plus ``summary.json`` into the output directory.  Every
file embeds the full resolved configuration, and the same configuration and
seed reproduce byte-identical files.

Exit codes: 0 success, 2 invalid configuration, 3 runtime failure,
4 ``--check`` tolerance failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path
from typing import Callable, Literal

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from glwalk import __version__
from glwalk import estimators as est
from glwalk import spectral
from glwalk.dynamics import evolve
from glwalk.errors import ConvexityViolation, GLWalkError
from glwalk.io import write_json, write_table
from glwalk.potential import HamiltonianSpec, potential_from_dict, validate_convexity
from glwalk.sampler import RngStream, sample_equilibrium, write_config_csv, FieldConfig
from glwalk.walk import kernel_estimate, msd

logger = logging.getLogger("glwalk")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_CHECK = 0, 2, 3, 4


# ------------------------------------------------------------------- schemas


class PotentialConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["gaussian", "gaussian_plus_logcosh", "user_table"] = "gaussian"
    a: float = Field(0.0, ge=0.0, description="log cosh amplitude")
    path: str | None = Field(None, description="two-column CSV (x, V'') for user_table")
    table: tuple[list[float], list[float]] | None = Field(None, description="inline (x, V'') samples for user_table")
    c_minus: float | None = None
    c_plus: float | None = None

    @model_validator(mode="after")
    def _table_source(self):
        if self.kind == "user_table" and self.path is None and self.table is None:
            raise ValueError("user_table needs 'path' or 'table'")
        return self

    def spec(self):
        d = self.model_dump(exclude_none=True)
        return potential_from_dict(d)


class RunConfig(BaseModel):
    """Fields shared by every experiment."""

    model_config = ConfigDict(extra="forbid")

    experiment: str | None = None
    potential: PotentialConfig = PotentialConfig()
    pair_potential: PotentialConfig | None = None
    N: int = Field(64, ge=3)
    rho: float = 0.0
    dt: float | None = Field(None, gt=0)
    replicas: int = Field(1000, ge=1)
    seed: int = Field(0, ge=0, lt=2**64)
    out: str = "runs"
    parallelism: int = Field(1, ge=1)

    def hamiltonian(self) -> HamiltonianSpec:
        return HamiltonianSpec(self.potential.spec(), None if self.pair_potential is None else self.pair_potential.spec())


class SampleConfig(RunConfig):
    N: int = Field(16, ge=3)
    sweeps: int | None = Field(None, ge=1)


class EvolveConfig(RunConfig):
    N: int = Field(16, ge=3)
    dt: float | None = Field(0.01, gt=0)
    horizon: float = Field(1.0, ge=0)
    times: list[float] | None = None
    replicas: int = Field(1, ge=1)


_OFFSETS = list(range(-4, 5))


class IdentityConfig(RunConfig):
    dt: float | None = Field(1e-3, gt=0)
    times: list[float] = [0.25, 0.5, 1.0, 2.0]
    offsets: list[int] = _OFFSETS
    replicas: int = Field(20000, ge=2)
    walks_per_replica: int = Field(16, ge=1)


class BoundsConfig(IdentityConfig):
    potential: PotentialConfig = PotentialConfig(kind="gaussian_plus_logcosh", a=1.0)


class KernelConfig(RunConfig):
    t: float = Field(1.0, ge=0)
    replicas: int = Field(20000, ge=2)
    walks_per_replica: int = Field(16, ge=1)
    max_offset: int | None = Field(None, ge=0)


class MSDConfig(RunConfig):
    N: int = Field(256, ge=3)
    times: list[float] = [float(t) for t in range(0, 21)]
    fit_window: tuple[float, float] = (10.0, 20.0)
    replicas: int = Field(500, ge=2)
    walks_per_replica: int = Field(32, ge=1)


class DiffusionConfig(RunConfig):
    N: int = Field(256, ge=3)
    fit_window: tuple[float, float] = (10.0, 20.0)
    replicas: int = Field(1000, ge=2)
    walks_per_replica: int = Field(32, ge=1)


class VariationalConfig(RunConfig):
    replicas: int = Field(20000, ge=2, description="number of equilibrium samples")
    basis: Literal["default", "none"] | list[Literal["v_prime", "tanh0", "tanh1", "clip01", "curvature"]] = "default"


class ProfileConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")
    x: list[float]
    values: list[float]

    @field_validator("x")
    @classmethod
    def _inside(cls, v):
        if min(v) < -1 or max(v) > 1:
            raise ValueError("profile samples must lie in [-1, 1]")
        return v


class SmoothedConfig(RunConfig):
    N: int = Field(256, ge=3)
    dt: float | None = Field(0.05, gt=0)
    eps: float = Field(1.0 / 16, gt=0, le=1)
    x: float = 0.0
    t: float = Field(1.0, gt=0)
    q: float = Field(2.0, gt=0)
    profile: Literal["triangle", "zero"] | ProfileConfig = "triangle"
    replicas: int = Field(2000, ge=2)
    bias_budget: float = Field(0.1, ge=0)


class SpectralConfig(RunConfig):
    N: int = Field(32, ge=3)
    d: int = Field(1, ge=1)
    trials: int = Field(10000, ge=1)
    dynamic: bool = False
    replicas: int = Field(16, ge=2)


class GaussianExactConfig(RunConfig):
    times: list[float] = [0.0, 0.25, 0.5, 1.0, 2.0]
    max_offset: int = Field(8, ge=0)


class MonotonicityConfig(RunConfig):
    N: int = Field(32, ge=3)
    dt: float | None = Field(1e-4, gt=0)
    horizon: float = Field(1.0, gt=0)
    replicas: int = Field(1000, ge=1, description="number of coupled pairs")
    bump: float = Field(1.0, gt=0)
    correlation_replicas: int = Field(4000, ge=2)
    correlation_time: float = Field(0.5, ge=0)


# ---------------------------------------------------------------- experiments


class Outcome:
    """Results of one experiment: tables, a JSON-able summary and check verdicts."""

    def __init__(self):
        self.tables: dict[str, tuple[list[str], list]] = {}
        self.summary: dict = {}
        self.checks: dict[str, bool] = {}
        self.result = None

    @property
    def passed(self) -> bool:
        return all(self.checks.values())


def _stream(cfg: RunConfig) -> RngStream:
    return RngStream(cfg.seed)


def _estimate_rows(series_list):
    rows = []
    for s in series_list:
        rows.extend(s.rows())
    return rows


ESTIMATE_COLUMNS = ["quantity", "index", "t", "estimate", "stderr"]


def run_sample(cfg: SampleConfig) -> Outcome:
    h = cfg.hamiltonian()
    eta = sample_equilibrium(h, cfg.N, cfg.rho, cfg.replicas, _stream(cfg).generator("cli-sample"), sweeps=cfg.sweeps)
    o = Outcome()
    o.tables["samples"] = (["replica", "site", "eta"], [(r, i, float(v)) for r in range(eta.shape[0]) for i, v in enumerate(eta[r])])
    defect = float(np.max(np.abs(eta.sum(axis=1) - cfg.N * cfg.rho)))
    o.summary = {"max_sum_defect": defect}
    if cfg.replicas >= 100:
        o.summary["susceptibility"] = est.susceptibility(h, cfg.N, cfg.rho, cfg.replicas, None, eta=eta).to_dict()
    o.checks["sum_constraint"] = defect <= 1e-9 * (1 + abs(cfg.N * cfg.rho))
    o.result = eta
    return o


def run_evolve(cfg: EvolveConfig) -> Outcome:
    h = cfg.hamiltonian()
    s = _stream(cfg)
    eta = sample_equilibrium(h, cfg.N, cfg.rho, cfg.replicas, s.generator("cli-init"))
    times = cfg.times if cfg.times is not None else [0.0, cfg.horizon]
    traj = evolve(FieldConfig(eta, cfg.rho), h, cfg.horizon, cfg.dt, s.generator("cli-dynamics"), times=times)
    snaps = traj["eta"]
    o = Outcome()
    o.tables["trajectory"] = (["t", "site", "value"], [(float(t), i, float(v)) for t, snap in zip(traj.times, snaps) for i, v in enumerate(snap[0])])
    drift = float(np.max(np.abs(snaps.sum(axis=-1) - snaps[0].sum(axis=-1))))
    o.summary = {"max_sum_drift": drift, "recorded_times": list(map(float, traj.times))}
    o.checks["conservation"] = drift <= 1e-9 * cfg.N * (1 + abs(cfg.rho))
    o.result = traj
    return o


def run_identity(cfg: IdentityConfig) -> Outcome:
    h = cfg.hamiltonian()
    res = est.identity_check(h, cfg.N, cfg.rho, cfg.times, cfg.offsets, cfg.replicas, _stream(cfg), cfg.dt, cfg.walks_per_replica, parallelism=cfg.parallelism)
    o = Outcome()
    o.tables["identity"] = (["t", "i", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "rhs_raw", "z"], res.rows())
    o.tables["estimates"] = (ESTIMATE_COLUMNS, _estimate_rows([res.lhs, res.rhs, res.rhs_raw]))
    o.summary = {"fraction_abs_z_below_3": res.fraction_within, "max_abs_z": res.max_abs_z, "points": int(res.z.size)}
    o.checks["z_rule"] = est.z_rule(res.z)
    if h.is_gaussian:
        z_l, z_r = est.gaussian_oracle_zscores(res)
        o.summary["oracle_max_abs_z_lhs"] = float(np.max(np.abs(z_l)))
        o.summary["oracle_max_abs_z_rhs"] = float(np.max(np.abs(z_r)))
        o.summary["oracle_fraction_abs_z_below_3"] = [float(np.mean(np.abs(z_l) < 3)), float(np.mean(np.abs(z_r) < 3))]
        o.checks["oracle_lhs"] = est.z_rule(z_l)
        o.checks["oracle_rhs"] = est.z_rule(z_r)
    o.result = res
    return o


def run_bounds(cfg: BoundsConfig) -> Outcome:
    h = cfg.hamiltonian()
    res = est.bounds_check(h, cfg.N, cfg.rho, cfg.times, cfg.offsets, cfg.replicas, _stream(cfg), cfg.dt, cfg.walks_per_replica, parallelism=cfg.parallelism)
    o = Outcome()
    o.tables["bounds"] = (["t", "i", "ratio", "stderr", "tested"], res.rows())
    o.summary = {"lower": res.lower, "upper": res.upper, "violations": int(res.violations.sum()), "tested": int(res.tested.sum()), "skipped": res.skipped}
    o.checks["sandwich"] = res.all_within
    o.result = res
    return o


def run_kernel(cfg: KernelConfig) -> Outcome:
    h = cfg.hamiltonian()
    k = kernel_estimate(h, cfg.N, cfg.rho, cfg.t, cfg.replicas, _stream(cfg), cfg.dt, cfg.walks_per_replica, cfg.max_offset, parallelism=cfg.parallelism)
    o = Outcome()
    o.tables["kernel"] = (["offset", "probability", "stderr"], k.rows())
    total = float(k.probability.sum())
    o.summary = {"t": cfg.t, "total_probability": total, "p0": k.at(0)[0], "p0_stderr": k.at(0)[1]}
    o.checks["normalised"] = abs(total - 1.0) < 1e-9 or cfg.max_offset is not None
    o.result = k
    return o


def run_msd(cfg: MSDConfig) -> Outcome:
    h = cfg.hamiltonian()
    res = msd(h, cfg.N, cfg.rho, cfg.times, cfg.replicas, _stream(cfg), cfg.dt, cfg.walks_per_replica, cfg.fit_window, parallelism=cfg.parallelism)
    s = res.series
    o = Outcome()
    o.tables["msd"] = (["t", "msd", "stderr"], [(float(t), float(m), float(e)) for t, m, e in zip(s.times, s.estimate, s.stderr)])
    o.summary = {"slope": res.slope, "slope_stderr": res.slope_stderr, "r_squared": res.r_squared, "fit_window": list(res.fit_window)}
    o.checks["linear"] = res.r_squared >= 0.99
    o.result = res
    return o


def run_diffusion(cfg: DiffusionConfig) -> Outcome:
    h = cfg.hamiltonian()
    q = est.diffusion_coefficient_msd(h, cfg.N, cfg.rho, cfg.fit_window, cfg.replicas, _stream(cfg), cfg.dt, cfg.walks_per_replica, parallelism=cfg.parallelism)
    o = Outcome()
    s = q.series
    o.tables["msd"] = (["t", "msd", "stderr"], [(float(t), float(m), float(e)) for t, m, e in zip(s.times, s.estimate, s.stderr)])
    o.summary = q.to_dict() | {"bounds": [2 * h.c_minus, 2 * h.c_plus]}
    o.checks["bounds"] = 2 * h.c_minus - q.ci <= q.q <= 2 * h.c_plus + q.ci
    o.result = q
    return o


def _basis(cfg: VariationalConfig, h):
    if cfg.basis == "default":
        return None
    if cfg.basis == "none":
        return []
    cat = est.basis_catalog(h)
    return [cat[name] for name in cfg.basis]


def run_variational(cfg: VariationalConfig) -> Outcome:
    h = cfg.hamiltonian()
    res = est.variational_q_upper(h, cfg.N, cfg.rho, _basis(cfg, h), cfg.replicas, _stream(cfg).generator("cli-variational"))
    o = Outcome()
    o.summary = res.to_dict()
    o.checks["below_trivial"] = res.q_upper <= res.trivial_bound + 3 * res.stderr
    o.checks["bounds"] = 2 * h.c_minus - 3 * res.stderr <= res.q_upper <= 2 * h.c_plus + 3 * res.stderr
    o.result = res
    return o


def _profile(cfg: SmoothedConfig):
    if cfg.profile == "triangle":
        return est.triangle
    if cfg.profile == "zero":
        return lambda x: np.zeros_like(np.asarray(x, dtype=float))
    return (cfg.profile.x, cfg.profile.values)


def run_smoothed(cfg: SmoothedConfig) -> Outcome:
    h = cfg.hamiltonian()
    res = est.smoothed_relaxation(h, cfg.N, cfg.rho, _profile(cfg), cfg.eps, cfg.x, cfg.t, cfg.replicas, _stream(cfg), q=cfg.q, dt=cfg.dt, parallelism=cfg.parallelism)
    o = Outcome()
    o.summary = res.to_dict()
    ref = res.exact if res.exact is not None else res.prediction_finite_volume
    o.checks["matches_reference"] = abs(res.estimate - ref) <= 3 * res.stderr + cfg.bias_budget * abs(ref)
    o.result = res
    return o


def run_spectral(cfg: SpectralConfig) -> Outcome:
    ev = spectral.q_spectrum(cfg.N, cfg.d)
    circ = spectral.circulant_spectrum(cfg.N, cfg.d)
    ineq = spectral.discrete_gap_inequality(cfg.N, cfg.d, cfg.trials, _stream(cfg).generator("cli-gap"))
    o = Outcome()
    o.tables["spectrum"] = (["k", "eigenvalue", "circulant"], [(k, float(a), float(b)) for k, (a, b) in enumerate(zip(ev, circ))])
    o.summary = {
        "lambda2": float(ev[1]),
        "max_spectrum_discrepancy": float(np.max(np.abs(ev - circ))),
        "gap_inequality_min_ratio": ineq.min_ratio,
        "gap_inequality_fields": ineq.n_fields,
    }
    o.checks["spectrum"] = o.summary["max_spectrum_discrepancy"] < 1e-12 * max(1.0, float(np.max(np.abs(circ))))
    o.checks["gap_inequality"] = ineq.holds
    if cfg.dynamic:
        if cfg.d != 1:
            raise GLWalkError("the dynamic gap estimate runs on the ring only (d = 1)")
        h = cfg.hamiltonian()
        gap = spectral.gap_estimate_dynamic(h, cfg.N, cfg.rho, cfg.replicas, _stream(cfg), cfg.dt)
        o.summary["dynamic"] = gap.to_dict()
        if h.is_gaussian:
            o.checks["dynamic_matches"] = abs(gap.rate - gap.gaussian_rate) <= 3 * gap.stderr
        o.checks["dynamic_bound"] = gap.rate + 3 * gap.stderr >= gap.bound
    o.result = ineq
    return o


def run_gaussian_exact(cfg: GaussianExactConfig) -> Outcome:
    K = min(cfg.max_offset, cfg.N // 2)
    rows = []
    for t in cfg.times:
        row = spectral.gaussian_exact_row(cfg.N, t)
        rows.extend((float(t), i, float(row[i % cfg.N]), 0.0) for i in range(-K, K + 1))
    w = spectral.witten_check_gaussian(cfg.N)
    o = Outcome()
    o.tables["covariance"] = (["t", "offset", "covariance", "stderr"], rows)
    o.summary = {"witten_max_discrepancy": w.max_discrepancy, "commutation_max_discrepancy": spectral.commutation_check_gaussian(cfg.N) if cfg.N <= 512 else None}
    o.checks["witten"] = w.max_discrepancy < 1e-10
    o.result = rows
    return o


def run_monotonicity(cfg: MonotonicityConfig) -> Outcome:
    h = cfg.hamiltonian()
    s = _stream(cfg)
    mono = est.monotone_coupling_check(h, cfg.N, cfg.rho, cfg.replicas, cfg.horizon, cfg.dt, s.generator("cli-coupling"), cfg.bump)
    f = est.site_value(0)
    g = est.local((0, 1), lambda v: np.tanh(v[..., 0]) + np.tanh(v[..., 1]), None, "tanh(eta0)+tanh(eta1)")
    corr = est.space_time_covariance(f, g, h, cfg.N, cfg.rho, [0.0, cfg.correlation_time], cfg.correlation_replicas, s.child(1), dt=min(0.01, 0.1 / h.c_plus))
    o = Outcome()
    o.tables["estimates"] = (ESTIMATE_COLUMNS, corr.rows())
    o.summary = {
        "pairs": mono.pairs,
        "ordered_pairs": mono.ordered_pairs,
        "worst_relative_violation": mono.worst_violation,
        "correlation": corr.estimate.tolist(),
        "correlation_stderr": corr.stderr.tolist(),
    }
    o.checks["ordering"] = mono.ordered_pairs >= math.ceil(0.999 * mono.pairs)
    o.checks["monotone_correlation"] = bool(np.all(corr.estimate >= -3 * corr.stderr))
    o.result = (mono, corr)
    return o


EXPERIMENTS: dict[str, tuple[type[RunConfig], Callable[..., Outcome], str]] = {
    "sample": (SampleConfig, run_sample, "equilibrium fields from the canonical measure"),
    "evolve": (EvolveConfig, run_evolve, "Euler-Maruyama trajectory of the field"),
    "identity-check": (IdentityConfig, run_identity, "both sides of the correlation/walk identity with z-scores"),
    "bounds-check": (BoundsConfig, run_bounds, "ratio of field correlation to walk kernel against 1/C_+ and 1/C_-"),
    "kernel": (KernelConfig, run_kernel, "annealed walk kernel at time t"),
    "msd": (MSDConfig, run_msd, "mean squared displacement of the walk"),
    "diffusion": (DiffusionConfig, run_diffusion, "diffusion coefficient from the MSD slope"),
    "variational-q": (VariationalConfig, run_variational, "variational upper bound on the diffusion coefficient"),
    "smoothed": (SmoothedConfig, run_smoothed, "smoothed-field relaxation against the Gaussian profile"),
    "spectral": (SpectralConfig, run_spectral, "walk-generator spectrum, gap inequality, dynamic gap"),
    "gaussian-exact": (GaussianExactConfig, run_gaussian_exact, "closed-form harmonic covariances and Witten check"),
    "monotonicity": (MonotonicityConfig, run_monotonicity, "same-noise coupling order preservation"),
}


def list_experiments() -> dict:
    """Catalogue of experiments with JSON schemas and key defaults."""
    out = {}
    for name, (model, _, doc) in EXPERIMENTS.items():
        fields = model.model_fields
        out[name] = {
            "description": doc,
            "defaults": {"dt": fields["dt"].default, "replicas": fields["replicas"].default},
            "schema": model.model_json_schema(),
        }
    return out


# ---------------------------------------------------------------- plumbing


def load_config(name: str, path: str | None, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a config file for experiment ``name``.

    Raises ``ValidationError`` on unknown keys or invalid values.
    """
    model = EXPERIMENTS[name][0]
    data = {}
    if path is not None:
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        if not isinstance(data, dict):
            raise ValueError(f"{path}: top level must be a mapping")
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    exp = data.get("experiment")
    if exp is not None and exp != name:
        raise ValueError(f"config is for experiment {exp!r}, not {name!r}")
    data["experiment"] = name
    return model.model_validate(data)


def certify(cfg: RunConfig) -> None:
    validate_convexity(cfg.potential.spec())
    if cfg.pair_potential is not None:
        validate_convexity(cfg.pair_potential.spec())


def execute(cfg: RunConfig) -> Outcome:
    """Certify convexity and run the experiment named in ``cfg``."""
    certify(cfg)
    return EXPERIMENTS[cfg.experiment][1](cfg)


def write_outputs(cfg: RunConfig, outcome: Outcome, out_dir: Path) -> list[Path]:
    meta = {"config": cfg.model_dump(mode="json"), "version": __version__}
    paths = []
    for name, (cols, rows) in outcome.tables.items():
        paths.append(write_table(out_dir / f"{name}.csv", cols, rows, meta | {"table": name}))
    if cfg.experiment == "sample" and cfg.replicas >= 1:
        first = FieldConfig(np.asarray(outcome.result)[0], cfg.rho)
        write_config_csv(out_dir / "config.csv", first, cfg.seed)
        paths.append(out_dir / "config.csv")
    summary = meta | {"experiment": cfg.experiment, "results": outcome.summary, "checks": outcome.checks, "passed": outcome.passed}
    paths.append(write_json(out_dir / "summary.json", summary))
    return paths


def _format_validation(err: ValidationError) -> str:
    lines = []
    for e in err.errors():
        loc = ".".join(str(x) for x in e["loc"]) or "<root>"
        lines.append(f"  {loc}: {e['msg']}")
    return "invalid configuration:\n" + "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="glwalk", description="Conservative Ginzburg-Landau dynamics and the bond random walk.")
    p.add_argument("--version", action="version", version=f"glwalk {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("list", help="print the experiment catalogue as JSON")
    for name, (_, _, doc) in EXPERIMENTS.items():
        sp = sub.add_parser(name, help=doc)
        sp.add_argument("--config", help="YAML configuration file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", help="output directory (default: runs/<experiment>)")
        sp.add_argument("--replicas", type=int)
        sp.add_argument("--parallelism", type=int)
        sp.add_argument("--check", action="store_true", help="exit with status 4 if a tolerance check fails")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list":
        print(json.dumps(list_experiments(), indent=2, sort_keys=True))
        return EXIT_OK
    try:
        cfg = load_config(args.command, args.config, {"seed": args.seed, "out": args.out, "replicas": args.replicas, "parallelism": args.parallelism})
        certify(cfg)
    except ValidationError as e:
        print(_format_validation(e), file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, ValueError, yaml.YAMLError) as e:
        # ConvexityViolation is a ValueError: an uncertified potential is a config error
        kind = "convexity certification failed" if isinstance(e, ConvexityViolation) else "invalid configuration"
        print(f"{kind}: {e}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out) if args.out else Path(cfg.out) / cfg.experiment
    try:
        outcome = EXPERIMENTS[cfg.experiment][1](cfg)
    except GLWalkError as e:
        print(f"runtime error ({type(e).__name__}): {e}", file=sys.stderr)
        return EXIT_RUNTIME
    paths = write_outputs(cfg, outcome, out_dir)
    for pth in paths:
        print(pth)
    failed = [k for k, ok in outcome.checks.items() if not ok]
    if args.check and failed:
        print("check failed: " + ", ".join(failed), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
