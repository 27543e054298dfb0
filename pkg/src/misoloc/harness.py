"""Monte Carlo trials, parameter sweeps and RMSE aggregation.

Seeds: trial ``t`` of sweep point ``i`` draws everything (path phases and
noise) from ``SeedSequence(master_seed, spawn_key=(i, t))``, so any trial
can be rerun on its own and parallel runs match serial ones.  Every method
sees the same data for a given trial.

CSV columns (stable): ``value, method, quantity, rmse, bound, trials_ok,
trials_failed``, then ``rmse_se, q10, q50, q90``.  Quantities are ``p``
(MS position), ``s1..sK`` (scatterers), ``theta0, tau0, ...`` (channel
parameters, rad and s).  ``bound`` is the PEB, the mapping bound or the
square-root CRLB; ``rmse_se`` is the delta-method standard error of the RMSE.
"""

from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .estimator import METHODS, GridSpec, RefineError
from .fim import SingularFimError, position_bounds
from .locmap import locate
from .scenario import (
    SPEED_OF_LIGHT,
    ScenarioConfig,
    derive_channel_params,
    local_geometry,
    location_params,
    mu_sweep_scatterers,
    noise_variance_from_snr,
)
from .signal import build_beamformer, synthesize

SWEEP_VARIABLES = ("snr_db", "lmr_db", "mu", "n_paths")
BOUNDS_ONLY = "bounds-only"
CSV_COLUMNS = ("value", "method", "quantity", "rmse", "bound", "trials_ok", "trials_failed",
               "rmse_se", "q10", "q50", "q90")
# Phase draws averaged into the per-point bound when phases are random.
BOUND_PHASE_DRAWS = 64


def quantity_names(n_scatterers: int) -> list[str]:
    names = ["p"] + [f"s{k}" for k in range(1, n_scatterers + 1)]
    for k in range(n_scatterers + 1):
        names += [f"theta{k}", f"tau{k}"]
    return names


def trial_seed(master_seed: int, point: int, trial: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master_seed, spawn_key=(point, trial))


@dataclass
class TrialRecord:
    """Error magnitudes of one trial; ``None`` marks a failed quantity."""

    method: str
    errors: dict[str, float | None]
    ok: bool
    reason: str = ""


def _match_paths(est_pairs: np.ndarray, los: int, true_pairs: np.ndarray) -> list[int]:
    """Estimated pair index for each true path (LOS first).

    The estimated LOS (shortest delay) goes to the true LOS; the rest are
    matched by minimum total (angle rad, range m) distance.
    """
    order = [los]
    rest = [k for k in range(len(est_pairs)) if k != los]
    if rest:
        e = est_pairs[rest] * [1.0, SPEED_OF_LIGHT]
        t = true_pairs[1:] * [1.0, SPEED_OF_LIGHT]
        cost = np.linalg.norm(e[:, None, :] - t[None, :, :], axis=-1)
        rows, cols = linear_sum_assignment(cost)
        mapping = dict(zip(cols, rows))
        order += [rest[mapping[j]] for j in range(len(t))]
    return order


def run_trial(cfg: ScenarioConfig, method: str, seed, *, grid: GridSpec | None = None,
              noiseless: bool = False) -> TrialRecord:
    """Synthesize, estimate, localize and map; errors against the truth.

    ``seed`` is anything :func:`numpy.random.default_rng` accepts.  Failures
    inside the estimator, and infeasible scatterer maps, are recorded rather
    than raised.
    """
    rng = np.random.default_rng(seed)
    paths = derive_channel_params(cfg, rng)
    tx = build_beamformer(cfg)
    sigma2 = 0.0 if noiseless else noise_variance_from_snr(cfg)
    obs = synthesize(cfg, paths, tx, sigma2, rng)
    K = cfg.n_paths - 1
    names = quantity_names(K)
    try:
        est = METHODS[method](obs.Y, tx, K, grid)
    except (RefineError, np.linalg.LinAlgError, FloatingPointError) as exc:
        return TrialRecord(method, dict.fromkeys(names), False, f"{type(exc).__name__}: {exc}")
    loc = locate(est.theta)
    p_true, s_true = local_geometry(cfg)
    true_pairs = np.array([[pp.theta, pp.tau] for pp in paths])
    est_pairs = est.pairs()
    order = _match_paths(est_pairs, loc.los_index, true_pairs)
    errors: dict[str, float | None] = {"p": float(np.linalg.norm(loc.position - p_true))}
    for k in range(1, K + 1):
        j = loc.path_index.index(order[k])
        errors[f"s{k}"] = float(np.linalg.norm(loc.scatterers[j] - s_true[k - 1])) if loc.valid[j] else None
    for k in range(K + 1):
        errors[f"theta{k}"] = float(abs(est_pairs[order[k], 0] - true_pairs[k, 0]))
        errors[f"tau{k}"] = float(abs(est_pairs[order[k], 1] - true_pairs[k, 1]))
    reason = "; ".join(loc.notes)
    return TrialRecord(method, errors, True, reason)


@dataclass
class Aggregate:
    rmse: float
    rmse_se: float
    q10: float
    q50: float
    q90: float
    n_ok: int
    n_failed: int

    @property
    def empty(self) -> bool:
        return self.n_ok == 0


def aggregate(errors: Sequence[float | None]) -> Aggregate:
    """RMSE and error quantiles over the trials that produced a value.

    ``None`` entries count as failures.  With no successes every statistic
    is NaN (the empty-point marker).
    """
    vals = np.array([e for e in errors if e is not None], dtype=float)
    n_failed = len(errors) - vals.size
    if vals.size == 0:
        return Aggregate(math.nan, math.nan, math.nan, math.nan, math.nan, 0, n_failed)
    sq = vals ** 2
    mse = float(sq.mean())
    rmse = math.sqrt(mse)
    se_mse = float(sq.std(ddof=1)) / math.sqrt(vals.size) if vals.size > 1 else math.nan
    rmse_se = se_mse / (2 * rmse) if rmse > 0 else 0.0
    q10, q50, q90 = np.quantile(vals, [0.1, 0.5, 0.9])
    return Aggregate(rmse, rmse_se, float(q10), float(q50), float(q90), int(vals.size), n_failed)


def point_bounds(cfg: ScenarioConfig, n_draws: int = BOUND_PHASE_DRAWS) -> dict[str, float]:
    """Bounds per quantity for one scenario.

    With random path phases the CRLB is averaged over ``n_draws`` fixed phase
    draws (seeded by ``cfg.rng_seed``) before the square root, which is the
    floor for an RMSE taken over random phases.
    """
    fixed = cfg.los_phase_rad is not None and (cfg.n_paths == 1 or cfg.nlos_phase_rad is not None)
    n = 1 if fixed else n_draws
    rng = np.random.default_rng(cfg.rng_seed)
    tx = build_beamformer(cfg)
    sigma2 = noise_variance_from_snr(cfg)
    K = cfg.n_paths - 1
    acc = {name: 0.0 for name in quantity_names(K)}
    for _ in range(n):
        paths = derive_channel_params(cfg, rng)
        b = position_bounds(paths, location_params(cfg, paths), tx, sigma2)
        acc["p"] += b.peb ** 2
        for k in range(1, K + 1):
            acc[f"s{k}"] += b.map_bounds[k - 1] ** 2
        for k in range(K + 1):
            acc[f"theta{k}"] += b.channel_bound(k, "theta") ** 2
            acc[f"tau{k}"] += b.channel_bound(k, "tau") ** 2
    return {name: math.sqrt(v / n) for name, v in acc.items()}


@dataclass
class SweepSpec:
    """One swept variable over a list of values.

    ``mu`` and ``n_paths`` sweeps place scatterers with
    :func:`~misoloc.scenario.mu_sweep_scatterers`; ``n_scatterers`` (mu) and
    the value itself (n_paths) pick how many, and ``mu`` is fixed at
    ``fixed_mu`` for an n_paths sweep.  The LMR of added scatterers copies
    the first entry of the base configuration.
    """

    variable: str
    values: Sequence[float]
    trials: int = 200
    methods: Sequence[str] = ("joint",)
    base: ScenarioConfig = field(default_factory=ScenarioConfig)
    seed: int = 0
    n_scatterers: int | None = None
    fixed_mu: float = 1.0
    grid: GridSpec | None = None
    workers: int = 1
    out: str | None = None

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise ValueError(f"unknown sweep variable {self.variable!r}")
        if self.trials < 1:
            raise ValueError("trials must be >= 1")
        if len(self.values) == 0:
            raise ValueError("no sweep values")
        for m in self.methods:
            if m != BOUNDS_ONLY and m not in METHODS:
                raise ValueError(f"unknown method {m!r}")

    def config_at(self, value: float) -> ScenarioConfig:
        base = self.base
        lmr0 = base.lmr_db_per_path[0] if base.lmr_db_per_path else 5.0
        if self.variable == "snr_db":
            return base.replace(snr_db=float(value))
        if self.variable == "lmr_db":
            return base.replace(lmr_db_per_path=(float(value),) * len(base.scatterers))
        if self.variable == "mu":
            k = len(base.scatterers) if self.n_scatterers is None else self.n_scatterers
            scat = mu_sweep_scatterers(base.ms_position, float(value))[:k]
            return base.replace(scatterers=tuple(scat), lmr_db_per_path=(lmr0,) * k, nlos_phase_rad=None)
        k = int(value) - 1
        if k < 0:
            raise ValueError("n_paths must be >= 1")
        scat = mu_sweep_scatterers(base.ms_position, self.fixed_mu)[:k]
        if len(scat) < k:
            raise ValueError("at most three scatterers in the mu-sweep geometry")
        return base.replace(scatterers=tuple(scat), lmr_db_per_path=(lmr0,) * k, nlos_phase_rad=None)


@dataclass
class SweepResult:
    spec: SweepSpec
    rows: list[dict]
    failures: list[dict]
    wall_time_s: float

    def rows_for(self, method: str, quantity: str) -> list[dict]:
        return [r for r in self.rows if r["method"] == method and r["quantity"] == quantity]

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
            w.writeheader()
            for r in self.rows:
                w.writerow({c: r[c] for c in CSV_COLUMNS})

    def to_json(self, path: str | Path) -> None:
        d = {
            "variable": self.spec.variable,
            "values": [float(v) for v in self.spec.values],
            "trials": self.spec.trials,
            "methods": list(self.spec.methods),
            "seed": self.spec.seed,
            "base": self.spec.base.to_dict(),
            "rows": self.rows,
            "failures": self.failures,
            "wall_time_s": self.wall_time_s,
        }
        Path(path).write_text(json.dumps(d, indent=1))


def _run_point_trials(args) -> list[TrialRecord]:
    cfg, methods, seed, point, trials, grid = args
    out = []
    for t in trials:
        ss = trial_seed(seed, point, t)
        out.extend(run_trial(cfg, m, ss, grid=grid) for m in methods)
    return out


def run_sweep(spec: SweepSpec) -> SweepResult:
    """Every method at every value of the swept variable.

    Bounds are computed once per point.  With ``workers > 1`` trial chunks
    run in separate processes; results are identical to a serial run.
    """
    t0 = time.perf_counter()
    rows, failures = [], []
    est_methods = [m for m in spec.methods if m != BOUNDS_ONLY]
    pool = ProcessPoolExecutor(spec.workers) if spec.workers > 1 and est_methods else None
    try:
        for i, value in enumerate(spec.values):
            cfg = spec.config_at(value)
            bounds = point_bounds(cfg)
            names = quantity_names(cfg.n_paths - 1)
            if BOUNDS_ONLY in spec.methods:
                for q in names:
                    rows.append(_row(value, BOUNDS_ONLY, q, None, bounds[q]))
            if not est_methods:
                continue
            trials = list(range(spec.trials))
            if pool is None:
                records = _run_point_trials((cfg, est_methods, spec.seed, i, trials, spec.grid))
            else:
                chunks = [trials[j::spec.workers] for j in range(spec.workers)]
                parts = pool.map(_run_point_trials,
                                 [(cfg, est_methods, spec.seed, i, c, spec.grid) for c in chunks])
                by_trial = {}
                for c, part in zip(chunks, parts):
                    for n, rec in enumerate(part):
                        by_trial[(c[n // len(est_methods)], n % len(est_methods))] = rec
                records = [by_trial[(t, m)] for t in trials for m in range(len(est_methods))]
            for n, rec in enumerate(records):
                if not rec.ok:
                    failures.append({"value": float(value), "method": rec.method,
                                     "trial": n // len(est_methods), "reason": rec.reason})
            for m in est_methods:
                recs = [r for r in records if r.method == m]
                for q in names:
                    rows.append(_row(value, m, q, aggregate([r.errors[q] for r in recs]), bounds[q]))
    finally:
        if pool is not None:
            pool.shutdown()
    result = SweepResult(spec, rows, failures, time.perf_counter() - t0)
    if spec.out:
        if str(spec.out).endswith(".json"):
            result.to_json(spec.out)
        else:
            result.to_csv(spec.out)
    return result


def _row(value, method: str, quantity: str, agg: Aggregate | None, bound: float) -> dict:
    nan = math.nan
    if agg is None:
        agg = Aggregate(nan, nan, nan, nan, nan, 0, 0)
    return {"value": float(value), "method": method, "quantity": quantity, "rmse": agg.rmse,
            "bound": bound, "trials_ok": agg.n_ok, "trials_failed": agg.n_failed,
            "rmse_se": agg.rmse_se, "q10": agg.q10, "q50": agg.q50, "q90": agg.q90}
