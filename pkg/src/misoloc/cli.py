"""``miso-locmap`` command line: simulate, crlb, estimate, locmap, sweep."""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from .estimator import METHODS, GridSpec, estimate
from .fim import position_bounds
from .harness import BOUNDS_ONLY, SWEEP_VARIABLES, SweepSpec, run_sweep
from .locmap import locate
from .scenario import ScenarioConfig, derive_channel_params, location_params, noise_variance_from_snr
from .signal import ObservationSet, build_beamformer, synthesize


def _config(path: str | None) -> ScenarioConfig:
    return ScenarioConfig() if path is None else ScenarioConfig.from_json(path)


def _grid(text: str) -> GridSpec:
    try:
        n, m = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"grid must look like 8x8, got {text!r}") from None
    return GridSpec.uniform(n, m)


def parse_sweep(text: str) -> tuple[str, list[float]]:
    """``var=start:step:stop`` (stop included) -> (var, values)."""
    try:
        var, rng = text.split("=", 1)
        start, step, stop = (float(v) for v in rng.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"sweep must look like snr_db=-10:5:20, got {text!r}") from None
    if var not in SWEEP_VARIABLES:
        raise argparse.ArgumentTypeError(f"sweep variable must be one of {', '.join(SWEEP_VARIABLES)}")
    if step <= 0 or stop < start:
        raise argparse.ArgumentTypeError("sweep needs step > 0 and stop >= start")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    return var, [round(start + i * step, 12) for i in range(n)]


def _write_json(obj, out: str | None) -> None:
    text = json.dumps(obj, indent=1)
    if out is None:
        print(text)
    else:
        Path(out).write_text(text)


def cmd_simulate(args) -> None:
    cfg = _config(args.config)
    rng = np.random.default_rng(args.seed)
    paths = derive_channel_params(cfg, rng)
    tx = build_beamformer(cfg)
    sigma2 = 0.0 if args.noiseless else noise_variance_from_snr(cfg)
    obs = synthesize(cfg, paths, tx, sigma2, rng)
    if args.out and args.out.endswith(".csv"):
        obs.to_csv(args.out)
        return
    d = obs.to_dict()
    d["truth"] = {
        "theta_rad": [p.theta for p in paths],
        "tau_s": [p.tau for p in paths],
        "alpha_real": [p.alpha.real for p in paths],
        "alpha_imag": [p.alpha.imag for p in paths],
        "ms_position": list(cfg.ms_position),
        "scatterers": [list(s) for s in cfg.scatterers],
    }
    _write_json(d, args.out)


def cmd_crlb(args) -> None:
    cfg = _config(args.config)
    paths = derive_channel_params(cfg, np.random.default_rng(args.seed))
    tx = build_beamformer(cfg)
    b = position_bounds(paths, location_params(cfg, paths), tx, noise_variance_from_snr(cfg))
    out = {
        "peb_m": b.peb,
        "map_bounds_m": b.map_bounds.tolist(),
        "crlb_channel": [{name: b.channel_bound(k, name) for name in ("r", "phi", "tau", "theta")}
                         for k in range(cfg.n_paths)],
        "condition": b.condition,
    }
    _write_json(out, args.out)


def cmd_estimate(args) -> None:
    cfg = _config(args.config)
    obs = ObservationSet.from_json(args.obs)
    K = cfg.n_paths - 1 if args.paths is None else args.paths - 1
    res = estimate(obs.Y, obs.tx, K, args.method, args.grid)
    _write_json(res.to_dict(), args.out)


def cmd_locmap(args) -> None:
    cfg = _config(args.config)
    est = json.loads(Path(args.estimate).read_text())
    theta = np.column_stack([est["theta_rad"], est["tau_s"]]).ravel()
    loc = locate(theta, cfg)
    if args.out and args.out.endswith(".csv"):
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["kind", "index", "x", "y", "valid"])
            w.writerow(["ms", 0, *loc.position, True])
            for j, (s, v) in enumerate(zip(loc.scatterers, loc.valid), start=1):
                w.writerow(["scatterer", j, *s, v])
        return
    _write_json(loc.to_dict(), args.out)


def cmd_sweep(args) -> None:
    var, values = args.sweep
    methods = [m for chunk in args.method for m in chunk.split(",")]
    spec = SweepSpec(var, values, trials=args.trials, methods=methods, base=_config(args.config),
                     seed=args.seed, grid=args.grid, workers=args.workers, out=args.out)
    res = run_sweep(spec)
    if args.out is None:
        w = csv.writer(sys.stdout)
        w.writerow(["value", "method", "quantity", "rmse", "bound", "trials_ok", "trials_failed"])
        for r in res.rows:
            w.writerow([r["value"], r["method"], r["quantity"], r["rmse"], r["bound"],
                        r["trials_ok"], r["trials_failed"]])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="miso-locmap", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed_default=0):
        p.add_argument("--config", help="ScenarioConfig JSON (defaults if omitted)")
        p.add_argument("--out", help="output file (.json or .csv); stdout if omitted")
        p.add_argument("--seed", type=int, default=seed_default)

    p = sub.add_parser("simulate", help="synthesize one observation set")
    common(p)
    p.add_argument("--noiseless", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("crlb", help="PEB, mapping bounds and channel CRLB")
    common(p)
    p.set_defaults(func=cmd_crlb)

    p = sub.add_parser("estimate", help="estimate (AOD, TOF) pairs from an observation JSON")
    common(p)
    p.add_argument("--obs", required=True, help="observation JSON written by 'simulate'")
    p.add_argument("--method", default="joint", choices=sorted(METHODS))
    p.add_argument("--grid", type=_grid, help="coarse grid as NxM (angle x range nodes), default 8x8")
    p.add_argument("--paths", type=int, help="number of paths K+1 (default: from the config)")
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("locmap", help="MS position and scatterer map from an estimate JSON")
    common(p)
    p.add_argument("--estimate", required=True, help="JSON written by 'estimate'")
    p.set_defaults(func=cmd_locmap)

    p = sub.add_parser("sweep", help="Monte Carlo sweep")
    common(p)
    p.add_argument("--sweep", required=True, type=parse_sweep, help="var=start:step:stop, var in "
                   + "|".join(SWEEP_VARIABLES))
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--method", action="append", default=None,
                   help="joint|sp-grid|sp-refine|bounds-only (repeat or comma-separate)")
    p.add_argument("--grid", type=_grid, help="coarse grid as NxM")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if getattr(args, "method", None) is None and args.command == "sweep":
        args.method = ["joint"]
    if args.command == "sweep":
        bad = [m for chunk in args.method for m in chunk.split(",") if m != BOUNDS_ONLY and m not in METHODS]
        if bad:
            ap.error(f"unknown method(s): {', '.join(bad)}")
    try:
        args.func(args)
    except (ValueError, OSError) as exc:
        print(f"miso-locmap: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
