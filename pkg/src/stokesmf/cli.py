"""Command-line entry point: ``stokesmf {coeffs,simulate,kinetic,compare,sweep,fit}``.

Exit codes: 0 success, 2 invalid input or setup, 3 guard or solver failure.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_FAILURE = 3


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI experiment config")
    common.add_argument("--seed", type=int, help="override [scenario] seed")
    common.add_argument("--out", type=Path, help="output directory (overrides [scenario] out)")
    common.add_argument("--order", choices=("zero", "first"), help="restrict to one velocity law")
    common.add_argument("--mode", choices=("doi", "explicit"), help="restrict to one kinetic mode")
    common.add_argument("--threads", type=int, default=0, help="numba worker threads (0: default)")

    p = argparse.ArgumentParser(prog="stokesmf", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("coeffs", parents=[common], help="tabulate single-particle coefficient actions")
    sub.add_parser("simulate", parents=[common], help="run the particle simulation")
    sub.add_parser("kinetic", parents=[common], help="run the kinetic solver")
    sub.add_parser("compare", parents=[common], help="particle vs kinetic Wasserstein time series")
    sub.add_parser("sweep", parents=[common], help="compare over an N or volume-fraction list and fit a rate")
    fit = sub.add_parser("fit", parents=[common], help="log-log least-squares slope")
    fit.add_argument("--xs", help="comma-separated abscissas")
    fit.add_argument("--ys", help="comma-separated errors")
    fit.add_argument("--input", type=Path, help="CSV with columns x,y (alternative to --xs/--ys)")
    return p


def _configure_threads(n):
    if n and n > 0:
        # must happen before numba is imported
        cur = int(os.environ.get("NUMBA_NUM_THREADS", "0") or 0)
        os.environ["NUMBA_NUM_THREADS"] = str(max(n, cur, os.cpu_count() or 1))
    import numba

    if n and n > 0:
        numba.set_num_threads(n)


def _load(args):
    from .harness import ExperimentConfig, load_config

    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_value("scenario", "seed", args.seed)
    if args.out is not None:
        cfg = cfg.with_value("scenario", "out", str(args.out))
    if args.order:
        cfg = cfg.with_value("compare", "orders", (args.order,))
    if args.mode:
        cfg = cfg.with_value("compare", "modes", (args.mode,))
    return cfg


def _manifest(out, cfg, command, timings, extra=None):
    from .harness import config_dict
    from .snapshots import write_manifest

    doc = {"command": command, "config": config_dict(cfg), "seed": cfg.scenario.seed, "timings": timings}
    doc.update(extra or {})
    write_manifest(Path(out) / "manifest.json", doc)


def cmd_coeffs(args, cfg):
    import numpy as np

    from .harness import build_flow, build_params
    from .particles import coefficient_table
    from .snapshots import fmt, write_table

    params = build_params(cfg)
    flow = build_flow(cfg)
    H = flow.evaluate(np.zeros(3)).grad_u
    if not np.any(H):
        H = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
    dirs = np.vstack([np.eye(3), np.ones(3) / np.sqrt(3.0)])
    header = ["shape", "rx", "ry", "rz", "quantity"] + [f"c{i}" for i in range(9)]
    rows = []
    for r in dirs:
        tab = coefficient_table(params.shape, params.activity, r, H)
        for name in ("sigma0", "rdot", "sigma_f", "v_f"):
            vals = list(np.ravel(tab[name])) + [float("nan")] * (9 - np.size(tab[name]))
            rows.append([params.shape.kind, *map(fmt, r), name, *map(fmt, vals)])
    out = Path(cfg.scenario.out)
    write_table(out / "coeffs.csv", header, rows)
    print(",".join(header))
    for row in rows:
        print(",".join(row))
    return {}


def cmd_simulate(args, cfg):
    import numpy as np

    from .harness import build_flow, build_params, initial_particles, seed_streams, step_count
    from .simulation import ExpansionOrder, diagnostics, simulate
    from .snapshots import write_state_csv, write_table

    order = ExpansionOrder.parse(args.order or "first")
    params = build_params(cfg)
    flow = build_flow(cfg)
    rng_p, _, _ = seed_streams(cfg.scenario.seed)
    state0 = initial_particles(cfg, params, rng_p)
    _, snaps = simulate(state0, params, flow, order, cfg.time.dt, step_count(cfg), cfg.time.record_every)
    out = Path(cfg.scenario.out)
    rows = []
    for i, st in enumerate(snaps):
        write_state_csv(out / "states" / f"state_{i:05d}.csv", st)
        d = diagnostics(st, params, flow, order)
        rows.append([st.t, d.d_min, d.alpha[0], d.alpha[1], d.alpha[2], d.v_max, d.omega_max])
    write_table(out / "diagnostics.csv", ["t", "d_min", "alpha0", "alpha1", "alpha2", "v_max", "omega_max"], rows)
    return {"order": order.value, "snapshots": len(snaps), "epsilon": params.epsilon,
            "final_d_min": float(np.min([r[1] for r in rows]))}


def cmd_kinetic(args, cfg):
    from .harness import initial_ensemble, run_kinetic, seed_streams
    from .snapshots import write_ensemble_csv, write_table

    mode = args.mode or "doi"
    _, rng_k, _ = seed_streams(cfg.scenario.seed)
    run = run_kinetic(cfg, mode, ensemble=initial_ensemble(cfg, rng_k))
    out = Path(cfg.scenario.out)
    for i, ens in enumerate(run.clouds):
        write_ensemble_csv(out / "ensembles" / f"ensemble_{i:05d}.csv", ens)
    write_table(out / "iterations.csv", ["stage", "iterations"], [[str(i), str(k)] for i, k in enumerate(run.iterations)])
    return {"mode": mode, "snapshots": len(run.clouds), "eta": run.clouds[0].eta,
            "fixed_point_iterations": int(sum(run.iterations))}


def cmd_compare(args, cfg):
    from .harness import run_compare
    from .snapshots import write_table

    rep = run_compare(cfg)
    out = Path(cfg.scenario.out)
    write_table(out / "compare.csv", list(rep.header), rep.rows)
    return {"summary": rep.summary, "phase_timings": rep.timings}


def cmd_sweep(args, cfg):
    from dataclasses import asdict

    from .harness import run_sweep
    from .snapshots import write_table

    rep = run_sweep(cfg)
    out = Path(cfg.scenario.out)
    sw = cfg.sweep
    sel = f"{sw.metric}/{sw.order}/{sw.mode}"
    rows = []
    for j, p in enumerate(rep.points):
        if p.status == "ok":
            write_table(out / f"point_{j:02d}" / "compare.csv", list(p.report.header), p.report.rows)
            rows.append([p.value, "ok", p.report.summary["final"].get(sel, float("nan"))])
        else:
            rows.append([p.value, "failed", float("nan")])
    write_table(out / "sweep.csv", [sw.parameter, "status", sel], rows)
    return {
        "fit": asdict(rep.fit) if rep.fit else None,
        "failures": {str(p.value): p.error for p in rep.points if p.status != "ok"},
    }


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def cmd_fit(args, cfg):
    import csv
    import json
    from dataclasses import asdict

    from .errors import ValidationError
    from .harness import fit_rate

    if args.input:
        with open(args.input, newline="", encoding="utf-8") as fh:
            data = list(csv.DictReader(fh))
        try:
            xs = [float(r["x"]) for r in data]
            ys = [float(r["y"]) for r in data]
        except (KeyError, ValueError):
            raise ValidationError(f"{args.input}: need numeric columns x,y") from None
    elif args.xs and args.ys:
        try:
            xs, ys = _floats(args.xs), _floats(args.ys)
        except ValueError:
            raise ValidationError("--xs/--ys must be comma-separated numbers") from None
    else:
        raise ValidationError("fit needs --input or both --xs and --ys")
    fit = asdict(fit_rate(xs, ys))
    print(json.dumps(fit, indent=2))
    return {"fit": fit}


COMMANDS = {
    "coeffs": cmd_coeffs,
    "simulate": cmd_simulate,
    "kinetic": cmd_kinetic,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "fit": cmd_fit,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        _configure_threads(args.threads)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID

    from .errors import CapacityError, ContractionError, ConvergenceError, GuardError, SetupError, ValidationError

    try:
        cfg = _load(args)
        clock = time.perf_counter()
        extra = COMMANDS[args.command](args, cfg)
        timings = {"total": time.perf_counter() - clock}
        timings.update(extra.pop("phase_timings", {}))
        if args.command != "fit" or args.out:
            _manifest(cfg.scenario.out, cfg, args.command, timings, extra)
    except (ValidationError, SetupError, CapacityError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (GuardError, ContractionError, ConvergenceError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
