"""Experiment orchestration: config files, particle-vs-kinetic comparisons, sweeps and rate fits.

Configs are INI files with one section per concern::

    [scenario]   name, seed, out
    [suspension] n, volume_fraction, buoyancy, shape, alpha1, alpha2,
                 kappa0, beta_f, alpha_f, unit_volume
    [flow]       kind, center, force, delta, gamma, gradient, path
    [initial]    spatial, center, scale, orientation, mean_direction,
                 concentration, quasi, min_distance_factor, retry_budget, state_csv
    [time]       t_end, dt, record_every
    [kinetic]    k, eta, tolerance, max_iterations, relaxation, frozen, warm_start
    [compare]    orders, modes, metrics, resamples, coupling, ground
    [sweep]      parameter, values, workers, metric, order, mode

Vectors and lists are comma separated. Unset keys take the defaults below.
"""
from __future__ import annotations

import configparser
import dataclasses
import io
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from .errors import StokesMFError, ValidationError
from .flows import flow_from_spec
from .kinetic import (
    FixedPointConfig,
    InitialDensitySpec,
    KineticEnsemble,
    StepLog,
    default_eta,
    evolve,
    sample_initial,
)
from .particles import ActivityModel, shape_from_name
from .simulation import (
    UNIT_BALL_VOLUME,
    SuspensionParams,
    SuspensionState,
    sample_separated,
    simulate,
)
from .transport import Cloud, CostSpec, wasserstein


@dataclass
class ScenarioSection:
    name: str = "standard"
    seed: int = 0
    out: str = "out"


@dataclass
class SuspensionSection:
    n: int = 256
    volume_fraction: float = 0.02
    buoyancy: tuple = (0.0, 0.0, 0.0)
    shape: str = "sphere"
    alpha1: float = 1.0
    alpha2: float = 1.0
    kappa0: float = 0.0
    beta_f: float = 0.0
    alpha_f: float = 0.0
    unit_volume: float = UNIT_BALL_VOLUME


@dataclass
class FlowSection:
    kind: str = "regularized_stokeslet"
    center: tuple = (0.0, 0.0, 0.0)
    force: tuple = (2.0, 0.0, 0.0)
    delta: float = 0.5
    gamma: float = 1.0
    gradient: tuple = (0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    path: str = ""


@dataclass
class InitialSection:
    spatial: str = "ball"
    center: tuple = (0.0, 0.0, 0.0)
    scale: float = 1.0
    orientation: str = "uniform"
    mean_direction: tuple = (0.0, 0.0, 1.0)
    concentration: float = 0.0
    quasi: bool = False
    min_distance_factor: float = 0.3
    retry_budget: int = 200
    state_csv: str = ""


@dataclass
class TimeSection:
    t_end: float = 0.5
    dt: float = 0.05
    record_every: int = 1


@dataclass
class KineticSection:
    k: int = 4096
    eta: float = 0.0  # 0 selects the default 2 K^(-1/3) R_support
    tolerance: float = 1e-10
    max_iterations: int = 50
    relaxation: float = 1.0
    frozen: bool = False
    warm_start: bool = True


@dataclass
class CompareSection:
    orders: tuple = ("zero", "first")
    modes: tuple = ("doi", "explicit")
    metrics: tuple = ("W1", "W2")
    resamples: int = 4
    coupling: str = "independent"
    ground: str = "spatial"


@dataclass
class SweepSection:
    parameter: str = "n"
    values: tuple = (64.0, 128.0, 256.0, 512.0)
    workers: int = 1
    metric: str = "W1"
    order: str = "first"
    mode: str = "doi"


@dataclass
class ExperimentConfig:
    scenario: ScenarioSection = field(default_factory=ScenarioSection)
    suspension: SuspensionSection = field(default_factory=SuspensionSection)
    flow: FlowSection = field(default_factory=FlowSection)
    initial: InitialSection = field(default_factory=InitialSection)
    time: TimeSection = field(default_factory=TimeSection)
    kinetic: KineticSection = field(default_factory=KineticSection)
    compare: CompareSection = field(default_factory=CompareSection)
    sweep: SweepSection = field(default_factory=SweepSection)

    def with_value(self, section, key, value):
        sec = replace(getattr(self, section), **{key: value})
        return replace(self, **{section: sec})


def _parse_value(default, text, key):
    text = text.strip()
    try:
        if isinstance(default, bool):
            low = text.lower()
            if low in ("1", "yes", "true", "on"):
                return True
            if low in ("0", "no", "false", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = [s.strip() for s in text.split(",") if s.strip()]
            if default and isinstance(default[0], float):
                return tuple(float(s) for s in items)
            return tuple(items)
        return text
    except ValueError:
        raise ValidationError(f"bad value for {key!r}: {text!r}") from None


def _format_value(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    return str(v)


def parse_config(text):
    """Parse INI text into an :class:`ExperimentConfig`; unknown sections or keys are errors."""
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ValidationError(f"config syntax error: {exc}") from None
    cfg = ExperimentConfig()
    names = {f.name for f in fields(ExperimentConfig)}
    for sec in cp.sections():
        if sec not in names:
            raise ValidationError(f"unknown config section [{sec}]")
        current = getattr(cfg, sec)
        known = {f.name: getattr(current, f.name) for f in fields(current)}
        updates = {}
        for key, text in cp.items(sec):
            if key not in known:
                raise ValidationError(f"unknown key {key!r} in [{sec}]")
            updates[key] = _parse_value(known[key], text, f"{sec}.{key}")
        cfg = replace(cfg, **{sec: replace(current, **updates)})
    return cfg


def load_config(path):
    """Read a config file; relative input paths (state_csv, flow path) resolve against its directory."""
    with open(path, encoding="utf-8") as fh:
        cfg = parse_config(fh.read())
    base = Path(path).resolve().parent
    if cfg.initial.state_csv and not Path(cfg.initial.state_csv).is_absolute():
        cfg = cfg.with_value("initial", "state_csv", str(base / cfg.initial.state_csv))
    if cfg.flow.path and not Path(cfg.flow.path).is_absolute():
        cfg = cfg.with_value("flow", "path", str(base / cfg.flow.path))
    return cfg


def dump_config(cfg):
    cp = configparser.ConfigParser(interpolation=None)
    for f in fields(cfg):
        sec = getattr(cfg, f.name)
        cp[f.name] = {g.name: _format_value(getattr(sec, g.name)) for g in fields(sec)}
    buf = io.StringIO()
    cp.write(buf)
    return buf.getvalue()


def config_dict(cfg):
    return dataclasses.asdict(cfg)


def build_params(cfg, n=None, volume_fraction=None):
    s = cfg.suspension
    return SuspensionParams(
        n=int(s.n if n is None else n),
        volume_fraction=s.volume_fraction if volume_fraction is None else volume_fraction,
        buoyancy=s.buoyancy,
        shape=shape_from_name(s.shape, s.alpha1, s.alpha2),
        activity=ActivityModel(s.kappa0, s.beta_f, s.alpha_f),
        unit_volume=s.unit_volume,
    )


def build_flow(cfg):
    f = cfg.flow
    if f.kind == "linear":
        if len(f.gradient) != 9:
            raise ValidationError("flow.gradient needs 9 entries (row-major)")
        return flow_from_spec("linear", A=np.reshape(f.gradient, (3, 3)))
    return flow_from_spec(f.kind, center=f.center, force=f.force, delta=f.delta, gamma=f.gamma, path=f.path)


def build_density(cfg):
    i = cfg.initial
    return InitialDensitySpec(
        spatial=i.spatial,
        center=i.center,
        scale=i.scale,
        orientation=i.orientation,
        mean_direction=i.mean_direction,
        concentration=i.concentration,
    )


def build_fixed_point(cfg):
    k = cfg.kinetic
    return FixedPointConfig(k.tolerance, k.max_iterations, k.relaxation)


def step_count(cfg):
    t = cfg.time
    if not (t.dt > 0 and t.t_end >= 0):
        raise ValidationError("need dt > 0 and t_end >= 0")
    n = round(t.t_end / t.dt)
    if abs(n * t.dt - t.t_end) > 1e-9 * max(1.0, t.t_end):
        raise ValidationError(f"t_end = {t.t_end} is not a multiple of dt = {t.dt}")
    if t.record_every < 1:
        raise ValidationError("record_every must be >= 1")
    return n


def seed_streams(seed):
    """Independent generators for particle setup, kinetic setup and resampling."""
    ss = np.random.SeedSequence(int(seed))
    return [np.random.default_rng(c) for c in ss.spawn(3)]


def initial_particles(cfg, params, rng):
    """Particle initial state: from ``state_csv`` or sampled with a minimum separation.

    The separation is ``max(c N^(-1/3), 1.5 * 4 eps)``; the second term keeps
    the run clear of the guard at start.
    """
    from .snapshots import read_state_csv

    i = cfg.initial
    if i.state_csv:
        st = read_state_csv(i.state_csv)
        if st.n != params.n:
            raise ValidationError(f"{i.state_csv} holds {st.n} particles, config says {params.n}")
        return st
    spec = build_density(cfg)
    n = params.n
    dmin = max(i.min_distance_factor * n ** (-1.0 / 3.0), 1.5 * params.guard_distance)
    X = sample_separated(lambda g, k: spec.draw_positions(g, k), n, dmin, rng, i.retry_budget)
    R = spec.draw_orientations(rng, n)
    return SuspensionState(X, R, 0.0)


def initial_ensemble(cfg, rng, particles=None):
    k = cfg.kinetic
    spec = build_density(cfg)
    if cfg.compare.coupling == "shared":
        if particles is None:
            raise ValidationError("shared coupling needs the particle initial state")
        n = particles.n
        eta = k.eta if k.eta > 0 else default_eta(n, spec.support_radius)
        return KineticEnsemble(particles.X.copy(), particles.R.copy(), np.full(n, 1.0 / n), eta)
    if cfg.compare.coupling != "independent":
        raise ValidationError(f"unknown coupling {cfg.compare.coupling!r}")
    return sample_initial(spec, k.k, rng, quasi=cfg.initial.quasi, eta=k.eta if k.eta > 0 else None)


@dataclass
class KineticRun:
    mode: str
    clouds: list
    iterations: list


def run_kinetic(cfg, mode, rng=None, ensemble=None, params=None):
    """Evolve the kinetic cloud over the config's time grid in ``mode`` (``doi`` or ``explicit``)."""
    params = params or build_params(cfg)
    flow = build_flow(cfg)
    if ensemble is None:
        ensemble = initial_ensemble(cfg, rng)
    log = StepLog()
    k = cfg.kinetic
    clouds = evolve(
        ensemble, params, flow, cfg.time.dt, step_count(cfg), mode=mode,
        config=build_fixed_point(cfg), frozen=k.frozen, warm_start=k.warm_start,
        record_every=cfg.time.record_every, log=log,
    )
    return KineticRun(mode, clouds, log.iterations)


def _metric_exponent(name):
    table = {"W1": 1.0, "W2": 2.0}
    if name not in table:
        raise ValidationError(f"unknown metric {name!r} (use W1 or W2)")
    return table[name]


def _resample_sets(ens, n, count, rng):
    uniform = np.all(ens.w == ens.w[0])
    if ens.size == n and uniform:
        return [np.arange(n)]
    sets = []
    for _ in range(count):
        if uniform and ens.size >= n:
            sets.append(rng.choice(ens.size, size=n, replace=False))
        else:
            sets.append(rng.choice(ens.size, size=n, replace=True, p=ens.w / ens.w.sum()))
    return sets


@dataclass
class CompareReport:
    rows: list
    summary: dict
    timings: dict

    header = ("t", "metric", "order", "mode", "value")


def run_compare(cfg, kinetic_runs=None):
    """Particle dynamics (per order) against kinetic clouds (per mode), in ``W_p`` over time.

    ``kinetic_runs`` may hold precomputed :class:`KineticRun` objects keyed
    by mode (used by N-sweeps, where the kinetic solution does not depend
    on N). Returns a :class:`CompareReport`.
    """
    timings = {}
    clock = time.perf_counter()
    params = build_params(cfg)
    flow = build_flow(cfg)
    n_steps = step_count(cfg)
    rng_p, rng_k, rng_r = seed_streams(cfg.scenario.seed)
    cmp = cfg.compare
    exps = {m: _metric_exponent(m) for m in cmp.metrics}
    cost_ground = cmp.ground

    state0 = initial_particles(cfg, params, rng_p)
    timings["setup"] = time.perf_counter() - clock

    clock = time.perf_counter()
    particle = {}
    for order in cmp.orders:
        _, snaps = simulate(state0, params, flow, order, cfg.time.dt, n_steps, cfg.time.record_every)
        particle[order] = snaps
    timings["particles"] = time.perf_counter() - clock

    clock = time.perf_counter()
    kinetic_runs = dict(kinetic_runs or {})
    ens0 = None
    for mode in cmp.modes:
        if mode not in kinetic_runs:
            if ens0 is None:
                ens0 = initial_ensemble(cfg, rng_k, state0)
            kinetic_runs[mode] = run_kinetic(cfg, mode, ensemble=ens0, params=params)
    timings["kinetic"] = time.perf_counter() - clock

    clock = time.perf_counter()
    rows = []
    n_rec = len(next(iter(particle.values()))) if particle else 0
    for i in range(n_rec):
        t = particle[cmp.orders[0]][i].t
        ref = kinetic_runs[cmp.modes[0]].clouds[i] if cmp.modes else None
        sets = _resample_sets(ref, params.n, cmp.resamples, rng_r) if ref is not None else []
        for metric, p in exps.items():
            cost = CostSpec(p=p, ground=cost_ground)
            for order in cmp.orders:
                st = particle[order][i]
                a = Cloud(st.X, st.R)
                for mode in cmp.modes:
                    ens = kinetic_runs[mode].clouds[i]
                    vals = [wasserstein(a, Cloud(ens.x[s], ens.r[s]), cost).value for s in sets]
                    rows.append((t, metric, order, mode, math.fsum(vals) / len(vals)))
    timings["metrics"] = time.perf_counter() - clock

    t_first = rows[0][0] if rows else 0.0
    t_last = rows[-1][0] if rows else 0.0
    final = {f"{m}/{o}/{d}": v for (t, m, o, d, v) in rows if t == t_last}
    initial = {f"{m}/{o}/{d}": v for (t, m, o, d, v) in rows if t == t_first}
    iters = {
        mode: {"total": int(sum(r.iterations)), "max": int(max(r.iterations, default=0))}
        for mode, r in kinetic_runs.items()
    }
    summary = {
        "n": params.n,
        "volume_fraction": params.volume_fraction,
        "epsilon": params.epsilon,
        "kinetic_size": int(kinetic_runs[cmp.modes[0]].clouds[0].size) if cmp.modes else 0,
        "eta": float(kinetic_runs[cmp.modes[0]].clouds[0].eta) if cmp.modes else None,
        "t_end": t_last,
        "initial": initial,
        "final": final,
        "fixed_point_iterations": iters,
    }
    return CompareReport(rows, summary, timings)


@dataclass
class RateFit:
    xs: tuple
    ys: tuple
    slope: float
    intercept: float
    residual: float


def fit_rate(xs, ys):
    """Least-squares line through ``(log x, log y)``; ``residual`` is the 2-norm of the log misfit."""
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or len(x) < 2:
        raise ValidationError("need two equal-length lists with at least 2 entries")
    if np.any(x <= 0) or np.any(y <= 0):
        raise ValidationError("rate fits need positive abscissas and errors")
    lx, ly = np.log(x), np.log(y)
    A = np.stack([lx, np.ones_like(lx)], axis=1)
    (slope, intercept), *_ = np.linalg.lstsq(A, ly, rcond=None)
    residual = float(np.linalg.norm(A @ [slope, intercept] - ly))
    return RateFit(tuple(x.tolist()), tuple(y.tolist()), float(slope), float(intercept), residual)


@dataclass
class SweepPoint:
    value: float
    status: str
    error: str = ""
    report: CompareReport = None


@dataclass
class SweepReport:
    parameter: str
    points: list
    fit: RateFit = None


_SWEEP_KEYS = {"n": ("suspension", "n", int), "volume_fraction": ("suspension", "volume_fraction", float),
               "lambda": ("suspension", "volume_fraction", float)}


def _sweep_job(args):
    cfg, value, runs = args
    try:
        return SweepPoint(value, "ok", report=run_compare(cfg, runs))
    except StokesMFError as exc:
        return SweepPoint(value, "failed", error=f"{type(exc).__name__}: {exc}")


def run_sweep(cfg, workers=None):
    """Run :func:`run_compare` at each sweep value and fit the final error against it.

    For N-sweeps with independent coupling the kinetic runs are computed once
    and shared by all points. Failed points are reported and skipped by the
    fit, which needs at least 3 surviving points.
    """
    sw = cfg.sweep
    if sw.parameter not in _SWEEP_KEYS:
        raise ValidationError(f"unknown sweep parameter {sw.parameter!r}")
    if len(sw.values) < 3:
        raise ValidationError("a sweep needs at least 3 values")
    section, key, cast = _SWEEP_KEYS[sw.parameter]
    shared = None
    if key == "n" and cfg.compare.coupling == "independent":
        _, rng_k, _ = seed_streams(cfg.scenario.seed)
        ens0 = initial_ensemble(cfg, rng_k)
        shared = {m: run_kinetic(cfg, m, ensemble=ens0) for m in cfg.compare.modes}
    jobs = [(cfg.with_value(section, key, cast(v)), float(v), shared) for v in sw.values]
    workers = workers or sw.workers
    if workers > 1:
        # forked children inherit numba's initialized thread pool and can die; spawn fresh interpreters
        ctx = multiprocessing.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            points = list(pool.map(_sweep_job, jobs))
    else:
        points = [_sweep_job(j) for j in jobs]
    sel = f"{sw.metric}/{sw.order}/{sw.mode}"
    ok = [p for p in points if p.status == "ok" and sel in p.report.summary["final"]]
    fit = None
    if len(ok) >= 3:
        fit = fit_rate([p.value for p in ok], [p.report.summary["final"][sel] for p in ok])
    return SweepReport(sw.parameter, points, fit)
