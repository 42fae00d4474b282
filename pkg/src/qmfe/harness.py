"""Seeded experiment driver behind the ``qmfe`` command line.

Every command turns an :class:`ExperimentConfig` into a :class:`CommandResult`
(one main table, optional secondary tables and a summary dict) without
touching the filesystem; :func:`write_result` serializes it.

Randomness: run ``i`` of a command uses ``derive_seed(master_seed, *keys, i)``
for both its protocol and its device streams, so results do not depend on
the worker count or on scheduling. Results are merged in run-index order.

Output is byte-identical across reruns with the same config. Wall time is the
one non-deterministic quantity and is only emitted with ``timing=True``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import analysis
from .errors import ValidationError
from .measurements import MEASUREMENTS, MeasurementDevice, NoiseSpec, apply_noise, build_pvm
from .protocols import PROTOCOLS, Precision, global_call_count, plan_direct, plan_efficient, run_protocol
from .seeding import SEED_MASK, THETA_STREAM, derive_seed, make_rng

log = logging.getLogger(__name__)

__all__ = [
    "SCHEMA_VERSION",
    "COMMANDS",
    "ExperimentConfig",
    "Table",
    "CommandResult",
    "RunTask",
    "execute_run",
    "planned_calls",
    "cmd_estimate",
    "cmd_sweep_noise",
    "cmd_histogram",
    "cmd_convergence",
    "cmd_bounds",
    "cmd_sample_histogram",
    "run_command",
    "write_result",
    "render_csv",
    "histogram_bins",
    "load_config",
    "seed_from_env",
]

SCHEMA_VERSION = 1
SEED_ENV = "QMFE_SEED"

COMMANDS = ("estimate", "sweep-noise", "histogram", "convergence", "bounds", "sample-histogram")
FORMATS = ("csv", "json")
SHOT_MODES = ("aggregate", "per-shot")

DEFAULT_REPEATS = {
    "estimate": 10,
    "sweep-noise": 10,
    "histogram": 1000,
    "convergence": 30,
    "bounds": 30,
    "sample-histogram": 1,
}
DEFAULT_P_GRID = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
DEFAULT_M_GRID = (1, 3, 10, 30, 100, 300, 1000, 3000, 8000)
DEFAULT_THETA_GRID = (0.0, math.pi / 6, math.pi / 4, math.pi / 3, math.pi / 2)
# The EJM family is 2*pi periodic in theta.
THETA_PERIOD = 2 * math.pi
CALLS_LOG_BIN = 0.1

CONVERGENCE_PROTOCOLS = ("efficient", "direct")

# Echoing these would make output depend on where or how it was written.
_NOT_ECHOED = ("out", "format", "workers")


def _is_int(x) -> bool:
    return isinstance(x, (int, np.integer)) and not isinstance(x, bool)


def _is_real(x) -> bool:
    return isinstance(x, (int, float, np.integer, np.floating)) and not isinstance(x, bool)


@dataclass(frozen=True)
class ExperimentConfig:
    """All knobs of one harness invocation.

    ``repeats=None`` means "use the command's default" (see
    ``DEFAULT_REPEATS``). Grid fields only matter to the commands that use
    them. Round-trips through :meth:`to_json` / :meth:`from_json` exactly.
    """

    measurement: str = "bell"
    theta: float = 0.0
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    protocol: str = "efficient"
    epsilon: float = 0.05
    delta: float = 0.05
    repeats: int | None = None
    master_seed: int = 0
    out: str | None = None
    format: str = "csv"
    workers: int = 1
    shot_mode: str = "aggregate"
    timing: bool = False
    p_grid: tuple[float, ...] = DEFAULT_P_GRID
    m_grid: tuple[int, ...] = DEFAULT_M_GRID
    theta_grid: tuple[float, ...] = DEFAULT_THETA_GRID
    theta_count: int = 1000
    bin_width: float = 0.005

    def __post_init__(self):
        if isinstance(self.noise, dict):
            object.__setattr__(self, "noise", _noise_from_dict(self.noise))
        for name in ("p_grid", "m_grid", "theta_grid"):
            value = getattr(self, name)
            if isinstance(value, (str, bytes)) or not hasattr(value, "__iter__"):
                raise ValidationError(f"{name} must be a list")
            object.__setattr__(self, name, tuple(value))
        self._validate()

    def _validate(self):
        if self.measurement not in MEASUREMENTS:
            raise ValidationError(f"measurement must be one of {MEASUREMENTS}, got {self.measurement!r}")
        if self.protocol not in PROTOCOLS:
            raise ValidationError(f"protocol must be one of {PROTOCOLS}, got {self.protocol!r}")
        if self.format not in FORMATS:
            raise ValidationError(f"format must be one of {FORMATS}, got {self.format!r}")
        if self.shot_mode not in SHOT_MODES:
            raise ValidationError(f"shot_mode must be one of {SHOT_MODES}, got {self.shot_mode!r}")
        if not isinstance(self.noise, NoiseSpec):
            raise ValidationError("noise must be an object with 'kind' and 'p'")
        for name in ("theta", "epsilon", "delta", "bin_width"):
            value = getattr(self, name)
            if not _is_real(value) or not math.isfinite(value):
                raise ValidationError(f"{name} must be a finite number, got {value!r}")
        Precision(self.epsilon, self.delta)
        if self.repeats is not None and (not _is_int(self.repeats) or self.repeats < 1):
            raise ValidationError(f"repeats must be a positive integer, got {self.repeats!r}")
        if not _is_int(self.master_seed) or not 0 <= self.master_seed <= SEED_MASK:
            raise ValidationError(f"master_seed must be an integer in [0, 2^64), got {self.master_seed!r}")
        if not _is_int(self.workers) or self.workers < 1:
            raise ValidationError(f"workers must be a positive integer, got {self.workers!r}")
        if not isinstance(self.timing, bool):
            raise ValidationError("timing must be true or false")
        if self.out is not None and not isinstance(self.out, str):
            raise ValidationError("out must be a path string")
        if not _is_int(self.theta_count) or self.theta_count < 1:
            raise ValidationError(f"theta_count must be a positive integer, got {self.theta_count!r}")
        if self.bin_width <= 0:
            raise ValidationError("bin_width must be positive")
        if not self.p_grid or any(not _is_real(p) or not 0 <= p <= 1 for p in self.p_grid):
            raise ValidationError(f"p_grid must be a non-empty list of rates in [0, 1], got {list(self.p_grid)}")
        if not self.m_grid or any(not _is_int(m) or m < 1 for m in self.m_grid):
            raise ValidationError(f"m_grid must be a non-empty list of positive integers, got {list(self.m_grid)}")
        if not self.theta_grid or any(not _is_real(t) or not math.isfinite(t) for t in self.theta_grid):
            raise ValidationError("theta_grid must be a non-empty list of finite angles")

    @property
    def precision(self) -> Precision:
        return Precision(self.epsilon, self.delta)

    @property
    def aggregate(self) -> bool:
        return self.shot_mode == "aggregate"

    def repeats_for(self, command: str) -> int:
        return DEFAULT_REPEATS[command] if self.repeats is None else self.repeats

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        for name in ("p_grid", "m_grid", "theta_grid"):
            d[name] = list(d[name])
        return d

    @classmethod
    def from_dict(cls, data: dict) -> ExperimentConfig:
        if not isinstance(data, dict):
            raise ValidationError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_json(cls, text: str) -> ExperimentConfig:
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def echo(self) -> dict:
        """Config as recorded next to results (excludes output plumbing)."""
        d = self.to_dict()
        for name in _NOT_ECHOED:
            d.pop(name)
        return d


def _noise_from_dict(data: dict) -> NoiseSpec:
    unknown = sorted(set(data) - {"kind", "p"})
    if unknown:
        raise ValidationError(f"unknown noise keys: {', '.join(unknown)}")
    kind = data.get("kind", "none")
    p = data.get("p", 0.0)
    if not _is_real(p):
        raise ValidationError(f"noise p must be a number, got {p!r}")
    return NoiseSpec(kind, float(p))


def read_config_dict(path: str | os.PathLike) -> dict:
    """Keys present in a JSON config file, validated but without defaults filled in."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from exc
    ExperimentConfig.from_json(text)
    return json.loads(text)


def load_config(path: str | os.PathLike) -> ExperimentConfig:
    return ExperimentConfig.from_dict(read_config_dict(path))


def seed_from_env() -> int | None:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw.strip() == "":
        return None
    try:
        return int(raw.strip(), 0)
    except ValueError as exc:
        raise ValidationError(f"{SEED_ENV}={raw!r} is not an integer") from exc


# ---------------------------------------------------------------- run tasks


@dataclass(frozen=True)
class RunTask:
    """One protocol execution; picklable so it can cross process boundaries."""

    measurement: str
    theta: float
    noise_kind: str
    p: float
    protocol: str
    epsilon: float
    delta: float
    seed: int
    m: int | None = None
    aggregate: bool = True
    timing: bool = False


@lru_cache(maxsize=64)
def _setup(measurement: str, theta: float, noise_kind: str, p: float):
    pvm = build_pvm(measurement, theta)
    povm = apply_noise(pvm, NoiseSpec(noise_kind, p))
    return pvm, povm, analysis.exact_fidelity(pvm, povm)


def execute_run(task: RunTask) -> dict:
    """Run one protocol execution and return its result row (without the run index)."""
    pvm, povm, exact = _setup(task.measurement, task.theta, task.noise_kind, task.p)
    prec = Precision(task.epsilon, task.delta)
    start = time.perf_counter()
    report = run_protocol(task.protocol, pvm, MeasurementDevice(povm, task.seed), prec, task.seed, m=task.m, aggregate=task.aggregate)
    elapsed = time.perf_counter() - start
    row = {
        "seed": task.seed,
        "estimate": report.estimate,
        "exact_fidelity": exact,
        "abs_error": abs(report.estimate - exact),
        "total_calls": report.total_calls,
        "m": report.m,
    }
    if task.timing:
        row["wall_time"] = elapsed
    return row


def planned_calls(measurement: str, theta: float, protocol: str, epsilon: float, delta: float, seed: int) -> int:
    """Device calls a run would make, from its Pauli draws alone (no shots simulated)."""
    prec = Precision(epsilon, delta)
    if protocol == "global":
        return global_call_count(prec)
    pvm = build_pvm(measurement, theta)
    if protocol == "efficient":
        shots = plan_efficient(pvm, prec, seed)[1]
    else:
        shots = plan_direct(pvm, prec, seed)[2]
    return int(shots.sum())


def _planned_calls_star(args: tuple) -> int:
    return planned_calls(*args)


def _map(fn, items: list, workers: int) -> list:
    """Order-preserving map, optionally over a process pool."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))


def _task(cfg: ExperimentConfig, seed: int, *, protocol: str | None = None, p: float | None = None,
          noise_kind: str | None = None, m: int | None = None) -> RunTask:
    return RunTask(
        measurement=cfg.measurement,
        theta=float(cfg.theta),
        noise_kind=cfg.noise.kind if noise_kind is None else noise_kind,
        p=float(cfg.noise.p if p is None else p),
        protocol=cfg.protocol if protocol is None else protocol,
        epsilon=float(cfg.epsilon),
        delta=float(cfg.delta),
        seed=seed,
        m=m,
        aggregate=cfg.aggregate,
        timing=cfg.timing,
    )


# ---------------------------------------------------------------- results


@dataclass
class Table:
    columns: list[str]
    rows: list[dict]

    def column(self, name: str) -> list:
        return [r[name] for r in self.rows]


@dataclass
class CommandResult:
    command: str
    config: ExperimentConfig
    table: Table
    extras: dict[str, Table] = field(default_factory=dict)
    summary: dict = field(default_factory=dict)


RUN_COLUMNS = ["run", "seed", "estimate", "exact_fidelity", "abs_error", "total_calls", "m"]


def _run_columns(cfg: ExperimentConfig, prefix: list[str] | None = None) -> list[str]:
    cols = (prefix or []) + RUN_COLUMNS
    return cols + ["wall_time"] if cfg.timing else cols


def _std(x: np.ndarray, ddof: int) -> float:
    """Sample standard deviation; 0 for a single value instead of NaN."""
    return float(np.std(x, ddof=ddof)) if len(x) > ddof else 0.0


def _execute_runs(cfg: ExperimentConfig, tasks: list[RunTask]) -> list[dict]:
    return _map(execute_run, tasks, cfg.workers)


def cmd_estimate(cfg: ExperimentConfig) -> CommandResult:
    """``repeats`` independent runs of the configured protocol."""
    n = cfg.repeats_for("estimate")
    tasks = [_task(cfg, derive_seed(cfg.master_seed, i)) for i in range(n)]
    rows = [{"run": i, **r} for i, r in enumerate(_execute_runs(cfg, tasks))]
    est = np.array([r["estimate"] for r in rows])
    exact = rows[0]["exact_fidelity"]
    summary = {
        "exact_fidelity": exact,
        "mean": float(est.mean()),
        "std": _std(est, 1),
        "fraction_within_2eps": float(np.mean(np.abs(est - exact) <= 2 * cfg.epsilon)),
        "repeats": n,
    }
    return CommandResult("estimate", cfg, Table(_run_columns(cfg), rows), summary=summary)


def cmd_sweep_noise(cfg: ExperimentConfig) -> CommandResult:
    """Mean and spread of the estimate across a grid of depolarizing rates.

    The sweep always applies depolarizing noise at each grid rate; the
    config's own noise field is not used.
    """
    n = cfg.repeats_for("sweep-noise")
    tasks, owners = [], []
    for j, p in enumerate(cfg.p_grid):
        for i in range(n):
            tasks.append(_task(cfg, derive_seed(cfg.master_seed, j, i), p=p, noise_kind="depolarizing"))
            owners.append((j, p, i))
    results = _execute_runs(cfg, tasks)
    runs = [{"p_index": j, "p": float(p), "run": i, **r} for (j, p, i), r in zip(owners, results)]

    rows = []
    for j, p in enumerate(cfg.p_grid):
        group = runs[j * n : (j + 1) * n]
        est = np.array([r["estimate"] for r in group])
        exact = group[0]["exact_fidelity"]
        mean = float(est.mean())
        rows.append(
            {
                "p": float(p),
                "exact_fidelity": exact,
                "mean": mean,
                "variance": _std(est, 1) ** 2,
                "std": _std(est, 1),
                "min": float(est.min()),
                "max": float(est.max()),
                "abs_error_of_mean": abs(mean - exact),
                "mean_within_2eps": abs(mean - exact) <= 2 * cfg.epsilon,
                "repeats": n,
            }
        )
    columns = list(rows[0])
    summary = {
        "all_means_within_2eps": all(r["mean_within_2eps"] for r in rows),
        "max_abs_error_of_mean": max(r["abs_error_of_mean"] for r in rows),
        "grid_points": len(rows),
        "repeats": n,
    }
    extras = {"runs": Table(_run_columns(cfg, ["p_index", "p"]), runs)}
    return CommandResult("sweep-noise", cfg, Table(columns, rows), extras, summary)


def histogram_bins(values, origin: float, width: float) -> list[dict]:
    """Fixed-width bins with edges at ``origin + j * width`` covering the data.

    Every bin between the lowest and highest occupied one is listed, empty
    or not, so the counts sum to ``len(values)``.
    """
    values = np.asarray(values, dtype=float)
    idx = np.floor((values - origin) / width).astype(np.int64)
    lo, hi = int(idx.min()), int(idx.max())
    counts = np.bincount(idx - lo, minlength=hi - lo + 1)
    return [
        {"bin": j, "lower": origin + j * width, "upper": origin + (j + 1) * width, "count": int(c)}
        for j, c in zip(range(lo, hi + 1), counts)
    ]


def cmd_histogram(cfg: ExperimentConfig) -> CommandResult:
    """Distribution of estimates, binned on a grid anchored at ``F - 2 eps``."""
    n = cfg.repeats_for("histogram")
    if n < 100:
        log.warning("histogram with %d repeats (fewer than 100) is only a rough picture", n)
    tasks = [_task(cfg, derive_seed(cfg.master_seed, i)) for i in range(n)]
    runs = [{"run": i, **r} for i, r in enumerate(_execute_runs(cfg, tasks))]
    est = np.array([r["estimate"] for r in runs])
    exact = runs[0]["exact_fidelity"]
    window = (exact - 2 * cfg.epsilon, exact + 2 * cfg.epsilon)
    bins = histogram_bins(est, window[0], cfg.bin_width)
    for b in bins:
        b["inside_window"] = b["lower"] >= window[0] and b["upper"] <= window[1] + 1e-12
    summary = {
        "exact_fidelity": exact,
        "window_lower": window[0],
        "window_upper": window[1],
        "fraction_within_2eps": float(np.mean(np.abs(est - exact) <= 2 * cfg.epsilon)),
        "mean": float(est.mean()),
        "std": _std(est, 1),
        "bin_width": cfg.bin_width,
        "bins": len(bins),
        "repeats": n,
    }
    extras = {"runs": Table(_run_columns(cfg), runs)}
    return CommandResult("histogram", cfg, Table(list(bins[0]), bins), extras, summary)


def cmd_convergence(cfg: ExperimentConfig) -> CommandResult:
    """Estimate quality against the number of Pauli draws ``m``, for both sampling protocols.

    Per ``(protocol, m)``: mean, population std and RMSE against the exact
    fidelity over ``repeats`` runs, so ``rmse**2 == std**2 + bias**2``.
    """
    n = cfg.repeats_for("convergence")
    if cfg.protocol == "global":
        log.warning("convergence always compares the efficient and direct protocols; protocol=global ignored")
    tasks, owners = [], []
    for pi, proto in enumerate(CONVERGENCE_PROTOCOLS):
        for mi, m in enumerate(cfg.m_grid):
            for i in range(n):
                tasks.append(_task(cfg, derive_seed(cfg.master_seed, pi, mi, i), protocol=proto, m=int(m)))
                owners.append((proto, int(m), i))
    results = _execute_runs(cfg, tasks)
    runs = [{"protocol": proto, "m_draws": m, "run": i, **r} for (proto, m, i), r in zip(owners, results)]

    rows = []
    for k in range(0, len(runs), n):
        group = runs[k : k + n]
        est = np.array([r["estimate"] for r in group])
        exact = group[0]["exact_fidelity"]
        rows.append(
            {
                "protocol": group[0]["protocol"],
                "m": group[0]["m_draws"],
                "exact_fidelity": exact,
                "mean": float(est.mean()),
                "std": _std(est, 0),
                "rmse": float(np.sqrt(np.mean((est - exact) ** 2))),
                "mean_total_calls": float(np.mean([r["total_calls"] for r in group])),
                "repeats": n,
            }
        )
    m_max = max(int(m) for m in cfg.m_grid)
    final = {r["protocol"]: r["rmse"] for r in rows if r["m"] == m_max}
    summary = {
        "largest_m": m_max,
        "rmse_efficient_at_largest_m": final["efficient"],
        "rmse_direct_at_largest_m": final["direct"],
        "efficient_rmse_le_direct": final["efficient"] <= final["direct"],
        "repeats": n,
    }
    run_cols = _run_columns(cfg, ["protocol", "m_draws"])
    extras = {"runs": Table(run_cols, runs)}
    return CommandResult("convergence", cfg, Table(list(rows[0]), rows), extras, summary)


def cmd_bounds(cfg: ExperimentConfig) -> CommandResult:
    """Theorem values next to planned call counts, per theta of the EJM grid.

    For Bell or computational-basis measurements there is a single row. The
    mean call counts are averaged over ``repeats`` seeded Pauli plans; a
    plan fixes a run's call count exactly, so no shots are simulated.
    """
    n = cfg.repeats_for("bounds")
    prec = cfg.precision
    thetas = [float(t) for t in cfg.theta_grid] if cfg.measurement == "ejm" else [None]

    plan_args, owners = [], []
    for ti, theta in enumerate(thetas):
        for pi, proto in enumerate(CONVERGENCE_PROTOCOLS):
            for i in range(n):
                seed = derive_seed(cfg.master_seed, ti, pi, i)
                plan_args.append((cfg.measurement, theta or 0.0, proto, cfg.epsilon, cfg.delta, seed))
                owners.append((ti, proto))
    calls = _map(_planned_calls_star, plan_args, cfg.workers)
    by_key: dict[tuple, list[int]] = {}
    for key, c in zip(owners, calls):
        by_key.setdefault(key, []).append(c)

    rows = []
    for ti, theta in enumerate(thetas):
        pvm = build_pvm(cfg.measurement, theta or 0.0)
        ss = analysis.support_sets(pvm)
        t1 = analysis.bound_thm1(pvm, prec)
        t2 = analysis.bound_thm2(pvm, prec)
        t3 = analysis.bound_thm3(prec)
        t4 = analysis.bound_thm4(pvm, prec)
        t5 = analysis.bound_thm5(pvm, prec)
        eff = float(np.mean(by_key[(ti, "efficient")]))
        dire = float(np.mean(by_key[(ti, "direct")]))
        rows.append(
            {
                "measurement": cfg.measurement,
                "theta": theta,
                "M0": t2.aux["M0"],
                "M2": t2.aux["M2"],
                "size_S": ss.size_S,
                "size_T": ss.size_T,
                "efficient_mean_L": eff,
                "efficient_expected_L": t1.aux["expected_L"],
                "thm1_lower": t1.lower,
                "thm2_lower": t2.lower,
                "thm2_upper": t2.upper,
                "direct_mean_L": dire,
                "direct_expected_L": t4.aux["expected_L"],
                "thm4_upper": t4.upper,
                "thm5_lower": t5.lower,
                "thm5_upper": t5.upper,
                "global_L": global_call_count(prec),
                "thm3_lower": t3.lower,
                "efficient_in_bounds": max(t1.lower, t2.lower) <= eff <= t2.upper,
                "direct_in_bounds": t5.lower <= dire <= min(t4.upper, t5.upper),
                "efficient_below_direct": eff < dire,
            }
        )
    summary = {
        "all_efficient_in_bounds": all(r["efficient_in_bounds"] for r in rows),
        "all_direct_in_bounds": all(r["direct_in_bounds"] for r in rows),
        "efficient_below_direct_everywhere": all(r["efficient_below_direct"] for r in rows),
        "repeats": n,
    }
    return CommandResult("bounds", cfg, Table(list(rows[0]), rows), summary=summary)


def cmd_sample_histogram(cfg: ExperimentConfig) -> CommandResult:
    """Call counts of the configured protocol over uniformly drawn EJM angles.

    Angles are uniform on one period ``[0, 2 pi)``; each angle gets one
    seeded Pauli plan. Reports the fraction of angles whose call count is
    below five times the mean.
    """
    count = cfg.theta_count
    thetas = make_rng(cfg.master_seed, THETA_STREAM).uniform(0.0, THETA_PERIOD, count)
    seeds = [derive_seed(cfg.master_seed, i) for i in range(count)]
    args = [("ejm", float(t), cfg.protocol, cfg.epsilon, cfg.delta, s) for t, s in zip(thetas, seeds)]
    calls = _map(_planned_calls_star, args, cfg.workers)
    rows = [{"index": i, "theta": float(t), "seed": s, "total_calls": c} for i, (t, s, c) in enumerate(zip(thetas, seeds, calls))]

    arr = np.array(calls, dtype=float)
    mean = float(arr.mean())
    bins = histogram_bins(np.log10(arr), 0.0, CALLS_LOG_BIN)
    bin_rows = [{"bin": b["bin"], "log10_lower": b["lower"], "log10_upper": b["upper"], "count": b["count"]} for b in bins]
    summary = {
        "protocol": cfg.protocol,
        "theta_count": count,
        "mean_calls": mean,
        "median_calls": float(np.median(arr)),
        "max_calls": int(max(calls)),
        "fraction_below_5x_mean": float(np.mean(arr < 5 * mean)),
    }
    extras = {"bins": Table(list(bin_rows[0]), bin_rows)}
    return CommandResult("sample-histogram", cfg, Table(list(rows[0]), rows), extras, summary)


_COMMANDS = {
    "estimate": cmd_estimate,
    "sweep-noise": cmd_sweep_noise,
    "histogram": cmd_histogram,
    "convergence": cmd_convergence,
    "bounds": cmd_bounds,
    "sample-histogram": cmd_sample_histogram,
}


def run_command(command: str, cfg: ExperimentConfig) -> CommandResult:
    try:
        fn = _COMMANDS[command]
    except KeyError:
        raise ValidationError(f"unknown command {command!r}; expected one of {COMMANDS}") from None
    return fn(cfg)


# ---------------------------------------------------------------- output


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if _is_int(value):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def render_csv(table: Table) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["schema_version", *table.columns])
    for row in table.rows:
        writer.writerow([SCHEMA_VERSION, *(_fmt(row[c]) for c in table.columns)])
    return buf.getvalue()


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if _is_int(value):
        return int(value)
    if isinstance(value, (float, np.floating)):
        return float(value)
    return value


def _summary_doc(result: CommandResult) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": result.command,
        "config": result.config.echo(),
        "summary": _jsonable(result.summary),
    }


def _json_doc(result: CommandResult) -> dict:
    doc = _summary_doc(result)
    doc["tables"] = {"main": _jsonable(result.table.rows)}
    for name, table in result.extras.items():
        doc["tables"][name] = _jsonable(table.rows)
    return doc


def sidecar_paths(out: str | os.PathLike, result: CommandResult) -> dict[str, Path]:
    """Where CSV output puts secondary tables and the summary, next to ``out``."""
    base = Path(out)
    stem = base.with_suffix("") if base.suffix else base
    paths = {name: Path(f"{stem}.{name}.csv") for name in result.extras}
    paths["summary"] = Path(f"{stem}.summary.json")
    return paths


def write_result(result: CommandResult, out: str | os.PathLike | None = None, fmt: str | None = None) -> list[Path]:
    """Serialize ``result``; returns the files written (empty when printing to stdout).

    CSV: the main table goes to ``out``, each secondary table to
    ``<stem>.<name>.csv`` and the summary to ``<stem>.summary.json``.
    JSON: one document with config, summary and every table.
    Without ``out`` the main table (or the JSON document) goes to stdout.
    """
    out = result.config.out if out is None else out
    fmt = result.config.format if fmt is None else fmt
    if fmt == "json":
        text = json.dumps(_json_doc(result), indent=2) + "\n"
        if out is None:
            sys.stdout.write(text)
            return []
        path = Path(out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        return [path]

    main = render_csv(result.table)
    if out is None:
        sys.stdout.write(main)
        sys.stderr.write(json.dumps(_summary_doc(result), indent=2) + "\n")
        return []
    path = Path(out)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(main, encoding="utf-8")
    written = [path]
    sidecars = sidecar_paths(path, result)
    for name, table in result.extras.items():
        sidecars[name].write_text(render_csv(table), encoding="utf-8")
        written.append(sidecars[name])
    sidecars["summary"].write_text(json.dumps(_summary_doc(result), indent=2) + "\n", encoding="utf-8")
    written.append(sidecars["summary"])
    return written
