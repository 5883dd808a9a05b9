"""Budgeted comparison runs, damping sweeps, MAP decoding and accuracy.

An experiment document (JSON) looks like::

    {
      "instances": [
        "path/to/field.uai",
        {"kind": "grid", "rows": 8, "cols": 8, "labels": 2, "unary_scale": 1.0,
         "pair_scale": 3.0, "coupling": "repulsive", "seed": 0}
      ],
      "schedules": [{"algorithm": "full_parallel"},
                    {"algorithm": "ours_fixed", "d": "auto"}],
      "budgets": [{"iterations": 100}, {"ms": 50}],
      "eta_grid": [1.0, 0.5, 0.25],
      "output_dir": "out",
      "seed": 0
    }

``"d": "auto"`` resolves to ``1.05 * L`` from power iteration (pairwise
fields only). Budgets may set ``iterations``, ``ms`` or both.
"""
from __future__ import annotations

import csv
import json
import logging
import os
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from .energy import MeanFieldState
from .lipschitz import DEFAULT_MARGIN, spectral_norm, suggest_damping
from .model import DiscreteField, GroundTruth, generate_synthetic, load_field
from .oracle import DEFAULT_CAP, enumerate_field
from .schedules import ScheduleConfig, ScheduleRun, run_schedule

log = logging.getLogger(__name__)

TRACE_COLUMNS = ["instance_id", "schedule", "iter", "wall_ns", "E", "negH", "F", "kl",
                 "max_mean_delta"]
SUMMARY_COLUMNS = ["instance_id", "schedule", "budget", "F", "kl", "accuracy", "iterations",
                   "wall_time", "stop_reason", "error"]
SWEEP_COLUMNS = ["instance_id", "schedule", "eta", "d", "F", "kl", "marker"]
NATURAL_SPACE = ("ours_fixed", "ours_adaptive", "ours_momentum", "ours_adam")


class SpecError(ValueError):
    """The experiment description itself is invalid."""


def decode_map(state: MeanFieldState) -> np.ndarray:
    """Per-variable argmax of ``q``; ties go to the lowest label."""
    q = np.where(state.mask, state.q, -np.inf)
    return np.argmax(q, axis=1)


def accuracy(labels, truth: GroundTruth) -> float:
    """Fraction of masked positions where ``labels`` agrees with ``truth``."""
    labels = np.asarray(labels)
    if labels.shape != truth.labels.shape:
        raise ValueError(f"label shape {labels.shape} != truth shape {truth.labels.shape}")
    n = int(truth.mask.sum())
    if n == 0:
        log.warning("empty evaluation mask; accuracy defined as 1.0")
        return 1.0
    return float(np.mean(labels[truth.mask] == truth.labels[truth.mask]))


@dataclass
class Budget:
    iterations: int | None = None
    ms: float | None = None

    @property
    def label(self) -> str:
        parts = []
        if self.iterations is not None:
            parts.append(f"{self.iterations}it")
        if self.ms is not None:
            parts.append(f"{self.ms:g}ms")
        return "+".join(parts)


@dataclass
class ScheduleSpec:
    """A schedule entry whose ``d`` may still be ``"auto"``."""

    algorithm: str
    params: dict = dc_field(default_factory=dict)

    def resolve(self, d_auto: float | None) -> ScheduleConfig:
        params = dict(self.params)
        if params.get("d") == "auto":
            if d_auto is None:
                raise ValueError("d='auto' needs a pairwise field")
            params["d"] = d_auto
        return ScheduleConfig(algorithm=self.algorithm, **params)


@dataclass
class Instance:
    instance_id: str
    field: DiscreteField
    truth: GroundTruth | None = None


@dataclass
class ExperimentSpec:
    instances: list
    schedules: list[ScheduleSpec]
    budgets: list[Budget]
    eta_grid: list[float] | None = None
    output_dir: str = "results"
    seed: int = 0
    init_mode: str = "uniform"
    margin: float = DEFAULT_MARGIN
    oracle_cap: int = DEFAULT_CAP
    n_jobs: int = 1
    gnuplot: bool = False

    def __post_init__(self):
        if not self.instances:
            raise SpecError("at least one instance is required")
        if not self.schedules:
            raise SpecError("at least one schedule is required")
        if not self.budgets:
            raise SpecError("at least one budget is required")
        for b in self.budgets:
            if b.iterations is None and b.ms is None:
                raise SpecError("a budget needs 'iterations' or 'ms'")
        if self.eta_grid is not None:
            if not self.eta_grid:
                raise SpecError("eta_grid must not be empty")
            if any(not 0 < e <= 1 for e in self.eta_grid):
                raise SpecError("eta values must lie in (0, 1]")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentSpec":
        try:
            schedules = []
            for s in data["schedules"]:
                s = dict(s)
                schedules.append(ScheduleSpec(s.pop("algorithm"), s))
            budgets = [Budget(iterations=b.get("iterations"), ms=b.get("ms"))
                       for b in data["budgets"]]
            extra = {k: data[k] for k in ("eta_grid", "output_dir", "seed", "init_mode",
                                          "margin", "oracle_cap", "n_jobs", "gnuplot") if k in data}
            spec = cls(instances=list(data["instances"]), schedules=schedules,
                       budgets=budgets, **extra)
        except (KeyError, TypeError) as exc:
            raise SpecError(f"malformed experiment spec: {exc}") from exc
        for s in spec.schedules:
            try:
                s.resolve(1.0)
            except (TypeError, ValueError) as exc:
                raise SpecError(f"schedule {s.algorithm!r}: {exc}") from exc
        return spec


def load_instance(entry, index: int, seed: int) -> Instance:
    """Materialize an instance from a file path or a generator description."""
    if isinstance(entry, str):
        field, truth, _ = load_field(entry)
        name = os.path.splitext(os.path.basename(entry))[0]
        return Instance(name, field, truth)
    if isinstance(entry, dict):
        g = dict(entry)
        g.setdefault("seed", seed + index)
        name = g.pop("id", None)
        field, truth = generate_synthetic(
            g["kind"], g["rows"], g["cols"], g.get("labels", 2), g.get("unary_scale", 1.0),
            g.get("pair_scale", 1.0), g.get("coupling", "mixed"), g["seed"])
        if name is None:
            name = (f"{g['kind']}{g['rows']}x{g['cols']}_{g.get('coupling', 'mixed')}"
                    f"_s{g['seed']}")
        return Instance(name, field, truth)
    raise SpecError(f"instance {index}: expected a path or a generator mapping")


@dataclass
class _Prepared:
    instance: Instance
    log_z: float | None
    d_auto: float | None
    lipschitz: float | None


def _prepare(instance: Instance, spec: ExperimentSpec) -> _Prepared:
    field = instance.field
    log_z = None
    if field.state_space_size <= spec.oracle_cap:
        log_z = enumerate_field(field, cap=spec.oracle_cap).log_z
    d_auto = lip = None
    if field.is_pairwise:
        lip = spectral_norm(field, seed=spec.seed).value
        d_auto = suggest_damping(lip, spec.margin)
    return _Prepared(instance, log_z, d_auto, lip)


def _config_for(base: ScheduleConfig, budget: Budget) -> ScheduleConfig:
    iters = budget.iterations if budget.iterations is not None else 10**9
    secs = budget.ms / 1000.0 if budget.ms is not None else None
    return replace(base, max_iterations=iters, time_budget=secs)


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    return str(x)


def _run_one(prep: _Prepared, config: ScheduleConfig, spec: ExperimentSpec) -> ScheduleRun:
    return run_schedule(prep.instance.field, config, spec.init_mode,
                        oracle_log_z=prep.log_z, n_jobs=spec.n_jobs)


def _safe_name(s: str) -> str:
    return "".join(c if c.isalnum() or c in "-_.=" else "_" for c in s)


def write_trace(path: str, instance_id: str, schedule: str, run: ScheduleRun):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in run.trace:
            o = r.objective
            w.writerow([instance_id, schedule, r.iteration, int(round(r.wall_time * 1e9)),
                        _fmt(o.expected_energy), _fmt(o.neg_entropy), _fmt(o.free_energy),
                        _fmt(r.kl), _fmt(r.max_mean_delta)])


@dataclass
class ExperimentResult:
    rows: list[dict]
    failures: int
    summary_path: str


def run_experiment(spec: ExperimentSpec) -> ExperimentResult:
    """Run every (instance, schedule, budget) triple and write CSV outputs.

    Writes ``summary.csv`` plus one trace per run under ``traces/``. A run
    that raises is recorded with its error message and the batch goes on.
    """
    instances = [load_instance(e, i, spec.seed) for i, e in enumerate(spec.instances)]
    trace_dir = os.path.join(spec.output_dir, "traces")
    os.makedirs(trace_dir, exist_ok=True)
    rows, failures, traces = [], 0, []
    for inst in instances:
        prep = _prepare(inst, spec)
        for sched in spec.schedules:
            for budget in spec.budgets:
                row = dict.fromkeys(SUMMARY_COLUMNS, "")
                row.update(instance_id=inst.instance_id, budget=budget.label,
                           schedule=sched.algorithm)
                try:
                    config = _config_for(sched.resolve(prep.d_auto), budget)
                    row["schedule"] = config.label
                    run = _run_one(prep, config, spec)
                except Exception as exc:  # recorded per run, batch continues
                    failures += 1
                    row["error"] = f"{type(exc).__name__}: {exc}"
                    log.warning("run %s/%s/%s failed: %s", inst.instance_id,
                                row["schedule"], budget.label, exc)
                    rows.append(row)
                    continue
                last = run.trace[-1]
                row.update(F=_fmt(last.objective.free_energy), kl=_fmt(last.kl),
                           iterations=last.iteration, wall_time=_fmt(last.wall_time),
                           stop_reason=run.stop_reason)
                if inst.truth is not None:
                    row["accuracy"] = _fmt(accuracy(decode_map(run.state), inst.truth))
                name = _safe_name(f"{inst.instance_id}__{config.label}__{budget.label}.csv")
                write_trace(os.path.join(trace_dir, name), inst.instance_id, config.label, run)
                traces.append(name)
                rows.append(row)
    path = os.path.join(spec.output_dir, "summary.csv")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    if spec.gnuplot:
        write_gnuplot(os.path.join(trace_dir, "traces.gp"), traces)
    return ExperimentResult(rows, failures, path)


def sensitivity_sweep(spec: ExperimentSpec) -> ExperimentResult:
    """Final free energy per (schedule, eta) at the largest budget.

    ``adhoc`` uses eta directly; natural-space schedules use ``d = 1/eta - 1``.
    Natural-space schedules get one extra row (``marker=1``) at ``d = L``.
    Other schedules ignore the grid and are run once.
    """
    if not spec.eta_grid:
        raise SpecError("sensitivity sweep needs a non-empty eta_grid")
    instances = [load_instance(e, i, spec.seed) for i, e in enumerate(spec.instances)]
    os.makedirs(spec.output_dir, exist_ok=True)
    budget = max(spec.budgets, key=lambda b: (b.iterations or 0, b.ms or 0.0))
    rows, failures = [], 0

    def run_row(prep, sched, eta, d, marker, params):
        nonlocal failures
        inst = prep.instance
        row = dict(instance_id=inst.instance_id, schedule=sched.algorithm, eta=_fmt(eta),
                   d=_fmt(d), F="", kl="", marker=int(marker))
        try:
            config = _config_for(ScheduleSpec(sched.algorithm, params).resolve(prep.d_auto),
                                 budget)
            run = _run_one(prep, config, spec)
            row["F"] = _fmt(run.trace[-1].objective.free_energy)
            row["kl"] = _fmt(run.trace[-1].kl)
        except Exception as exc:
            failures += 1
            row["F"] = ""
            log.warning("sweep %s/%s eta=%s failed: %s", inst.instance_id,
                        sched.algorithm, eta, exc)
        rows.append(row)

    for inst in instances:
        prep = _prepare(inst, spec)
        for sched in spec.schedules:
            a = sched.algorithm
            if a == "adhoc":
                for eta in spec.eta_grid:
                    run_row(prep, sched, eta, None, False, {**sched.params, "eta_adhoc": eta})
            elif a in NATURAL_SPACE:
                for eta in spec.eta_grid:
                    d = 1.0 / eta - 1.0
                    run_row(prep, sched, eta, d, False, {**sched.params, "d": d})
                if prep.lipschitz is not None:
                    d = prep.lipschitz
                    run_row(prep, sched, 1.0 / (1.0 + d), d, True, {**sched.params, "d": d})
            else:
                run_row(prep, sched, None, None, False, dict(sched.params))
    path = os.path.join(spec.output_dir, "sweep.csv")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, SWEEP_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return ExperimentResult(rows, failures, path)


def load_spec(path: str) -> ExperimentSpec:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SpecError(f"{path}: {exc}") from exc
    return ExperimentSpec.from_dict(data)


def write_gnuplot(path: str, trace_files: list[str]):
    """Small gnuplot script plotting F against iteration for each trace."""
    lines = ["set datafile separator ','", "set key autotitle columnhead",
             "set xlabel 'iteration'", "set ylabel 'F'"]
    plots = [f"'{t}' using 3:7 with lines title '{t}'" for t in trace_files]
    if plots:
        lines.append("plot " + ", \\\n     ".join(plots))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
