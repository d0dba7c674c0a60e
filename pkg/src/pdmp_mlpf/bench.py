"""Experiment harness: data generation, filter sweeps, cost accounting,
rate regression and result emission.

A study fixes one synthetic data set, runs the single-level particle filter
and the multilevel filter over a grid of target accuracies, scores every run
against a high-resolution ground-truth filter, and regresses log10 MSE on
log10 cost. Everything is keyed on a base seed plus structural tags, so a
study is reproducible byte for byte regardless of worker count.

Cost accounting keeps three counters per run (Euler substeps, Poisson
candidates, likelihood evaluations). Rate regressions default to the Euler
counter: candidate processing is level-independent, so only the solver-step
count reproduces the doubling of work per level that the cost study is
about. The emitted rows carry all counters and the combined total, and the
regression basis is selectable.
"""

from __future__ import annotations

import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import neuro
from .costs import CostCounter
from .errors import (BudgetError, ConfigError, ContractViolationError,
                     InsufficientDataError)
from .flow import HybridState, Level, delta
from .pdmp import simulate
from .seeding import stream
from .smc import (coupled_pf_step, initial_coupled_state, initial_ensemble,
                  ml_estimate, pf_step)

PHI_FUNCTIONS = {
    "v0": lambda x: x.v[0],
    "u": lambda x: float(x.u),
}

ROW_COLUMNS = ("method", "model", "level", "epsilon", "replicate", "epoch",
               "estimate", "sq_error", "cost_euler", "cost_candidates",
               "cost_total", "seed")

AGG_COLUMNS = ("method", "model", "level", "epsilon", "n", "mse",
               "cost_euler", "cost_candidates", "cost_total")

RATE_COLUMNS = ("method", "model", "cost_basis", "n_points",
                "slope_mse_vs_cost", "rate_cost_vs_mse", "intercept", "stderr")

COST_BASES = ("euler", "total", "candidates")


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "ml"
    params: object = None               # model parameter set; None = defaults
    levels: tuple = (3, 4, 5, 6, 7)
    replicates: int = 100
    eps: Optional[tuple] = None         # accuracy grid; None = 2^-l over levels
    alloc_constant: float = 1.0
    # the single-level filter has its own proportionality constant in
    # S = K_pf * eps^-2; None reuses alloc_constant
    pf_constant: Optional[float] = None
    min_particles: int = 10
    # separate floor for the single-level filter; None = min_particles. The
    # coupled ensembles need a healthier floor: with birth-death kernels a
    # mode-mismatched pair can draw a zero coarse jump density, and a
    # handful of pairs can then lose all coarse mass at once.
    pf_min_particles: Optional[int] = None
    particle_budget: int = 5_000_000
    horizon: int = 10
    base_seed: int = 0
    resampling: str = "adaptive"
    phi: str = "v0"
    truth_level: Optional[int] = None   # None = max(levels) + 2
    truth_factor: int = 8
    truth_replicates: int = 10
    workers: Optional[int] = None       # None = env var, else serial

    def __post_init__(self):
        if list(self.levels) != sorted(self.levels):
            raise ConfigError("levels must be ascending")
        if self.replicates < 2:
            raise ConfigError("need at least 2 replicates to estimate variance")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least one epoch")
        if self.phi not in PHI_FUNCTIONS:
            raise ConfigError(f"unknown test function {self.phi!r}")
        if self.resampling not in ("adaptive", "always"):
            raise ConfigError(f"unknown resampling mode {self.resampling!r}")

    def params_or_default(self):
        return self.params if self.params is not None else neuro.params_for(self.model)

    def build(self):
        params = self.params_or_default()
        model = neuro.build_model(self.model, params)
        obs_model = neuro.gaussian_obs(params.delta, params.tau2)
        return model, obs_model, neuro.initial_state(params)

    def eps_grid(self) -> tuple:
        if self.eps is not None:
            return tuple(self.eps)
        return tuple(delta(Level(l)) for l in self.levels)

    def effective_truth_level(self) -> int:
        return self.truth_level if self.truth_level is not None else max(self.levels) + 2

    def pf_floor(self) -> int:
        return self.pf_min_particles if self.pf_min_particles is not None \
            else self.min_particles

    def pf_alloc_constant(self) -> float:
        return self.pf_constant if self.pf_constant is not None \
            else self.alloc_constant

    def worker_count(self) -> int:
        env = os.environ.get("PDMP_MLPF_WORKERS")
        if env is not None:
            try:
                return max(1, int(env))
            except ValueError:
                raise ConfigError(f"PDMP_MLPF_WORKERS must be an integer, got {env!r}")
        return max(1, self.workers or 1)


@dataclass
class DataSet:
    model: str
    seed: int
    truth_level: int
    horizon: int
    gap: float
    observations: list        # [(t, y)] on the gap grid
    latent: list              # [(t, u, v0)] reference states at the same times

    def epoch_observations(self, n: int) -> list:
        return [(t, y) for t, y in self.observations if n - 1 < t <= n]


@dataclass
class ResultRow:
    method: str
    model: str
    level: int
    epsilon: float
    replicate: int
    epoch: int
    estimate: float
    sq_error: float
    cost_euler: int
    cost_candidates: int
    cost_total: int
    seed: int

    def astuple(self):
        return tuple(getattr(self, c) for c in ROW_COLUMNS)


@dataclass(frozen=True)
class RateFit:
    slope: float          # d log10(MSE) / d log10(cost)
    intercept: float
    stderr: float
    n_points: int


def generate_data(model, obs_model, x0: HybridState, truth_level: int,
                  horizon: int, seed: int, model_id: str = "") -> DataSet:
    """Simulate one latent path and sample noisy readings on the gap grid."""
    if horizon < 1:
        raise ConfigError("horizon must be at least one epoch")
    gap = obs_model.gap
    per_epoch = round(1.0 / gap)
    if abs(per_epoch * gap - 1.0) > 1e-12:
        raise ConfigError(f"observation gap {gap} must divide the unit epoch")
    rng_latent = stream(seed, "data-latent")
    rng_noise = stream(seed, "data-noise")
    tau = _obs_sd(obs_model)

    observations, latent = [], []
    x = x0
    for n in range(1, horizon + 1):
        times = [(n - 1) + k * gap for k in range(1, per_epoch + 1)]
        path, _, states, _ = simulate(model, Level(truth_level), x,
                                      float(n - 1), float(n), rng_latent,
                                      eval_times=times)
        for t, s in zip(times, states):
            y = s.v[0] + tau * rng_noise.standard_normal()
            observations.append((t, float(y)))
            latent.append((t, s.u, float(s.v[0])))
        x = path.endpoint
    return DataSet(model=model_id, seed=seed, truth_level=truth_level,
                   horizon=horizon, gap=gap, observations=observations,
                   latent=latent)


def _obs_sd(obs_model) -> float:
    # the Gaussian observation model stores tau2 only through its density;
    # recover the standard deviation from the curvature at the mode
    probe = HybridState(0, (0.0,))
    at_mode = obs_model.log_density(probe, 0.0)
    off = obs_model.log_density(probe, 1.0)
    inv2t = at_mode - off
    return math.sqrt(0.5 / inv2t)


def save_data(data: DataSet, path: str) -> None:
    payload = {
        "schema": "pdmp-mlpf/data-v1",
        "model": data.model,
        "seed": data.seed,
        "truth_level": data.truth_level,
        "horizon": data.horizon,
        "gap": data.gap,
        "observations": [[t, y] for t, y in data.observations],
        "latent": [[t, u, v] for t, u, v in data.latent],
    }
    _atomic_write(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")


def load_data(path: str) -> DataSet:
    with open(path, "r", encoding="utf-8") as fh:
        payload = json.load(fh)
    if payload.get("schema") != "pdmp-mlpf/data-v1":
        raise ConfigError(f"{path}: not a data file")
    return DataSet(model=payload["model"], seed=payload["seed"],
                   truth_level=payload["truth_level"], horizon=payload["horizon"],
                   gap=payload["gap"],
                   observations=[(t, y) for t, y in payload["observations"]],
                   latent=[(t, u, v) for t, u, v in payload["latent"]])


def choose_level(eps: float) -> int:
    """Smallest level whose step size is at most eps."""
    if eps <= 0:
        raise ConfigError(f"target accuracy must be positive, got {eps}")
    level = 1
    while delta(Level(level)) > eps:
        level += 1
    return level


def allocate_particles(eps: float, top_level: int, constant: float = 1.0,
                       min_particles: int = 10,
                       budget: Optional[int] = None) -> list:
    """Per-level particle counts S_l = ceil(K eps^-2 Delta_l L), floored."""
    if eps <= 0 or top_level < 1:
        raise ConfigError("need eps > 0 and at least one level")
    sizes = []
    for l in range(1, top_level + 1):
        raw = constant * eps ** -2 * delta(Level(l)) * top_level
        size = max(math.ceil(raw), min_particles)
        if budget is not None and size > budget:
            raise BudgetError(
                f"level {l} needs {size} particles, budget is {budget}",
                level=l, requested=size, budget=budget)
        sizes.append(size)
    return sizes


def pf_particles(eps: float, constant: float = 1.0, min_particles: int = 10,
                 budget: Optional[int] = None) -> int:
    size = max(math.ceil(constant * eps ** -2), min_particles)
    if budget is not None and size > budget:
        raise BudgetError(f"particle filter needs {size} particles, "
                          f"budget is {budget}", level=None,
                          requested=size, budget=budget)
    return size


def _pf_trajectory(config: ExperimentConfig, data: DataSet, level: int,
                   size: int, replicate: int):
    """Estimates per epoch for one bootstrap-filter replicate."""
    model, obs_model, x0 = config.build()
    phi = PHI_FUNCTIONS[config.phi]
    rng = stream(config.base_seed, "pf", level, replicate)
    cost = CostCounter()
    ens = initial_ensemble(x0, size)
    estimates = []
    for n in range(1, data.horizon + 1):
        ens, est = pf_step(model, obs_model, ens, data.epoch_observations(n),
                           level, rng, phi=phi, resampling=config.resampling,
                           cost=cost)
        estimates.append(est.value)
    return estimates, cost


def _coupled_trajectory(config: ExperimentConfig, data: DataSet, level: int,
                        size: int, replicate: int):
    """(fine, coarse) estimates per epoch for one coupled-filter replicate."""
    model, obs_model, x0 = config.build()
    phi = PHI_FUNCTIONS[config.phi]
    rng = stream(config.base_seed, "cpf", level, replicate)
    cost = CostCounter()
    state = initial_coupled_state(x0, size)
    pairs = []
    for n in range(1, data.horizon + 1):
        state, fe, ce = coupled_pf_step(model, obs_model, state,
                                        data.epoch_observations(n), Level(level),
                                        rng, phi=phi,
                                        resampling=config.resampling, cost=cost)
        pairs.append((fe.value, ce.value))
    return pairs, cost


def run_pf(config: ExperimentConfig, data: DataSet, level: int, size: int,
           replicate: int, epsilon: float = float("nan")) -> list:
    """One particle-filter replicate as result rows (sq_error left NaN)."""
    estimates, cost = _pf_trajectory(config, data, level, size, replicate)
    return [ResultRow("pf", config.model, level, epsilon, replicate, n + 1,
                      est, float("nan"), cost.euler_steps,
                      cost.poisson_candidates, cost.total, config.base_seed)
            for n, est in enumerate(estimates)]


def run_mlpf(config: ExperimentConfig, data: DataSet, eps: float,
             replicate: int) -> list:
    """One multilevel replicate: level-1 filter plus coupled levels 2..L."""
    top = choose_level(eps)
    sizes = allocate_particles(eps, top, config.alloc_constant,
                               config.min_particles, config.particle_budget)
    base_est, cost = _pf_trajectory(config, data, 1, sizes[0], replicate)
    diff_pairs = {}
    for l in range(2, top + 1):
        pairs, c = _coupled_trajectory(config, data, l, sizes[l - 1], replicate)
        diff_pairs[l] = pairs
        cost.merge(c)
    rows = []
    for n in range(1, data.horizon + 1):
        diffs = {l: diff_pairs[l][n - 1] for l in diff_pairs}
        value = ml_estimate(base_est[n - 1], diffs)
        rows.append(ResultRow("mlpf", config.model, top, eps, replicate, n,
                              value, float("nan"), cost.euler_steps,
                              cost.poisson_candidates, cost.total,
                              config.base_seed))
    return rows


def ground_truth(config: ExperimentConfig, data: DataSet, size: int) -> list:
    """Reference per-epoch filter means: a high-resolution bootstrap filter
    averaged over independent replicates."""
    level = config.effective_truth_level()
    totals = np.zeros(data.horizon)
    for rep in range(config.truth_replicates):
        estimates, _ = _truth_replicate(config, data, level, size, rep)
        totals += np.asarray(estimates)
    return [float(v) for v in totals / config.truth_replicates]


def _truth_replicate(config: ExperimentConfig, data: DataSet, level: int,
                     size: int, rep: int):
    model, obs_model, x0 = config.build()
    phi = PHI_FUNCTIONS[config.phi]
    rng = stream(config.base_seed, "truth", level, rep)
    ens = initial_ensemble(x0, size)
    estimates = []
    for n in range(1, data.horizon + 1):
        ens, est = pf_step(model, obs_model, ens, data.epoch_observations(n),
                           level, rng, phi=phi, resampling=config.resampling)
        estimates.append(est.value)
    return estimates, None


# ---------------------------------------------------------------------------
# study orchestration

def _study_task(payload):
    kind, config, data, arg, replicate = payload
    if kind == "pf":
        eps = arg
        level = choose_level(eps)
        size = pf_particles(eps, config.pf_alloc_constant(), config.pf_floor(),
                            config.particle_budget)
        return run_pf(config, data, level, size, replicate, epsilon=eps)
    if kind == "mlpf":
        return run_mlpf(config, data, arg, replicate)
    if kind == "truth":
        level = config.effective_truth_level()
        estimates, _ = _truth_replicate(config, data, level, arg, replicate)
        return estimates
    raise ContractViolationError(f"unknown task kind {kind!r}")


def _execute(tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [_study_task(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_study_task, tasks, chunksize=1))


@dataclass
class StudyResult:
    rows: list
    truth: list
    truth_size: int
    wall_seconds: float


def largest_allocation(config: ExperimentConfig) -> int:
    """Largest multilevel per-level size S_l over the accuracy grid; the
    ground-truth filter is sized as a multiple of this."""
    sizes = []
    for eps in config.eps_grid():
        sizes.extend(allocate_particles(eps, choose_level(eps),
                                        config.alloc_constant,
                                        config.min_particles,
                                        config.particle_budget))
    return max(sizes)


def run_study(config: ExperimentConfig, data: DataSet,
              methods: Sequence[str] = ("pf", "mlpf")) -> StudyResult:
    """Full sweep of the requested methods over the accuracy grid, scored
    against the ground-truth filter."""
    for m in methods:
        if m not in ("pf", "mlpf"):
            raise ConfigError(f"unknown method {m!r}")
    started = time.perf_counter()
    workers = config.worker_count()
    truth_size = config.truth_factor * largest_allocation(config)

    tasks = [("truth", config, data, truth_size, rep)
             for rep in range(config.truth_replicates)]
    truth_parts = _execute(tasks, workers)
    truth = [float(v) for v in np.mean(np.asarray(truth_parts), axis=0)]

    tasks = []
    for method in methods:
        for eps in config.eps_grid():
            for rep in range(config.replicates):
                tasks.append((method, config, data, eps, rep))
    results = _execute(tasks, workers)

    rows = []
    for batch in results:
        for row in batch:
            row.sq_error = float((row.estimate - truth[row.epoch - 1]) ** 2)
            rows.append(row)
    rows.sort(key=lambda r: (r.method, -r.epsilon, r.replicate, r.epoch))
    return StudyResult(rows=rows, truth=truth, truth_size=truth_size,
                       wall_seconds=time.perf_counter() - started)


# ---------------------------------------------------------------------------
# regression and emission

def estimate_rate(points: Sequence[tuple]) -> RateFit:
    """OLS of log10(MSE) on log10(cost) over per-setting points."""
    usable = [(c, m) for c, m in points if c > 0 and m > 0]
    if len(usable) < 3:
        raise InsufficientDataError(
            f"rate regression needs >= 3 positive settings, got {len(usable)}")
    x = np.log10([c for c, _ in usable])
    y = np.log10([m for _, m in usable])
    n = len(usable)
    xbar, ybar = x.mean(), y.mean()
    sxx = float(np.sum((x - xbar) ** 2))
    if sxx == 0.0:
        raise InsufficientDataError("all settings have identical cost")
    slope = float(np.sum((x - xbar) * (y - ybar)) / sxx)
    intercept = ybar - slope * xbar
    resid = y - (intercept + slope * x)
    stderr = (math.sqrt(float(np.sum(resid ** 2)) / (n - 2) / sxx)
              if n > 2 else 0.0)
    return RateFit(slope=slope, intercept=float(intercept), stderr=stderr,
                   n_points=n)


def aggregate_rows(rows: Sequence[ResultRow]) -> list:
    """Mean MSE and mean per-replicate costs per (method, model, setting)."""
    if not rows:
        raise ContractViolationError("no rows to aggregate")
    groups = {}
    for r in rows:
        groups.setdefault((r.method, r.model, r.level, r.epsilon), []).append(r)

    def _eps_sort(item):
        (method, model, level, eps) = item[0]
        return (method, model, -eps if not math.isnan(eps) else 0.0, level)

    out = []
    for key, members in sorted(groups.items(), key=_eps_sort):
        method, model, level, eps = key
        mse = float(np.mean([r.sq_error for r in members]))
        by_rep = {}
        for r in members:
            by_rep[r.replicate] = (r.cost_euler, r.cost_candidates, r.cost_total)
        costs = np.array(list(by_rep.values()), dtype=float)
        out.append({
            "method": method, "model": model, "level": level, "epsilon": eps,
            "n": len(members), "mse": mse,
            "cost_euler": float(costs[:, 0].mean()),
            "cost_candidates": float(costs[:, 1].mean()),
            "cost_total": float(costs[:, 2].mean()),
        })
    return out


def rates_from_aggregates(aggregates, cost_basis: str = "euler") -> list:
    """Per-(method, model) rate fits in both orientations."""
    if cost_basis not in COST_BASES:
        raise ConfigError(f"cost basis must be one of {COST_BASES}")
    key = f"cost_{cost_basis}"
    groups = {}
    for agg in aggregates:
        groups.setdefault((agg["method"], agg["model"]), []).append(agg)
    out = []
    for (method, model), members in sorted(groups.items()):
        fit = estimate_rate([(m[key], m["mse"]) for m in members])
        out.append({
            "method": method, "model": model, "cost_basis": cost_basis,
            "n_points": fit.n_points, "slope_mse_vs_cost": fit.slope,
            "rate_cost_vs_mse": 1.0 / fit.slope, "intercept": fit.intercept,
            "stderr": fit.stderr,
        })
    return out


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    tmp = os.path.join(directory, f".{os.path.basename(path)}.tmp")
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _rows_to_csv(rows, columns) -> str:
    lines = [",".join(columns)]
    for row in rows:
        values = row.astuple() if isinstance(row, ResultRow) else \
            tuple(row[c] for c in columns)
        lines.append(",".join(_format_value(v) for v in values))
    return "\n".join(lines) + "\n"


def emit(rows: Sequence[ResultRow], fmt: str, path: str,
         aggregates=None) -> str:
    """Write result rows plus the plot-ready aggregate file alongside.

    Returns the aggregate path. CSV columns follow ROW_COLUMNS exactly; the
    JSON mirror carries the same records keyed by column name.
    """
    if not rows:
        raise ContractViolationError("refusing to emit an empty result set")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"format must be csv or json, got {fmt!r}")
    if aggregates is None:
        aggregates = aggregate_rows(rows)
    base, ext = os.path.splitext(path)
    agg_path = f"{base}.aggregate{ext}"
    if fmt == "csv":
        _atomic_write(path, _rows_to_csv(rows, ROW_COLUMNS))
        _atomic_write(agg_path, _rows_to_csv(aggregates, AGG_COLUMNS))
    else:
        payload = {
            "schema": "pdmp-mlpf/rows-v1",
            "seeding": "streams are PCG64 keyed by (base_seed, method tag, "
                       "level, replicate)",
            "rows": [dict(zip(ROW_COLUMNS, r.astuple())) for r in rows],
        }
        _atomic_write(path, json.dumps(payload, indent=1, sort_keys=True) + "\n")
        _atomic_write(agg_path, json.dumps(
            {"schema": "pdmp-mlpf/aggregates-v1", "aggregates": aggregates},
            indent=1, sort_keys=True) + "\n")
    return agg_path


def parse_rows(path: str) -> list:
    """Inverse of emit for the main rows file (csv or json by extension)."""
    if path.endswith(".json"):
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("schema") != "pdmp-mlpf/rows-v1":
            raise ConfigError(f"{path}: not a result file")
        records = payload["rows"]
    else:
        with open(path, "r", encoding="utf-8") as fh:
            lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
        header = tuple(lines[0].split(","))
        if header != ROW_COLUMNS:
            raise ConfigError(f"{path}: unexpected columns {header}")
        records = [dict(zip(ROW_COLUMNS, ln.split(","))) for ln in lines[1:]]
    rows = []
    for rec in records:
        rows.append(ResultRow(
            method=str(rec["method"]), model=str(rec["model"]),
            level=int(rec["level"]), epsilon=float(rec["epsilon"]),
            replicate=int(rec["replicate"]), epoch=int(rec["epoch"]),
            estimate=float(rec["estimate"]), sq_error=float(rec["sq_error"]),
            cost_euler=int(rec["cost_euler"]),
            cost_candidates=int(rec["cost_candidates"]),
            cost_total=int(rec["cost_total"]), seed=int(rec["seed"])))
    return rows
