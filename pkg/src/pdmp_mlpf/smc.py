"""Particle filtering: the bootstrap filter, its coupled two-level variant,
maximal-coupling resampling and the multilevel combination.

Filter epochs are unit time intervals. An epoch may contain several
observation times (the neuron experiments use two, spaced 0.5 apart); the
epoch weight multiplies the observation density at each of them along the
sampled path. Estimates are always computed from the weighted ensemble
before any resampling. Resampling is adaptive by default, triggered when the
effective sample size drops below half the particle count; a strict
every-step mode is available for algorithm-faithful tests. The coupled
filter gates resampling on the ESS of the coarse weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Sequence

import numpy as np

from .costs import CostCounter
from .coupling import CoupledPair, simulate_coupled
from .errors import (ContractViolationError, DegenerateWeightsError,
                     FilterCollapseError)
from .flow import FlowSpec, HybridState, Level
from .pdmp import PdmpModel, simulate


@dataclass(frozen=True)
class ObservationModel:
    """Observation density y | x and the spacing of the observation grid."""

    log_density: Callable[[HybridState, float], float]
    gap: float


@dataclass
class WeightedEnsemble:
    particles: list
    log_weights: np.ndarray
    time_index: int = 0
    last_resampled: bool = False

    @property
    def size(self) -> int:
        return len(self.particles)

    def normalized(self) -> np.ndarray:
        return _normalize_log_weights(self.log_weights)


@dataclass
class CoupledFilterState:
    pairs: list
    fine_log_weights: np.ndarray
    coarse_log_weights: np.ndarray
    records: list = dc_field(default_factory=list)
    time_index: int = 0
    last_resampled: bool = False

    @property
    def size(self) -> int:
        return len(self.pairs)


@dataclass(frozen=True)
class FilterEstimate:
    value: float
    time_index: int
    tag: str


def initial_ensemble(x0: HybridState, size: int) -> WeightedEnsemble:
    if size < 1:
        raise ContractViolationError("ensemble needs at least one particle")
    return WeightedEnsemble([x0] * size, np.zeros(size), time_index=0)


def initial_coupled_state(x0: HybridState, size: int) -> CoupledFilterState:
    if size < 1:
        raise ContractViolationError("ensemble needs at least one particle")
    return CoupledFilterState([CoupledPair(x0, x0)] * size,
                              np.zeros(size), np.zeros(size), time_index=0)


def _normalize_log_weights(log_w: np.ndarray) -> np.ndarray:
    m = np.max(log_w)
    if not np.isfinite(m):
        raise DegenerateWeightsError("all log-weights are -inf")
    w = np.exp(log_w - m)
    return w / w.sum()


def ess(weights: Sequence[float]) -> float:
    """Effective sample size 1 / sum(w^2) of a normalized weight vector."""
    w = np.asarray(weights, dtype=float)
    s2 = float(np.sum(w * w))
    if s2 <= 0.0:
        raise DegenerateWeightsError("weight vector has no mass")
    return 1.0 / s2


def _epoch_observations(y_n, t0: float, t1: float) -> list:
    if isinstance(y_n, (int, float, np.floating)):
        return [(t1, float(y_n))]
    obs = [(float(t), float(y)) for t, y in y_n]
    for t, _ in obs:
        if not (t0 < t <= t1):
            raise ContractViolationError(
                f"observation time {t} outside epoch ({t0}, {t1}]")
    return sorted(obs)


def multinomial_indices(weights: np.ndarray, n_out: int,
                        rng: np.random.Generator) -> np.ndarray:
    return rng.choice(len(weights), size=n_out, p=weights)


def maximal_coupling_indices(weights_fine, weights_coarse, n_out: int,
                             rng: np.random.Generator):
    """Ancestor indices for both sides under the maximal coupling.

    Each output slot draws one uniform; with probability sum(min(W1, W2)) a
    common ancestor comes from the normalized minimum distribution, otherwise
    the two sides draw independently from their normalized residuals. Either
    marginal is exactly multinomial under its own weights.
    """
    w1 = np.asarray(weights_fine, dtype=float)
    w2 = np.asarray(weights_coarse, dtype=float)
    if w1.shape != w2.shape or w1.ndim != 1:
        raise ContractViolationError("weight vectors must be 1-d and equal length")
    for w in (w1, w2):
        if np.any(w < 0) or abs(float(w.sum()) - 1.0) > 1e-9:
            raise ContractViolationError("weights must be normalized and non-negative")
    size = len(w1)
    m = np.minimum(w1, w2)
    alpha = float(m.sum())

    idx1 = np.empty(n_out, dtype=np.int64)
    idx2 = np.empty(n_out, dtype=np.int64)
    if alpha >= 1.0 - 1e-12:
        # zero residual mass: fully coupled
        common = np.ones(n_out, dtype=bool)
    else:
        common = rng.random(n_out) < alpha
    n_common = int(common.sum())
    if n_common:
        draws = rng.choice(size, size=n_common, p=m / alpha)
        idx1[common] = draws
        idx2[common] = draws
    n_indep = n_out - n_common
    if n_indep:
        r1 = w1 - m
        r2 = w2 - m
        idx1[~common] = rng.choice(size, size=n_indep, p=r1 / r1.sum())
        idx2[~common] = rng.choice(size, size=n_indep, p=r2 / r2.sum())
    return idx1, idx2, common


def maximal_coupling_resample(items_fine, items_coarse, weights_fine,
                              weights_coarse, rng: np.random.Generator):
    """Jointly resample two weighted lists, maximizing common ancestors."""
    if len(items_fine) != len(items_coarse):
        raise ContractViolationError("item lists must have equal length")
    if len(items_fine) != len(weights_fine) or len(items_coarse) != len(weights_coarse):
        raise ContractViolationError("items and weights must have equal length")
    idx1, idx2, common = maximal_coupling_indices(
        weights_fine, weights_coarse, len(items_fine), rng)
    fine = [items_fine[i] for i in idx1]
    coarse = [items_coarse[i] for i in idx2]
    return fine, coarse, int(common.sum())


def pf_step(model: PdmpModel, obs_model: ObservationModel,
            ensemble: WeightedEnsemble, y_n, level: FlowSpec,
            rng: np.random.Generator, phi: Callable[[HybridState], float],
            resampling: str = "adaptive", ess_fraction: float = 0.5,
            cost: Optional[CostCounter] = None):
    """One bootstrap-filter epoch: propagate, weight, estimate, then resample.

    Returns the ensemble advanced by one unit epoch and the pre-resampling
    estimate of phi under the filter at the epoch end.
    """
    t0 = float(ensemble.time_index)
    t1 = float(ensemble.time_index + 1)
    obs = _epoch_observations(y_n, t0, t1)
    eval_times = [t for t, _ in obs]
    size = ensemble.size
    flow_spec = Level(level) if isinstance(level, int) else level

    particles = []
    log_g = np.zeros(size)
    for i, x in enumerate(ensemble.particles):
        path, _, states, stats = simulate(
            model, flow_spec, x, t0, t1, rng, eval_times=eval_times)
        particles.append(path.endpoint)
        for (t_obs, y), x_t in zip(obs, states):
            log_g[i] += obs_model.log_density(x_t, y)
        if cost is not None:
            cost.add_stats(stats)
    if cost is not None:
        cost.add(likelihood=size * len(obs))

    log_w = ensemble.log_weights + log_g
    try:
        norm_w = _normalize_log_weights(log_w)
    except DegenerateWeightsError as exc:
        raise FilterCollapseError(
            f"all particle weights underflowed at epoch {ensemble.time_index + 1}"
        ) from exc
    phi_vals = np.array([phi(x) for x in particles])
    estimate = FilterEstimate(float(np.dot(norm_w, phi_vals)),
                              ensemble.time_index + 1, "pf")

    if resampling not in ("adaptive", "always"):
        raise ContractViolationError(f"unknown resampling mode {resampling!r}")
    trigger = resampling == "always" or ess(norm_w) < ess_fraction * size
    if trigger:
        idx = multinomial_indices(norm_w, size, rng)
        particles = [particles[i] for i in idx]
        log_w = np.zeros(size)
    new_ens = WeightedEnsemble(particles, log_w, ensemble.time_index + 1,
                               last_resampled=trigger)
    return new_ens, estimate


def coupled_pf_step(model: PdmpModel, obs_model: ObservationModel,
                    state: CoupledFilterState, y_n, level: Level,
                    rng: np.random.Generator, phi: Callable[[HybridState], float],
                    resampling: str = "adaptive", ess_fraction: float = 0.5,
                    cost: Optional[CostCounter] = None):
    """One epoch of the coupled filter at levels (l, l-1).

    Fine weights multiply the observation densities along the fine leg;
    coarse weights additionally carry the per-interval change-of-measure
    factor. Resampling is gated on the coarse ESS and performed jointly by
    the maximal coupling.
    """
    lvl = Level(level) if isinstance(level, int) else level
    t0 = float(state.time_index)
    t1 = float(state.time_index + 1)
    obs = _epoch_observations(y_n, t0, t1)
    eval_times = [t for t, _ in obs]
    size = state.size

    fine_states, coarse_states = [], []
    records = []
    log_g_fine = np.zeros(size)
    log_g_coarse = np.zeros(size)
    for i, pair in enumerate(state.pairs):
        tr = simulate_coupled(model, pair, t0, t1, lvl, rng, eval_times=eval_times)
        fine_states.append(tr.pair_out.fine)
        coarse_states.append(tr.pair_out.coarse)
        records.append(tr.record)
        for (t_obs, y), xf, xc in zip(obs, tr.fine_evals, tr.coarse_evals):
            log_g_fine[i] += obs_model.log_density(xf, y)
            log_g_coarse[i] += obs_model.log_density(xc, y)
        log_g_coarse[i] += tr.log_weight
        if cost is not None:
            cost.add_stats(tr.stats)
    if cost is not None:
        cost.add(likelihood=2 * size * len(obs))

    fine_lw = state.fine_log_weights + log_g_fine
    coarse_lw = state.coarse_log_weights + log_g_coarse
    try:
        g_fine = _normalize_log_weights(fine_lw)
        g_coarse = _normalize_log_weights(coarse_lw)
    except DegenerateWeightsError as exc:
        raise FilterCollapseError(
            f"coupled filter collapsed at epoch {state.time_index + 1}") from exc

    n = state.time_index + 1
    fine_est = FilterEstimate(
        float(np.dot(g_fine, [phi(x) for x in fine_states])), n, "cpf-fine")
    coarse_est = FilterEstimate(
        float(np.dot(g_coarse, [phi(x) for x in coarse_states])), n, "cpf-coarse")

    if resampling not in ("adaptive", "always"):
        raise ContractViolationError(f"unknown resampling mode {resampling!r}")
    trigger = resampling == "always" or ess(g_coarse) < ess_fraction * size
    if trigger:
        idx1, idx2, _ = maximal_coupling_indices(g_fine, g_coarse, size, rng)
        pairs = [CoupledPair(fine_states[a], coarse_states[b])
                 for a, b in zip(idx1, idx2)]
        fine_lw = np.zeros(size)
        coarse_lw = np.zeros(size)
    else:
        pairs = [CoupledPair(f, c) for f, c in zip(fine_states, coarse_states)]
    new_state = CoupledFilterState(pairs, fine_lw, coarse_lw, records, n,
                                   last_resampled=trigger)
    return new_state, fine_est, coarse_est


def ml_estimate(pf_estimate_level1, difference_estimates=None) -> float:
    """Multilevel combination: level-1 value plus telescoping differences.

    ``difference_estimates`` maps level l (2..L, contiguous) to a
    (fine, coarse) pair of estimates from the coupled filter at that level.
    """
    def _value(e):
        return e.value if isinstance(e, FilterEstimate) else float(e)

    total = _value(pf_estimate_level1)
    if not difference_estimates:
        return total
    levels = sorted(difference_estimates)
    top = levels[-1]
    if levels != list(range(2, top + 1)):
        raise ContractViolationError(
            f"difference estimates must cover levels 2..{top}, got {levels}")
    for l in levels:
        fine, coarse = difference_estimates[l]
        total += _value(fine) - _value(coarse)
    return total
