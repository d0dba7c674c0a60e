"""Coupled simulation of consecutive discretization levels.

The fine process at level l is simulated exactly as in the single-level
thinning loop; the coarse process at level l-1 is replayed deterministically
on the same Poisson candidates, the same acceptance decisions (so jump times
coincide) and the same mode transitions. The price of forcing the coarse
process onto the fine event structure is a change-of-measure weight

    R = prod over candidates of (coarse factor / fine factor)
        * prod over jumps of (coarse jump density / fine jump density)

where an accepted candidate contributes rate(coarse)/rate(fine) and a
rejected one (1 - rate(coarse)/bound) / (1 - rate(fine)/bound). The weight
accumulates in log space; hundreds of factors would underflow otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import NamedTuple

import numpy as np

from .errors import ContractViolationError, MeasureSingularityError
from .flow import EulerWalker, HybridState, Level
from .pdmp import PathRecord, PdmpModel, PdmpPath, nominal_steps, simulate


class CoupledPair(NamedTuple):
    fine: HybridState
    coarse: HybridState


@dataclass
class CoupledTransition:
    pair_out: CoupledPair
    record: PathRecord
    log_weight: float
    fine_path: PdmpPath
    coarse_path: PdmpPath
    fine_evals: list = dc_field(default_factory=list)
    coarse_evals: list = dc_field(default_factory=list)
    stats: dict = dc_field(default_factory=dict)


class _CoarseLeg:
    """Observer replaying the fine event structure on the coarse flow."""

    def __init__(self, model: PdmpModel, x0: HybridState, t0: float,
                 coarse_level: Level, eval_times):
        self.model = model
        self.level = coarse_level
        self.walker = EulerWalker(model.field, x0, t0, coarse_level)
        self.segments = [(t0, x0)]
        self.log_weight = 0.0
        self.n_euler = 0
        self._pending = sorted(eval_times) if eval_times is not None else []
        self._ei = 0
        self.evals = []
        self._cand_state = None

    def _drain(self, limit, strict):
        while self._ei < len(self._pending):
            te = self._pending[self._ei]
            if te > limit or (strict and te == limit):
                break
            self.evals.append(self.walker.advance_to(te))
            self._ei += 1

    def candidate(self, t_star, fine_state, lam_fine, accepted):
        self._drain(t_star, strict=True)
        x_c = self.walker.advance_to(t_star)
        self._cand_state = x_c
        lam_c = self.model.rate(x_c)
        lam_star = self.model.rate_bound
        if not accepted and lam_c >= lam_star:
            raise MeasureSingularityError(
                f"coarse rate {lam_c} >= bound {lam_star} at rejected candidate "
                f"t={t_star}: coarse law not absolutely continuous")
        self.model.validate_rate(x_c, t_star, lam_c)
        if accepted:
            self.log_weight += math.log(lam_c) - math.log(lam_fine)
        else:
            self.log_weight += (math.log1p(-lam_c / lam_star)
                                - math.log1p(-lam_fine / lam_star))

    def jump(self, t_star, fine_pre, fine_post):
        x_c_pre = self._cand_state
        x_c_post = HybridState(fine_post.u, x_c_pre.v)
        q_coarse = self.model.jump.density(x_c_pre, x_c_post)
        q_fine = self.model.jump.density(fine_pre, fine_post)
        if q_coarse > 0.0:
            self.log_weight += math.log(q_coarse) - math.log(q_fine)
        else:
            # forced mode move unreachable under the coarse law
            self.log_weight = -math.inf
        self.n_euler += self.walker.n_evals
        self.walker = EulerWalker(self.model.field, x_c_post, t_star, self.level)
        self.segments.append((t_star, x_c_post))
        self._drain(t_star, strict=False)

    def finish(self, t1):
        self._drain(t1, strict=False)
        endpoint = self.walker.advance_to(t1)
        self.n_euler += self.walker.n_evals
        return endpoint


def simulate_coupled(model: PdmpModel, pair_in: CoupledPair, t0: float, t1: float,
                     level: Level, rng: np.random.Generator,
                     eval_times=None) -> CoupledTransition:
    """Simulate level l and replay level l-1 on shared randomness.

    The fine marginal consumes the generator exactly as ``pdmp.simulate``
    would, so with a common seed the fine leg reproduces a single-level run
    bit for bit.
    """
    if level.l < 2:
        raise ContractViolationError(f"coupled simulation needs level >= 2, got {level.l}")
    coarse = _CoarseLeg(model, pair_in.coarse, t0, Level(level.l - 1), eval_times)
    fine_path, record, fine_evals, stats = simulate(
        model, level, pair_in.fine, t0, t1, rng, eval_times=eval_times,
        observer=coarse)
    coarse_end = coarse.finish(t1)
    coarse_path = PdmpPath(segments=coarse.segments, endpoint=coarse_end, t1=t1)
    merged = {
        "euler_steps": stats["euler_steps"]
        + nominal_steps(Level(level.l - 1), t0, t1),
        # each candidate is processed once per leg
        "candidates": 2 * stats["candidates"],
        "rate_evals": 2 * stats["rate_evals"],
        "field_evals": stats["field_evals"] + coarse.n_euler,
    }
    return CoupledTransition(
        pair_out=CoupledPair(fine_path.endpoint, coarse_end),
        record=record,
        log_weight=coarse.log_weight,
        fine_path=fine_path,
        coarse_path=coarse_path,
        fine_evals=fine_evals,
        coarse_evals=coarse.evals,
        stats=merged,
    )


def weight_envelope(model: PdmpModel, record: PathRecord) -> tuple:
    """Almost-sure bounds (c_lo**n_star, c_hi**n_star) on the weight.

    Each candidate contributes one factor: an accepted one is bounded by the
    rate-ratio bounds times the jump-density-ratio bounds, a rejected one by
    the rejection-factor bounds. The per-candidate envelope is the worst case
    over the two kinds.
    """
    lam_lo, lam_hi = model.rate_lower, model.rate_upper
    if lam_lo is None or lam_hi is None:
        raise ContractViolationError(
            "weight_envelope needs declared rate_lower/rate_upper bounds")
    if not (0.0 < lam_lo <= lam_hi <= model.rate_bound):
        raise ContractViolationError(
            f"inconsistent rate bounds ({lam_lo}, {lam_hi}, {model.rate_bound})")
    lam_star = model.rate_bound
    q_lo, q_hi = model.q_ratio_bounds

    accept_lo, accept_hi = lam_lo / lam_hi, lam_hi / lam_lo
    rej_hi_num = 1.0 - lam_lo / lam_star
    rej_lo_num = 1.0 - lam_hi / lam_star
    reject_lo = rej_lo_num / rej_hi_num
    reject_hi = math.inf if rej_lo_num == 0.0 else rej_hi_num / rej_lo_num

    c_lo = min(accept_lo * q_lo, reject_lo)
    c_hi = max(accept_hi * q_hi, reject_hi)
    n = record.n_star
    return (c_lo ** n, c_hi ** n)
