"""PDMP model definition and the Poisson-thinning path simulator.

A path over [t0, t1] is generated by proposing candidate event times from a
homogeneous Poisson process of rate ``rate_bound`` and accepting each with
probability rate(x)/rate_bound evaluated on the flowed state. Between events
the state follows the supplied flow (exact or discretized); at accepted
events the jump kernel moves the mode, never the continuous coordinates.

The simulator records everything needed to replay the same event structure
on a different flow: all candidate times, the acceptance uniforms, and the
post-jump states. The coupling module plugs in through the observer hook so
both discretization levels see the identical random input.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional

import numpy as np

from .errors import ContractViolationError, RateBoundViolationError
from .flow import (FlowSpec, HybridState, Level, VectorField, delta,
                   make_walker, validate_state)


@dataclass(frozen=True)
class JumpKernel:
    """Mode transition kernel. ``sample`` consumes exactly one uniform so a
    coarse replay stays aligned with the fine stream; ``density`` is the
    transition probability mass of post given pre."""

    sample: Callable[[HybridState, float], HybridState]
    density: Callable[[HybridState, HybridState], float]


@dataclass(frozen=True)
class PdmpModel:
    field: VectorField
    rate: Callable[[HybridState], float]
    rate_bound: float
    jump: JumpKernel
    mode_count: Optional[int] = None
    state_box: Optional[tuple] = None  # ((lo, hi), ...) per coordinate of v
    rate_lower: Optional[float] = None  # declared inf of rate on the box
    rate_upper: Optional[float] = None  # declared sup of rate on the box
    q_ratio_bounds: tuple = (0.0, math.inf)
    exact_flow: Optional[object] = None

    def validate_rate(self, x: HybridState, t: float, lam: float) -> None:
        if not (lam > 0.0):
            raise RateBoundViolationError(
                f"rate {lam} is not positive at t={t}", time=t, state=x, rate=lam)
        if lam > self.rate_bound:
            raise RateBoundViolationError(
                f"rate {lam} exceeds bound {self.rate_bound} at t={t}",
                time=t, state=x, rate=lam)
        if self.state_box is not None:
            for vi, (lo, hi) in zip(x.v, self.state_box):
                if not (lo <= vi <= hi):
                    raise RateBoundViolationError(
                        f"state coordinate {vi} left validated box [{lo}, {hi}] at t={t}",
                        time=t, state=x, rate=lam)

    def checked_rate(self, x: HybridState, t: float) -> float:
        lam = self.rate(x)
        self.validate_rate(x, t, lam)
        return lam


@dataclass
class PathRecord:
    """Auxiliary record of one simulated interval.

    candidate_times are the proposed Poisson times, accepted_indices the
    1-based positions of the accepted ones, jump_states the post-jump states
    and uniforms the acceptance draws. Jump time k is
    candidate_times[accepted_indices[k] - 1].
    """

    t0: float
    t1: float
    n_star: int = 0
    n_jumps: int = 0
    candidate_times: list = dc_field(default_factory=list)
    accepted_indices: list = dc_field(default_factory=list)
    jump_states: list = dc_field(default_factory=list)
    uniforms: list = dc_field(default_factory=list)

    def jump_times(self) -> list:
        return [self.candidate_times[k - 1] for k in self.accepted_indices]


@dataclass
class PdmpPath:
    """Skeleton of a piecewise deterministic path: the state at each segment
    start plus the endpoint.  Everything in between is the deterministic flow."""

    segments: list  # [(start time, start state)], first entry is (t0, x0)
    endpoint: HybridState
    t1: float


class _CountingRate:
    """Wraps the model rate check so callers can harvest evaluation counts."""

    __slots__ = ("model", "n")

    def __init__(self, model):
        self.model = model
        self.n = 0

    def __call__(self, x, t):
        self.n += 1
        return self.model.checked_rate(x, t)


def simulate(model: PdmpModel, flow_spec: FlowSpec, x0: HybridState, t0: float,
             t1: float, rng: np.random.Generator, eval_times=None, observer=None):
    """Run the thinning loop over [t0, t1].

    Returns (path, record, evals, stats) where evals holds the state at each
    requested eval time and stats is a dict of operation counts. When an
    observer is supplied, its hooks fire at every candidate and jump with the
    fine-leg information; the observer draws nothing from rng.
    """
    if not (t0 < t1):
        raise ContractViolationError(f"need t0 < t1, got [{t0}, {t1}]")
    validate_state(x0, dim=model.field.dim, mode_count=model.mode_count)

    lam_star = model.rate_bound
    rate = _CountingRate(model)
    record = PathRecord(t0=t0, t1=t1)
    segments = [(t0, x0)]
    walker = make_walker(model.field, flow_spec, x0, t0)
    n_euler = getattr(walker, "n_evals", 0)

    pending = list(eval_times) if eval_times is not None else []
    if any(te < t0 or te > t1 for te in pending):
        raise ContractViolationError("eval times must lie within [t0, t1]")
    pending.sort()
    evals = []
    ei = 0

    t_star = t0
    k_star = 0
    while True:
        t_star = t_star + rng.exponential(1.0 / lam_star)
        if t_star > t1:
            break
        k_star += 1
        # states requested strictly before this candidate
        while ei < len(pending) and pending[ei] < t_star:
            evals.append(walker.advance_to(pending[ei]))
            ei += 1
        x_cand = walker.advance_to(t_star)
        lam = rate(x_cand, t_star)
        w = rng.random()
        record.candidate_times.append(t_star)
        record.uniforms.append(w)
        accepted = w <= lam / lam_star
        if observer is not None:
            observer.candidate(t_star, x_cand, lam, accepted)
        if accepted:
            record.n_jumps += 1
            record.accepted_indices.append(k_star)
            x_post = model.jump.sample(x_cand, rng.random())
            if x_post.v != x_cand.v:
                raise ContractViolationError(
                    "jump kernel altered continuous coordinates")
            record.jump_states.append(x_post)
            segments.append((t_star, x_post))
            n_euler += getattr(walker, "n_evals", 0)
            walker = make_walker(model.field, flow_spec, x_post, t_star)
            if observer is not None:
                observer.jump(t_star, x_cand, x_post)
            # an eval time equal to the jump time sees the post-jump state
            while ei < len(pending) and pending[ei] == t_star:
                evals.append(walker.advance_to(pending[ei]))
                ei += 1

    record.n_star = k_star
    while ei < len(pending):
        evals.append(walker.advance_to(pending[ei]))
        ei += 1
    endpoint = walker.advance_to(t1)
    n_euler += getattr(walker, "n_evals", 0)
    path = PdmpPath(segments=segments, endpoint=endpoint, t1=t1)
    stats = {"euler_steps": nominal_steps(flow_spec, t0, t1),
             "candidates": k_star, "rate_evals": rate.n,
             "field_evals": n_euler}
    return path, record, evals, stats


def nominal_steps(flow_spec: FlowSpec, t0: float, t1: float) -> int:
    """Solver cost of covering [t0, t1] at the spec's resolution.

    This is the grid-cell count (t1 - t0) / Delta_l, the quantity that
    doubles per level. Jump events re-anchor the walker's grid and add a few
    field evaluations per segment; that work is proportional to the event
    count and is accounted with the candidates, never here, so the Euler
    counter scales exactly like the solver resolution.
    """
    if isinstance(flow_spec, Level):
        return max(1, round((t1 - t0) / delta(flow_spec)))
    return 0


def evaluate_path(path: PdmpPath, model: PdmpModel, flow_spec: FlowSpec,
                  query_time: float) -> HybridState:
    """State of a simulated path at an arbitrary time in its domain."""
    t0 = path.segments[0][0]
    if query_time < t0 or query_time > path.t1:
        raise ContractViolationError(
            f"query {query_time} outside path domain [{t0}, {path.t1}]")
    starts = [s for s, _ in path.segments]
    idx = bisect.bisect_right(starts, query_time) - 1
    seg_t, seg_x = path.segments[idx]
    walker = make_walker(model.field, flow_spec, seg_x, seg_t)
    return walker.advance_to(query_time)


def replay_path(model: PdmpModel, flow_spec: FlowSpec, x0: HybridState,
                record: PathRecord) -> PdmpPath:
    """Rebuild the trajectory of a recorded interval without randomness."""
    segments = [(record.t0, x0)]
    for k, x_post in zip(record.accepted_indices, record.jump_states):
        segments.append((record.candidate_times[k - 1], x_post))
    seg_t, seg_x = segments[-1]
    endpoint = make_walker(model.field, flow_spec, seg_x, seg_t).advance_to(record.t1)
    return PdmpPath(segments=segments, endpoint=endpoint, t1=record.t1)
