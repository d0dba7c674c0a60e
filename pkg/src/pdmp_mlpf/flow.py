"""Hybrid states, vector fields and their discretized flows.

The continuous part of a hybrid state moves along v' = f(t, x) between jumps.
At discretization level l the flow is approximated by forward Euler with the
dyadic step 2^-l on a grid anchored at the segment start, plus one partial
step to reach off-grid times. The discrete mode u is never altered by a flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Union

from .errors import ContractViolationError, NumericFailureError

MAX_LEVEL = 60


class HybridState(NamedTuple):
    """State x = (u, v): discrete mode u plus continuous coordinates v."""

    u: int
    v: tuple


def validate_state(x: HybridState, dim: int | None = None, mode_count: int | None = None) -> None:
    if dim is not None and len(x.v) != dim:
        raise ContractViolationError(f"state has dimension {len(x.v)}, expected {dim}")
    if mode_count is not None and not (0 <= x.u < mode_count):
        raise ContractViolationError(f"mode {x.u} outside range [0, {mode_count})")
    for vi in x.v:
        if not math.isfinite(vi):
            raise ContractViolationError(f"non-finite coordinate in state {x}")


@dataclass(frozen=True)
class VectorField:
    """Right-hand side of the between-jump ODE.

    ``eval(t, u, v)`` returns the derivative of v as a tuple; it must never
    depend on (or alter) u in a way that moves the mode. The absolute time
    argument exists for externally driven models and is ignored by
    autonomous ones.
    """

    eval: Callable[[float, int, tuple], tuple]
    dim: int


class Level(NamedTuple):
    """Dyadic discretization level; the Euler step is exactly 2^-l."""

    l: int


@dataclass(frozen=True)
class ExactFlow:
    """Closed-form flow for models where the ODE is solvable analytically.

    ``at(x, t0, t)`` returns the state at absolute time t for the segment
    anchored at (t0, x).
    """

    at: Callable[[HybridState, float, float], HybridState]


FlowSpec = Union[Level, ExactFlow]


def delta(level: Level) -> float:
    """Step size 2^-l, exact in binary floating point."""
    if level.l < 0 or level.l > MAX_LEVEL:
        raise ContractViolationError(f"level {level.l} outside [0, {MAX_LEVEL}]")
    return math.ldexp(1.0, -level.l)


class EulerWalker:
    """Monotone evaluator of the discretized flow on one segment.

    Queries must come with non-decreasing times. Full steps land on the grid
    t0 + j*2^-l; a query strictly between nodes takes a single partial Euler
    step from the most recent node, which is exactly the piecewise-linear
    interpolant. The field value at the current node is cached, so repeated
    queries between the same two nodes cost no extra field evaluations.
    """

    __slots__ = ("_eval", "delta", "t0", "u", "_j", "_node_v", "_node_f", "n_evals")

    def __init__(self, field: VectorField, x: HybridState, t0: float, level: Level):
        self._eval = field.eval
        self.delta = delta(level)
        self.t0 = t0
        self.u = x.u
        self._j = 0
        self._node_v = x.v
        self._node_f = None
        self.n_evals = 0

    def _field_at_node(self):
        f = self._node_f
        if f is None:
            t = self.t0 + self._j * self.delta
            f = self._eval(t, self.u, self._node_v)
            self.n_evals += 1
            for fi in f:
                if not math.isfinite(fi):
                    raise NumericFailureError(
                        f"vector field returned non-finite value at t={t}",
                        time=t, state=HybridState(self.u, self._node_v))
            self._node_f = f
        return f

    def advance_to(self, t: float) -> HybridState:
        d = self.t0 + (self._j + 1) * self.delta
        while d <= t:
            f = self._field_at_node()
            h = self.delta
            self._node_v = tuple(v + h * fv for v, fv in zip(self._node_v, f))
            self._node_f = None
            self._j += 1
            d = self.t0 + (self._j + 1) * self.delta
        h = t - (self.t0 + self._j * self.delta)
        if h == 0.0:
            return HybridState(self.u, self._node_v)
        f = self._field_at_node()
        return HybridState(self.u, tuple(v + h * fv for v, fv in zip(self._node_v, f)))


class ExactWalker:
    """Same interface as EulerWalker for a closed-form flow."""

    __slots__ = ("_at", "t0", "_x0", "n_evals")

    def __init__(self, exact: ExactFlow, x: HybridState, t0: float):
        self._at = exact.at
        self.t0 = t0
        self._x0 = x
        self.n_evals = 0

    def advance_to(self, t: float) -> HybridState:
        return self._at(self._x0, self.t0, t)


def make_walker(field: VectorField, flow_spec: FlowSpec, x: HybridState, t0: float):
    if isinstance(flow_spec, Level):
        return EulerWalker(field, x, t0, flow_spec)
    if isinstance(flow_spec, ExactFlow):
        return ExactWalker(flow_spec, x, t0)
    raise ContractViolationError(f"flow spec must be a Level or ExactFlow, got {flow_spec!r}")


def euler_flow_at(field: VectorField, x0: HybridState, t0: float, level: Level,
                  query_time: float) -> HybridState:
    """Discretized flow anchored at (t0, x0), evaluated at query_time."""
    if query_time < t0:
        raise ContractViolationError(f"query time {query_time} precedes anchor {t0}")
    return EulerWalker(field, x0, t0, level).advance_to(query_time)


def euler_flow(field: VectorField, x0: HybridState, t0: float, t1: float,
               level: Level) -> HybridState:
    """Discretized flow over [t0, t1]; the mode of the output equals the input's."""
    if t1 < t0:
        raise ContractViolationError(f"interval end {t1} precedes start {t0}")
    return EulerWalker(field, x0, t0, level).advance_to(t1)
