"""Stochastic ion-channel neuron models as PDMPs.

Two conductance-based models are provided. Both have a single continuous
coordinate, the membrane potential V, and a discrete mode u counting open
potassium channels out of a population of N. Channels open at rate
(N - u) * alpha(V) and close at rate u * beta(V); each jump moves u by one
and leaves V untouched. Between jumps V follows the usual current-balance
ODE with the stochastic conductance scaled by u / N.

Observations are noisy readings of V on a regular grid: Y_k ~ N(V at k*gap,
tau2).

Rate bounds: thinning needs a bound on the total jump rate. For the
Morris-Lecar model the rate is maximized at a corner of {0, N} x [V box], so
the bound is taken as a small headroom factor times that corner maximum over
a validation box for V. For the potassium-leak model the same corner
construction is useless: the (u = N, V = low) corner is dynamically
unreachable but would inflate the bound by two orders of magnitude, so the
default bound is a calibrated constant sitting well above the rate observed
along simulated trajectories. Either way the simulator aborts the moment any
evaluated rate exceeds the bound, so a misconfigured bound can bias nothing.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields as dc_fields
from typing import Optional

import numpy as np

from .errors import ConfigError
from .flow import HybridState, VectorField
from .pdmp import JumpKernel, PdmpModel
from .smc import ObservationModel

_BOX_GRID = 4001


def _birth_death_kernel(alpha, beta, n_channels: int) -> JumpKernel:
    def sample(x: HybridState, w: float) -> HybridState:
        u = x.u
        v = x.v[0]
        a = (n_channels - u) * alpha(v)
        b = u * beta(v)
        p_up = a / (a + b)
        return HybridState(u + 1 if w <= p_up else u - 1, x.v)

    def density(pre: HybridState, post: HybridState) -> float:
        u = pre.u
        v = pre.v[0]
        a = (n_channels - u) * alpha(v)
        b = u * beta(v)
        lam = a + b
        if lam <= 0.0:
            return 0.0
        if post.u == u + 1:
            return a / lam
        if post.u == u - 1:
            return b / lam
        return 0.0

    return JumpKernel(sample=sample, density=density)


def _corner_rate_range(alpha, beta, n_channels, v_lo, v_hi):
    """Extrema of (N-u)a + u*b over u in {0..N}, V in the box.

    The rate is linear in u, so both extrema sit at u = 0 or u = N; V is
    scanned on a dense grid including the endpoints.
    """
    grid = np.linspace(v_lo, v_hi, _BOX_GRID)
    lo, hi = math.inf, 0.0
    for v in grid:
        a = n_channels * alpha(float(v))
        b = n_channels * beta(float(v))
        hi = max(hi, a, b)
        lo = min(lo, min(a, b))
    return lo, hi


@dataclass(frozen=True)
class MorrisLecarParams:
    C_m: float = 20.0
    g_Ca: float = 4.4
    g_K: float = 8.0
    g_L: float = 2.0
    E_Ca: float = 120.0
    E_K: float = -84.0
    E_L: float = -60.0
    I_ext: float = 100.0
    lambda_n_bar: float = 0.04
    V1: float = -1.2
    V2: float = 18.0
    V3: float = 2.0
    V4: float = 30.0
    N_n: int = 100
    V0: float = -20.0
    n0: float = 0.0
    delta: float = 0.5
    tau2: float = 0.1
    v_lo: float = -100.0
    v_hi: float = 100.0
    bound_factor: float = 1.05


@dataclass(frozen=True)
class IkIlParams:
    g_K: float = 36.0
    g_L: float = 0.3
    E_K: float = -77.0
    E_L: float = -54.4
    I_amp: float = 10.0
    I_period: float = 20.0
    N_mK: int = 100
    V0: float = -65.0
    mK0: float = 0.0
    delta: float = 0.5
    tau2: float = 0.2
    v_lo: float = -100.0
    v_hi: float = 0.0
    # calibrated thinning bound; None switches to the corner-maximum recipe
    rate_bound: Optional[float] = 150.0
    bound_factor: float = 1.05


def ml_model(params: MorrisLecarParams = MorrisLecarParams()) -> PdmpModel:
    """Morris-Lecar potassium-channel PDMP with parameters from the table."""
    p = params
    inv_cm = 1.0 / p.C_m
    inv_n = 1.0 / p.N_n
    inv_v2 = 1.0 / p.V2
    inv_v4 = 1.0 / p.V4
    half_inv_v4 = 0.5 / p.V4

    def n_inf(v):
        return 0.5 * (1.0 + math.tanh((v - p.V3) * inv_v4))

    def lam_n(v):
        return p.lambda_n_bar * math.cosh((v - p.V3) * half_inv_v4)

    def alpha(v):
        return lam_n(v) * n_inf(v)

    def beta(v):
        return lam_n(v) * (1.0 - n_inf(v))

    def field_eval(t, u, v):
        V = v[0]
        m_inf = 0.5 * (1.0 + math.tanh((V - p.V1) * inv_v2))
        dv = (-p.g_Ca * m_inf * (V - p.E_Ca)
              - p.g_K * (u * inv_n) * (V - p.E_K)
              - p.g_L * (V - p.E_L) + p.I_ext) * inv_cm
        return (dv,)

    def rate(x: HybridState) -> float:
        V = x.v[0]
        return (p.N_n - x.u) * alpha(V) + x.u * beta(V)

    rate_lo, rate_hi = _corner_rate_range(alpha, beta, p.N_n, p.v_lo, p.v_hi)
    return PdmpModel(
        field=VectorField(eval=field_eval, dim=1),
        rate=rate,
        rate_bound=p.bound_factor * rate_hi,
        jump=_birth_death_kernel(alpha, beta, p.N_n),
        mode_count=p.N_n + 1,
        state_box=((p.v_lo, p.v_hi),),
        rate_lower=rate_lo,
        rate_upper=rate_hi,
    )


def alpha_mk(v: float) -> float:
    """Opening rate 0.1 x / (1 - exp(-x / 10)) with x = V + 40.

    The singularity at x = 0 is removable; the exact limit 1.0 is substituted
    inside |x| < 1e-12 and expm1 keeps the expression stable nearby.
    """
    x = v + 40.0
    if abs(x) < 1e-12:
        return 1.0
    return 0.1 * x / (-math.expm1(-x / 10.0))


def beta_mk(v: float) -> float:
    return 4.0 * math.exp(-(v + 65.0) / 18.0)


def ikil_model(params: IkIlParams = IkIlParams()) -> PdmpModel:
    """Potassium plus leak conductance PDMP with a sinusoidal external drive."""
    p = params
    inv_n = 1.0 / p.N_mK
    omega = 2.0 * math.pi / p.I_period

    def field_eval(t, u, v):
        V = v[0]
        dv = (-p.g_K * (u * inv_n) * (V - p.E_K)
              - p.g_L * (V - p.E_L)
              + p.I_amp * math.sin(omega * t))
        return (dv,)

    def rate(x: HybridState) -> float:
        V = x.v[0]
        return (p.N_mK - x.u) * alpha_mk(V) + x.u * beta_mk(V)

    rate_lo, corner_hi = _corner_rate_range(alpha_mk, beta_mk, p.N_mK, p.v_lo, p.v_hi)
    if params.rate_bound is not None:
        bound = params.rate_bound
        rate_hi = bound
    else:
        bound = p.bound_factor * corner_hi
        rate_hi = corner_hi
    return PdmpModel(
        field=VectorField(eval=field_eval, dim=1),
        rate=rate,
        rate_bound=bound,
        jump=_birth_death_kernel(alpha_mk, beta_mk, p.N_mK),
        mode_count=p.N_mK + 1,
        state_box=((p.v_lo, p.v_hi),),
        rate_lower=rate_lo,
        rate_upper=rate_hi,
    )


def gaussian_obs(delta: float, tau2: float) -> ObservationModel:
    """Gaussian readings of the membrane potential: Y ~ N(V, tau2)."""
    if tau2 <= 0.0:
        raise ConfigError(f"observation variance must be positive, got {tau2}")
    const = -0.5 * math.log(2.0 * math.pi * tau2)
    inv2t = 0.5 / tau2

    def log_density(x: HybridState, y: float) -> float:
        d = y - x.v[0]
        return -d * d * inv2t + const

    return ObservationModel(log_density=log_density, gap=delta)


def initial_state(params) -> HybridState:
    if isinstance(params, MorrisLecarParams):
        return HybridState(int(round(params.n0 * params.N_n)), (params.V0,))
    if isinstance(params, IkIlParams):
        return HybridState(int(round(params.mK0 * params.N_mK)), (params.V0,))
    raise ConfigError(f"unknown parameter set {type(params).__name__}")


_PARAM_TYPES = {"ml": MorrisLecarParams, "ikil": IkIlParams}


def params_for(model_id: str):
    try:
        return _PARAM_TYPES[model_id]()
    except KeyError:
        raise ConfigError(f"unknown model id {model_id!r}; expected ml or ikil")


def build_model(model_id: str, params=None) -> PdmpModel:
    if params is None:
        params = params_for(model_id)
    if model_id == "ml":
        return ml_model(params)
    if model_id == "ikil":
        return ikil_model(params)
    raise ConfigError(f"unknown model id {model_id!r}; expected ml or ikil")


def load_params(path: str, model_id: str):
    """Read a flat `name = value` parameter file; unknown keys are rejected."""
    cls = type(params_for(model_id))
    field_map = {f.name: f for f in dc_fields(cls)}
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected `name = value`")
            name, _, text = line.partition("=")
            name = name.strip()
            text = text.strip()
            if name not in field_map:
                raise ConfigError(f"{path}:{lineno}: unknown parameter {name!r}")
            if name in values:
                raise ConfigError(f"{path}:{lineno}: duplicate parameter {name!r}")
            ftype = field_map[name].type
            try:
                if ftype == "int":
                    values[name] = int(text)
                elif text.lower() == "none":
                    values[name] = None
                else:
                    values[name] = float(text)
            except ValueError:
                raise ConfigError(f"{path}:{lineno}: bad value {text!r} for {name}")
    return cls(**values)


def save_params_template(path: str, model_id: str) -> None:
    params = params_for(model_id)
    lines = [f"# parameter file for model {model_id!r}; one `name = value` per line"]
    for f in dc_fields(type(params)):
        lines.append(f"{f.name} = {getattr(params, f.name)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
