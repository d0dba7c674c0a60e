"""Small analytically tractable models used as test oracles."""

import math

from pdmp_mlpf.flow import ExactFlow, HybridState, VectorField
from pdmp_mlpf.pdmp import JumpKernel, PdmpModel
from pdmp_mlpf.smc import ObservationModel

ZERO_FIELD = VectorField(eval=lambda t, u, v: (0.0,), dim=1)
IDENTITY_FLOW = ExactFlow(at=lambda x, t0, t: x)


def flip_kernel():
    """Deterministic mode flip on {0, 1}; density 1 on the flip, 0 elsewhere."""
    def sample(x, w):
        return HybridState(1 - x.u, x.v)

    def density(pre, post):
        return 1.0 if post.u == 1 - pre.u else 0.0

    return JumpKernel(sample=sample, density=density)


def two_mode_model(lam=1.0, lam_star=2.0):
    """Zero field, constant rate, mode-flipping jumps on {0, 1}."""
    return PdmpModel(
        field=ZERO_FIELD,
        rate=lambda x: lam,
        rate_bound=lam_star,
        jump=flip_kernel(),
        mode_count=2,
        rate_lower=lam,
        rate_upper=lam,
        q_ratio_bounds=(1.0, 1.0),
        exact_flow=IDENTITY_FLOW,
    )


def gaussian_mode_obs(tau2=0.5):
    """Observation y ~ N(u, tau2): a v-independent statistic of the mode."""
    const = -0.5 * math.log(2.0 * math.pi * tau2)

    def log_density(x, y):
        d = y - float(x.u)
        return -d * d / (2.0 * tau2) + const

    return ObservationModel(log_density=log_density, gap=1.0)


def exact_two_mode_filter(u0, y, lam=1.0, tau2=0.5, horizon=1.0, phi=None,
                          truncation=30):
    """Exact one-epoch filter mean for the two-mode model.

    Sums the thinned-jump-count law directly: the accepted-jump count over the
    epoch is Poisson(lam * horizon) and k jumps flip the mode k times, so the
    prior mass of each terminal mode is a Poisson parity sum. The observation
    reweights the two modes.
    """
    if phi is None:
        phi = lambda x: float(x.u)
    mu = lam * horizon
    mass = {0: 0.0, 1: 0.0}
    for k in range(truncation + 1):
        p_k = math.exp(-mu) * mu ** k / math.factorial(k)
        mass[(u0 + k) % 2] += p_k
    num = 0.0
    den = 0.0
    for u, p in mass.items():
        g = math.exp(-(y - u) ** 2 / (2.0 * tau2))
        num += p * g * phi(HybridState(u, (0.0,)))
        den += p * g
    return num / den


class ScriptedRng:
    """Deterministic stand-in for a Generator: plays back queued draws."""

    def __init__(self, exponentials=(), uniforms=()):
        self._exp = list(exponentials)
        self._uni = list(uniforms)

    def exponential(self, scale):
        return self._exp.pop(0)

    def random(self, size=None):
        if size is None:
            return self._uni.pop(0)
        return [self._uni.pop(0) for _ in range(size)]
