"""Particle filter and resampling tests.

The resampler is pinned against exact enumeration of the two-branch mixture;
the filter against the closed-form two-mode filter computed by direct
summation over the jump-count law.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats as sps

from pdmp_mlpf.costs import CostCounter
from pdmp_mlpf.errors import (ContractViolationError, DegenerateWeightsError)
from pdmp_mlpf.flow import HybridState, Level
from pdmp_mlpf.smc import (CoupledFilterState, FilterEstimate, WeightedEnsemble,
                           coupled_pf_step, ess, initial_coupled_state,
                           initial_ensemble, maximal_coupling_indices,
                           maximal_coupling_resample, ml_estimate, pf_step)
from pdmp_mlpf.seeding import stream
from toymodel import (exact_two_mode_filter, gaussian_mode_obs, two_mode_model)

X0 = HybridState(0, (0.0,))


class TestEss:
    def test_uniform(self):
        assert ess(np.full(100, 0.01)) == pytest.approx(100.0)

    def test_one_hot(self):
        w = np.zeros(50)
        w[7] = 1.0
        assert ess(w) == pytest.approx(1.0)

    def test_hand_value(self):
        assert ess([0.5, 0.25, 0.25]) == pytest.approx(1.0 / 0.375)

    def test_degenerate(self):
        with pytest.raises(DegenerateWeightsError):
            ess([0.0, 0.0])

    @given(st.lists(st.floats(min_value=1e-6, max_value=1.0), min_size=1,
                    max_size=40))
    @settings(max_examples=50, deadline=None)
    def test_range(self, raw):
        w = np.array(raw) / np.sum(raw)
        val = ess(w)
        assert 1.0 - 1e-9 <= val <= len(w) + 1e-9


class TestMaximalCoupling:
    def test_equal_weights_fully_coupled(self):
        w = np.array([0.3, 0.5, 0.2])
        idx1, idx2, common = maximal_coupling_indices(w, w, 500, stream(50))
        assert common.all()
        assert (idx1 == idx2).all()

    def test_disjoint_supports_never_coupled(self):
        idx1, idx2, common = maximal_coupling_indices(
            [1.0, 0.0], [0.0, 1.0], 500, stream(51))
        assert not common.any()
        assert (idx1 == 0).all() and (idx2 == 1).all()

    def test_hand_example_probabilities(self):
        # W1=(.5,.5), W2=(.25,.75): coupled w.p. .75; exact enumeration of the
        # mixture gives P(side-2 ancestor = 2) = .75*(2/3) + .25*1 = .75
        w1, w2 = [0.5, 0.5], [0.25, 0.75]
        n = 200_000
        idx1, idx2, common = maximal_coupling_indices(w1, w2, n, stream(52))
        p_common = common.mean()
        se = math.sqrt(0.75 * 0.25 / n)
        assert abs(p_common - 0.75) < 4 * se
        p2 = (idx2 == 1).mean()
        assert abs(p2 - 0.75) < 4 * math.sqrt(0.75 * 0.25 / n)

    def test_marginals_match_weights(self):
        w1 = np.array([0.1, 0.2, 0.3, 0.4])
        w2 = np.array([0.4, 0.3, 0.2, 0.1])
        n = 200_000
        idx1, idx2, _ = maximal_coupling_indices(w1, w2, n, stream(53))
        for idx, w in ((idx1, w1), (idx2, w2)):
            observed = np.bincount(idx, minlength=4)
            _, p = sps.chisquare(observed, n * w)
            assert p > 1e-3

    def test_resample_wrapper(self):
        fine = ["a", "b"]
        coarse = ["c", "d"]
        out_f, out_c, n_common = maximal_coupling_resample(
            fine, coarse, [0.5, 0.5], [0.5, 0.5], stream(54))
        assert n_common == 2
        assert [("a", "c"), ("b", "d")].count((out_f[0], out_c[0])) == 1

    def test_length_mismatch(self):
        with pytest.raises(ContractViolationError):
            maximal_coupling_resample(["a"], ["b", "c"], [1.0], [0.5, 0.5],
                                      stream(55))

    def test_unnormalized_rejected(self):
        with pytest.raises(ContractViolationError):
            maximal_coupling_indices([0.5, 0.6], [0.5, 0.5], 10, stream(56))


class TestPfStep:
    def test_constant_likelihood_keeps_uniform_weights(self):
        model = two_mode_model()
        obs = gaussian_mode_obs()
        flat_obs = type(obs)(log_density=lambda x, y: -1.0, gap=1.0)
        ens = initial_ensemble(X0, 64)
        rng = stream(60, "flat")
        new, est = pf_step(model, flat_obs, ens, 0.0, 3, rng,
                           phi=lambda x: float(x.u))
        assert not new.last_resampled
        assert np.allclose(new.normalized(), 1.0 / 64)
        # estimate is the plain Monte Carlo mean of phi
        assert est.value == pytest.approx(np.mean([x.u for x in new.particles]))

    def test_single_particle_estimate_ignores_likelihood(self):
        model = two_mode_model()
        ens = initial_ensemble(X0, 1)
        new, est = pf_step(model, gaussian_mode_obs(), ens, 5.0, 3,
                           stream(61), phi=lambda x: float(x.u))
        assert est.value == float(new.particles[0].u) or new.last_resampled

    def test_matches_exact_enumeration_filter(self):
        model = two_mode_model(lam=1.0, lam_star=2.0)
        obs = gaussian_mode_obs(tau2=0.5)
        y = 0.8
        s = 20_000
        ens = initial_ensemble(X0, s)
        rng = stream(62, "exact")
        new, est = pf_step(model, obs, ens, y, 3, rng, phi=lambda x: float(x.u))
        truth = exact_two_mode_filter(0, y, lam=1.0, tau2=0.5)
        # importance-sampling standard error of the weighted mean
        w = np.exp(-((y - np.array([float(x.u) for x in _prop(model, s)])) ** 2))
        se = 3.5 / math.sqrt(s)  # conservative: phi bounded by 1
        assert abs(est.value - truth) < 3 * se

    def test_every_step_mode_always_resamples(self):
        model = two_mode_model()
        ens = initial_ensemble(X0, 32)
        new, _ = pf_step(model, gaussian_mode_obs(), ens, 0.3, 2, stream(63),
                         phi=lambda x: float(x.u), resampling="always")
        assert new.last_resampled
        assert np.all(new.log_weights == 0.0)

    def test_trigger_log_reproducible(self):
        model = two_mode_model()
        obs = gaussian_mode_obs(tau2=0.05)

        def run():
            ens = initial_ensemble(X0, 64)
            rng = stream(64, "trig")
            flags = []
            for n in range(5):
                ens, _ = pf_step(model, obs, ens, 0.9, 3, rng,
                                 phi=lambda x: float(x.u))
                flags.append(ens.last_resampled)
            return flags

        assert run() == run()

    def test_interior_observations_consume_two_updates(self):
        model = two_mode_model()
        obs = gaussian_mode_obs()
        cost = CostCounter()
        ens = initial_ensemble(X0, 16)
        pf_step(model, obs, ens, [(0.5, 0.1), (1.0, 0.4)], 3, stream(65),
                phi=lambda x: float(x.u), cost=cost)
        assert cost.likelihood_evals == 32


def _prop(model, s):
    rng = stream(66, "prop")
    out = []
    from pdmp_mlpf.pdmp import simulate
    for _ in range(s):
        path, _, _, _ = simulate(model, Level(3), X0, 0.0, 1.0, rng)
        out.append(path.endpoint)
    return out


class TestCoupledPfStep:
    def test_constant_phi_gives_exact_constant(self):
        model = two_mode_model()
        state = initial_coupled_state(X0, 32)
        new, fe, ce = coupled_pf_step(model, gaussian_mode_obs(), state, 0.2,
                                      Level(3), stream(70), phi=lambda x: 4.5)
        assert fe.value == pytest.approx(4.5)
        assert ce.value == pytest.approx(4.5)

    def test_degenerate_coupling_difference_is_zero(self):
        # zero field, state-independent rate, mode-independent kernel ratio:
        # both marginals coincide path by path
        model = two_mode_model()
        obs = gaussian_mode_obs()
        state = initial_coupled_state(X0, 64)
        rng = stream(71, "deg")
        for n in range(3):
            state, fe, ce = coupled_pf_step(model, obs, state, 0.4, Level(3),
                                            rng, phi=lambda x: float(x.u))
            assert fe.value == pytest.approx(ce.value, abs=0)

    def test_fine_and_coarse_match_independent_single_level_filters(self):
        # distributional agreement of means over replicates
        model = two_mode_model()
        obs = gaussian_mode_obs(tau2=0.5)
        ys = [0.7, 0.2]
        reps = 120
        s = 400
        l = 3

        fine_means, coarse_means = [], []
        for r in range(reps):
            state = initial_coupled_state(X0, s)
            rng = stream(72, "cpf", r)
            for n, y in enumerate(ys):
                state, fe, ce = coupled_pf_step(model, obs, state, y, Level(l),
                                                rng, phi=lambda x: float(x.u))
            fine_means.append(fe.value)
            coarse_means.append(ce.value)

        def single_level(level, tag):
            vals = []
            for r in range(reps):
                ens = initial_ensemble(X0, s)
                rng = stream(73, tag, r)
                for y in ys:
                    ens, est = pf_step(model, obs, ens, y, level, rng,
                                       phi=lambda x: float(x.u))
                vals.append(est.value)
            return np.array(vals)

        pf_fine = single_level(l, "fine")
        pf_coarse = single_level(l - 1, "coarse")
        for coupled, single in ((np.array(fine_means), pf_fine),
                                (np.array(coarse_means), pf_coarse)):
            se = math.sqrt(coupled.var(ddof=1) / reps + single.var(ddof=1) / reps)
            assert abs(coupled.mean() - single.mean()) < 3 * se

    def test_estimates_precede_resampling(self):
        # force constant resampling; the reported estimate must reflect the
        # weighted ensemble, not the uniform post-resampling one
        model = two_mode_model()
        obs = gaussian_mode_obs(tau2=0.01)
        state = initial_coupled_state(X0, 128)
        rng = stream(74, "pre")
        new, fe, ce = coupled_pf_step(model, obs, state, 1.0, Level(3), rng,
                                      phi=lambda x: float(x.u),
                                      resampling="always")
        assert new.last_resampled
        post_mean = np.mean([p.fine.u for p in new.pairs])
        # weighted estimate concentrates near u=1 harder than the prior mean
        assert fe.value > 0.5
        assert abs(fe.value - post_mean) < 0.2  # resampled from same weights


class TestMlEstimate:
    def test_single_level_is_pf_value(self):
        assert ml_estimate(1.25) == 1.25
        assert ml_estimate(FilterEstimate(2.0, 1, "pf"), {}) == 2.0

    def test_constant_phi_telescopes_to_constant(self):
        diffs = {2: (3.0, 3.0), 3: (3.0, 3.0)}
        assert ml_estimate(3.0, diffs) == 3.0

    def test_hand_sum(self):
        diffs = {2: (1.5, 1.0), 3: (2.0, 1.75)}
        assert ml_estimate(1.0, diffs) == pytest.approx(1.0 + 0.5 + 0.25)

    def test_missing_level_raises(self):
        with pytest.raises(ContractViolationError):
            ml_estimate(1.0, {2: (1.0, 1.0), 4: (1.0, 1.0)})
