"""Benchmark harness tests: allocation arithmetic, data generation, cost
scaling, rate regression on synthetic rows, emission round trips and
determinism."""

import math
import os

import numpy as np
import pytest

from pdmp_mlpf import bench, neuro
from pdmp_mlpf.bench import (DataSet, ExperimentConfig, ResultRow,
                             aggregate_rows, allocate_particles, choose_level,
                             estimate_rate, generate_data, ground_truth,
                             largest_allocation, pf_particles, rates_from_aggregates,
                             run_mlpf, run_pf, run_study)
from pdmp_mlpf.errors import (BudgetError, ConfigError, ContractViolationError,
                              InsufficientDataError)
from pdmp_mlpf.flow import Level, delta


def _toy_config(**kw):
    defaults = dict(model="ml", levels=(3, 4), replicates=2, horizon=2,
                    base_seed=7, alloc_constant=0.05, truth_replicates=2,
                    truth_level=6)
    defaults.update(kw)
    return ExperimentConfig(**defaults)


def _toy_data(config, horizon=2, seed=123):
    model, obs_model, x0 = config.build()
    return generate_data(model, obs_model, x0, truth_level=6, horizon=horizon,
                         seed=seed, model_id=config.model)


class TestAllocation:
    def test_hand_formula(self):
        sizes = allocate_particles(delta(Level(5)), 5, constant=1.0)
        assert sizes[0] == 2560
        assert sizes[4] == 160
        assert sizes == [2560, 1280, 640, 320, 160]

    def test_single_level(self):
        eps = 0.5
        assert allocate_particles(eps, 1, constant=1.0) == \
            [max(math.ceil(eps ** -2 * 0.5), 10)]

    def test_doubling_constant_doubles_sizes(self):
        a = allocate_particles(delta(Level(5)), 5, constant=1.0)
        b = allocate_particles(delta(Level(5)), 5, constant=2.0)
        assert b == [2 * s for s in a]

    def test_minimum_floor(self):
        sizes = allocate_particles(0.5, 3, constant=0.01)
        assert all(s == 10 for s in sizes)

    def test_budget_error_names_level(self):
        with pytest.raises(BudgetError) as err:
            allocate_particles(delta(Level(6)), 6, constant=1.0, budget=1000)
        assert err.value.level == 1
        assert err.value.requested > 1000

    def test_choose_level(self):
        assert choose_level(1.0) == 1
        assert choose_level(0.5) == 1
        assert choose_level(0.25) == 2
        assert choose_level(0.2) == 3
        assert choose_level(delta(Level(7))) == 7

    def test_pf_particles(self):
        assert pf_particles(0.1, constant=1.0) == 100
        with pytest.raises(BudgetError):
            pf_particles(1e-4, budget=10_000)


class TestGenerateData:
    def test_grid_count(self):
        config = _toy_config()
        data = _toy_data(config, horizon=10)
        assert len(data.observations) == 20  # horizon / gap

    def test_degenerate_noise_reproduces_latent(self):
        params = neuro.MorrisLecarParams(tau2=1e-12)
        config = _toy_config(params=params)
        data = _toy_data(config)
        for (t, y), (t2, u, v) in zip(data.observations, data.latent):
            assert t == t2
            assert y == pytest.approx(v, abs=1e-5)

    def test_deterministic(self, tmp_path):
        config = _toy_config()
        d1 = _toy_data(config, seed=5)
        d2 = _toy_data(config, seed=5)
        assert d1 == d2
        p1, p2 = tmp_path / "a.json", tmp_path / "b.json"
        bench.save_data(d1, str(p1))
        bench.save_data(d2, str(p2))
        assert p1.read_bytes() == p2.read_bytes()

    def test_save_load_round_trip(self, tmp_path):
        config = _toy_config()
        data = _toy_data(config)
        path = tmp_path / "data.json"
        bench.save_data(data, str(path))
        assert bench.load_data(str(path)) == data

    def test_epoch_observations(self):
        config = _toy_config()
        data = _toy_data(config)
        assert [t for t, _ in data.epoch_observations(1)] == [0.5, 1.0]
        assert [t for t, _ in data.epoch_observations(2)] == [1.5, 2.0]


class TestRunners:
    def test_run_pf_deterministic(self):
        config = _toy_config()
        data = _toy_data(config)
        a = run_pf(config, data, level=3, size=30, replicate=0)
        b = run_pf(config, data, level=3, size=30, replicate=0)
        # NaN-safe comparison via the emitted textual form
        assert [tuple(map(repr, r.astuple())) for r in a] == \
            [tuple(map(repr, r.astuple())) for r in b]

    def test_euler_cost_doubles_per_level(self):
        # step-count oracle: the walker grid halves its step per level
        config = _toy_config(replicates=2)
        data = _toy_data(config)
        costs = {}
        for level in (4, 5, 6):
            rows = []
            for rep in range(10):
                rows.extend(run_pf(config, data, level=level, size=8,
                                   replicate=rep, epsilon=delta(Level(level))))
            costs[level] = np.mean([r.cost_euler for r in rows])
        for level in (4, 5):
            ratio = costs[level + 1] / costs[level]
            assert 1.8 <= ratio <= 2.2

    def test_mlpf_level_one_equals_pf(self):
        # eps >= 1/2 telescopes to a bare level-1 particle filter
        config = _toy_config()
        data = _toy_data(config)
        eps = 0.5
        sizes = allocate_particles(eps, 1, config.alloc_constant,
                                   config.min_particles)
        ml_rows = run_mlpf(config, data, eps, replicate=3)
        pf_rows = run_pf(config, data, level=1, size=sizes[0], replicate=3)
        assert [r.estimate for r in ml_rows] == [r.estimate for r in pf_rows]
        assert [r.cost_total for r in ml_rows] == [r.cost_total for r in pf_rows]

    def test_mlpf_runs_all_levels(self):
        config = _toy_config()
        data = _toy_data(config)
        rows = run_mlpf(config, data, delta(Level(3)), replicate=0)
        assert len(rows) == data.horizon
        assert all(r.level == 3 for r in rows)
        assert all(math.isfinite(r.estimate) for r in rows)

    def test_ground_truth_shape(self):
        config = _toy_config()
        data = _toy_data(config)
        truth = ground_truth(config, data, size=50)
        assert len(truth) == data.horizon
        assert all(math.isfinite(v) for v in truth)


class TestStudy:
    def test_study_rows_complete_and_sorted(self):
        config = _toy_config(levels=(2, 3), replicates=2)
        data = _toy_data(config)
        result = run_study(config, data)
        # 2 methods x 2 settings x 2 replicates x 2 epochs
        assert len(result.rows) == 16
        assert all(math.isfinite(r.sq_error) for r in result.rows)
        keys = [(r.method, -r.epsilon, r.replicate, r.epoch) for r in result.rows]
        assert keys == sorted(keys)

    def test_study_worker_count_invariant(self, monkeypatch):
        config = _toy_config(levels=(2, 3), replicates=2)
        data = _toy_data(config)
        serial = run_study(config, data)
        monkeypatch.setenv("PDMP_MLPF_WORKERS", "2")
        parallel = run_study(config, data)
        assert [r.astuple() for r in serial.rows] == \
            [r.astuple() for r in parallel.rows]

    def test_largest_allocation(self):
        config = _toy_config(levels=(3, 4), alloc_constant=1.0)
        expected = allocate_particles(delta(Level(4)), 4, 1.0)[0]
        assert largest_allocation(config) == expected

    def test_replicate_seed_independence(self):
        # permuting replicate indices changes estimates but not the mean law:
        # replicate streams are disjoint so each estimate shows up unchanged
        config = _toy_config()
        data = _toy_data(config)
        vals = {rep: run_pf(config, data, 3, 20, rep)[0].estimate
                for rep in range(6)}
        assert len(set(vals.values())) == 6  # distinct streams
        again = {rep: run_pf(config, data, 3, 20, rep)[0].estimate
                 for rep in reversed(range(6))}
        assert vals == again


class TestRateRegression:
    def test_exact_power_law(self):
        points = [(c, c ** (-2.0 / 3.0)) for c in (10.0, 100.0, 1000.0, 1e4)]
        fit = estimate_rate(points)
        assert fit.slope == pytest.approx(-2.0 / 3.0, abs=1e-12)
        assert fit.stderr == pytest.approx(0.0, abs=1e-12)

    def test_inverse_law(self):
        points = [(c, 1.0 / c) for c in (5.0, 50.0, 500.0)]
        fit = estimate_rate(points)
        assert fit.slope == pytest.approx(-1.0, abs=1e-12)

    def test_insufficient_points(self):
        with pytest.raises(InsufficientDataError):
            estimate_rate([(10.0, 1.0), (100.0, 0.1)])
        with pytest.raises(InsufficientDataError):
            estimate_rate([(10.0, 1.0), (100.0, 0.0), (1000.0, 0.01)])

    def test_rates_from_aggregates_orientations(self):
        aggs = [{"method": "pf", "model": "ml", "level": l, "epsilon": 2.0 ** -l,
                 "n": 4, "mse": (8.0 ** -l), "cost_euler": 8.0 ** l,
                 "cost_candidates": 1.0, "cost_total": 8.0 ** l + 1}
                for l in (3, 4, 5)]
        fits = rates_from_aggregates(aggs, cost_basis="euler")
        assert len(fits) == 1
        assert fits[0]["slope_mse_vs_cost"] == pytest.approx(-1.0, abs=1e-12)
        assert fits[0]["rate_cost_vs_mse"] == pytest.approx(-1.0, abs=1e-12)

    def test_bad_cost_basis(self):
        with pytest.raises(ConfigError):
            rates_from_aggregates([], cost_basis="wallclock")


class TestEmission:
    def _rows(self):
        return [ResultRow("pf", "ml", 3, 0.125, r, e, 1.0 + r + e, 0.25,
                          100, 10, 110, 7)
                for r in range(2) for e in (1, 2)]

    def test_round_trip_csv(self, tmp_path):
        rows = self._rows()
        path = tmp_path / "rows.csv"
        bench.emit(rows, "csv", str(path))
        parsed = bench.parse_rows(str(path))
        assert [r.astuple() for r in parsed] == [r.astuple() for r in rows]

    def test_round_trip_json(self, tmp_path):
        rows = self._rows()
        path = tmp_path / "rows.json"
        bench.emit(rows, "json", str(path))
        parsed = bench.parse_rows(str(path))
        assert [r.astuple() for r in parsed] == [r.astuple() for r in rows]

    def test_csv_header_schema(self, tmp_path):
        path = tmp_path / "rows.csv"
        bench.emit(self._rows(), "csv", str(path))
        header = path.read_text().splitlines()[0]
        assert header == ("method,model,level,epsilon,replicate,epoch,"
                          "estimate,sq_error,cost_euler,cost_candidates,"
                          "cost_total,seed")

    def test_aggregate_file_alongside(self, tmp_path):
        path = tmp_path / "rows.csv"
        agg_path = bench.emit(self._rows(), "csv", str(path))
        assert agg_path == str(tmp_path / "rows.aggregate.csv")
        assert os.path.exists(agg_path)
        lines = open(agg_path).read().splitlines()
        assert lines[0] == "method,model,level,epsilon,n,mse,cost_euler," \
                           "cost_candidates,cost_total"
        assert len(lines) == 2  # single setting -> single aggregate row

    def test_row_count_arithmetic(self, tmp_path):
        # 2 methods x 2 settings x 3 replicates x 2 epochs
        rows = [ResultRow(m, "ml", 3, eps, r, e, 0.0, 0.0, 1, 1, 2, 0)
                for m in ("pf", "mlpf") for eps in (0.25, 0.125)
                for r in range(3) for e in (1, 2)]
        assert len(rows) == 24
        path = tmp_path / "rows.csv"
        bench.emit(rows, "csv", str(path))
        assert len(bench.parse_rows(str(path))) == 24

    def test_empty_rows_rejected(self, tmp_path):
        with pytest.raises(ContractViolationError):
            bench.emit([], "csv", str(tmp_path / "rows.csv"))

    def test_aggregate_means(self):
        rows = self._rows()
        aggs = aggregate_rows(rows)
        assert len(aggs) == 1
        agg = aggs[0]
        assert agg["n"] == 4
        assert agg["mse"] == pytest.approx(0.25)
        assert agg["cost_euler"] == pytest.approx(100.0)


class TestConfigValidation:
    def test_levels_must_ascend(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(levels=(5, 3))

    def test_replicates_floor(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(replicates=1)

    def test_unknown_phi(self):
        with pytest.raises(ConfigError):
            ExperimentConfig(phi="energy")

    def test_eps_grid_default(self):
        config = ExperimentConfig(levels=(3, 4))
        assert config.eps_grid() == (0.125, 0.0625)
