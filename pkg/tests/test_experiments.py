import numpy as np
import pytest

from portlearn import (
    BacktestConfig,
    ReturnsMatrix,
    SimulationConfig,
    StrategySpec,
    equicorrelated_population,
    jobson_korkie_test,
    optimal_weights,
    population_sharpe,
    run_backtest,
    run_simulation,
    sample_returns,
    sharpe_ratio,
)
from portlearn.exceptions import DegenerateSeries


def tiny_population():
    return equicorrelated_population(3, rho=0.4, vol=0.3, means=(0.15, 0.08))


class TestSampleReturns:
    def test_deterministic_per_seed(self):
        pop = tiny_population()
        a = sample_returns(pop, 50, seed=5)
        b = sample_returns(pop, 50, seed=5)
        c = sample_returns(pop, 50, seed=6)
        assert np.array_equal(a.data, b.data)
        assert not np.array_equal(a.data, c.data)

    def test_sample_mean_within_clt_bound(self):
        pop = equicorrelated_population(3, rho=0.0, vol=0.2, means=())
        X = sample_returns(pop, 100_000, seed=1).data
        bound = 4.0 * 0.2 / np.sqrt(100_000)
        assert np.abs(X.mean(axis=0)).max() <= bound

    def test_sample_variance_concentrates(self):
        pop = equicorrelated_population(1, rho=0.0, vol=0.2, means=(0.0,))
        X = sample_returns(pop, 100_000, seed=2).data
        assert 0.03 <= X.var() <= 0.05


class TestStrategySpec:
    def test_parse_tokens(self):
        assert StrategySpec.parse("ridge").policy == "cv"
        fixed = StrategySpec.parse("ridge:0.5")
        assert fixed.policy == "fixed" and fixed.value == 0.5
        assert StrategySpec.parse("pcr:3").value == 3
        assert StrategySpec.parse("mv").policy == "none"
        assert StrategySpec.parse("lasso:0.1").label == "lasso:0.1"

    def test_invalid_tokens(self):
        with pytest.raises(ValueError):
            StrategySpec.parse("momentum")
        with pytest.raises(ValueError):
            StrategySpec.parse("mv:0.5")
        with pytest.raises(ValueError):
            StrategySpec(kind="ridge", policy="fixed")


class TestRunSimulation:
    def test_population_row_and_equal_weight_row(self):
        pop = tiny_population()
        strategies = (
            StrategySpec(kind="population"),
            StrategySpec(kind="equal"),
            StrategySpec(kind="mv"),
        )
        cfg = SimulationConfig(pop=pop, n_list=(10, 30), strategies=strategies, n_reps=3, seed=0)
        res = run_simulation(cfg)
        s_star = population_sharpe(optimal_weights(pop), pop)
        for n in (10, 30):
            cell = res.cell("population", n)
            assert cell.sharpe == pytest.approx(s_star, abs=1e-12)
            assert cell.risk == pytest.approx(0.0, abs=1e-20)
        # the passive strategy never varies with the sample size
        assert res.cell("equal", 10).sharpe == pytest.approx(res.cell("equal", 30).sharpe)
        assert res.cell("equal", 10).risk == pytest.approx(res.cell("equal", 30).risk)

    def test_single_replication_fixed_optimum_is_riskless(self):
        pop = tiny_population()
        theta_star = optimal_weights(pop).theta
        cfg = SimulationConfig(
            pop=pop,
            n_list=(12,),
            strategies=(StrategySpec(kind="fixed_weights", options=(("theta", tuple(theta_star)),)),),
            n_reps=1,
            seed=1,
        )
        res = run_simulation(cfg)
        cell = res.cell("fixed_weights", 12)
        assert cell.risk == pytest.approx(0.0, abs=1e-18)
        assert cell.sharpe == pytest.approx(population_sharpe(theta_star, pop), abs=1e-12)

    def test_degenerate_cells_are_marked_not_fatal(self):
        pop = equicorrelated_population(8, rho=0.3, vol=0.2, means=(0.1,))
        cfg = SimulationConfig(
            pop=pop,
            n_list=(4, 20),
            strategies=(StrategySpec(kind="mv"), StrategySpec(kind="equal")),
            n_reps=3,
            seed=2,
        )
        res = run_simulation(cfg)
        broke = res.cell("mv", 4)
        assert broke.sharpe is None and broke.risk is None
        assert broke.n_failed == 3 and "DegenerateMoments" in broke.message
        assert res.cell("mv", 20).sharpe is not None
        assert res.cell("equal", 4).sharpe is not None

    def test_zero_portfolio_contributes_zero_sharpe(self):
        pop = tiny_population()
        zero = StrategySpec(kind="fixed_weights", options=(("theta", (0.0, 0.0, 0.0)),))
        cfg = SimulationConfig(pop=pop, n_list=(10,), strategies=(zero,), n_reps=4, seed=3)
        res = run_simulation(cfg)
        assert res.cell("fixed_weights", 10).sharpe == 0.0

    def test_parallel_schedule_independent(self):
        pop = tiny_population()
        strategies = (StrategySpec(kind="mv"), StrategySpec.parse("ridge"))
        cfg = SimulationConfig(pop=pop, n_list=(15,), strategies=strategies, n_reps=4, seed=4)
        serial = run_simulation(cfg, n_jobs=1)
        parallel = run_simulation(cfg, n_jobs=2)
        for label in serial.labels:
            a, b = serial.cell(label, 15), parallel.cell(label, 15)
            assert a.sharpe == b.sharpe and a.risk == b.risk


class TestRunBacktest:
    def test_single_out_of_sample_return(self):
        pop = tiny_population()
        rm = sample_returns(pop, 13, seed=7)
        cfg = BacktestConfig(window=12, strategies=(StrategySpec(kind="equal"),), seed=0)
        res = run_backtest(rm, cfg)
        assert res.oos_returns.shape == (1, 1)
        assert res.periods == (12,)

    def test_equal_weight_return_is_definitional(self):
        pop = tiny_population()
        rm = sample_returns(pop, 30, seed=8)
        gross = 2.0
        spec = StrategySpec(kind="equal", options=(("gross", gross),))
        res = run_backtest(rm, BacktestConfig(window=20, strategies=(spec,), seed=0))
        expected = rm.data[20:].mean(axis=1) * gross
        np.testing.assert_allclose(res.oos_returns[0], expected, rtol=1e-12)

    def test_pinned_optimum_recovers_population_sharpe(self):
        pop = tiny_population()
        theta_star = optimal_weights(pop).theta
        T = 5030
        rm = sample_returns(pop, T, seed=9)
        spec = StrategySpec(kind="fixed_weights", options=(("theta", tuple(theta_star)),))
        res = run_backtest(rm, BacktestConfig(window=30, strategies=(spec,), seed=0))
        realized = sharpe_ratio(res.oos_returns[0])
        assert realized == pytest.approx(population_sharpe(theta_star, pop), abs=0.05)

    def test_deterministic_strategies_invariant_to_order(self):
        pop = tiny_population()
        rm = sample_returns(pop, 40, seed=10)
        mv, eq = StrategySpec(kind="mv"), StrategySpec(kind="equal")
        a = run_backtest(rm, BacktestConfig(window=30, strategies=(mv, eq), seed=1))
        b = run_backtest(rm, BacktestConfig(window=30, strategies=(eq, mv), seed=1))
        np.testing.assert_array_equal(a.oos_returns[0], b.oos_returns[1])
        np.testing.assert_array_equal(a.oos_returns[1], b.oos_returns[0])

    def test_cv_strategies_schedule_independent(self):
        pop = tiny_population()
        rm = sample_returns(pop, 45, seed=11)
        strategies = (StrategySpec.parse("ridge"), StrategySpec.parse("lasso"))
        serial = run_backtest(rm, BacktestConfig(window=35, strategies=strategies, seed=2), n_jobs=1)
        parallel = run_backtest(rm, BacktestConfig(window=35, strategies=strategies, seed=2), n_jobs=2)
        np.testing.assert_array_equal(serial.oos_returns, parallel.oos_returns)

    def test_failing_windows_record_zero_positions(self):
        pop = equicorrelated_population(6, rho=0.3, vol=0.2, means=(0.1,))
        rm = sample_returns(pop, 10, seed=12)
        res = run_backtest(rm, BacktestConfig(window=4, strategies=(StrategySpec(kind="mv"),)))
        assert res.failed == (True,)
        assert res.sharpes == (None,)
        assert np.all(res.oos_returns == 0.0)
        assert res.n_window_failures == (6,)

    def test_jk_matrix_shape_and_antisymmetry(self):
        pop = tiny_population()
        rm = sample_returns(pop, 60, seed=13)
        strategies = (StrategySpec(kind="mv"), StrategySpec(kind="equal"),
                      StrategySpec(kind="min_variance"))
        res = run_backtest(rm, BacktestConfig(window=40, strategies=strategies, seed=3))
        assert res.jk_z.shape == (3, 3)
        assert np.all(np.diag(res.jk_z) == 0.0)
        np.testing.assert_allclose(res.jk_z, -res.jk_z.T, atol=1e-10)
        for i in range(3):
            assert res.sharpes[i] == res.means[i] / res.stds[i]

    def test_population_strategy_rejected(self):
        rm = sample_returns(tiny_population(), 20, seed=14)
        cfg = BacktestConfig(window=10, strategies=(StrategySpec(kind="population"),))
        with pytest.raises(ValueError):
            run_backtest(rm, cfg)

    def test_window_must_fit(self):
        rm = sample_returns(tiny_population(), 10, seed=15)
        with pytest.raises(ValueError):
            run_backtest(rm, BacktestConfig(window=10, strategies=(StrategySpec(kind="equal"),)))


class TestJobsonKorkie:
    def test_identical_series_score_zero(self):
        rng = np.random.default_rng(0)
        r = rng.standard_normal(50) * 0.03 + 0.01
        test = jobson_korkie_test(r, r)
        assert test.z == 0.0
        assert test.p_value == pytest.approx(1.0)

    def test_swapping_flips_the_sign(self):
        rng = np.random.default_rng(1)
        a = rng.standard_normal(120) * 0.04 + 0.01
        b = rng.standard_normal(120) * 0.05 + 0.005
        ab = jobson_korkie_test(a, b)
        ba = jobson_korkie_test(b, a)
        assert ab.z == pytest.approx(-ba.z, abs=1e-12)
        assert ab.p_value == pytest.approx(ba.p_value, abs=1e-12)

    def test_degenerate_inputs(self):
        with pytest.raises(DegenerateSeries):
            jobson_korkie_test(np.ones(10), np.zeros(10) + np.arange(10))
        with pytest.raises(DegenerateSeries):
            jobson_korkie_test(np.array([1.0, 2.0]), np.array([1.0, 2.0]))
        with pytest.raises(DegenerateSeries):
            jobson_korkie_test(np.arange(5.0), np.arange(4.0))

    def test_size_under_the_null_small_run(self):
        # smaller sibling of the acceptance-size study: loose bounds only
        rng = np.random.default_rng(2)
        rejections = 0
        trials = 400
        for _ in range(trials):
            a = rng.standard_normal(240) * 0.05 + 0.01
            b = rng.standard_normal(240) * 0.05 + 0.01
            if abs(jobson_korkie_test(a, b).z) > 1.96:
                rejections += 1
        assert 0.015 <= rejections / trials <= 0.10

    def test_detects_a_real_difference(self):
        rng = np.random.default_rng(3)
        a = rng.standard_normal(2000) * 0.05 + 0.012
        b = rng.standard_normal(2000) * 0.05 + 0.001
        assert jobson_korkie_test(a, b).z > 3.0


def test_sharpe_ratio_definition():
    r = np.array([0.1, -0.1, 0.3, 0.2])
    assert sharpe_ratio(r) == pytest.approx(r.mean() / r.std())
    with pytest.raises(DegenerateSeries):
        sharpe_ratio(np.full(5, 0.2))


def test_spike_slab_cell_degrades_when_start_model_singular():
    # more assets than periods: the all-in start submodel is singular and
    # no single flip escapes, so the cell records the error and stays empty
    pop = equicorrelated_population(6, rho=0.3, vol=0.2, means=(0.1,))
    cfg = SimulationConfig(
        pop=pop, n_list=(4,), strategies=(StrategySpec(kind="spike_slab"),),
        n_reps=2, seed=0,
    )
    cell = run_simulation(cfg).cell("spike_slab", 4)
    assert cell.sharpe is None and cell.n_failed == 2
    assert "SingularSubmodel" in cell.message
