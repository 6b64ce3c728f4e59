import json

import numpy as np
import pytest

from portlearn import equicorrelated_population, sample_returns
from portlearn.cli import (
    drop_extreme_rows,
    ingest_csv,
    main,
    read_config,
    subtract_risk_free,
)
from portlearn.exceptions import DuplicateAssetLabel, MissingValue, ParseError


def write_panel(path, n=36, m=3, seed=0):
    pop = equicorrelated_population(m, rho=0.4, vol=0.2, means=(0.08, 0.04))
    rm = sample_returns(pop, n, seed=seed)
    with open(path, "w") as fh:
        fh.write("period," + ",".join(rm.asset_labels) + "\n")
        for i, p in enumerate(rm.period_index):
            fh.write(f"{p:04d}," + ",".join(f"{v:.8f}" for v in rm.data[i]) + "\n")
    return rm


class TestIngest:
    def test_well_formed(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("date,a,b\n2020-01,0.1,0.2\n2020-02,-0.05,0.0\n2020-03,0.02,0.01\n")
        rm = ingest_csv(path)
        assert rm.n_periods == 3 and rm.n_assets == 2
        assert rm.asset_labels == ("a", "b")
        assert rm.period_index == ("2020-01", "2020-02", "2020-03")

    def test_missing_cell_reports_coordinates(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("date,a,b\n2020-01,0.1,\n")
        with pytest.raises(MissingValue) as err:
            ingest_csv(path)
        assert err.value.row == 2 and err.value.column == 3

    def test_duplicate_header(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("date,a,a\n2020-01,0.1,0.2\n")
        with pytest.raises(DuplicateAssetLabel):
            ingest_csv(path)

    def test_unparsable_and_nonfinite_cells(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("date,a\n2020-01,abc\n")
        with pytest.raises(ParseError) as err:
            ingest_csv(path)
        assert err.value.row == 2 and err.value.column == 2
        path.write_text("date,a\n2020-01,inf\n")
        with pytest.raises(ParseError):
            ingest_csv(path)

    def test_periods_must_increase(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("date,a\n2020-02,0.1\n2020-01,0.2\n")
        with pytest.raises(ParseError) as err:
            ingest_csv(path)
        assert err.value.row == 3

    def test_ragged_row(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("date,a,b\n2020-01,0.1\n")
        with pytest.raises(ParseError):
            ingest_csv(path)

    def test_filters(self, tmp_path):
        path = tmp_path / "r.csv"
        path.write_text("date,a\n01,0.1\n02,9.0\n03,0.2\n")
        rm = ingest_csv(path)
        trimmed, dropped = drop_extreme_rows(rm, 5.0)
        assert dropped == 1 and trimmed.period_index == ("01", "03")
        excess = subtract_risk_free(trimmed, 0.1)
        np.testing.assert_allclose(excess.data[:, 0], [0.0, 0.1])


def test_read_config_and_precedence(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# comment\nrbar = 2.0\nseed = 9\nstrategies = mv,equal\n")
    parsed = read_config(cfg)
    assert parsed == {"rbar": "2.0", "seed": "9", "strategies": "mv,equal"}
    with pytest.raises(ParseError):
        read_config_path = tmp_path / "bad.cfg"
        read_config_path.write_text("not a key value line\n")
        read_config(read_config_path)


class TestEstimateCommand:
    def test_zero_penalty_file_matches_plug_in_file(self, tmp_path):
        write_panel(tmp_path / "r.csv")
        out = tmp_path / "out"
        code = main([
            "estimate", "--input", str(tmp_path / "r.csv"),
            "--strategies", "mv,ridge:0", "--out", str(out),
        ])
        assert code == 0
        assert (out / "weights_mv.csv").read_bytes() == (out / "weights_ridge-0.csv").read_bytes()

    def test_outputs_and_manifest(self, tmp_path):
        write_panel(tmp_path / "r.csv")
        out = tmp_path / "out"
        code = main([
            "estimate", "--input", str(tmp_path / "r.csv"),
            "--strategies", "mv,ridge,equal", "--seed", "3", "--out", str(out),
        ])
        assert code == 0
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["command"] == "estimate"
        assert "cv_ridge.csv" in manifest["outputs"]
        weights = (out / "weights_ridge.csv").read_text().splitlines()
        assert weights[0].startswith("# config_hash=")
        assert weights[1] == "asset,weight,relative_weight"
        assert len(weights) == 2 + 3  # header lines + one row per asset

    def test_config_file_supplies_options(self, tmp_path):
        write_panel(tmp_path / "r.csv")
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"input = {tmp_path / 'r.csv'}\nstrategies = equal\n")
        out = tmp_path / "out"
        assert main(["estimate", "--config", str(cfg), "--out", str(out)]) == 0
        assert (out / "weights_equal.csv").exists()


class TestSimulateCommand:
    def test_table_shapes(self, tmp_path):
        out = tmp_path / "sim"
        code = main([
            "simulate", "--n-list", "8,16", "--reps", "2",
            "--strategies", "population,mv,equal", "--seed", "5", "--out", str(out),
        ])
        assert code == 0
        lines = (out / "sharpe.csv").read_text().splitlines()
        assert lines[1] == "strategy,8,16"
        assert [ln.split(",")[0] for ln in lines[2:]] == ["population", "mv", "equal"]
        risk = (out / "risk.csv").read_text().splitlines()
        assert len(risk) == len(lines)
        bv = (out / "bias_variance.csv").read_text().splitlines()
        assert bv[1] == "penalty,risk,bias_sq,variance"

    def test_population_json_input(self, tmp_path):
        pop = {"mu": [0.1, 0.05], "sigma": [[0.04, 0.0], [0.0, 0.09]], "r_bar": 1.0}
        pop_path = tmp_path / "pop.json"
        pop_path.write_text(json.dumps(pop))
        out = tmp_path / "sim"
        code = main([
            "simulate", "--pop", str(pop_path), "--n-list", "12", "--reps", "2",
            "--strategies", "mv,equal", "--out", str(out),
        ])
        assert code == 0
        assert (out / "sharpe.csv").exists()

    def test_infeasible_cells_render_dashes(self, tmp_path):
        out = tmp_path / "sim"
        cfg = tmp_path / "c.cfg"
        cfg.write_text("population.kind = equicorrelated\npopulation.m = 6\n")
        code = main([
            "simulate", "--config", str(cfg), "--n-list", "4,30", "--reps", "2",
            "--strategies", "mv,equal", "--out", str(out),
        ])
        assert code == 0
        rows = {ln.split(",")[0]: ln for ln in (out / "sharpe.csv").read_text().splitlines()[2:]}
        assert rows["mv"].split(",")[1] == "-"
        assert rows["mv"].split(",")[2] != "-"
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["diagnostics"]["cell_failures"]["mv@n=4"] == 2


class TestBacktestCommand:
    def test_window_of_t_minus_one(self, tmp_path):
        write_panel(tmp_path / "r.csv", n=25)
        out = tmp_path / "bt"
        code = main([
            "backtest", "--input", str(tmp_path / "r.csv"), "--window", "24",
            "--strategies", "mv,equal", "--out", str(out),
        ])
        assert code == 0
        lines = (out / "oos_returns.csv").read_text().splitlines()
        assert len(lines) == 3  # provenance + header + a single period
        summary = (out / "sharpe_summary.csv").read_text().splitlines()
        assert summary[1] == "strategy,mean,std,sharpe"

    def test_jk_tables(self, tmp_path):
        write_panel(tmp_path / "r.csv", n=60)
        out = tmp_path / "bt"
        code = main([
            "backtest", "--input", str(tmp_path / "r.csv"), "--window", "40",
            "--strategies", "mv,equal,min_variance", "--out", str(out),
        ])
        assert code == 0
        z_lines = (out / "jk_z.csv").read_text().splitlines()
        assert z_lines[1] == "strategy,mv,equal,min_variance"
        table = (out / "jk_table.csv").read_text().splitlines()
        assert table[2].startswith("mv")  # first strategy row has no comparisons

    def test_missing_window_is_fatal_with_json_error(self, tmp_path, capsys):
        write_panel(tmp_path / "r.csv")
        code = main([
            "backtest", "--input", str(tmp_path / "r.csv"), "--out", str(tmp_path / "x"),
        ])
        assert code == 1
        record = json.loads(capsys.readouterr().err.strip())
        assert record["error"] == "ValueError"


class TestDeterminism:
    def test_simulate_reruns_byte_identical_even_in_parallel(self, tmp_path):
        args = [
            "simulate", "--n-list", "8,14", "--reps", "3",
            "--strategies", "population,mv,ridge,equal", "--seed", "11",
        ]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(out1), "--jobs", "1"]) == 0
        assert main(args + ["--out", str(out2), "--jobs", "2"]) == 0
        for name in ("sharpe.csv", "risk.csv", "bias_variance.csv", "run_manifest.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_estimate_rerun_byte_identical(self, tmp_path):
        write_panel(tmp_path / "r.csv")
        args = [
            "estimate", "--input", str(tmp_path / "r.csv"),
            "--strategies", "mv,lasso", "--seed", "2",
        ]
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert main(args + ["--out", str(out1)]) == 0
        assert main(args + ["--out", str(out2)]) == 0
        for name in ("weights_mv.csv", "weights_lasso.csv", "cv_lasso.csv", "chosen.csv"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_alpha_rf_sets_target(self, tmp_path):
        write_panel(tmp_path / "r.csv")
        out = tmp_path / "o"
        assert main([
            "estimate", "--input", str(tmp_path / "r.csv"), "--strategies", "mv",
            "--alpha", "2.0", "--rf", "0.01", "--out", str(out),
        ]) == 0
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["config"]["r_bar"] == pytest.approx((1 - 2 * 0.01) / 2)
        with pytest.raises(SystemExit):
            main(["estimate"])  # --out is required


class TestFiltersAndLoo:
    def test_backtest_with_loo_and_filters(self, tmp_path):
        rm = write_panel(tmp_path / "r.csv", n=18, m=2)
        # corrupt one period with an absurd return and shift the level
        rows = (tmp_path / "r.csv").read_text().splitlines()
        cells = rows[3].split(",")
        cells[1] = "9.9"
        rows[3] = ",".join(cells)
        (tmp_path / "r.csv").write_text("\n".join(rows) + "\n")
        out = tmp_path / "bt"
        code = main([
            "backtest", "--input", str(tmp_path / "r.csv"), "--window", "12",
            "--cv-k", "loo", "--strategies", "ridge,equal",
            "--drop-extreme", "5.0", "--subtract-rf", "0.001", "--out", str(out),
        ])
        assert code == 0
        manifest = json.loads((out / "run_manifest.json").read_text())
        assert manifest["diagnostics"]["dropped_extreme_rows"] == 1
        assert manifest["config"]["cv_k"] == "loo"
        lines = (out / "oos_returns.csv").read_text().splitlines()
        assert len(lines) == 2 + (17 - 12)  # one row dropped, then T - window

    def test_all_zero_weights_have_dash_relative_column(self, tmp_path):
        # a pure-noise panel drives the L1 search to the all-zero ceiling
        rng = np.random.default_rng(17)
        with open(tmp_path / "r.csv", "w") as fh:
            fh.write("period,a,b,c\n")
            for i, row in enumerate(rng.standard_normal((12, 3)) * 0.2):
                fh.write(f"{i:03d}," + ",".join(f"{v:.6f}" for v in row) + "\n")
        out = tmp_path / "est"
        assert main([
            "estimate", "--input", str(tmp_path / "r.csv"),
            "--strategies", "lasso:1e6", "--out", str(out),
        ]) == 0
        lines = (out / "weights_lasso-1e+06.csv").read_text().splitlines()
        for line in lines[2:]:
            asset, weight, rel = line.split(",")
            assert weight == "0" and rel == "-"
