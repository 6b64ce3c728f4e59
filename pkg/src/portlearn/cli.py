"""Command line interface: CSV ingestion and the estimate / simulate /
backtest commands.

All outputs are deterministic functions of (input files, config, seed):
tables carry a `# config_hash=... seed=...` provenance line, numbers are
printed with 10 significant digits, infeasible cells print as "-", and the
JSON run manifest echoes the resolved semantic configuration. Execution
parameters (output directory, worker count) are excluded from the hash so
reruns and parallel runs stay byte-identical.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .core import PopulationSpec, ReturnsMatrix, relative_weights
from .exceptions import (
    DegenerateNormalization,
    DuplicateAssetLabel,
    MissingValue,
    ParseError,
    PortfolioError,
)
from .experiments import (
    CV_KINDS,
    BacktestConfig,
    SimulationConfig,
    StrategySpec,
    run_backtest,
    run_simulation,
)
from .model_selection import PenaltySearchCV
from .populations import decaying_population, equicorrelated_population, sample_returns
from .risk import bias_variance_curve
from .validation import derive_seed, label_key

_MISSING_TOKENS = {"", "na", "nan", "null", "n/a"}


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


def ingest_csv(path) -> ReturnsMatrix:
    """Read a returns panel: first column period labels, then one numeric
    column per asset. Cells must be finite; nothing is ever imputed."""
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        if len(header) < 2:
            raise ParseError(f"{path}: need a period column plus at least one asset column")
        labels = [h.strip() for h in header[1:]]
        for j, label in enumerate(labels, start=2):
            if not label:
                raise ParseError(f"{path}: empty asset name", row=1, column=j)
            if labels.index(label) != j - 2:
                raise DuplicateAssetLabel(f"{path}: repeated asset name {label!r}", row=1, column=j)
        periods: list[str] = []
        values: list[list[float]] = []
        for i, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise ParseError(f"{path}: expected {len(header)} cells, got {len(row)}", row=i)
            period = row[0].strip()
            if not period:
                raise ParseError(f"{path}: empty period label", row=i, column=1)
            if periods and period <= periods[-1]:
                raise ParseError(f"{path}: period labels must be strictly increasing", row=i, column=1)
            parsed = []
            for j, cell in enumerate(row[1:], start=2):
                text = cell.strip()
                if text.lower() in _MISSING_TOKENS:
                    raise MissingValue(f"{path}: missing value", row=i, column=j)
                try:
                    value = float(text)
                except ValueError:
                    raise ParseError(f"{path}: cannot parse {text!r} as a number", row=i, column=j) from None
                if not math.isfinite(value):
                    raise ParseError(f"{path}: non-finite value {text!r}", row=i, column=j)
                parsed.append(value)
            periods.append(period)
            values.append(parsed)
    if not values:
        raise ParseError(f"{path}: no data rows")
    return ReturnsMatrix(np.asarray(values), tuple(labels), tuple(periods))


def drop_extreme_rows(returns: ReturnsMatrix, threshold: float):
    """Drop whole periods containing any |return| above `threshold`."""
    keep = np.all(np.abs(returns.data) <= threshold, axis=1)
    dropped = int((~keep).sum())
    if dropped == 0:
        return returns, 0
    if not keep.any():
        raise ParseError(f"the extreme-return filter at {threshold:g} removed every period")
    idx = np.flatnonzero(keep)
    trimmed = ReturnsMatrix(
        returns.data[idx],
        returns.asset_labels,
        tuple(returns.period_index[i] for i in idx),
    )
    return trimmed, dropped


def subtract_risk_free(returns: ReturnsMatrix, r_f: float) -> ReturnsMatrix:
    """Turn raw returns into excess returns by removing a constant rate."""
    return ReturnsMatrix(returns.data - r_f, returns.asset_labels, returns.period_index)


# ---------------------------------------------------------------------------
# Config plumbing
# ---------------------------------------------------------------------------


def read_config(path) -> dict:
    """Flat `key = value` configuration file; '#' starts a comment line."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            if "=" not in text:
                raise ParseError(f"{path}: expected 'key = value'", row=lineno)
            key, _, value = text.partition("=")
            out[key.strip()] = value.strip()
    return out


class _Options:
    """CLI values override config-file values override defaults."""

    def __init__(self, args, config):
        self.args = args
        self.config = config

    def get(self, name, default=None, cast=str):
        cli = getattr(self.args, name.replace(".", "_"), None)
        if cli is not None:
            return cli
        if name in self.config:
            raw = self.config[name]
            return cast(raw) if cast is not None else raw
        return default


def _resolve_r_bar(opts) -> float:
    rbar = opts.get("rbar", cast=float)
    alpha = opts.get("alpha", cast=float)
    rf = opts.get("rf", cast=float)
    if alpha is not None:
        if rbar is not None:
            raise ValueError("give either rbar or the alpha/rf pair, not both")
        rbar = (1.0 - alpha * (rf if rf is not None else 0.0)) / alpha
    if rbar is None:
        rbar = 1.0
    if rbar <= 0:
        raise ValueError(f"the ideal return must be positive, got {rbar}")
    return float(rbar)


def _parse_strategies(text, default):
    raw = text if text is not None else default
    return tuple(StrategySpec.parse(tok) for tok in raw.split(",") if tok.strip())


def _parse_cv_k(value):
    if isinstance(value, str) and value.strip().lower() == "loo":
        return "loo"
    return int(value)


def _config_hash(semantic: dict) -> str:
    blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _fmt(x) -> str:
    if x is None:
        return "-"
    x = float(x)
    if math.isnan(x):
        return "-"
    return format(x + 0.0, ".10g")


def _write_table(path: Path, header, rows, provenance: str):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(f"# {provenance}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_manifest(outdir: Path, command, semantic, config_hash, diagnostics, outputs):
    payload = {
        "command": command,
        "config": semantic,
        "config_hash": config_hash,
        "diagnostics": diagnostics,
        "outputs": sorted(outputs),
        "versions": {
            "numpy": np.__version__,
            "portlearn": __version__,
            "python": platform.python_version(),
        },
    }
    path = outdir / "run_manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _safe_name(label: str) -> str:
    return label.replace(":", "-").replace("/", "-")


def _load_returns(opts) -> tuple[ReturnsMatrix, dict]:
    path = opts.get("input")
    if path is None:
        raise ValueError("an input CSV is required (--input)")
    returns = ingest_csv(path)
    diag = {"input_periods": returns.n_periods, "input_assets": returns.n_assets}
    threshold = opts.get("drop_extreme", cast=float)
    if threshold is not None:
        returns, dropped = drop_extreme_rows(returns, threshold)
        diag["dropped_extreme_rows"] = dropped
    rf = opts.get("subtract_rf", cast=float)
    if rf is not None:
        returns = subtract_risk_free(returns, rf)
    return returns, diag


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _cmd_estimate(opts) -> int:
    returns, diag = _load_returns(opts)
    r_bar = _resolve_r_bar(opts)
    seed = opts.get("seed", default=0, cast=int)
    cv_k = _parse_cv_k(opts.get("cv_k", default=5))
    strategies = _parse_strategies(opts.get("strategies"), "mv,ridge,lasso,pcr")
    outdir = Path(opts.get("out"))
    outdir.mkdir(parents=True, exist_ok=True)

    semantic = {
        "command": "estimate",
        "input": str(opts.get("input")),
        "r_bar": r_bar,
        "cv_k": cv_k,
        "seed": seed,
        "strategies": [s.label for s in strategies],
        "subtract_rf": opts.get("subtract_rf", cast=float),
        "drop_extreme": opts.get("drop_extreme", cast=float),
    }
    config_hash = _config_hash(semantic)
    provenance = f"config_hash={config_hash} seed={seed}"

    outputs = []
    chosen_rows = []
    from .experiments import _fit_strategy_weights  # single dispatch point

    for spec in strategies:
        if spec.kind in CV_KINDS and spec.policy == "cv":
            search = PenaltySearchCV(
                kind=spec.kind, r_bar=r_bar, cv=cv_k, seed=derive_seed(seed, label_key(spec.label))
            ).fit(returns)
            weights = search.weights_
            chosen_rows.append([spec.label, "cv", _fmt(search.chosen_)])
            curve = search.curve_
            name = f"cv_{_safe_name(spec.label)}.csv"
            rows = [
                [_fmt(curve.grid[i]), _fmt(curve.errors[i])]
                + [_fmt(curve.per_fold[f, i]) for f in range(curve.per_fold.shape[0])]
                for i in range(len(curve.grid))
            ]
            folds = [f"fold{f + 1}" for f in range(curve.per_fold.shape[0])]
            _write_table(outdir / name, ["penalty", "mean_error", *folds], rows, provenance)
            outputs.append(name)
        else:
            path = (seed, 1, label_key(spec.label), 0, 0)
            weights = _fit_strategy_weights(spec, returns.data, r_bar, cv_k, path)
            chosen_rows.append(
                [spec.label, spec.policy, _fmt(spec.value) if spec.value is not None else "-"]
            )
        try:
            rel = [_fmt(v) for v in relative_weights(weights)]
        except DegenerateNormalization:
            rel = ["-"] * len(weights)
        name = f"weights_{_safe_name(spec.label)}.csv"
        rows = [
            [returns.asset_labels[j], _fmt(weights[j]), rel[j]]
            for j in range(returns.n_assets)
        ]
        _write_table(outdir / name, ["asset", "weight", "relative_weight"], rows, provenance)
        outputs.append(name)

    _write_table(outdir / "chosen.csv", ["strategy", "policy", "penalty"], chosen_rows, provenance)
    outputs.append("chosen.csv")
    _write_manifest(outdir, "estimate", semantic, config_hash, diag, outputs)
    return 0


def _load_population(opts) -> tuple[PopulationSpec, dict]:
    pop_path = opts.get("pop")
    if pop_path is not None:
        with open(pop_path, encoding="utf-8") as fh:
            raw = json.load(fh)
        spec = {
            "mu": raw["mu"],
            "sigma": raw["sigma"],
            "r_bar": raw.get("r_bar", 1.0),
            "alpha": raw.get("alpha"),
            "r_f": raw.get("r_f"),
        }
        return PopulationSpec(**spec), {"population": str(pop_path)}
    kind = opts.get("population.kind", default="decaying")
    m = opts.get("population.m", default=10, cast=int)
    r_bar = _resolve_r_bar(opts)
    if kind == "equicorrelated":
        means = opts.get("population.means", default="0.01,0.008,0.006")
        mean_tuple = tuple(float(v) for v in str(means).split(",") if v.strip())
        pop = equicorrelated_population(
            m,
            rho=opts.get("population.rho", default=0.95, cast=float),
            vol=opts.get("population.vol", default=0.05, cast=float),
            means=mean_tuple,
            r_bar=r_bar,
        )
        meta = {"population": f"equicorrelated(m={m})"}
    elif kind == "decaying":
        pop = decaying_population(
            m,
            n_strong=opts.get("population.n_strong", default=3, cast=int),
            mean_level=opts.get("population.mean_level", default=0.012, cast=float),
            vol=opts.get("population.vol", default=0.05, cast=float),
            decay=opts.get("population.decay", default=0.85, cast=float),
            floor=opts.get("population.floor", default=0.10, cast=float),
            seed=opts.get("population.seed", default=7, cast=int),
            r_bar=r_bar,
        )
        meta = {"population": f"decaying(m={m})"}
    else:
        raise ValueError(f"unknown population kind {kind!r}")
    return pop, meta


def _cmd_simulate(opts) -> int:
    pop, pop_meta = _load_population(opts)
    seed = opts.get("seed", default=0, cast=int)
    cv_k = _parse_cv_k(opts.get("cv_k", default=5))
    reps = opts.get("reps", default=100, cast=int)
    n_list = tuple(
        int(v) for v in str(opts.get("n_list", default="20,40,60")).split(",") if v.strip()
    )
    strategies = _parse_strategies(
        opts.get("strategies"), "population,mv,ridge,lasso,pcr,equal,min_variance"
    )
    n_jobs = opts.get("jobs", default=1, cast=int)
    outdir = Path(opts.get("out"))
    outdir.mkdir(parents=True, exist_ok=True)

    semantic = {
        "command": "simulate",
        "population": pop_meta["population"],
        "r_bar": pop.r_bar,
        "n_list": list(n_list),
        "reps": reps,
        "cv_k": cv_k,
        "seed": seed,
        "strategies": [s.label for s in strategies],
    }
    config_hash = _config_hash(semantic)
    provenance = f"config_hash={config_hash} seed={seed}"

    cfg = SimulationConfig(
        pop=pop, n_list=n_list, strategies=strategies, n_reps=reps, seed=seed, cv_k=cv_k
    )
    result = run_simulation(cfg, n_jobs=n_jobs)

    header = ["strategy", *[str(n) for n in n_list]]
    sharpe_rows = [
        [label, *[_fmt(result.cell(label, n).sharpe) for n in n_list]] for label in result.labels
    ]
    risk_rows = [
        [label, *[_fmt(result.cell(label, n).risk) for n in n_list]] for label in result.labels
    ]
    _write_table(outdir / "sharpe.csv", header, sharpe_rows, provenance)
    _write_table(outdir / "risk.csv", header, risk_rows, provenance)
    outputs = ["sharpe.csv", "risk.csv"]

    bv_n = opts.get("bv.n", default=n_list[0], cast=int)
    bv_reps = opts.get("bv.reps", default=min(reps, 50), cast=int)
    bv_points = opts.get("bv.points", default=20, cast=int)
    reference = sample_returns(pop, bv_n, (seed, 3)).data
    from .model_selection import default_penalty_grid

    grid = default_penalty_grid(reference, pop.r_bar, "ridge", num=bv_points)
    grid = grid[grid > 0]  # the L2 fit is defined for every positive penalty
    bv_rows = []
    if grid.size:
        reports = bias_variance_curve(
            pop, bv_n, grid, max(2, bv_reps), seed=derive_seed(seed, 3), n_jobs=n_jobs
        )
        bv_rows = [
            [_fmt(lam), _fmt(rep.risk), _fmt(rep.bias_sq), _fmt(rep.variance)]
            for lam, rep in zip(grid, reports)
        ]
    _write_table(
        outdir / "bias_variance.csv",
        ["penalty", "risk", "bias_sq", "variance"],
        bv_rows,
        provenance,
    )
    outputs.append("bias_variance.csv")

    diagnostics = dict(pop_meta)
    diagnostics["population_sharpe"] = result.population_sharpe
    failures = {
        f"{label}@n={n}": result.cell(label, n).n_failed
        for label in result.labels
        for n in n_list
        if result.cell(label, n).n_failed
    }
    messages = {
        f"{label}@n={n}": result.cell(label, n).message
        for label in result.labels
        for n in n_list
        if result.cell(label, n).message
    }
    diagnostics["cell_failures"] = failures
    diagnostics["cell_messages"] = messages
    _write_manifest(outdir, "simulate", semantic, config_hash, diagnostics, outputs)
    return 0


def _stars(p) -> str:
    if p is None or (isinstance(p, float) and math.isnan(p)):
        return ""
    if p < 0.01:
        return "***"
    if p < 0.05:
        return "**"
    if p < 0.10:
        return "*"
    return ""


def _cmd_backtest(opts) -> int:
    returns, diag = _load_returns(opts)
    r_bar = _resolve_r_bar(opts)
    seed = opts.get("seed", default=0, cast=int)
    cv_k = _parse_cv_k(opts.get("cv_k", default=5))
    window = opts.get("window", cast=int)
    if window is None:
        raise ValueError("a rolling window length is required (--window)")
    strategies = _parse_strategies(opts.get("strategies"), "mv,ridge,lasso,pcr,equal")
    n_jobs = opts.get("jobs", default=1, cast=int)
    outdir = Path(opts.get("out"))
    outdir.mkdir(parents=True, exist_ok=True)

    semantic = {
        "command": "backtest",
        "input": str(opts.get("input")),
        "r_bar": r_bar,
        "window": window,
        "cv_k": cv_k,
        "seed": seed,
        "strategies": [s.label for s in strategies],
        "subtract_rf": opts.get("subtract_rf", cast=float),
        "drop_extreme": opts.get("drop_extreme", cast=float),
    }
    config_hash = _config_hash(semantic)
    provenance = f"config_hash={config_hash} seed={seed}"

    cfg = BacktestConfig(window=window, strategies=strategies, cv_k=cv_k, seed=seed)
    result = run_backtest(returns, cfg, r_bar=r_bar, n_jobs=n_jobs)

    oos_rows = [
        [str(result.periods[t]), *[_fmt(result.oos_returns[s, t]) for s in range(len(result.labels))]]
        for t in range(result.oos_returns.shape[1])
    ]
    _write_table(outdir / "oos_returns.csv", ["period", *result.labels], oos_rows, provenance)

    summary_rows = [
        [label, _fmt(result.means[i]), _fmt(result.stds[i]), _fmt(result.sharpes[i])]
        for i, label in enumerate(result.labels)
    ]
    _write_table(
        outdir / "sharpe_summary.csv", ["strategy", "mean", "std", "sharpe"], summary_rows, provenance
    )

    z_rows = [
        [label, *[_fmt(result.jk_z[i, j]) for j in range(len(result.labels))]]
        for i, label in enumerate(result.labels)
    ]
    _write_table(outdir / "jk_z.csv", ["strategy", *result.labels], z_rows, provenance)

    table_rows = []
    for i, label in enumerate(result.labels):
        cells = []
        for j in range(i):
            if result.sharpes[i] is None or result.sharpes[j] is None or math.isnan(result.jk_z[i, j]):
                cells.append("-")
            else:
                diff = result.sharpes[i] - result.sharpes[j]
                cells.append(_fmt(diff) + _stars(result.jk_p[i, j]))
        table_rows.append([label, *cells])
    _write_table(
        outdir / "jk_table.csv",
        ["strategy", *result.labels[: max(0, len(result.labels) - 1)]],
        table_rows,
        provenance,
    )

    diag["window_failures"] = {
        label: result.n_window_failures[i]
        for i, label in enumerate(result.labels)
        if result.n_window_failures[i]
    }
    outputs = ["oos_returns.csv", "sharpe_summary.csv", "jk_z.csv", "jk_table.csv"]
    _write_manifest(outdir, "backtest", semantic, config_hash, diag, outputs)
    return 0


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def _add_common(parser):
    parser.add_argument("--config", help="flat key=value configuration file")
    parser.add_argument("--rbar", type=float, help="ideal return (regression target), default 1.0")
    parser.add_argument("--alpha", type=float, help="risk aversion; implies rbar=(1-alpha*rf)/alpha")
    parser.add_argument("--rf", type=float, help="risk-free return used with --alpha")
    parser.add_argument("--cv-k", dest="cv_k", help="number of CV folds, or 'loo'")
    parser.add_argument("--seed", type=int, help="base seed; all randomness derives from it")
    parser.add_argument("--strategies", help="comma list, e.g. mv,ridge,lasso:0.1,pcr")
    parser.add_argument("--jobs", type=int, help="parallel workers (results are identical)")
    parser.add_argument("--out", required=True, help="output directory")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="portlearn",
        description="Penalized-regression portfolio weights, estimation-risk "
        "simulations and rolling-sample backtests.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_est = sub.add_parser("estimate", help="fit strategies on a full returns panel")
    p_est.add_argument("--input", help="returns CSV (period column + one column per asset)")
    p_est.add_argument("--subtract-rf", dest="subtract_rf", type=float,
                       help="subtract a constant risk-free return from every cell")
    p_est.add_argument("--drop-extreme", dest="drop_extreme", type=float,
                       help="drop whole periods containing any |return| above this")
    _add_common(p_est)

    p_sim = sub.add_parser("simulate", help="Monte-Carlo study on a synthetic population")
    p_sim.add_argument("--pop", help="population JSON file {mu, sigma, r_bar}")
    p_sim.add_argument("--n-list", dest="n_list", help="comma list of sample sizes")
    p_sim.add_argument("--reps", type=int, help="replications per cell")
    _add_common(p_sim)

    p_bt = sub.add_parser("backtest", help="rolling-sample out-of-sample evaluation")
    p_bt.add_argument("--input", help="returns CSV (period column + one column per asset)")
    p_bt.add_argument("--window", type=int, help="estimation window length")
    p_bt.add_argument("--subtract-rf", dest="subtract_rf", type=float,
                      help="subtract a constant risk-free return from every cell")
    p_bt.add_argument("--drop-extreme", dest="drop_extreme", type=float,
                      help="drop whole periods containing any |return| above this")
    _add_common(p_bt)

    args = parser.parse_args(argv)
    config = read_config(args.config) if args.config else {}
    opts = _Options(args, config)
    commands = {"estimate": _cmd_estimate, "simulate": _cmd_simulate, "backtest": _cmd_backtest}
    try:
        return commands[args.command](opts)
    except (PortfolioError, ValueError, OSError, KeyError, json.JSONDecodeError) as exc:
        record = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(record, sort_keys=True), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
