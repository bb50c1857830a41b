"""Experiment specs and the work behind each CLI subcommand."""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np

from . import bias, stats
from .clearing import run_simulation
from .market import FIELDS as CONFIG_FIELDS
from .market import Mode, PriceSeries, Proceeds, SimConfig

__all__ = [
    "ConfigError",
    "ExperimentSpec",
    "parse_config",
    "spec_from_dict",
    "serialize_spec",
    "parse_mode",
    "cmd_simulate",
    "cmd_compare",
    "cmd_bias",
    "cmd_analyze",
    "analyze_series",
]

DEFAULT_BURN_IN = 500
EXPERIMENT_FIELDS = ("repetitions", "output_dir", "emit_trades", "burn_in")


class ConfigError(ValueError):
    def __init__(self, problems: list[str]) -> None:
        super().__init__("; ".join(problems))
        self.problems = problems


def parse_mode(value: str | Mode) -> Mode:
    if isinstance(value, Mode):
        return value
    try:
        return Mode(str(value).strip().lower().replace("-", "_"))
    except ValueError:
        raise ConfigError([f"mode: unknown clearing mode {value!r} (choose from {[m.value for m in Mode]})"]) from None


@dataclass(frozen=True)
class ExperimentSpec:
    config: SimConfig
    repetitions: int = 1
    output_dir: str = "out"
    emit_trades: bool = False
    burn_in: int = DEFAULT_BURN_IN

    def __post_init__(self) -> None:
        problems = []
        if not _is_int(self.repetitions) or self.repetitions < 1:
            problems.append(f"repetitions: must be a positive integer, got {self.repetitions!r}")
        if not _is_int(self.burn_in) or self.burn_in < 0:
            problems.append(f"burn_in: must be a non-negative integer, got {self.burn_in!r}")
        elif self.config.horizon > 0 and self.burn_in >= self.config.horizon:
            problems.append(f"burn_in: {self.burn_in} must be below horizon {self.config.horizon}")
        if problems:
            raise ConfigError(problems)

    @property
    def seed_base(self) -> int:
        return self.config.seed

    def seeds(self) -> list[int]:
        return [(self.seed_base + r) % 2**64 for r in range(self.repetitions)]


def _is_int(v: Any) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_number(v: Any) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


_INT_KEYS = {"n_traders", "n_assets", "horizon", "initial_shares", "seed", "order_size", "repetitions", "burn_in"}
_NUM_KEYS = {"initial_cash", "initial_price", "sigma"}


def spec_from_dict(doc: Mapping[str, Any]) -> ExperimentSpec:
    """Validate a config mapping; missing keys take the reference defaults."""
    if not isinstance(doc, Mapping):
        raise ConfigError(["config document must be a JSON object"])
    problems: list[str] = []
    known = set(CONFIG_FIELDS) | set(EXPERIMENT_FIELDS)
    for key in doc:
        if key not in known:
            problems.append(f"{key}: unknown key")
    for key, value in doc.items():
        if key in _INT_KEYS and not _is_int(value):
            problems.append(f"{key}: expected an integer, got {value!r}")
        elif key in _NUM_KEYS and not (_is_number(value) and math.isfinite(value)):
            problems.append(f"{key}: expected a number, got {value!r}")
        elif key == "emit_trades" and not isinstance(value, bool):
            problems.append(f"emit_trades: expected true/false, got {value!r}")
        elif key == "output_dir" and not isinstance(value, str):
            problems.append(f"output_dir: expected a path string, got {value!r}")
        elif key == "proceeds" and value not in [p.value for p in Proceeds]:
            problems.append(f"proceeds: expected one of {[p.value for p in Proceeds]}, got {value!r}")
    if "mode" in doc:
        try:
            parse_mode(doc["mode"])
        except ConfigError as exc:
            problems.extend(exc.problems)
    cfg_kwargs = {k: doc[k] for k in CONFIG_FIELDS if k in doc}
    # range checks on every value that passed the type checks above
    flagged = {p.split(":")[0] for p in problems}
    checkable = {k: v for k, v in cfg_kwargs.items() if k not in flagged}
    if "mode" in checkable:
        checkable["mode"] = parse_mode(checkable["mode"])
    problems.extend(_field_errors(checkable))
    if problems:
        raise ConfigError(problems)
    if "mode" in cfg_kwargs:
        cfg_kwargs["mode"] = parse_mode(cfg_kwargs["mode"])
    config = SimConfig(**cfg_kwargs)

    exp_kwargs = {k: doc[k] for k in EXPERIMENT_FIELDS if k in doc}
    if "burn_in" not in exp_kwargs:
        exp_kwargs["burn_in"] = min(DEFAULT_BURN_IN, max(config.horizon - 1, 0))
    return ExperimentSpec(config=config, **exp_kwargs)


def _field_errors(values: Mapping[str, Any]) -> list[str]:
    """Field-level diagnostics for a partial config (defaults fill the rest)."""
    defaults = SimConfig()
    probe = type("Probe", (), {f: values.get(f, getattr(defaults, f)) for f in CONFIG_FIELDS})()
    return [_with_field(p) for p in SimConfig.validation_errors(probe)]


def _with_field(problem: str) -> str:
    name, _, rest = problem.partition(" ")
    return f"{name}: {rest}"


def parse_config(source: str | os.PathLike | None) -> ExperimentSpec:
    """Read a JSON config file (``None`` means all defaults)."""
    if source is None:
        return spec_from_dict({})
    try:
        text = Path(source).read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read config {source}: {exc}"]) from None
    try:
        doc = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError([f"malformed JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from None
    return spec_from_dict(doc)


def serialize_spec(spec: ExperimentSpec) -> dict:
    out = spec.config.to_dict()
    out.update(
        repetitions=spec.repetitions,
        output_dir=spec.output_dir,
        emit_trades=spec.emit_trades,
        burn_in=spec.burn_in,
    )
    return out


def _write_json(path: Path, doc: Any) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _prepare_dir(path: str | os.PathLike) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc}") from exc
    if not os.access(out, os.W_OK):
        raise OSError(f"output directory {out} is not writable")
    return out


def cmd_simulate(spec: ExperimentSpec) -> list[Path]:
    """One CSV + meta JSON per repetition; returns the files written."""
    out = _prepare_dir(spec.output_dir)
    written: list[Path] = []
    for r, seed in enumerate(spec.seeds()):
        cfg = spec.config.replace(seed=seed)
        start = time.perf_counter()
        series = run_simulation(cfg, record_trades=spec.emit_trades)
        wall = time.perf_counter() - start
        csv_path = out / f"run_{r}.csv"
        series.write_csv(csv_path)
        written.append(csv_path)
        if spec.emit_trades:
            trades_path = out / f"run_{r}.trades.csv"
            series.write_trades_csv(trades_path)
            written.append(trades_path)
        meta = {
            "repetition": r,
            "seed": seed,
            "mode": cfg.mode.value,
            "config": cfg.to_dict(),
            "wall_time_s": wall,
            "rejected_trades": int(series.rejected.sum()),
            "executed_trades": int(series.volumes.sum()),
        }
        meta_path = out / f"run_{r}.meta.json"
        _write_json(meta_path, meta)
        written.append(meta_path)
    return written


def _safe(fn, *args):
    try:
        return fn(*args).to_dict()
    except stats.StatisticsError as exc:
        return {"error": str(exc)}


def _spearman_index_vs_level(closes: np.ndarray) -> float | None:
    try:
        return stats.spearman_rank(np.arange(closes.shape[1]), closes.mean(axis=0))
    except stats.StatisticsError:
        return None


def analyze_series(series: PriceSeries, burn_in: int = DEFAULT_BURN_IN, lags: int | None = None) -> dict:
    """ADF per asset, KW and Bartlett across assets, terminal summary, Spearman."""
    if series.horizon == 0:
        raise ValueError("cannot analyse an empty series")
    if not 0 <= burn_in < series.horizon:
        raise ValueError(f"burn_in {burn_in} must lie in [0, {series.horizon})")
    post = series.closes[burn_in:]
    groups = [post[:, j] for j in range(post.shape[1])]
    report = {
        "burn_in": burn_in,
        "n_ticks": int(post.shape[0]),
        "adf": [_safe(stats.adf_test, g, lags) for g in groups],
        "kruskal_wallis": _safe(stats.kruskal_wallis, groups) if len(groups) > 1 else None,
        "bartlett": _safe(stats.bartlett, groups) if len(groups) > 1 else None,
        "terminal": stats.terminal_summary(series),
        "mean_price": post.mean(axis=0).tolist(),
        "spearman_index_price": _spearman_index_vs_level(post) if len(groups) > 1 else None,
    }
    return report


def cmd_analyze(path: str | os.PathLike, burn_in: int = DEFAULT_BURN_IN, lags: int | None = None) -> dict:
    return analyze_series(PriceSeries.read_csv(path), burn_in, lags)


def _mode_report(series: PriceSeries, burn_in: int) -> dict:
    post = series.closes[burn_in:]
    groups = [post[:, j] for j in range(post.shape[1])]
    multi = len(groups) > 1
    return {
        "terminal": stats.terminal_summary(series),
        "mean_price": post.mean(axis=0).tolist(),
        "spearman_index_price": _spearman_index_vs_level(post) if multi else None,
        "kruskal_wallis": _safe(stats.kruskal_wallis, groups) if multi else None,
        "bartlett": _safe(stats.bartlett, groups) if multi else None,
        "rejected_trades": int(series.rejected.sum()),
    }


def cmd_compare(spec: ExperimentSpec) -> dict:
    """Sequential vs round-robin parallel clearing on the same seeds."""
    out = _prepare_dir(spec.output_dir)
    modes = (Mode.SEQUENTIAL, Mode.PARALLEL_DETERMINISTIC)
    runs = []
    for r, seed in enumerate(spec.seeds()):
        entry: dict[str, Any] = {"repetition": r, "seed": seed}
        for mode in modes:
            cfg = spec.config.replace(seed=seed, mode=mode)
            series = run_simulation(cfg)
            series.write_csv(out / f"{mode.value}_{r}.csv")
            entry[mode.value] = _mode_report(series, spec.burn_in)
        seq_sd = entry[Mode.SEQUENTIAL.value]["terminal"]["std"]
        par_sd = entry[Mode.PARALLEL_DETERMINISTIC.value]["terminal"]["std"]
        entry["sigma_ratio"] = (seq_sd / par_sd) if par_sd > 0 else (None if seq_sd > 0 else 1.0)
        runs.append(entry)
    ratios = [e["sigma_ratio"] for e in runs if e["sigma_ratio"] is not None]
    rhos = [e[Mode.SEQUENTIAL.value]["spearman_index_price"] for e in runs]
    report = {
        "config": serialize_spec(spec),
        "runs": runs,
        "summary": {
            "median_sigma_ratio": float(np.median(ratios)) if ratios else None,
            "sequential_spearman_le_-0.8": (
                sum(1 for x in rhos if x is not None and x <= -0.8) / len(rhos) if rhos else None
            ),
        },
    }
    _write_json(out / "compare.json", report)
    return report


def cmd_bias(
    budgets: list[float],
    price: float,
    n_assets: int,
    regime: str = "both",
    trials: int = 0,
    seed: int = 0,
    output_dir: str | os.PathLike | None = None,
) -> dict:
    """Exact and Monte Carlo buy probabilities plus ordering verdicts."""
    model = bias.BiasModel(np.asarray(budgets, dtype=np.float64), float(price), int(n_assets))
    if regime == "both":
        regimes = [Mode.SEQUENTIAL, Mode.PARALLEL]
    elif regime in ("sequential", "parallel"):
        regimes = [Mode(regime)]
    else:
        raise ValueError(f"regime must be sequential, parallel or both, got {regime!r}")
    if trials < 0:
        raise ValueError("trials must be non-negative")
    out = _prepare_dir(output_dir) if output_dir is not None else None
    report: dict[str, Any] = {
        "budgets": model.budgets.tolist(),
        "price": model.price,
        "n_assets": model.n_assets,
        "affordable_units": [bias.affordable_units(b, model.price) for b in model.budgets],
    }
    for mode in regimes:
        table = bias.sequential_probs(model) if mode is Mode.SEQUENTIAL else bias.parallel_probs(model)
        verdict = bias.check_volume_ordering(table, mode, model if mode is Mode.SEQUENTIAL else None)
        if mode is Mode.PARALLEL:
            flag = "equal" if verdict.ok else "violated"
        elif all(s == "weak" for s in verdict.segments):
            flag = "weak (non-binding)"
        elif all(s == "strict" for s in verdict.segments):
            flag = "strict"
        else:
            flag = "mixed"
        entry: dict[str, Any] = {
            "p": table.p.tolist(),
            "expected_volume": table.expected_volume.tolist(),
            "verdict": verdict.to_dict(),
            "flag": flag,
        }
        if trials > 0:
            mc = bias.mc_probs(model, mode, trials, seed)
            within = np.abs(mc.expected_volume - table.expected_volume) <= 3 * np.maximum(mc.volume_stderr, 1e-15)
            entry["monte_carlo"] = {
                "trials": trials,
                "seed": seed,
                "expected_volume": mc.expected_volume.tolist(),
                "volume_stderr": mc.volume_stderr.tolist(),
                "within_3se": within.tolist(),
            }
        report[mode.value] = entry
        if out is not None:
            with open(out / f"bias_{mode.value}.csv", "w", newline="") as fh:
                fh.write("trader,asset,p\n")
                for i, a, p in table.rows():
                    fh.write(f"{i},{a},{p!r}\n")
    if out is not None:
        _write_json(out / "bias.json", report)
    return report
