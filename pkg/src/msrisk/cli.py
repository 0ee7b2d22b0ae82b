"""Batch command line front end.

Subcommands cover data ingestion and description, model fitting and
selection, state decoding, tail-risk paths, Shapley attribution, panel
simulation, and a one-shot pipeline that chains all of the above and
writes plot-ready artifacts.

Exit codes are stable:
  0  success
  2  bad configuration or usage
  3  file system error (missing input, unreadable or unwritable file)
  4  malformed CSV or panel content
  5  invalid or non-increasing dates
  6  missing or unknown columns
  7  missing values in the input
  8  model fit failure
  9  numerical failure
"""

from __future__ import annotations

import argparse
import configparser
import csv
import datetime
import io
import json
import math
import os
import subprocess
import sys
import tempfile
from dataclasses import dataclass, fields
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .core import (
    ConditioningSpec,
    DegenerateStateError,
    DofConvention,
    FitFailureError,
    FittedModel,
    ModelFamily,
    MsriskError,
    NumericalError,
    PanelError,
    ParamError,
    ReturnPanel,
    RiskMeasure,
    model_from_json,
    model_to_json,
    params_from_json,
)
from .inference import FitOptions, e_step, fit, select, viterbi
from .predictive import PredictiveSpec, predictive_mixture
from .risk import es_mixture, risk_path, var_mixture
from .shapley import attribution_path
from .sim import simulate

__all__ = [
    "CliError",
    "RunConfig",
    "describe",
    "ingest",
    "main",
    "run_pipeline",
]

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_FILESYSTEM = 3
EXIT_MALFORMED = 4
EXIT_DATES = 5
EXIT_COLUMNS = 6
EXIT_MISSING_VALUES = 7
EXIT_FIT = 8
EXIT_NUMERICAL = 9

_MEASURE_ORDER = (
    RiskMeasure.VAR,
    RiskMeasure.ES,
    RiskMeasure.MCOVAR,
    RiskMeasure.MCOES,
    RiskMeasure.DELTA_MCOVAR,
    RiskMeasure.DELTA_MCOES,
)

_CONDITIONAL = (
    RiskMeasure.MCOVAR,
    RiskMeasure.MCOES,
    RiskMeasure.DELTA_MCOVAR,
    RiskMeasure.DELTA_MCOES,
)


class CliError(MsriskError):
    """An error with a stable process exit code."""

    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = int(code)


# ---------------------------------------------------------------------------
# ingestion


def _split_row(header: list, row: list, lineno: int) -> list:
    if len(row) != len(header):
        raise CliError(
            EXIT_MALFORMED,
            f"line {lineno}: expected {len(header)} fields, got {len(row)}")
    return [cell.strip() for cell in row]


def ingest(path: str, date_column: str = "date",
           asset_columns: Optional[Sequence[str]] = None,
           to_returns: bool = False) -> ReturnPanel:
    """Read a CSV panel (RFC 4180, UTF-8, '.' decimal, ISO-8601 dates).

    The file holds either returns directly or raw prices; with
    to_returns=True prices are converted to log returns ln(P_t / P_{t-1})
    and the first row's date is dropped.  Any missing value is an error
    naming the offending row and column.
    """
    if not os.path.exists(path):
        raise CliError(EXIT_FILESYSTEM, f"input file not found: {path}")
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise CliError(EXIT_MALFORMED, f"{path}: empty file")
            header = [c.strip() for c in header]
            rows = []
            linenos = []
            try:
                for row in reader:
                    if not row:
                        continue
                    linenos.append(reader.line_num)
                    rows.append(row)
            except csv.Error as exc:
                raise CliError(EXIT_MALFORMED,
                               f"{path} line {reader.line_num}: {exc}")
    except OSError as exc:
        raise CliError(EXIT_FILESYSTEM, f"cannot read {path}: {exc}")

    if len(set(header)) != len(header):
        raise CliError(EXIT_MALFORMED, f"{path}: duplicate column names")
    if date_column not in header:
        raise CliError(EXIT_COLUMNS,
                       f"{path}: date column {date_column!r} not found")
    if asset_columns is None:
        asset_columns = [c for c in header if c != date_column]
    else:
        asset_columns = [str(c) for c in asset_columns]
        missing = [c for c in asset_columns if c not in header]
        if missing:
            raise CliError(EXIT_COLUMNS,
                           f"{path}: columns not found: {', '.join(missing)}")
    if not asset_columns:
        raise CliError(EXIT_COLUMNS, f"{path}: no asset columns")
    date_idx = header.index(date_column)
    asset_idx = [header.index(c) for c in asset_columns]

    blanks = []
    for row, lineno in zip(rows, linenos):
        cells = _split_row(header, row, lineno)
        for j in [date_idx] + asset_idx:
            if cells[j] == "":
                blanks.append((lineno, header[j]))
    if blanks:
        shown = "; ".join(f"line {ln}, column {col!r}"
                          for ln, col in blanks[:5])
        more = "" if len(blanks) <= 5 else f" (+{len(blanks) - 5} more)"
        raise CliError(EXIT_MISSING_VALUES,
                       f"{path}: missing values at {shown}{more}")

    timestamps = []
    values = np.empty((len(rows), len(asset_idx)))
    prev = None
    for i, (row, lineno) in enumerate(zip(rows, linenos)):
        cells = _split_row(header, row, lineno)
        try:
            d = datetime.date.fromisoformat(cells[date_idx])
        except ValueError:
            raise CliError(
                EXIT_DATES,
                f"{path} line {lineno}: invalid ISO date "
                f"{cells[date_idx]!r}")
        if prev is not None and d <= prev:
            raise CliError(EXIT_DATES,
                           f"{path} line {lineno}: dates not strictly "
                           f"increasing ({prev} then {d})")
        prev = d
        timestamps.append(d.isoformat())
        for k, j in enumerate(asset_idx):
            try:
                x = float(cells[j])
            except ValueError:
                raise CliError(
                    EXIT_MALFORMED,
                    f"{path} line {lineno}, column {header[j]!r}: "
                    f"not a number: {cells[j]!r}")
            if not math.isfinite(x):
                raise CliError(
                    EXIT_MALFORMED,
                    f"{path} line {lineno}, column {header[j]!r}: "
                    f"non-finite value")
            values[i, k] = x

    if to_returns:
        if values.shape[0] < 2:
            raise CliError(EXIT_MALFORMED,
                           f"{path}: need at least 2 price rows")
        if np.any(values <= 0.0):
            i, k = np.argwhere(values <= 0.0)[0]
            raise CliError(
                EXIT_MALFORMED,
                f"{path} line {linenos[i]}, column "
                f"{asset_columns[k]!r}: nonpositive price")
        values = np.log(values[1:] / values[:-1])
        timestamps = timestamps[1:]
    if values.shape[0] < 2:
        raise CliError(EXIT_MALFORMED, f"{path}: need at least 2 data rows")
    try:
        return ReturnPanel(timestamps, asset_columns, values)
    except PanelError as exc:
        raise CliError(EXIT_MALFORMED, f"{path}: {exc}")


# ---------------------------------------------------------------------------
# descriptive statistics

_DESCRIBE_COLUMNS = ("asset", "min", "max", "mean_x1e3", "std", "skewness",
                     "kurtosis", "q01", "jarque_bera")


def describe(panel: ReturnPanel) -> list:
    """Per-asset summary rows: min, max, mean (x 10^3), sample std,
    bias-uncorrected skewness, raw kurtosis (Gaussian = 3), 1% empirical
    quantile (linear interpolation), and the Jarque-Bera statistic
    T/6 (skew^2 + (kurt - 3)^2 / 4)."""
    if panel.T < 8:
        raise PanelError(f"describe needs T >= 8 rows, got {panel.T}")
    out = []
    for k, name in enumerate(panel.assets):
        x = panel.values[:, k]
        c = x - x.mean()
        m2 = float(np.mean(c ** 2))
        # a constant column can leave m2 at rounding-noise level rather
        # than exactly 0; test constancy of the data itself
        if m2 == 0.0 or float(x.max()) == float(x.min()):
            raise NumericalError(f"column {name!r} has zero variance")
        skew = float(np.mean(c ** 3)) / m2 ** 1.5
        kurt = float(np.mean(c ** 4)) / m2 ** 2
        jb = panel.T / 6.0 * (skew ** 2 + (kurt - 3.0) ** 2 / 4.0)
        out.append({
            "asset": name,
            "min": float(x.min()),
            "max": float(x.max()),
            "mean_x1e3": float(x.mean() * 1e3),
            "std": float(x.std(ddof=1)),
            "skewness": skew,
            "kurtosis": kurt,
            "q01": float(np.quantile(x, 0.01)),
            "jarque_bera": jb,
        })
    return out


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Merged run settings; precedence is CLI flag > config file > default."""

    input_path: Optional[str] = None
    output_dir: Optional[str] = None
    date_column: str = "date"
    asset_columns: Optional[tuple] = None
    market_column: Optional[str] = None
    to_returns: bool = False
    family: ModelFamily = ModelFamily.STUDENT_T
    L: Optional[int] = None
    L_range: Optional[tuple] = None
    tau1: float = 0.05
    tau2: float = 0.05
    horizon: int = 1
    measures: tuple = _MEASURE_ORDER
    shapley_measure: RiskMeasure = RiskMeasure.DELTA_MCOVAR
    signed: bool = False
    restarts: int = 20
    max_iter: int = 1000
    seed: int = 0
    dof_convention: DofConvention = DofConvention.PAPER


def _parse_bool(text: str, key: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise CliError(EXIT_CONFIG, f"config key {key!r}: not a boolean: {text!r}")


def _parse_int(text: str, key: str) -> int:
    try:
        return int(text)
    except ValueError:
        raise CliError(EXIT_CONFIG,
                       f"config key {key!r}: not an integer: {text!r}")


def _parse_float(text: str, key: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise CliError(EXIT_CONFIG,
                       f"config key {key!r}: not a number: {text!r}")


def _parse_states_range(text: str) -> tuple:
    text = text.strip()
    try:
        if "-" in text:
            lo, hi = text.split("-", 1)
            lo, hi = int(lo), int(hi)
            if hi < lo:
                raise ValueError
            return tuple(range(lo, hi + 1))
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise CliError(EXIT_CONFIG,
                       f"bad states range {text!r} (use '1-3' or '1,2,3')")


def _parse_measures(text: str) -> tuple:
    out = []
    for part in text.split(","):
        part = part.strip()
        try:
            out.append(RiskMeasure(part))
        except ValueError:
            raise CliError(EXIT_CONFIG, f"unknown measure {part!r}")
    if not out:
        raise CliError(EXIT_CONFIG, "empty measure list")
    return tuple(out)


def _parse_enum(cls, text: str, what: str):
    try:
        return cls(text.strip())
    except ValueError:
        allowed = ", ".join(m.value for m in cls)
        raise CliError(EXIT_CONFIG, f"bad {what} {text!r} (one of: {allowed})")


# config file key -> (RunConfig field, parser)
_CONFIG_KEYS = {
    "input": ("input_path", lambda v, k: v),
    "out": ("output_dir", lambda v, k: v),
    "date_column": ("date_column", lambda v, k: v),
    "columns": ("asset_columns",
                lambda v, k: tuple(c.strip() for c in v.split(",") if c.strip())),
    "market_column": ("market_column", lambda v, k: v),
    "to_returns": ("to_returns", _parse_bool),
    "family": ("family", lambda v, k: _parse_enum(ModelFamily, v, "family")),
    "states": ("L", _parse_int),
    "states_range": ("L_range", lambda v, k: _parse_states_range(v)),
    "tau1": ("tau1", _parse_float),
    "tau2": ("tau2", _parse_float),
    "horizon": ("horizon", _parse_int),
    "measures": ("measures", lambda v, k: _parse_measures(v)),
    "shapley_measure": ("shapley_measure",
                        lambda v, k: _parse_enum(RiskMeasure, v, "measure")),
    "signed": ("signed", _parse_bool),
    "restarts": ("restarts", _parse_int),
    "max_iter": ("max_iter", _parse_int),
    "seed": ("seed", _parse_int),
    "dof_convention": ("dof_convention",
                       lambda v, k: _parse_enum(DofConvention, v,
                                                "dof convention")),
}


def _read_config_file(path: str) -> dict:
    """Flat INI-style key=value file; a [section] header is optional."""
    if not os.path.exists(path):
        raise CliError(EXIT_CONFIG, f"config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise CliError(EXIT_FILESYSTEM, f"cannot read {path}: {exc}")
    if not any(line.lstrip().startswith("[") for line in text.splitlines()):
        text = "[run]\n" + text
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise CliError(EXIT_CONFIG, f"bad config file {path}: {exc}")
    out = {}
    for section in parser.sections():
        for key, value in parser.items(section):
            key = key.lower()
            if key not in _CONFIG_KEYS:
                raise CliError(EXIT_CONFIG,
                               f"{path}: unknown config key {key!r}")
            field_name, parse = _CONFIG_KEYS[key]
            out[field_name] = parse(value, key)
    return out


def _build_config(args: argparse.Namespace) -> RunConfig:
    """Defaults, then config file values, then explicit CLI flags."""
    merged = {}
    config_path = getattr(args, "config", None)
    if config_path:
        merged.update(_read_config_file(config_path))
    overrides = {
        "input_path": getattr(args, "input", None),
        "output_dir": getattr(args, "out", None),
        "date_column": getattr(args, "date_column", None),
        "asset_columns": getattr(args, "columns", None),
        "market_column": getattr(args, "market_column", None),
        "to_returns": getattr(args, "to_returns", None),
        "family": getattr(args, "family", None),
        "L": getattr(args, "states", None),
        "L_range": getattr(args, "states_range", None),
        "tau1": getattr(args, "tau1", None),
        "tau2": getattr(args, "tau2", None),
        "horizon": getattr(args, "horizon", None),
        "measures": getattr(args, "measures", None),
        "shapley_measure": getattr(args, "measure", None),
        "signed": getattr(args, "signed", None),
        "restarts": getattr(args, "restarts", None),
        "max_iter": getattr(args, "max_iter", None),
        "seed": getattr(args, "seed", None),
        "dof_convention": getattr(args, "dof_convention", None),
    }
    for key, value in overrides.items():
        if value is not None:
            merged[key] = value
    cfg = RunConfig(**merged)
    _validate_config(cfg)
    return cfg


def _validate_config(cfg: RunConfig) -> None:
    if not (0.0 < cfg.tau1 < 0.5):
        raise CliError(EXIT_CONFIG,
                       f"tau1 must lie in (0, 0.5), got {cfg.tau1}")
    if not (0.0 < cfg.tau2 < 0.5):
        raise CliError(EXIT_CONFIG,
                       f"tau2 must lie in (0, 0.5), got {cfg.tau2}")
    if cfg.horizon < 1:
        raise CliError(EXIT_CONFIG, f"horizon must be >= 1, got {cfg.horizon}")
    if cfg.restarts < 1:
        raise CliError(EXIT_CONFIG,
                       f"restarts must be >= 1, got {cfg.restarts}")
    if cfg.max_iter < 1:
        raise CliError(EXIT_CONFIG,
                       f"max_iter must be >= 1, got {cfg.max_iter}")
    if cfg.L is not None and cfg.L_range is not None:
        raise CliError(EXIT_CONFIG,
                       "give either states or states_range, not both")
    if cfg.L is not None and cfg.L < 1:
        raise CliError(EXIT_CONFIG, f"states must be >= 1, got {cfg.L}")
    if cfg.L_range is not None and (not cfg.L_range
                                    or min(cfg.L_range) < 1):
        raise CliError(EXIT_CONFIG, f"bad states range {cfg.L_range}")
    if cfg.shapley_measure not in (RiskMeasure.DELTA_MCOVAR,
                                   RiskMeasure.DELTA_MCOES):
        raise CliError(EXIT_CONFIG,
                       "shapley_measure must be delta_mcovar or delta_mcoes")


def _require_input(cfg: RunConfig) -> str:
    if cfg.input_path is None:
        raise CliError(EXIT_CONFIG, "no input path given")
    return cfg.input_path


def _require_out(cfg: RunConfig) -> str:
    if cfg.output_dir is None:
        raise CliError(EXIT_CONFIG, "no output directory given (--out)")
    return cfg.output_dir


def _states_count(cfg: RunConfig) -> int:
    return cfg.L if cfg.L is not None else 2


def _fit_options(cfg: RunConfig) -> FitOptions:
    return FitOptions(restarts=cfg.restarts, max_iter=cfg.max_iter,
                      seed=cfg.seed)


def _target_index(panel: ReturnPanel, cfg: RunConfig) -> int:
    """Attribution target: the market column when set, else the first
    asset; the remaining assets are the conditioning institutions."""
    if cfg.market_column is None:
        return 0
    if cfg.market_column not in panel.assets:
        raise CliError(EXIT_COLUMNS,
                       f"market column {cfg.market_column!r} not in panel")
    return panel.assets.index(cfg.market_column)


# ---------------------------------------------------------------------------
# artifact writers


def _fmt(x: float) -> str:
    return repr(float(x))


def _atomic_write(path: str, text: str, created: Optional[list] = None):
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp.")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    if created is not None:
        created.append(path)


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _write_model(path: str, model: FittedModel, created: list) -> None:
    _atomic_write(path, model_to_json(model) + "\n", created)


def _write_selection(path: str, table, created: list) -> None:
    rows = []
    for i, row in enumerate(table.rows):
        rows.append([
            row.family.value, str(row.L), _fmt(row.loglik),
            str(row.n_params), _fmt(row.aic), _fmt(row.bic),
            "1" if row.converged else "0",
            "1" if i == table.min_aic_index else "0",
            "1" if i == table.min_bic_index else "0",
            row.error or "",
        ])
    header = ["family", "states", "loglik", "n_params", "aic", "bic",
              "converged", "best_aic", "best_bic", "error"]
    _atomic_write(path, _csv_text(header, rows), created)


def _write_states(path: str, timestamps: Sequence[str], states: np.ndarray,
                  smoothed: np.ndarray, created: list) -> None:
    L = smoothed.shape[1]
    header = ["date", "state"] + [f"smoothed_{l + 1}" for l in range(L)]
    rows = []
    for t, date in enumerate(timestamps):
        rows.append([date, str(int(states[t]) + 1)]
                    + [_fmt(smoothed[t, l]) for l in range(L)])
    _atomic_write(path, _csv_text(header, rows), created)


def _risk_rows(panel: ReturnPanel, model: FittedModel,
               cfg: RunConfig) -> list:
    """(date, asset, measure, value) rows: VaR/ES for every asset plus the
    conditional measures for the target given all other assets."""
    target = _target_index(panel, cfg)
    others = [j for j in range(panel.p) if j != target]
    by_key = {}
    for measure in cfg.measures:
        if measure in _CONDITIONAL:
            if not others:
                raise CliError(EXIT_CONFIG,
                               f"{measure.value} needs at least 2 assets")
            spec = ConditioningSpec(target=target, distressed=others,
                                    tau1=cfg.tau1, tau2=cfg.tau2)
            for point in risk_path(model, spec, measure, cfg.horizon,
                                   convention=cfg.dof_convention):
                by_key[(point.t, measure.value, target)] = point.value
        else:
            for j in range(panel.p):
                # the distressed set is ignored for var and es; any other
                # index keeps the spec valid on multivariate panels
                rest = [k for k in range(panel.p) if k != j]
                if rest:
                    spec = ConditioningSpec(target=j, distressed=rest[:1],
                                            tau1=cfg.tau1, tau2=cfg.tau2)
                    for point in risk_path(model, spec, measure, cfg.horizon,
                                           convention=cfg.dof_convention):
                        by_key[(point.t, measure.value, j)] = point.value
                else:
                    for t, value in _univariate_path(model, measure,
                                                     cfg.tau1, cfg.horizon):
                        by_key[(t, measure.value, j)] = value
    rows = []
    for t in range(1, panel.T + 1):
        date = panel.timestamps[t - 1]
        for measure in _MEASURE_ORDER:
            if measure not in cfg.measures:
                continue
            for j in range(panel.p):
                key = (t, measure.value, j)
                if key in by_key:
                    rows.append([date, panel.assets[j], measure.value,
                                 _fmt(by_key[key])])
    return rows


def _univariate_path(model: FittedModel, measure: RiskMeasure, tau: float,
                     h: int) -> list:
    out = []
    for t in range(1, model.T + 1):
        mix = predictive_mixture(model, PredictiveSpec(t, h))
        value = (var_mixture(mix, tau) if measure is RiskMeasure.VAR
                 else es_mixture(mix, tau))
        out.append((t, value))
    return out


def _write_risk(path: str, rows: list, created: list) -> None:
    _atomic_write(path, _csv_text(["date", "asset", "measure", "value"],
                                  rows), created)


def _write_shapley(path: str, panel: ReturnPanel, players: Sequence[str],
                   shares: np.ndarray, share_pct: np.ndarray,
                   created: list) -> None:
    rows = []
    for t in range(panel.T):
        date = panel.timestamps[t]
        for i, name in enumerate(players):
            rows.append([date, name, _fmt(shares[t, i]),
                         _fmt(share_pct[t, i])])
    _atomic_write(path, _csv_text(["date", "institution", "share",
                                   "share_pct"], rows), created)


def _summary_dict(panel: ReturnPanel, cfg: RunConfig, target: int,
                  path_result) -> dict:
    # path_result.players holds column indices; report asset names
    players = [panel.assets[j] for j in path_result.players]
    states = {}
    for label, entry in path_result.state_stats.items():
        block = {"count": entry["count"]}
        for key in ("mean_share", "var_share", "mean_share_pct",
                    "var_share_pct"):
            block[key] = {name: entry[key][i]
                          for i, name in enumerate(players)}
        states[str(label)] = block
    return {
        "target": panel.assets[target],
        "players": players,
        "measure": cfg.shapley_measure.value,
        "tau1": cfg.tau1,
        "tau2": cfg.tau2,
        "horizon": cfg.horizon,
        "dof_convention": cfg.dof_convention.value,
        "signed": cfg.signed,
        "n_origins": panel.T,
        "gaps": list(path_result.gaps),
        "states": states,
    }


def _config_echo(cfg: RunConfig) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, (ModelFamily, DofConvention, RiskMeasure)):
            v = v.value
        elif isinstance(v, tuple):
            v = [x.value if isinstance(x, RiskMeasure) else x for x in v]
        out[f.name] = v
    return out


def _git_describe() -> str:
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        proc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, cwd=here, timeout=10)
    except (OSError, subprocess.TimeoutExpired):
        return "unknown"
    if proc.returncode != 0:
        return "unknown"
    return proc.stdout.strip()


def _write_json(path: str, payload: dict, created: list) -> None:
    _atomic_write(path, json.dumps(payload, indent=2, sort_keys=True) + "\n",
                  created)


# ---------------------------------------------------------------------------
# subcommand bodies


def _names_from_shapley(panel: ReturnPanel, target: int) -> list:
    return [panel.assets[j] for j in range(panel.p) if j != target]


def _cmd_describe(args) -> int:
    cfg = _build_config(args)
    panel = ingest(_require_input(cfg), cfg.date_column, cfg.asset_columns,
                   cfg.to_returns)
    table = describe(panel)
    rows = [[r["asset"]] + [_fmt(r[c]) for c in _DESCRIBE_COLUMNS[1:]]
            for r in table]
    text = _csv_text(_DESCRIBE_COLUMNS, rows)
    if args.out_file:
        _atomic_write(args.out_file, text)
        print(args.out_file)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_simulate(args) -> int:
    try:
        with open(args.params, encoding="utf-8") as fh:
            params = params_from_json(fh.read())
    except FileNotFoundError:
        raise CliError(EXIT_FILESYSTEM,
                       f"params file not found: {args.params}")
    except (json.JSONDecodeError, KeyError) as exc:
        raise CliError(EXIT_MALFORMED, f"bad params file: {exc}")
    family = ModelFamily(args.family) if args.family else params.family
    out = simulate(params, family, args.T, args.seed or 0,
                   start_date=args.start_date)
    panel = out.panel
    header = ["date"] + list(panel.assets)
    rows = [[panel.timestamps[t]] + [_fmt(v) for v in panel.values[t]]
            for t in range(panel.T)]
    _atomic_write(args.out_file, _csv_text(header, rows))
    print(args.out_file)
    if args.states_out:
        rows = [[panel.timestamps[t], str(int(out.states[t]) + 1)]
                for t in range(panel.T)]
        _atomic_write(args.states_out, _csv_text(["date", "state"], rows))
        print(args.states_out)
    return EXIT_OK


def _cmd_fit(args) -> int:
    cfg = _build_config(args)
    panel = ingest(_require_input(cfg), cfg.date_column, cfg.asset_columns,
                   cfg.to_returns)
    out_dir = _require_out(cfg)
    os.makedirs(out_dir, exist_ok=True)
    model = fit(panel, _states_count(cfg), cfg.family, _fit_options(cfg))
    created = []
    _write_model(os.path.join(out_dir, "model.json"), model, created)
    print(f"family={model.family.value} states={model.L} "
          f"loglik={model.loglik:.6f} aic={model.aic:.6f} "
          f"bic={model.bic:.6f} converged={model.converged}")
    print(created[0])
    return EXIT_OK


def _cmd_select(args) -> int:
    cfg = _build_config(args)
    panel = ingest(_require_input(cfg), cfg.date_column, cfg.asset_columns,
                   cfg.to_returns)
    out_dir = _require_out(cfg)
    os.makedirs(out_dir, exist_ok=True)
    L_range = cfg.L_range or ((cfg.L,) if cfg.L else (1, 2, 3))
    families = ([cfg.family] if args.family or "family" in _file_keys(args)
                else list(ModelFamily))
    table = select(panel, L_range, families, _fit_options(cfg))
    created = []
    _write_selection(os.path.join(out_dir, "selection.csv"), table, created)
    best = table.best_bic()
    print(f"best_bic: family={best.family.value} states={best.L} "
          f"bic={best.bic:.6f}")
    print(created[0])
    return EXIT_OK


def _file_keys(args) -> set:
    config_path = getattr(args, "config", None)
    if not config_path or not os.path.exists(config_path):
        return set()
    try:
        return set(_read_config_file(config_path))
    except CliError:
        return set()


def _load_model(path: str) -> FittedModel:
    try:
        with open(path, encoding="utf-8") as fh:
            return model_from_json(fh.read())
    except FileNotFoundError:
        raise CliError(EXIT_FILESYSTEM, f"model file not found: {path}")
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise CliError(EXIT_MALFORMED, f"bad model file {path}: {exc}")


def _cmd_decode(args) -> int:
    cfg = _build_config(args)
    panel = ingest(_require_input(cfg), cfg.date_column, cfg.asset_columns,
                   cfg.to_returns)
    model = _load_model(args.model)
    if model.params.p != panel.p:
        raise CliError(EXIT_CONFIG,
                       f"model has {model.params.p} assets, panel has "
                       f"{panel.p}")
    out_dir = _require_out(cfg)
    os.makedirs(out_dir, exist_ok=True)
    states = viterbi(panel, model.params, model.family)
    stats = e_step(panel, model.params, model.family)
    created = []
    _write_states(os.path.join(out_dir, "states.csv"), panel.timestamps,
                  states, stats.zhat, created)
    print(created[0])
    return EXIT_OK


def _check_model_panel(model: FittedModel, panel: ReturnPanel) -> None:
    if model.params.p != panel.p:
        raise CliError(EXIT_CONFIG,
                       f"model has {model.params.p} assets, panel has "
                       f"{panel.p}")
    if model.T != panel.T:
        raise CliError(EXIT_CONFIG,
                       f"model was fitted on T={model.T} rows, panel has "
                       f"T={panel.T}")


def _cmd_risk(args) -> int:
    cfg = _build_config(args)
    panel = ingest(_require_input(cfg), cfg.date_column, cfg.asset_columns,
                   cfg.to_returns)
    model = _load_model(args.model)
    _check_model_panel(model, panel)
    out_dir = _require_out(cfg)
    os.makedirs(out_dir, exist_ok=True)
    created = []
    rows = _risk_rows(panel, model, cfg)
    _write_risk(os.path.join(out_dir, "risk_path.csv"), rows, created)
    print(created[0])
    return EXIT_OK


def _cmd_shapley(args) -> int:
    cfg = _build_config(args)
    panel = ingest(_require_input(cfg), cfg.date_column, cfg.asset_columns,
                   cfg.to_returns)
    model = _load_model(args.model)
    _check_model_panel(model, panel)
    if panel.p < 2:
        raise CliError(EXIT_CONFIG, "attribution needs at least 2 assets")
    out_dir = _require_out(cfg)
    os.makedirs(out_dir, exist_ok=True)
    target = _target_index(panel, cfg)
    result = attribution_path(
        model, target, cfg.shapley_measure, (cfg.tau1, cfg.tau2),
        cfg.horizon, panel=panel, convention=cfg.dof_convention,
        signed=cfg.signed)
    created = []
    _write_shapley(os.path.join(out_dir, "shapley_path.csv"), panel,
                   _names_from_shapley(panel, target),
                   result.shares, result.share_pct, created)
    _write_json(os.path.join(out_dir, "summary.json"),
                _summary_dict(panel, cfg, target, result), created)
    for path in created:
        print(path)
    return EXIT_OK


def run_pipeline(cfg: RunConfig) -> list:
    """fit (or select) -> decode -> risk path -> attribution, writing all
    artifacts atomically under cfg.output_dir.  Returns the created paths;
    on any error every file created by this run is removed first."""
    panel = ingest(_require_input(cfg), cfg.date_column, cfg.asset_columns,
                   cfg.to_returns)
    if panel.p < 2:
        raise CliError(EXIT_CONFIG, "pipeline needs at least 2 assets")
    target = _target_index(panel, cfg)
    out_dir = _require_out(cfg)
    os.makedirs(out_dir, exist_ok=True)
    created = []
    try:
        opts = _fit_options(cfg)
        family = cfg.family
        if cfg.L_range is not None:
            table = select(panel, cfg.L_range, [family], opts)
            _write_selection(os.path.join(out_dir, "selection.csv"), table,
                             created)
            L = table.best_bic().L
        else:
            L = cfg.L if cfg.L is not None else 2
        model = fit(panel, L, family, opts)
        _write_model(os.path.join(out_dir, "model.json"), model, created)

        states = viterbi(panel, model.params, model.family)
        _write_states(os.path.join(out_dir, "states.csv"), panel.timestamps,
                      states, model.smoothed, created)

        rows = _risk_rows(panel, model, cfg)
        _write_risk(os.path.join(out_dir, "risk_path.csv"), rows, created)

        result = attribution_path(
            model, target, cfg.shapley_measure, (cfg.tau1, cfg.tau2),
            cfg.horizon, panel=panel, convention=cfg.dof_convention,
            signed=cfg.signed)
        _write_shapley(os.path.join(out_dir, "shapley_path.csv"), panel,
                       _names_from_shapley(panel, target), result.shares,
                       result.share_pct, created)
        _write_json(os.path.join(out_dir, "summary.json"),
                    _summary_dict(panel, cfg, target, result), created)

        manifest = {
            "config": _config_echo(cfg),
            "git_describe": _git_describe(),
            "seed": cfg.seed,
            "version": __version__,
        }
        _write_json(os.path.join(out_dir, "run_manifest.json"), manifest,
                    created)
    except BaseException:
        for path in created:
            try:
                os.unlink(path)
            except OSError:
                pass
        raise
    return created


def _cmd_pipeline(args) -> int:
    cfg = _build_config(args)
    for path in run_pipeline(cfg):
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(sub, input_arg=True, out_dir=True):
    sub.add_argument("--config", help="INI-style config file")
    sub.add_argument("--seed", type=int, help="random seed")
    if input_arg:
        sub.add_argument("input", nargs="?",
                         help="input CSV (may come from the config file)")
        sub.add_argument("--date-column", dest="date_column",
                         help="date column name (default 'date')")
        sub.add_argument("--columns", type=lambda s: tuple(
            c.strip() for c in s.split(",") if c.strip()),
            help="comma-separated asset columns (default: all)")
        sub.add_argument("--to-returns", dest="to_returns",
                         action="store_const", const=True,
                         help="input holds prices; convert to log returns")
    if out_dir:
        sub.add_argument("--out", help="output directory")


def _add_tail_flags(sub):
    sub.add_argument("--tau1", type=float, help="tail level (default 0.05)")
    sub.add_argument("--tau2", type=float,
                     help="distress level (default 0.05)")
    sub.add_argument("--horizon", type=int, help="forecast horizon h >= 1")
    sub.add_argument("--dof-convention", dest="dof_convention",
                     type=lambda s: _parse_enum(DofConvention, s,
                                                "dof convention"),
                     help="conditional-t convention: paper or standard")
    sub.add_argument("--market-column", dest="market_column",
                     help="attribution target column (default: first asset)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="msrisk",
        description="Markov-switching tail risk: fit, decode, risk paths, "
                    "Shapley attribution.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("describe",
                          help="per-asset summary statistics as CSV")
    _add_common(sub, out_dir=False)
    sub.add_argument("--out", dest="out_file",
                     help="write CSV here instead of stdout")
    sub.set_defaults(func=_cmd_describe)

    sub = subs.add_parser("simulate", help="draw a synthetic return panel")
    sub.add_argument("--params", required=True,
                     help="model parameter JSON file")
    sub.add_argument("--family",
                     type=lambda s: _parse_enum(ModelFamily, s, "family").value,
                     help="override the family implied by the params file")
    sub.add_argument("--T", type=int, required=True, help="panel length")
    sub.add_argument("--seed", type=int, help="random seed (default 0)")
    sub.add_argument("--start-date", default="2000-01-07",
                     help="first ISO date (weekly spacing)")
    sub.add_argument("--out", dest="out_file", required=True,
                     help="output CSV path")
    sub.add_argument("--states-out", dest="states_out",
                     help="also write the true state path CSV here")
    sub.set_defaults(func=_cmd_simulate)

    sub = subs.add_parser("fit", help="fit one model, write model.json")
    _add_common(sub)
    sub.add_argument("--family",
                     type=lambda s: _parse_enum(ModelFamily, s, "family"),
                     help="gaussian or t (default t)")
    sub.add_argument("--states", type=int, help="number of states")
    sub.add_argument("--restarts", type=int, help="EM restarts (default 20)")
    sub.add_argument("--max-iter", dest="max_iter", type=int,
                     help="EM iteration cap (default 1000)")
    sub.set_defaults(func=_cmd_fit)

    sub = subs.add_parser("select",
                          help="fit a grid of (family, states), tabulate "
                               "AIC/BIC, write selection.csv")
    _add_common(sub)
    sub.add_argument("--family",
                     type=lambda s: _parse_enum(ModelFamily, s, "family"),
                     help="restrict to one family (default: both)")
    sub.add_argument("--states-range", dest="states_range",
                     type=_parse_states_range,
                     help="states grid, e.g. 1-3 or 1,2,4 (default 1-3)")
    sub.add_argument("--restarts", type=int, help="EM restarts per fit")
    sub.add_argument("--max-iter", dest="max_iter", type=int,
                     help="EM iteration cap")
    sub.set_defaults(func=_cmd_select)

    sub = subs.add_parser("decode",
                          help="Viterbi path + smoothed probabilities for a "
                               "fitted model, write states.csv")
    _add_common(sub)
    sub.add_argument("--model", required=True, help="model.json from fit")
    sub.set_defaults(func=_cmd_decode)

    sub = subs.add_parser("risk",
                          help="tail-risk measure paths, write risk_path.csv")
    _add_common(sub)
    sub.add_argument("--model", required=True, help="model.json from fit")
    sub.add_argument("--measures", type=_parse_measures,
                     help="comma list of var,es,mcovar,mcoes,delta_mcovar,"
                          "delta_mcoes (default: all)")
    _add_tail_flags(sub)
    sub.set_defaults(func=_cmd_risk)

    sub = subs.add_parser("shapley",
                          help="Shapley attribution path, write "
                               "shapley_path.csv and summary.json")
    _add_common(sub)
    sub.add_argument("--model", required=True, help="model.json from fit")
    sub.add_argument("--measure",
                     type=lambda s: _parse_enum(RiskMeasure, s, "measure"),
                     help="delta_mcovar (default) or delta_mcoes")
    sub.add_argument("--signed", action="store_const", const=True,
                     help="attribute the signed delta instead of |delta|")
    _add_tail_flags(sub)
    sub.set_defaults(func=_cmd_shapley)

    sub = subs.add_parser("pipeline",
                          help="fit/select + decode + risk + shapley in one "
                               "run, writing every artifact")
    _add_common(sub)
    sub.add_argument("--family",
                     type=lambda s: _parse_enum(ModelFamily, s, "family"))
    sub.add_argument("--states", type=int, help="number of states")
    sub.add_argument("--states-range", dest="states_range",
                     type=_parse_states_range,
                     help="select over this grid first (writes selection.csv)")
    sub.add_argument("--restarts", type=int)
    sub.add_argument("--max-iter", dest="max_iter", type=int)
    sub.add_argument("--measures", type=_parse_measures)
    sub.add_argument("--measure", dest="measure",
                     type=lambda s: _parse_enum(RiskMeasure, s, "measure"),
                     help="attribution measure (default delta_mcovar)")
    sub.add_argument("--signed", action="store_const", const=True)
    _add_tail_flags(sub)
    sub.set_defaults(func=_cmd_pipeline)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (FitFailureError, DegenerateStateError) as exc:
        print(f"error: fit failed: {exc}", file=sys.stderr)
        return EXIT_FIT
    except PanelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MALFORMED
    except ParamError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except MsriskError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FILESYSTEM
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FILESYSTEM


if __name__ == "__main__":
    sys.exit(main())
