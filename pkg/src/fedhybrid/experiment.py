"""Experiment sweeps: configuration, execution and CSV output.

A configuration file is TOML restricted to flat ``key = value`` pairs plus an
optional ``[synth]`` section. Any sweepable key accepts either a scalar or a
bracketed list. The sweep runs the Cartesian product
``mode x n_clients x alpha x epsilon`` and, inside each cell, every seed.
"""

from __future__ import annotations

import csv
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError
from .he import ckks
from .protocol import PHASES, RunMode, TrainingConfig, run_training
from .synth import SynthSpec

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)

CSV_HEADER = (
    "mode,n_clients,alpha,epsilon,seed,round,mse,t_total_ms,t_broadcast_ms,"
    "t_local_ms,t_protect_ms,t_agg_he_ms,t_decrypt_ms,t_agg_dp_ms,t_update_ms,t_test_ms"
)
CSV_COLUMNS = tuple(CSV_HEADER.split(","))
SUMMARY_COLUMNS = (
    "mode",
    "n_clients",
    "alpha",
    "epsilon",
    "n_seeds",
    "final_mse_mean",
    "final_mse_std",
    "t_round_ms_mean",
    "t_round_ms_std",
)
_PHASE_COLUMNS = dict(
    zip(
        PHASES,
        (
            "t_broadcast_ms",
            "t_local_ms",
            "t_protect_ms",
            "t_agg_he_ms",
            "t_decrypt_ms",
            "t_agg_dp_ms",
            "t_update_ms",
            "t_test_ms",
        ),
    )
)
PAPER_SEEDS = (101, 201, 301, 401, 501, 601)
THREADS_ENV = "FEDHYBRID_THREADS"

_SWEEP_KEYS = {"mode", "n_clients", "alpha", "epsilon", "seeds"}
_TOP_KEYS = {
    "mode",
    "n_clients",
    "alpha",
    "epsilon",
    "delta",
    "clip_norm",
    "rounds",
    "eta",
    "seeds",
    "he_params",
    "output_path",
    "backend",
    "timing",
    "workers",
    "batch_size",
    "adjacency",
    "test_fraction",
}
_SYNTH_KEYS = {f.name for f in fields(SynthSpec)} - {"master_seed"}


@dataclass(frozen=True)
class ExperimentConfig:
    modes: tuple[RunMode, ...]
    n_clients: tuple[int, ...]
    alphas: tuple[float, ...] = ()
    epsilons: tuple[float, ...] = (4.0,)
    delta: float = 1e-5
    clip_norm: float = 20.0
    rounds: int = 10
    eta: float = 1.0
    seeds: tuple[int, ...] = PAPER_SEEDS
    he_params: str = "desk"
    synth: SynthSpec = field(default_factory=SynthSpec)
    output_path: str = "results.csv"
    backend: str = "ckks"
    timing: bool = True
    workers: int = 1
    batch_size: int | None = None
    adjacency: str = "add-remove"
    test_fraction: float = 0.2


@dataclass(frozen=True)
class Cell:
    mode: RunMode
    n_clients: int
    alpha: float | None
    epsilon: float | None


@dataclass(frozen=True)
class ResultRow:
    mode: str
    n_clients: int
    alpha: float | None
    epsilon: float | None
    seed: int
    round: int
    mse: float
    t_total_ms: float
    t_broadcast_ms: float
    t_local_ms: float
    t_protect_ms: float
    t_agg_he_ms: float
    t_decrypt_ms: float
    t_agg_dp_ms: float
    t_update_ms: float
    t_test_ms: float


@dataclass(frozen=True)
class SummaryRow:
    mode: str
    n_clients: int
    alpha: float | None
    epsilon: float | None
    n_seeds: int
    final_mse_mean: float
    final_mse_std: float
    t_round_ms_mean: float
    t_round_ms_std: float


@dataclass
class ExperimentResult:
    rows: list[ResultRow]
    summaries: list[SummaryRow]
    failures: list[tuple[Cell, str]]

    @property
    def ok(self) -> bool:
        return not self.failures


# --------------------------------------------------------------------------
# configuration


def _as_list(value, path: str) -> list:
    items = value if isinstance(value, list) else [value]
    if not items:
        raise ConfigError(f"{path}: sweep list must not be empty")
    return items


def _number(value, path: str, *, positive=False, integer=False, lo=None, hi=None):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{path}: expected a number, got {value!r}")
    if integer and (not isinstance(value, int) and not float(value).is_integer()):
        raise ConfigError(f"{path}: expected an integer, got {value!r}")
    value = int(value) if integer else float(value)
    if positive and not value > 0:
        raise ConfigError(f"{path}: must be > 0, got {value}")
    if lo is not None and value < lo:
        raise ConfigError(f"{path}: must be >= {lo}, got {value}")
    if hi is not None and value > hi:
        raise ConfigError(f"{path}: must be <= {hi}, got {value}")
    return value


def _choice(value, path: str, options: Iterable[str]) -> str:
    options = tuple(options)
    if value not in options:
        raise ConfigError(f"{path}: expected one of {', '.join(options)}, got {value!r}")
    return value


def load_config_file(path) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def parse_config(path=None, overrides: dict | None = None) -> ExperimentConfig:
    """Merge a config file with flag overrides and validate the result.

    ``overrides`` uses the file's key names; a nested ``synth`` dict overrides
    individual synthetic-data keys. ``None`` values are ignored.
    """
    raw = load_config_file(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "synth":
            raw.setdefault("synth", {}).update(value)
        else:
            raw[key] = value
    return config_from_dict(raw)


def config_from_dict(raw: dict) -> ExperimentConfig:
    raw = dict(raw)
    synth_raw = raw.pop("synth", {})
    if not isinstance(synth_raw, dict):
        raise ConfigError("synth: expected a section")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(f"{key}: unknown configuration key")
        if isinstance(raw[key], list) and key not in _SWEEP_KEYS:
            raise ConfigError(f"{key}: does not accept a list")
    for key in synth_raw:
        if key not in _SYNTH_KEYS:
            raise ConfigError(f"synth.{key}: unknown configuration key")

    if "mode" not in raw:
        raise ConfigError("mode: required field missing")
    if "n_clients" not in raw:
        raise ConfigError("n_clients: required field missing")
    modes = tuple(
        RunMode(_choice(m, "mode", [r.value for r in RunMode]))
        for m in _as_list(raw["mode"], "mode")
    )
    n_clients = tuple(
        _number(n, "n_clients", integer=True, lo=1) for n in _as_list(raw["n_clients"], "n_clients")
    )
    has_hybrid = RunMode.HYBRID in modes
    if has_hybrid and "alpha" not in raw:
        raise ConfigError("alpha: required when mode includes hybrid")
    if "alpha" in raw and not has_hybrid:
        raise ConfigError("alpha: only meaningful when mode includes hybrid")
    alphas = tuple(
        _number(a, "alpha", lo=0.0, hi=1.0) for a in _as_list(raw.get("alpha", []) or [0.0], "alpha")
    ) if has_hybrid else ()
    epsilons = tuple(
        _number(e, "epsilon", positive=True) for e in _as_list(raw.get("epsilon", 4.0), "epsilon")
    )
    seeds = tuple(
        _number(s, "seeds", integer=True, lo=0, hi=2**64 - 1)
        for s in _as_list(raw.get("seeds", list(PAPER_SEEDS)), "seeds")
    )
    delta = _number(raw.get("delta", 1e-5), "delta", positive=True)
    if not delta < 1:
        raise ConfigError(f"delta: must be < 1, got {delta}")
    batch_size = raw.get("batch_size")
    if batch_size is not None:
        batch_size = _number(batch_size, "batch_size", integer=True, lo=1)
    test_fraction = _number(raw.get("test_fraction", 0.2), "test_fraction", positive=True)
    if not test_fraction < 1:
        raise ConfigError(f"test_fraction: must be < 1, got {test_fraction}")
    timing = raw.get("timing", True)
    if not isinstance(timing, bool):
        raise ConfigError(f"timing: expected true or false, got {timing!r}")
    output_path = raw.get("output_path", "results.csv")
    if not isinstance(output_path, str) or not output_path:
        raise ConfigError("output_path: expected a non-empty string")

    synth_kwargs = {}
    for key, value in synth_raw.items():
        kind = {f.name: f.type for f in fields(SynthSpec)}[key]
        integer = kind in ("int", int)
        synth_kwargs[key] = _number(value, f"synth.{key}", integer=integer, lo=0)
    try:
        synth = SynthSpec(**synth_kwargs)
    except ContractError as exc:
        raise ConfigError(f"synth: {exc}") from exc

    return ExperimentConfig(
        modes=modes,
        n_clients=n_clients,
        alphas=alphas,
        epsilons=epsilons,
        delta=delta,
        clip_norm=_number(raw.get("clip_norm", 20.0), "clip_norm", positive=True),
        rounds=_number(raw.get("rounds", 10), "rounds", integer=True, lo=1),
        eta=_number(raw.get("eta", 1.0), "eta", positive=True),
        seeds=seeds,
        he_params=_choice(raw.get("he_params", "desk"), "he_params", ("desk", "paper")),
        synth=synth,
        output_path=output_path,
        backend=_choice(raw.get("backend", "ckks"), "backend", ("ckks", "mock")),
        timing=timing,
        workers=_number(raw.get("workers", 1), "workers", integer=True, lo=1),
        batch_size=batch_size,
        adjacency=_choice(
            raw.get("adjacency", "add-remove"), "adjacency", ("add-remove", "replace")
        ),
        test_fraction=test_fraction,
    )


# --------------------------------------------------------------------------
# execution


def expand_cells(config: ExperimentConfig) -> list[Cell]:
    cells = []
    for mode in config.modes:
        for n in config.n_clients:
            if mode is RunMode.HYBRID:
                grid = [(a, e) for a in config.alphas for e in config.epsilons]
            elif mode is RunMode.DP_ONLY:
                grid = [(0.0, e) for e in config.epsilons]
            elif mode is RunMode.HE_ONLY:
                grid = [(1.0, None)]
            else:
                grid = [(None, None)]
            cells.extend(Cell(mode, n, a, e) for a, e in grid)
    return cells


@lru_cache(maxsize=None)
def he_params_for(name: str) -> ckks.HeParams:
    return ckks.paper_params() if name == "paper" else ckks.desk_params()


def training_config(config: ExperimentConfig, cell: Cell, seed: int) -> TrainingConfig:
    return TrainingConfig(
        run_mode=cell.mode,
        n_clients=cell.n_clients,
        alpha=cell.alpha if cell.mode is RunMode.HYBRID else None,
        epsilon=cell.epsilon if cell.epsilon is not None else 1.0,
        delta=config.delta,
        clip_norm=config.clip_norm,
        rounds=config.rounds,
        eta=config.eta,
        seed=seed,
        he_params=he_params_for(config.he_params) if config.backend == "ckks" else None,
        backend=config.backend,
        synth=config.synth,
        adjacency=config.adjacency,
        batch_size=config.batch_size,
        test_fraction=config.test_fraction,
    )


def _run_cell(config: ExperimentConfig, cell: Cell) -> list[ResultRow]:
    rows = []
    for seed in config.seeds:
        result = run_training(training_config(config, cell, seed))
        for rec in result.records:
            if config.timing:
                times = {col: rec.per_phase_times[p] * 1e3 for p, col in _PHASE_COLUMNS.items()}
                total = rec.total_time * 1e3
            else:
                times = dict.fromkeys(_PHASE_COLUMNS.values(), 0.0)
                total = 0.0
            rows.append(
                ResultRow(
                    mode=cell.mode.value,
                    n_clients=cell.n_clients,
                    alpha=cell.alpha,
                    epsilon=cell.epsilon,
                    seed=seed,
                    round=rec.round_index + 1,
                    mse=rec.global_mse,
                    t_total_ms=total,
                    **times,
                )
            )
    return rows


def summarize(cell: Cell, rows: Sequence[ResultRow]) -> SummaryRow:
    """Mean and sample std across seeds of final MSE and mean per-round time."""
    by_seed: dict[int, list[ResultRow]] = {}
    for r in rows:
        by_seed.setdefault(r.seed, []).append(r)
    finals = np.array([max(rs, key=lambda r: r.round).mse for rs in by_seed.values()])
    times = np.array([np.mean([r.t_total_ms for r in rs]) for rs in by_seed.values()])
    ddof = 1 if len(finals) > 1 else 0
    return SummaryRow(
        mode=cell.mode.value,
        n_clients=cell.n_clients,
        alpha=cell.alpha,
        epsilon=cell.epsilon,
        n_seeds=len(finals),
        final_mse_mean=float(finals.mean()),
        final_mse_std=float(finals.std(ddof=ddof)),
        t_round_ms_mean=float(times.mean()),
        t_round_ms_std=float(times.std(ddof=ddof)),
    )


def worker_count(config: ExperimentConfig) -> int:
    if config.timing:
        return 1
    workers = config.workers
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            workers = min(workers, max(1, int(cap)))
        except ValueError:
            log.warning("ignoring non-integer %s=%r", THREADS_ENV, cap)
    return workers


def run_experiment(
    config: ExperimentConfig,
    on_cell: Callable[[Cell, list[ResultRow]], None] | None = None,
) -> ExperimentResult:
    """Run every cell for every seed.

    Cells that raise are logged, recorded in ``failures`` and skipped. When
    timing is recorded, cells run one at a time so phase timings stay
    comparable.
    """
    cells = expand_cells(config)
    workers = worker_count(config)
    rows: list[ResultRow] = []
    summaries: list[SummaryRow] = []
    failures: list[tuple[Cell, str]] = []

    def attempt(cell: Cell):
        try:
            return _run_cell(config, cell), None
        except Exception as exc:  # noqa: BLE001 - one bad cell must not stop a sweep
            log.exception("cell %s failed", cell)
            return None, f"{type(exc).__name__}: {exc}"

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(attempt, cells))
    else:
        outcomes = map(attempt, cells)

    for i, (cell, (cell_rows, error)) in enumerate(zip(cells, outcomes), 1):
        if error is not None:
            failures.append((cell, error))
            continue
        rows.extend(cell_rows)
        summaries.append(summarize(cell, cell_rows))
        log.info(
            "[%d/%d] %s N=%d alpha=%s eps=%s final_mse=%.6g",
            i,
            len(cells),
            cell.mode.value,
            cell.n_clients,
            cell.alpha,
            cell.epsilon,
            summaries[-1].final_mse_mean,
        )
        if on_cell is not None:
            on_cell(cell, cell_rows)
    return ExperimentResult(rows, summaries, failures)


# --------------------------------------------------------------------------
# CSV


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.9g}"
    return str(value)


def _write(rows, columns, path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            values = asdict(row)
            writer.writerow([_fmt(values[c]) for c in columns])


def emit_csv(rows: Sequence[ResultRow], path) -> Path:
    if not rows:
        raise ContractError("refusing to write a CSV without rows")
    _write(rows, CSV_COLUMNS, path)
    return Path(path)


def summary_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".summary.csv")


def emit_summary_csv(summaries: Sequence[SummaryRow], path) -> Path:
    if not summaries:
        raise ContractError("refusing to write a summary without rows")
    _write(summaries, SUMMARY_COLUMNS, path)
    return Path(path)


def _parse_field(name: str, text: str, kind):
    if text == "":
        return None
    if kind in ("int", int):
        return int(text)
    if kind in ("str", str):
        return text
    return float(text)


def read_csv(path, row_type=ResultRow) -> list:
    kinds = {f.name: f.type for f in fields(row_type)}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        out = []
        for rec in reader:
            out.append(
                row_type(**{k: _parse_field(k, v, _base_kind(kinds[k])) for k, v in rec.items()})
            )
    return out


def _base_kind(annotation: str) -> str:
    # annotations are strings under postponed evaluation, e.g. "float | None"
    return annotation.split("|")[0].strip()


def rounded(row, digits: int = 9):
    """Copy of a row with every float rounded to ``digits`` significant digits."""
    values = {}
    for k, v in asdict(row).items():
        if isinstance(v, float) and math.isfinite(v):
            v = float(f"{v:.{digits}g}")
        values[k] = v
    return type(row)(**values)


class CsvSink:
    """Appends rows cell by cell; the file is created on the first write."""

    def __init__(self, path, columns: Sequence[str] = CSV_COLUMNS):
        self.path = Path(path)
        self.columns = tuple(columns)
        self._fh = None
        self._writer = None
        self.count = 0

    def write(self, rows: Iterable) -> None:
        rows = list(rows)
        if not rows:
            return
        if self._fh is None:
            self._fh = self.path.open("w", newline="", encoding="utf-8")
            self._writer = csv.writer(self._fh, lineterminator="\n")
            self._writer.writerow(self.columns)
        for row in rows:
            values = asdict(row)
            self._writer.writerow([_fmt(values[c]) for c in self.columns])
        self._fh.flush()
        self.count += len(rows)

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
