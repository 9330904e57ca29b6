"""Configuration spaces, measured datasets, replicate aggregation and pairing.

Datasets are stored as numpy arrays (one row per measurement) and are frozen
after construction: arrays are copied and marked read-only.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

SEVERITIES = ("S", "SM", "M", "L", "VL")
OPTION_PREFIX = "opt_"
TRAILER = ("rep", "perf", "valid")


def _frozen(values, dtype) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def format_float(x: float) -> str:
    # shortest repr that round-trips bit-exactly
    return repr(float(x))


@dataclass(frozen=True)
class ConfigSpace:
    option_names: tuple[str, ...]

    def __post_init__(self) -> None:
        names = tuple(self.option_names)
        object.__setattr__(self, "option_names", names)
        if not names:
            raise DataError("a configuration space needs at least one option")
        if any(not n for n in names):
            raise DataError("option names must be non-empty")
        if len(set(names)) != len(names):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise DataError(f"duplicate option names: {', '.join(dupes)}")

    @property
    def d(self) -> int:
        return len(self.option_names)


@dataclass(frozen=True)
class EnvironmentDesc:
    hardware: str = ""
    workload: str = ""
    version: str = ""
    severity: str | None = None
    system: str = ""

    def __post_init__(self) -> None:
        if self.severity is not None and self.severity not in SEVERITIES:
            raise DataError(
                f"severity {self.severity!r} not one of {'|'.join(SEVERITIES)}"
            )

    def to_dict(self) -> dict:
        return {
            "system": self.system,
            "hardware": self.hardware,
            "workload": self.workload,
            "version": self.version,
            "severity": self.severity,
        }


@dataclass(frozen=True, eq=False)
class PerfDataset:
    """Raw measurements of one environment, one row per (config, replicate).

    ``perf`` holds NaN where a measurement is absent, which happens exactly
    when ``valid`` is False.
    """

    space: ConfigSpace
    configs: np.ndarray
    reps: np.ndarray
    perf: np.ndarray
    valid: np.ndarray
    env: EnvironmentDesc = field(default_factory=EnvironmentDesc)

    def __post_init__(self) -> None:
        configs = _frozen(self.configs, np.uint8)
        if configs.ndim == 1 and configs.size == 0:
            configs = _frozen(np.zeros((0, self.space.d)), np.uint8)
        n = configs.shape[0]
        if configs.ndim != 2 or configs.shape[1] != self.space.d:
            raise DataError(
                f"config matrix must have {self.space.d} columns, got shape {configs.shape}"
            )
        if np.any(configs > 1):
            raise DataError("option value not in {0,1}")
        reps = _frozen(self.reps, np.int64)
        perf = _frozen(self.perf, np.float64)
        valid = _frozen(self.valid, bool)
        if not (reps.shape == perf.shape == valid.shape == (n,)):
            raise DataError("rep/perf/valid columns must match the number of configs")
        if np.any(reps < 0):
            raise DataError("replicate index must be >= 0")
        absent = np.isnan(perf)
        if np.any(valid == absent):
            bad = int(np.flatnonzero(valid == absent)[0])
            raise DataError(f"row {bad}: valid flag and performance presence disagree")
        ok = perf[valid]
        if np.any(~np.isfinite(ok)) or np.any(ok <= 0):
            raise DataError("valid performance values must be finite and > 0")
        keys = np.column_stack([configs.astype(np.int64), reps])
        if n and np.unique(keys, axis=0).shape[0] != n:
            raise DataError("duplicate (config, replicate) rows")
        object.__setattr__(self, "configs", configs)
        object.__setattr__(self, "reps", reps)
        object.__setattr__(self, "perf", perf)
        object.__setattr__(self, "valid", valid)

    @property
    def n_rows(self) -> int:
        return self.configs.shape[0]


@dataclass(frozen=True, eq=False)
class AggregatedDataset:
    """One entry per distinct configuration, sorted lexicographically."""

    space: ConfigSpace
    configs: np.ndarray
    mean_perf: np.ndarray
    rep_variance: np.ndarray
    valid: np.ndarray
    env: EnvironmentDesc = field(default_factory=EnvironmentDesc)

    def __post_init__(self) -> None:
        configs = _frozen(self.configs, np.uint8).reshape(-1, self.space.d)
        mean = _frozen(self.mean_perf, np.float64)
        var = _frozen(self.rep_variance, np.float64)
        valid = _frozen(self.valid, bool)
        n = configs.shape[0]
        if not (mean.shape == var.shape == valid.shape == (n,)):
            raise DataError("aggregated columns must match the number of configs")
        if np.any(np.isnan(mean) == valid):
            raise DataError("mean performance must be present exactly for valid configs")
        object.__setattr__(self, "configs", configs)
        object.__setattr__(self, "mean_perf", mean)
        object.__setattr__(self, "rep_variance", var)
        object.__setattr__(self, "valid", valid)

    @property
    def n_configs(self) -> int:
        return self.configs.shape[0]

    def subset(self, index: Sequence[int] | np.ndarray) -> AggregatedDataset:
        index = np.asarray(index, dtype=np.intp)
        return AggregatedDataset(
            self.space,
            self.configs[index],
            self.mean_perf[index],
            self.rep_variance[index],
            self.valid[index],
            self.env,
        )

    def valid_only(self) -> AggregatedDataset:
        return self.subset(np.flatnonzero(self.valid))


@dataclass(frozen=True, eq=False)
class EnvPair:
    """Source and target restricted to the configurations both measured.

    ``source_index[k]`` and ``target_index[k]`` point at the same
    configuration in the respective datasets.
    """

    source: AggregatedDataset
    target: AggregatedDataset
    source_index: np.ndarray
    target_index: np.ndarray
    change_label: str = ""

    @property
    def n_common(self) -> int:
        return len(self.source_index)

    @property
    def common_configs(self) -> np.ndarray:
        return self.source.configs[self.source_index]

    def common_valid(self) -> tuple[np.ndarray, np.ndarray]:
        """Indices of common configurations valid on both sides."""
        both = self.source.valid[self.source_index] & self.target.valid[self.target_index]
        return self.source_index[both], self.target_index[both]


# -- ingestion ---------------------------------------------------------------


def _parse_bit(text: str, lineno: int, column: str) -> int:
    if text not in ("0", "1"):
        raise DataError(f"row {lineno}: {column} option value not in {{0,1}}: {text!r}")
    return int(text)


def _level_key(level: str):
    try:
        return (0, float(level), level)
    except ValueError:
        return (1, 0.0, level)


def load_manifest(path: str | Path, role: str | None = None) -> tuple[EnvironmentDesc, list[str]]:
    """Read an environment manifest.

    A pair manifest (with ``source``/``target`` entries, as written by the
    ``synth`` command) is accepted when ``role`` selects one side.
    Returns the environment and the list of categorical option names.
    """
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"manifest {path} is not valid JSON: {exc}") from None
    if "source" in raw and "target" in raw:
        raw = raw[role or "source"]
    env = EnvironmentDesc(
        hardware=str(raw.get("hardware", "")),
        workload=str(raw.get("workload", "")),
        version=str(raw.get("version", "")),
        severity=raw.get("severity") or None,
        system=str(raw.get("system", "")),
    )
    return env, list(raw.get("categorical", []))


def load_dataset(
    csv_path: str | Path,
    manifest_path: str | Path | None = None,
    *,
    categorical: Iterable[str] = (),
    role: str | None = None,
) -> PerfDataset:
    """Load a measurement CSV (``opt_<name>,...,rep,perf,valid``).

    Options listed in ``categorical`` (or the manifest's ``categorical``
    key) may take arbitrary values; each k-level column is expanded into
    k-1 indicator options named ``<name>=<level>`` (first level dropped).
    Row numbers in error messages are file line numbers.
    """
    csv_path = Path(csv_path)
    env = EnvironmentDesc()
    categorical = set(categorical)
    if manifest_path is not None:
        env, extra = load_manifest(manifest_path, role)
        categorical.update(extra)
    try:
        handle = open(csv_path, newline="", encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"dataset not found: {csv_path}") from None
    except OSError as exc:
        raise DataError(f"cannot read dataset {csv_path}: {exc}") from None
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{csv_path}: empty file") from None
        header = [h.strip() for h in header]
        if len(header) < 4 or tuple(header[-3:]) != TRAILER:
            raise DataError(f"{csv_path}: header must end with rep,perf,valid")
        opt_cols = header[:-3]
        names = []
        for col in opt_cols:
            if not col.startswith(OPTION_PREFIX) or len(col) == len(OPTION_PREFIX):
                raise DataError(f"{csv_path}: option column {col!r} must be opt_<name>")
            names.append(col[len(OPTION_PREFIX):])
        unknown = categorical - set(names)
        if unknown:
            raise DataError(f"categorical options not in header: {sorted(unknown)}")
        width = len(header)
        cat_pos = [i for i, n in enumerate(names) if n in categorical]
        raw_opts: list[list[str]] = []
        reps, perf, valid = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or row == [""]:
                continue
            if len(row) != width:
                raise DataError(f"row {lineno}: expected {width} fields, got {len(row)}")
            row = [c.strip() for c in row]
            opts = row[:-3]
            for i, text in enumerate(opts):
                if i not in cat_pos:
                    _parse_bit(text, lineno, names[i])
                elif not text:
                    raise DataError(f"row {lineno}: empty value for option {names[i]}")
            rep_text, perf_text, valid_text = row[-3:]
            try:
                rep = int(rep_text)
            except ValueError:
                raise DataError(f"row {lineno}: rep must be an integer: {rep_text!r}") from None
            if rep < 0:
                raise DataError(f"row {lineno}: rep must be >= 0")
            if valid_text not in ("0", "1"):
                raise DataError(f"row {lineno}: valid must be 0 or 1: {valid_text!r}")
            is_valid = valid_text == "1"
            if perf_text == "":
                if is_valid:
                    raise DataError(f"row {lineno}: valid=1 requires a performance value")
                value = math.nan
            else:
                try:
                    value = float(perf_text)
                except ValueError:
                    raise DataError(f"row {lineno}: perf is not a number: {perf_text!r}") from None
                if not math.isfinite(value) or value < 0:
                    raise DataError(f"row {lineno}: perf must be finite and non-negative")
                if value == 0:
                    raise DataError(f"row {lineno}: perf must be > 0")
                if not is_valid:
                    raise DataError(f"row {lineno}: invalid configuration must have empty perf")
            raw_opts.append(opts)
            reps.append(rep)
            perf.append(value)
            valid.append(is_valid)

    out_names: list[str] = []
    columns: list[np.ndarray] = []
    n = len(raw_opts)
    for i, name in enumerate(names):
        col = [r[i] for r in raw_opts]
        if i in cat_pos:
            levels = sorted(set(col), key=_level_key)
            for level in levels[1:]:
                out_names.append(f"{name}={level}")
                columns.append(np.array([v == level for v in col], dtype=np.uint8))
        else:
            out_names.append(name)
            columns.append(np.array([int(v) for v in col], dtype=np.uint8))
    configs = np.column_stack(columns) if columns else np.zeros((n, 0), np.uint8)
    configs = configs.reshape(n, len(out_names))
    try:
        return PerfDataset(ConfigSpace(tuple(out_names)), configs, reps, perf, valid, env)
    except DataError as exc:
        raise DataError(f"{csv_path}: {exc}") from None


def write_dataset_csv(ds: PerfDataset, path: str | Path) -> None:
    header = [OPTION_PREFIX + n for n in ds.space.option_names] + list(TRAILER)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for cfg, rep, y, ok in zip(ds.configs, ds.reps, ds.perf, ds.valid):
            writer.writerow(
                [*(int(v) for v in cfg), int(rep), format_float(y) if ok else "", int(ok)]
            )


def write_aggregated_csv(agg: AggregatedDataset, path: str | Path) -> None:
    """Write per-config means as a single-replicate dataset CSV."""
    header = [OPTION_PREFIX + n for n in agg.space.option_names] + list(TRAILER)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for cfg, y, ok in zip(agg.configs, agg.mean_perf, agg.valid):
            writer.writerow([*(int(v) for v in cfg), 0, format_float(y) if ok else "", int(ok)])


# -- aggregation and pairing -------------------------------------------------


def aggregate(ds: PerfDataset) -> AggregatedDataset:
    """Average replicates per configuration.

    A configuration with any invalid replicate is invalid. Replicates are
    summed in replicate-index order so the result does not depend on row
    order. Variance (ddof=1) needs at least two replicates.
    """
    d = ds.space.d
    if ds.n_rows == 0:
        empty = np.zeros(0)
        return AggregatedDataset(ds.space, np.zeros((0, d), np.uint8), empty, empty,
                                 np.zeros(0, bool), ds.env)
    uniq, inverse = np.unique(ds.configs, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    order = np.lexsort((ds.reps, inverse))
    group = inverse[order]
    starts = np.flatnonzero(np.r_[True, group[1:] != group[:-1]])
    counts = np.diff(np.r_[starts, len(order)])
    perf = ds.perf[order]
    ok = ds.valid[order]
    all_valid = np.logical_and.reduceat(ok, starts)
    filled = np.where(ok, perf, 0.0)
    sums = np.add.reduceat(filled, starts)
    mean = sums / counts
    dev = filled - np.repeat(mean, counts)
    ss = np.add.reduceat(dev * dev, starts)
    with np.errstate(invalid="ignore", divide="ignore"):
        var = np.where(counts >= 2, ss / (counts - 1), np.nan)
    mean = np.where(all_valid, mean, np.nan)
    var = np.where(all_valid, var, np.nan)
    return AggregatedDataset(ds.space, uniq, mean, var, all_valid, ds.env)


def make_pair(src: AggregatedDataset, tgt: AggregatedDataset, label: str = "") -> EnvPair:
    if src.space != tgt.space:
        raise DataError(
            "config spaces differ: "
            f"{list(src.space.option_names)} vs {list(tgt.space.option_names)}"
        )
    lookup = {row.tobytes(): j for j, row in enumerate(tgt.configs)}
    s_idx, t_idx = [], []
    for i, row in enumerate(src.configs):
        j = lookup.get(row.tobytes())
        if j is not None:
            s_idx.append(i)
            t_idx.append(j)
    if not s_idx:
        raise DataError("source and target share no configurations")
    return EnvPair(src, tgt, _frozen(s_idx, np.intp), _frozen(t_idx, np.intp), label)
