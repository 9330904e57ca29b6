"""The M1-M18 relatedness metrics for one source/target pair.

Metric groups:

* performance behaviour (m1-m5, noise ratio): correlations, distribution
  divergence and top/bottom overlap of the response;
* influential options (m6-m10): paired t-tests and tree importances;
* interactions (m11-m14): stepwise models with pairwise terms;
* invalid configurations (m15-m18): invalid shares and validity classifiers.

A metric that cannot be computed is ``None`` (rendered "N/A"); the reason
is recorded in ``MetricSuite.notes``.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from .data import AggregatedDataset, EnvPair
from .errors import EnvTransferError, InsufficientPairsError
from .learners import (
    fit_stepwise_interactions,
    fit_tree_importance,
    fit_validity_classifier,
)
from .learners.logistic import RIDGE
from .learners.stepwise import P_ENTER, P_REMOVE
from .learners.tree import MAX_DEPTH, MIN_LEAF
from .stats import GRID_SIZE, fit_kde, kl_divergence, paired_t_test, pearson, spearman, top_bottom_overlap

METRIC_NAMES = tuple(f"m{i}" for i in range(1, 19))
CORRELATIONS = frozenset({"m1", "m3", "m10", "m14", "m18"})
FRACTIONS = frozenset({"m4", "m5", "m15", "m16", "m17"})
COUNTS = frozenset({"m6", "m7", "m8", "m9", "m11", "m12", "m13"})
DIVERGENCES = frozenset({"m2"})


@dataclass(frozen=True)
class AnalysisParams:
    alpha: float = 0.05
    quantile: float = 0.10
    kde_kernel: str = "gaussian"
    kde_bandwidth: str = "silverman"
    kde_grid: int = GRID_SIZE
    kl_log: str = "natural"
    kl_grid: str = "shared-union"
    tree_max_depth: int = MAX_DEPTH
    tree_min_leaf: int = MIN_LEAF
    stepwise_p_enter: float = P_ENTER
    stepwise_p_remove: float = P_REMOVE
    stepwise_adjust: str = "bonferroni"
    logistic_ridge: float = RIDGE
    lower_is_better: bool = True
    seed: int = 42
    jobs: int = 1

    def __post_init__(self) -> None:
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0 < self.quantile < 0.5:
            raise ValueError(f"quantile must lie in (0, 0.5), got {self.quantile}")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    def to_dict(self) -> dict:
        out = asdict(self)
        del out["jobs"]  # execution detail, must not change outputs
        return out


@dataclass(frozen=True)
class MetricSuite:
    m1: float | None = None
    m2: float | None = None
    m3: float | None = None
    m4: float | None = None
    m5: float | None = None
    m6: int | None = None
    m7: int | None = None
    m8: int | None = None
    m9: int | None = None
    m10: float | None = None
    m11: int | None = None
    m12: int | None = None
    m13: int | None = None
    m14: float | None = None
    m15: float | None = None
    m16: float | None = None
    m17: float | None = None
    m18: float | None = None
    noise_ratio: float | None = None
    # the "influential in both / in exactly one" reading of m8/m9
    m8_both: int | None = None
    m9_one: int | None = None
    params: dict = field(default_factory=dict)
    notes: tuple[str, ...] = ()
    # decimal places per metric, only set for suites parsed from tables
    display: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in METRIC_NAMES:
            v = getattr(self, name)
            if v is None:
                continue
            if name in COUNTS:
                if int(v) != v or v < 0:
                    raise ValueError(f"{name} must be a non-negative count, got {v}")
                object.__setattr__(self, name, int(v))
            elif name in CORRELATIONS and not -1.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [-1, 1], got {v}")
            elif name in FRACTIONS and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
            elif name in DIVERGENCES and not v >= -1e-12:
                raise ValueError(f"{name} must be >= 0, got {v}")
        for big, small, name in (("m6", "m7", "m8"), ("m11", "m12", "m13")):
            a, b, c = getattr(self, big), getattr(self, small), getattr(self, name)
            if None not in (a, b, c) and c > min(a, b):
                raise ValueError(f"{name} cannot exceed min({big}, {small})")
        object.__setattr__(self, "notes", tuple(self.notes))

    @property
    def na_flags(self) -> frozenset[str]:
        return frozenset(n for n in METRIC_NAMES if getattr(self, n) is None)

    def values(self) -> dict[str, float | int | None]:
        return {n: getattr(self, n) for n in METRIC_NAMES}

    def to_dict(self) -> dict:
        out: dict = {n: getattr(self, n) for n in METRIC_NAMES}
        out["noise_ratio"] = self.noise_ratio
        out["m8_both"] = self.m8_both
        out["m9_one"] = self.m9_one
        out["na"] = sorted(self.na_flags, key=lambda n: int(n[1:]))
        out["params"] = dict(self.params)
        out["notes"] = list(self.notes)
        if self.display:
            out["display"] = dict(self.display)
        return out

    @classmethod
    def from_dict(cls, raw: dict) -> MetricSuite:
        names = {f.name for f in fields(cls)}
        kwargs = {k: v for k, v in raw.items() if k in names}
        kwargs["notes"] = tuple(raw.get("notes", ()))
        return cls(**kwargs)


# -- helpers -----------------------------------------------------------------


def _corr_value(c, note: str, notes: list[str]) -> float | None:
    if c.degenerate:
        notes.append(f"{note}: constant input, correlation undefined")
        return None
    return c.value


def coefficient_correlation(a, b) -> float | None:
    """Pearson over two coefficient vectors, or None when undefined.

    Identical non-empty vectors count as perfectly correlated even when
    Pearson is undefined (a single shared coefficient, say).
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.size == 0:
        return None
    identical = bool(np.array_equal(a, b)) and bool(np.any(a != 0))
    if a.size >= 2:
        c = pearson(a, b, min_len=2)
        if not c.degenerate:
            return c.value
    return 1.0 if identical else None


def _both_valid(pair: EnvPair) -> tuple[AggregatedDataset, AggregatedDataset]:
    s_idx, t_idx = pair.common_valid()
    return pair.source.subset(s_idx), pair.target.subset(t_idx)


# -- performance behaviour ---------------------------------------------------


def rq1_metrics(pair: EnvPair, params: AnalysisParams | None = None,
                notes: list[str] | None = None) -> dict:
    params = params or AnalysisParams()
    notes = notes if notes is not None else []
    out: dict = dict.fromkeys(("m1", "m2", "m3", "m4", "m5", "noise_ratio"))
    s_idx, t_idx = pair.common_valid()
    ys = pair.source.mean_perf[s_idx]
    yt = pair.target.mean_perf[t_idx]
    if ys.size >= 5:
        out["m1"] = _corr_value(pearson(ys, yt), "m1", notes)
        out["m3"] = _corr_value(spearman(ys, yt), "m3", notes)
        out["m4"], out["m5"] = top_bottom_overlap(ys, yt, params.quantile)
    else:
        notes.append(f"m1,m3-m5: only {ys.size} common valid configurations (need 5)")
    src_all = pair.source.mean_perf[pair.source.valid]
    tgt_all = pair.target.mean_perf[pair.target.valid]
    if src_all.size >= 5 and tgt_all.size >= 5:
        out["m2"] = max(0.0, kl_divergence(fit_kde(src_all, params.kde_grid),
                                           fit_kde(tgt_all, params.kde_grid)))
    else:
        notes.append("m2: fewer than 5 valid configurations on a side")
    vs = pair.source.rep_variance[s_idx]
    vt = pair.target.rep_variance[t_idx]
    if ys.size and np.any(~np.isnan(vs)) and np.any(~np.isnan(vt)):
        mean_s = float(np.nanmean(vs))
        mean_t = float(np.nanmean(vt))
        if mean_t > 0:
            out["noise_ratio"] = mean_s / mean_t
        else:
            notes.append("noise_ratio: target replicate variance is zero")
    return out


# -- influential options -----------------------------------------------------


@dataclass(frozen=True)
class OptionEffect:
    option: int
    status: str  # "influential", "not_influential" or "not_testable"
    mean_effect: float
    p_value: float
    n_pairs: int

    @property
    def influential(self) -> bool:
        return self.status == "influential"


def _config_codes(configs: np.ndarray) -> list:
    d = configs.shape[1]
    if d <= 62:
        weights = np.left_shift(np.int64(1), np.arange(d, dtype=np.int64))
        return (configs.astype(np.int64) @ weights).tolist()
    return [int.from_bytes(np.packbits(r, bitorder="little").tobytes(), "little")
            for r in configs]


def influential_options(ds: AggregatedDataset, alpha: float = 0.05) -> list[OptionEffect]:
    """Paired t-test per option over configurations differing only in it.

    Differences are enabled minus disabled; only valid configurations take
    part. Options with fewer than two matched pairs are not testable.
    """
    ok = ds.valid_only()
    codes = _config_codes(ok.configs)
    lookup = {c: i for i, c in enumerate(codes)}
    y = ok.mean_perf
    result = []
    for j in range(ds.space.d):
        bit = 1 << j
        on = [i for i, c in enumerate(codes) if c & bit and (c ^ bit) in lookup]
        off = [lookup[codes[i] ^ bit] for i in on]
        diffs = y[on] - y[off]
        try:
            test = paired_t_test(diffs)
        except InsufficientPairsError:
            result.append(OptionEffect(j, "not_testable", math.nan, math.nan, len(on)))
            continue
        status = "influential" if test.p_value < alpha else "not_influential"
        result.append(OptionEffect(j, status, test.mean_diff, test.p_value, test.n_pairs))
    return result


def rq2_metrics(pair: EnvPair, params: AnalysisParams | None = None,
                notes: list[str] | None = None) -> dict:
    params = params or AnalysisParams()
    notes = notes if notes is not None else []
    src, tgt = _both_valid(pair)
    es = influential_options(src, params.alpha)
    et = influential_options(tgt, params.alpha)
    for side, effects in (("source", es), ("target", et)):
        untested = sum(e.status == "not_testable" for e in effects)
        if untested:
            notes.append(f"{side}: {untested} of {len(effects)} options not testable "
                         "(fewer than 2 matched pairs)")
    inf_s = {e.option for e in es if e.influential}
    inf_t = {e.option for e in et if e.influential}
    both = inf_s & inf_t
    agree = sum(1 for j in both if math.copysign(1, es[j].mean_effect)
                == math.copysign(1, et[j].mean_effect))
    out = {
        "m6": len(inf_s),
        "m7": len(inf_t),
        "m8": agree,
        "m9": len(both) - agree,
        "m8_both": len(both),
        "m9_one": len(inf_s ^ inf_t),
        "m10": None,
    }
    try:
        imp_s = fit_tree_importance(src, max_depth=params.tree_max_depth,
                                    min_leaf=params.tree_min_leaf)
        imp_t = fit_tree_importance(tgt, max_depth=params.tree_max_depth,
                                    min_leaf=params.tree_min_leaf)
    except EnvTransferError as exc:
        notes.append(f"m10: {exc}")
    else:
        out["m10"] = coefficient_correlation(imp_s.weights, imp_t.weights)
        if out["m10"] is None:
            notes.append("m10: importance vectors are degenerate")
    return out


# -- interactions ------------------------------------------------------------


def rq3_metrics(pair: EnvPair, params: AnalysisParams | None = None,
                notes: list[str] | None = None) -> dict:
    params = params or AnalysisParams()
    notes = notes if notes is not None else []
    src, tgt = _both_valid(pair)
    kw = dict(p_enter=params.stepwise_p_enter, p_remove=params.stepwise_p_remove,
              adjust=params.stepwise_adjust)
    ms = fit_stepwise_interactions(src, **kw)
    mt = fit_stepwise_interactions(tgt, **kw)
    for side, m in (("source", ms), ("target", mt)):
        if m.skipped:
            notes.append(f"{side}: {m.skipped} rank-deficient candidate terms skipped")
    cs, ct = ms.pair_coefficients, mt.pair_coefficients
    shared = cs.keys() & ct.keys()
    agree = sum(1 for p in shared if np.sign(cs[p]) == np.sign(ct[p]))
    union = sorted(cs.keys() | ct.keys())
    m14 = coefficient_correlation([cs.get(p, 0.0) for p in union],
                                  [ct.get(p, 0.0) for p in union])
    if m14 is None:
        notes.append("m14: no interaction coefficients to correlate")
    return {"m11": len(cs), "m12": len(ct), "m13": agree, "m14": m14}


# -- invalid configurations --------------------------------------------------


def rq4_metrics(pair: EnvPair, params: AnalysisParams | None = None,
                notes: list[str] | None = None) -> dict:
    notes = notes if notes is not None else []
    out: dict = dict.fromkeys(("m15", "m16", "m17", "m18"))
    src, tgt = pair.source, pair.target
    inv_s, inv_t = ~src.valid, ~tgt.valid
    if not inv_s.any() and not inv_t.any():
        notes.append("m15-m18: no invalid configurations on either side")
        return out
    out["m15"] = float(inv_s.mean())
    out["m16"] = float(inv_t.mean())
    common_s = inv_s[pair.source_index]
    common_t = inv_t[pair.target_index]
    denom = int(common_s.sum())
    if denom:
        out["m17"] = int((common_s & common_t).sum()) / denom
    else:
        notes.append("m17: no source-invalid configuration among the common ones")
    try:
        cs = fit_validity_classifier(src)
        ct = fit_validity_classifier(tgt)
    except EnvTransferError as exc:
        notes.append(f"m18: {exc}")
    else:
        out["m18"] = coefficient_correlation(cs.coefficients, ct.coefficients)
        if out["m18"] is None:
            notes.append("m18: classifier coefficients are degenerate")
    return out


_GROUPS: tuple[tuple[str, tuple[str, ...], Callable], ...] = (
    ("rq1", ("m1", "m2", "m3", "m4", "m5", "noise_ratio"), rq1_metrics),
    ("rq2", ("m6", "m7", "m8", "m9", "m10", "m8_both", "m9_one"), rq2_metrics),
    ("rq3", ("m11", "m12", "m13", "m14"), rq3_metrics),
    ("rq4", ("m15", "m16", "m17", "m18"), rq4_metrics),
)


def _run_group(group, pair: EnvPair, params: AnalysisParams) -> tuple[dict, list[str]]:
    name, keys, fn = group
    notes: list[str] = []
    try:
        values = fn(pair, params, notes)
    except EnvTransferError as exc:
        values = dict.fromkeys(keys)
        notes.append(f"{name}: {exc}")
    return values, [f"{name}: {n}" if not n.startswith(name) else n for n in notes]


def analyze_pair(pair: EnvPair, params: AnalysisParams | None = None) -> MetricSuite:
    """Compute every metric group; a failing group yields NA, never an abort."""
    params = params or AnalysisParams()
    if params.jobs > 1:
        with ThreadPoolExecutor(max_workers=min(params.jobs, len(_GROUPS))) as pool:
            results = list(pool.map(lambda g: _run_group(g, pair, params), _GROUPS))
    else:
        results = [_run_group(g, pair, params) for g in _GROUPS]
    values: dict = {}
    notes: list[str] = []
    for vals, group_notes in results:
        values.update(vals)
        notes.extend(group_notes)
    return MetricSuite(**values, params=params.to_dict(), notes=tuple(notes))
