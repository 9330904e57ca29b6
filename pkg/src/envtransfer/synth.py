"""Synthetic source/target datasets with planted, known relationships.

Performance follows a linear model with pairwise interactions,

    y = base + sum_i main_i c_i + sum_{i<j} pair_ij c_i c_j + N(0, noise_sd),

measured ``replicates`` times per configuration. The target environment is
derived from the source coefficients according to a ``Change``.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path
from typing import Mapping

import numpy as np

from .data import EnvironmentDesc, PerfDataset, ConfigSpace, write_dataset_csv
from .errors import SpecError
from .stats import spearman

MAX_EXHAUSTIVE_OPTIONS = 20
CHANGE_KINDS = ("identity", "linear", "option_shift", "interaction_shift", "severe")
_SEVERITY = {"identity": "S", "linear": "S", "option_shift": "M",
             "interaction_shift": "L", "severe": "VL"}


def _pair_key(i: int, j: int) -> tuple[int, int]:
    if i == j:
        raise SpecError(f"pair ({i},{j}) must name two different options")
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class Change:
    kind: str = "identity"
    alpha: float = 1.0
    beta: float = 0.0
    option_deltas: Mapping[int, float] = field(default_factory=dict)
    pair_deltas: Mapping[tuple[int, int], float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.kind not in CHANGE_KINDS:
            raise SpecError(f"unknown change kind {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> Change:
        """Parse ``identity``, ``linear:A,B``, ``option_shift:I=D,...``,
        ``interaction_shift:I-J=D,...`` or ``severe``."""
        kind, _, arg = text.strip().partition(":")
        try:
            if kind in ("identity", "severe"):
                if arg:
                    raise ValueError("takes no arguments")
                return cls(kind)
            if kind == "linear":
                a, b = (float(v) for v in arg.split(","))
                return cls(kind, alpha=a, beta=b)
            if kind == "option_shift":
                deltas = {}
                for item in arg.split(","):
                    k, v = item.split("=")
                    deltas[int(k)] = float(v)
                return cls(kind, option_deltas=deltas)
            if kind == "interaction_shift":
                deltas = {}
                for item in arg.split(","):
                    k, v = item.split("=")
                    i, j = k.split("-")
                    deltas[_pair_key(int(i), int(j))] = float(v)
                return cls(kind, pair_deltas=deltas)
        except ValueError as exc:
            raise SpecError(f"cannot parse change {text!r}: {exc}") from None
        raise SpecError(f"unknown change kind {kind!r}")

    def label(self) -> str:
        if self.kind == "linear":
            return f"linear:{self.alpha:g},{self.beta:g}"
        if self.kind == "option_shift":
            return "option_shift:" + ",".join(f"{k}={v:g}" for k, v in sorted(self.option_deltas.items()))
        if self.kind == "interaction_shift":
            return "interaction_shift:" + ",".join(
                f"{i}-{j}={v:g}" for (i, j), v in sorted(self.pair_deltas.items()))
        return self.kind


@dataclass(frozen=True)
class InvalidRule:
    """A configuration is invalid when ``sum_i weight_i c_i > threshold``."""

    weights: Mapping[int, float]
    threshold: float

    def invalid(self, configs) -> np.ndarray:
        C = np.asarray(configs, dtype=np.float64)
        score = np.zeros(C.shape[0])
        for i, w in sorted(self.weights.items()):
            score = score + w * C[:, i]
        return score > self.threshold

    @classmethod
    def parse(cls, text: str) -> InvalidRule:
        """``"1=1,3=-1>0.5"`` means invalid when c1 - c3 > 0.5."""
        m = re.fullmatch(r"\s*(.+?)\s*>\s*(\S+)\s*", text)
        if not m:
            raise SpecError(f"invalid rule {text!r} must look like 'i=w,j=w>t'")
        try:
            weights = {}
            for item in m.group(1).split(","):
                k, v = item.split("=")
                weights[int(k)] = float(v)
            return cls(weights, float(m.group(2)))
        except ValueError as exc:
            raise SpecError(f"cannot parse invalid rule {text!r}: {exc}") from None

    def to_dict(self) -> dict:
        return {"weights": {str(k): v for k, v in sorted(self.weights.items())},
                "threshold": self.threshold}


@dataclass(frozen=True)
class Coefficients:
    base: float
    main: tuple[float, ...]
    pairs: Mapping[tuple[int, int], float]

    def means(self, configs) -> np.ndarray:
        C = np.asarray(configs, dtype=np.float64)
        y = np.full(C.shape[0], float(self.base))
        for i, w in enumerate(self.main):
            if w:
                y += w * C[:, i]
        for (i, j), w in sorted(self.pairs.items()):
            if w:
                y += w * C[:, i] * C[:, j]
        return y

    def influential(self) -> frozenset[int]:
        opts = {i for i, w in enumerate(self.main) if w}
        for (i, j), w in self.pairs.items():
            if w:
                opts.update((i, j))
        return frozenset(opts)

    def active_pairs(self) -> frozenset[tuple[int, int]]:
        return frozenset(p for p, w in self.pairs.items() if w)

    def to_dict(self) -> dict:
        return {
            "base": self.base,
            "main": list(self.main),
            "pairs": [[i, j, w] for (i, j), w in sorted(self.pairs.items())],
        }


@dataclass(frozen=True)
class ScenarioSpec:
    d: int
    main_effects: tuple[float, ...]
    pair_effects: Mapping[tuple[int, int], float] = field(default_factory=dict)
    base: float = 100.0
    noise_sd: float = 0.0
    change: Change = field(default_factory=Change)
    n: int | None = None  # None means the exhaustive 2**d space
    replicates: int = 3
    invalid_rule: InvalidRule | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        object.__setattr__(self, "main_effects", tuple(float(v) for v in self.main_effects))
        object.__setattr__(self, "pair_effects",
                           {_pair_key(*k): float(v) for k, v in self.pair_effects.items()})
        if self.d < 1:
            raise SpecError("need at least one option")
        if len(self.main_effects) != self.d:
            raise SpecError(f"expected {self.d} main effects, got {len(self.main_effects)}")
        if any(not 0 <= i < self.d for p in self.pair_effects for i in p):
            raise SpecError("pair effect references an unknown option")
        if not self.base > 0:
            raise SpecError("base performance must be > 0")
        if not self.noise_sd >= 0:
            raise SpecError("noise_sd must be >= 0")
        if self.replicates < 1:
            raise SpecError("need at least one replicate")
        if self.n is None:
            if self.d > MAX_EXHAUSTIVE_OPTIONS:
                raise SpecError(f"exhaustive space too large: 2^{self.d} configurations "
                                f"(cap 2^{MAX_EXHAUSTIVE_OPTIONS})")
        elif not 1 <= self.n <= 2 ** self.d:
            raise SpecError(f"cannot sample {self.n} distinct configurations from 2^{self.d}")
        if self.invalid_rule is not None and any(
                not 0 <= i < self.d for i in self.invalid_rule.weights):
            raise SpecError("invalid rule references an unknown option")
        change = self.change
        if any(not 0 <= i < self.d for i in change.option_deltas) or any(
                not 0 <= i < self.d for p in change.pair_deltas for i in p):
            raise SpecError("change references an unknown option")


@dataclass(frozen=True, eq=False)
class GroundTruth:
    family: str
    source: Coefficients
    target: Coefficients
    linear: tuple[float, float] | None
    invalid_source: InvalidRule | None
    invalid_target: InvalidRule | None
    configs: np.ndarray
    noise_sd: float
    replicates: int
    exhaustive: bool
    seed: int

    @property
    def influential_source(self) -> frozenset[int]:
        return self.source.influential()

    @property
    def influential_target(self) -> frozenset[int]:
        return self.target.influential()

    @property
    def pairs_source(self) -> frozenset[tuple[int, int]]:
        return self.source.active_pairs()

    @property
    def pairs_target(self) -> frozenset[tuple[int, int]]:
        return self.target.active_pairs()

    def invalid_masks(self) -> tuple[np.ndarray, np.ndarray]:
        n = self.configs.shape[0]
        none = np.zeros(n, bool)
        s = self.invalid_source.invalid(self.configs) if self.invalid_source else none
        t = self.invalid_target.invalid(self.configs) if self.invalid_target else none
        return s, t

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "seed": self.seed,
            "d": len(self.source.main),
            "n_configs": int(self.configs.shape[0]),
            "exhaustive": self.exhaustive,
            "replicates": self.replicates,
            "noise_sd": self.noise_sd,
            "source": self.source.to_dict(),
            "target": self.target.to_dict(),
            "linear": ({"alpha": self.linear[0], "beta": self.linear[1]}
                       if self.linear else None),
            "influential_source": sorted(self.influential_source),
            "influential_target": sorted(self.influential_target),
            "pairs_source": [list(p) for p in sorted(self.pairs_source)],
            "pairs_target": [list(p) for p in sorted(self.pairs_target)],
            "invalid_source": self.invalid_source.to_dict() if self.invalid_source else None,
            "invalid_target": self.invalid_target.to_dict() if self.invalid_target else None,
        }


def all_configs(d: int) -> np.ndarray:
    """Every configuration, lexicographic with option 0 most significant."""
    codes = np.arange(2 ** d, dtype=np.int64)
    shifts = np.arange(d - 1, -1, -1, dtype=np.int64)
    return ((codes[:, None] >> shifts) & 1).astype(np.uint8)


def _sample_configs(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    if d <= 24:
        codes = np.sort(rng.choice(2 ** d, size=n, replace=False))
        shifts = np.arange(d - 1, -1, -1, dtype=np.int64)
        return ((codes[:, None] >> shifts) & 1).astype(np.uint8)
    seen: set[bytes] = set()
    rows = []
    while len(rows) < n:
        row = rng.integers(0, 2, size=d, dtype=np.uint8)
        key = row.tobytes()
        if key not in seen:
            seen.add(key)
            rows.append(row)
    arr = np.array(rows, dtype=np.uint8)
    order = np.lexsort(arr.T[::-1])
    return arr[order]


def _severe_target(src: Coefficients, rule: InvalidRule | None, d: int,
                   rng: np.random.Generator) -> tuple[Coefficients, InvalidRule | None]:
    # re-draw the dominant half of the planted terms: random magnitude within
    # 0.5-1.5x of the old one, opposite sign, so the response ordering breaks
    # while the set of important options stays the same
    terms = [("main", i, w) for i, w in enumerate(src.main) if w]
    terms += [("pair", p, w) for p, w in sorted(src.pairs.items()) if w]
    main = list(src.main)
    pairs = dict(src.pairs)
    if not terms:
        main = [float(v) for v in rng.normal(0.0, 1.0, d)]
    order = sorted(range(len(terms)), key=lambda k: -abs(terms[k][2]))
    for k in sorted(order[: math.ceil(len(terms) / 2)]):
        kind, key, old = terms[k]
        new = -math.copysign(abs(old) * float(rng.uniform(0.5, 1.5)), old)
        if kind == "main":
            main[key] = new
        else:
            pairs[key] = new
    if rule is not None:
        free = [i for i in range(d) if i not in rule.weights]
        bump = max(abs(w) for w in rule.weights.values()) if rule.weights else 1.0
        if free:
            extra = int(rng.choice(free))
            rule = InvalidRule({**rule.weights, extra: bump}, rule.threshold)
        else:
            rule = InvalidRule(dict(rule.weights), rule.threshold - bump)
    return Coefficients(src.base, tuple(main), pairs), rule


def generate_pair(spec: ScenarioSpec) -> tuple[PerfDataset, PerfDataset, GroundTruth]:
    """Realise a scenario; the same spec (seed included) gives identical data."""
    cfg_seq, change_seq, noise_s, noise_t = np.random.SeedSequence(spec.seed).spawn(4)
    d = spec.d
    if spec.n is None:
        configs = all_configs(d)
    else:
        configs = _sample_configs(d, spec.n, np.random.default_rng(cfg_seq))
    src = Coefficients(spec.base, spec.main_effects, dict(spec.pair_effects))
    change = spec.change
    rule_t = spec.invalid_rule
    linear = None
    if change.kind == "identity":
        tgt = src
    elif change.kind == "linear":
        a, b = change.alpha, change.beta
        tgt = Coefficients(a * src.base + b, tuple(a * w for w in src.main),
                           {p: a * w for p, w in src.pairs.items()})
        linear = (a, b)
    elif change.kind == "option_shift":
        main = list(src.main)
        for i, delta in change.option_deltas.items():
            main[i] += delta
        tgt = Coefficients(src.base, tuple(main), dict(src.pairs))
    elif change.kind == "interaction_shift":
        pairs = dict(src.pairs)
        for p, delta in change.pair_deltas.items():
            pairs[p] = pairs.get(p, 0.0) + delta
        tgt = Coefficients(src.base, src.main, pairs)
    else:
        tgt, rule_t = _severe_target(src, spec.invalid_rule, d, np.random.default_rng(change_seq))
        low = tgt.means(configs).min()
        floor = 0.1 * src.base
        if low < floor:
            # keep the re-drawn target strictly positive
            tgt = replace(tgt, base=tgt.base + (floor - low))

    mu_s = src.means(configs)
    mu_t = tgt.means(configs)
    if mu_s.min() <= 0 or mu_t.min() <= 0:
        raise SpecError("planted mean performance must be > 0 for every configuration; "
                        "raise the base")
    n = configs.shape[0]
    none = np.zeros(n, bool)
    inv_s = spec.invalid_rule.invalid(configs) if spec.invalid_rule else none
    inv_t = rule_t.invalid(configs) if rule_t else none

    names = tuple(f"o{i}" for i in range(d))
    space = ConfigSpace(names)
    system = f"synthetic-d{d}"
    env_s = EnvironmentDesc("h1", "w1", "v1", None, system)
    env_t = EnvironmentDesc("h1", "w1", "v1", _SEVERITY[change.kind], system)
    datasets = []
    for mu, inv, seq, env in ((mu_s, inv_s, noise_s, env_s), (mu_t, inv_t, noise_t, env_t)):
        rng = np.random.default_rng(seq)
        reps = spec.replicates
        noise = rng.normal(0.0, 1.0, size=(n, reps)) * spec.noise_sd
        y = mu[:, None] + noise
        valid = np.repeat(~inv, reps)
        perf = np.where(valid, y.ravel(), np.nan)
        if np.any(perf[valid] <= 0):
            raise SpecError("noise drives a measurement to <= 0; raise the base or lower noise_sd")
        datasets.append(PerfDataset(
            space,
            np.repeat(configs, reps, axis=0),
            np.tile(np.arange(reps), n),
            perf,
            valid,
            env,
        ))
    truth = GroundTruth(change.kind, src, tgt, linear, spec.invalid_rule, rule_t,
                        configs, spec.noise_sd, spec.replicates, spec.n is None, spec.seed)
    return datasets[0], datasets[1], truth


def random_scenario(d: int, *, seed: int, change: Change | str = "identity",
                    n: int | None = None, noise_sd: float = 0.5, replicates: int = 3,
                    n_main: int | None = None, n_pairs: int | None = None,
                    invalid_rule: InvalidRule | str | None = None,
                    base: float | None = None) -> ScenarioSpec:
    """Seeded random coefficients: about half the options and up to three
    pairs carry effects of magnitude 2-10 with random sign."""
    if isinstance(change, str):
        change = Change.parse(change)
    if isinstance(invalid_rule, str):
        invalid_rule = InvalidRule.parse(invalid_rule)
    if d < 1:
        raise SpecError("need at least one option")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    k_main = math.ceil(d / 2) if n_main is None else n_main
    k_pairs = min(3, d * (d - 1) // 2) if n_pairs is None else n_pairs
    main = np.zeros(d)
    chosen = rng.choice(d, size=min(k_main, d), replace=False)
    main[chosen] = rng.uniform(2, 10, size=chosen.size) * rng.choice([-1, 1], size=chosen.size)
    all_pairs = list(combinations(range(d), 2))
    pairs = {}
    if k_pairs and all_pairs:
        picks = rng.choice(len(all_pairs), size=min(k_pairs, len(all_pairs)), replace=False)
        for k in sorted(picks):
            pairs[all_pairs[k]] = float(rng.uniform(2, 8) * rng.choice([-1, 1]))
    if base is None:
        base = 10.0 + 3.0 * (np.abs(main).sum() + sum(abs(w) for w in pairs.values()))
    return ScenarioSpec(d, tuple(main), pairs, float(base), noise_sd, change, n,
                        replicates, invalid_rule, seed)


# -- expected metric bands ---------------------------------------------------


def _true_option_diffs(configs: np.ndarray, mu: np.ndarray, j: int) -> np.ndarray:
    index = {row.tobytes(): k for k, row in enumerate(configs)}
    diffs = []
    for k, row in enumerate(configs):
        if row[j]:
            partner = row.copy()
            partner[j] = 0
            other = index.get(partner.tobytes())
            if other is not None:
                diffs.append(mu[k] - mu[other])
    return np.array(diffs)


def expected_suite(gt: GroundTruth) -> dict[str, tuple[float, float]]:
    """Bands each metric should fall in, derived from the planted truth.

    Metrics without a derivable prediction are omitted. Correlation bands
    use the noise-attenuated correlation of the planted means with a
    Fisher-z interval of four standard errors.
    """
    bands: dict[str, tuple[float, float]] = {}
    inv_s, inv_t = gt.invalid_masks()
    both = ~inv_s & ~inv_t
    configs = gt.configs[both]
    mu_s = gt.source.means(configs)
    mu_t = gt.target.means(configs)
    n = configs.shape[0]
    s2 = gt.noise_sd ** 2 / gt.replicates
    noise_free = gt.noise_sd == 0
    d = len(gt.source.main)

    if n >= 5:
        ds, dt = mu_s - mu_s.mean(), mu_t - mu_t.mean()
        vs, vt = float(ds @ ds) / n, float(dt @ dt) / n
        # noise keeps the denominator positive; without it both sides must vary
        r = float(ds @ dt) / n / math.sqrt((vs + s2) * (vt + s2)) if vs * vt > 0 or s2 > 0 else None
        if noise_free and r is not None:
            bands["m1"] = (max(-1.0, r - 1e-9), min(1.0, r + 1e-9))
            rho = spearman(mu_s, mu_t)
            if not rho.degenerate:
                bands["m3"] = (max(-1.0, rho.value - 1e-9), min(1.0, rho.value + 1e-9))
        elif r is not None:
            z = math.atanh(max(-0.999999, min(0.999999, r)))
            se = 1.0 / math.sqrt(n - 3)
            bands["m1"] = (math.tanh(z - 4 * se), math.tanh(z + 4 * se))
    if gt.family == "identity" and noise_free:
        bands["m2"] = (0.0, 1e-6)

    if gt.invalid_source is not None or gt.invalid_target is not None:
        if inv_s.any() or inv_t.any():
            bands["m15"] = (float(inv_s.mean()),) * 2
            bands["m16"] = (float(inv_t.mean()),) * 2
            if inv_s.any():
                frac = float((inv_s & inv_t).sum() / inv_s.sum())
                bands["m17"] = (frac, frac)

    # option-level predictions need complete matched pairs
    if gt.exhaustive and not (inv_s.any() or inv_t.any()):
        detect_s = detect_t = flips = 0
        for j in range(d):
            es = _true_option_diffs(configs, mu_s, j)
            et = _true_option_diffs(configs, mu_t, j)
            t_s = _expected_t(es, s2)
            t_t = _expected_t(et, s2)
            detect_s += abs(t_s) >= 6
            detect_t += abs(t_t) >= 6
            if abs(t_s) >= 6 and abs(t_t) >= 6 and np.sign(es.mean()) != np.sign(et.mean()):
                flips += 1
        bands["m6"] = (detect_s, d)
        bands["m7"] = (detect_t, d)
        bands["m9"] = (flips, d)
        n_pairs = d * (d - 1) // 2
        big_s = sum(1 for w in gt.source.pairs.values() if w and abs(w) >= 8 * gt.noise_sd)
        big_t = sum(1 for w in gt.target.pairs.values() if w and abs(w) >= 8 * gt.noise_sd)
        if noise_free:
            bands["m11"] = (len(gt.pairs_source),) * 2
            bands["m12"] = (len(gt.pairs_target),) * 2
        else:
            bands["m11"] = (big_s, n_pairs)
            bands["m12"] = (big_t, n_pairs)
        if gt.family == "identity" and noise_free and gt.pairs_source:
            bands["m14"] = (1.0, 1.0)
    return bands


def _expected_t(diffs: np.ndarray, s2: float) -> float:
    if diffs.size < 2:
        return 0.0
    mean = float(diffs.mean())
    spread = float(diffs.var(ddof=1)) + 2 * s2
    if spread <= 0:
        return math.inf if mean else 0.0
    return mean / math.sqrt(spread / diffs.size)


def within(bands: Mapping[str, tuple[float, float]], values: Mapping, tol: float = 1e-9) -> list[str]:
    """Names of banded metrics whose value is missing or outside its band."""
    misses = []
    for name, (lo, hi) in bands.items():
        v = values.get(name)
        if v is None or not lo - tol <= v <= hi + tol:
            misses.append(name)
    return misses


def write_scenario(out_dir: str | Path, spec: ScenarioSpec) -> list[Path]:
    """Write source.csv, target.csv, truth.json and manifest.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    src, tgt, truth = generate_pair(spec)
    paths = [out / "source.csv", out / "target.csv", out / "truth.json", out / "manifest.json"]
    write_dataset_csv(src, paths[0])
    write_dataset_csv(tgt, paths[1])
    paths[2].write_text(json.dumps(truth.to_dict(), indent=2) + "\n", encoding="utf-8")
    manifest = {
        "source": src.env.to_dict(),
        "target": tgt.env.to_dict(),
        "change_label": spec.change.label(),
    }
    paths[3].write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")
    return paths
