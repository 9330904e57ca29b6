"""Deterministic statistical kernels used by the metric computations."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import ndtr

from .errors import DataError, InsufficientPairsError, UsageError

MASS_FLOOR = 1e-12
BANDWIDTH_FLOOR = 1e-9
GRID_SIZE = 512
_CF_TOL = 1e-12
_CF_MAX_ITER = 10_000


class Correlation(NamedTuple):
    value: float
    degenerate: bool = False

    def __float__(self) -> float:
        return self.value


def _paired_vectors(x, y, min_len: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise UsageError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < min_len:
        raise UsageError(f"need at least {min_len} values, got {x.size}")
    return x, y


def _constant(v: np.ndarray) -> bool:
    return bool(np.all(v == v[0]))


def pearson(x, y, *, min_len: int = 3) -> Correlation:
    """Product-moment correlation; flagged 0 when either side is constant."""
    x, y = _paired_vectors(x, y, min_len)
    if _constant(x) or _constant(y):
        return Correlation(0.0, True)
    dx = x - x.mean()
    dy = y - y.mean()
    denom = math.sqrt(float(dx @ dx) * float(dy @ dy))
    if denom == 0.0:
        return Correlation(0.0, True)
    r = float(dx @ dy) / denom
    return Correlation(min(1.0, max(-1.0, r)))


def rankdata(values) -> np.ndarray:
    """1-based ranks, ties receive the mean of the ranks they span."""
    v = np.asarray(values, dtype=np.float64).ravel()
    n = v.size
    order = np.argsort(v, kind="mergesort")
    sv = v[order]
    new_group = np.r_[True, sv[1:] != sv[:-1]]
    dense = np.cumsum(new_group) - 1
    bounds = np.r_[np.flatnonzero(new_group), n]
    avg = 0.5 * (bounds[dense] + bounds[dense + 1] + 1)
    ranks = np.empty(n)
    ranks[order] = avg
    return ranks


def spearman(x, y, *, min_len: int = 3) -> Correlation:
    x, y = _paired_vectors(x, y, min_len)
    return pearson(rankdata(x), rankdata(y), min_len=min_len)


# -- incomplete beta / Student t ---------------------------------------------


def _betacf(a: float, b: float, x: float) -> float:
    # modified Lentz evaluation of the incomplete-beta continued fraction
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, _CF_MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < _CF_TOL:
            return h
    raise ArithmeticError(f"incomplete beta did not converge (a={a}, b={b}, x={x})")


def betainc(a: float, b: float, x: float) -> float:
    """Regularized incomplete beta function I_x(a, b)."""
    if a <= 0 or b <= 0:
        raise ValueError("betainc needs a, b > 0")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    log_front = (
        math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
        + a * math.log(x) + b * math.log1p(-x)
    )
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t: float, df: float) -> float:
    """P(|T| >= |t|) for Student's t with ``df`` degrees of freedom."""
    if math.isnan(t):
        return 1.0
    if math.isinf(t):
        return 0.0
    x = df / (df + t * t)
    return min(1.0, max(0.0, betainc(df / 2.0, 0.5, x)))


def t_cdf(t: float, df: float) -> float:
    tail = 0.5 * t_two_sided_p(t, df)
    return 1.0 - tail if t > 0 else tail


@dataclass(frozen=True)
class TTestResult:
    t_stat: float
    p_value: float
    mean_diff: float
    n_pairs: int


def paired_t_test(diffs) -> TTestResult:
    """Two-sided one-sample t-test of paired differences against zero."""
    d = np.asarray(diffs, dtype=np.float64).ravel()
    n = d.size
    if n < 2:
        raise InsufficientPairsError(f"paired t-test needs >= 2 pairs, got {n}")
    mean = float(d.mean())
    sd = float(d.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(0.0, 1.0, 0.0, n)
        return TTestResult(math.copysign(math.inf, mean), 0.0, mean, n)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t, t_two_sided_p(t, n - 1), mean, n)


# -- kernel density ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Density:
    """Probability mass per cell of a uniform grid (cells centred on points).

    KDE-built densities keep their samples and bandwidth so they can be
    re-evaluated on another grid.
    """

    grid: np.ndarray
    mass: np.ndarray
    samples: np.ndarray | None = None
    bandwidth: float | None = None

    def __post_init__(self) -> None:
        grid = np.asarray(self.grid, dtype=np.float64).ravel()
        mass = np.asarray(self.mass, dtype=np.float64).ravel()
        if grid.shape != mass.shape or grid.size < 1:
            raise ValueError("grid and mass must be non-empty and equally long")
        if grid.size > 1:
            steps = np.diff(grid)
            if np.any(steps <= 0):
                raise ValueError("grid must be strictly increasing")
            # linspace rounding is about one ulp of the grid magnitude
            slack = 64 * np.finfo(np.float64).eps * float(np.abs(grid).max())
            if not np.allclose(steps, steps[0], rtol=1e-6, atol=slack):
                raise ValueError("grid spacing must be uniform")
        if np.any(mass < MASS_FLOOR * (1 - 1e-9)):
            raise ValueError(f"mass entries must be >= {MASS_FLOOR}")
        if abs(mass.sum() - 1.0) > 1e-9:
            raise ValueError("mass must sum to 1")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "mass", mass)

    @property
    def mode(self) -> float:
        return float(self.grid[int(np.argmax(self.mass))])

    def evaluate_on(self, grid) -> Density:
        if self.samples is None or self.bandwidth is None:
            raise ValueError("density has no samples to re-evaluate")
        grid = np.asarray(grid, dtype=np.float64)
        return Density(grid, _cell_mass(self.samples, self.bandwidth, grid),
                       self.samples, self.bandwidth)


def _cell_mass(samples: np.ndarray, h: float, grid: np.ndarray) -> np.ndarray:
    if grid.size == 1:
        return np.ones(1)
    step = grid[1] - grid[0]
    edges = np.r_[grid - step / 2.0, grid[-1] + step / 2.0]
    raw = np.zeros(grid.size)
    for start in range(0, samples.size, 2048):
        x = samples[start:start + 2048, None]
        z = (edges[None, :] - x) / h
        lo, hi = z[:, :-1], z[:, 1:]
        # take differences in the tail that keeps precision
        cell = np.where(lo > 0, ndtr(-lo) - ndtr(-hi), ndtr(hi) - ndtr(lo))
        raw += cell.sum(axis=0)
    total = raw.sum()
    if not total > 0:
        raise ArithmeticError("density grid does not cover the samples")
    return np.maximum(raw / total, MASS_FLOOR)


def silverman_bandwidth(values: np.ndarray) -> float:
    n = values.size
    sd = float(values.std(ddof=1))
    q75, q25 = np.percentile(values, [75, 25])
    iqr_scale = float(q75 - q25) / 1.34
    spread = min(sd, iqr_scale)
    if spread <= 0:
        # heavily tied data: IQR can vanish while sd does not
        spread = max(sd, iqr_scale)
    return max(0.9 * spread * n ** (-0.2), BANDWIDTH_FLOOR)


def fit_kde(values, grid_size: int = GRID_SIZE) -> Density:
    """Gaussian KDE with Silverman bandwidth on a uniform grid."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size < 5:
        raise DataError(f"density estimation needs >= 5 values, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise DataError("density estimation needs finite values")
    h = silverman_bandwidth(v)
    grid = np.linspace(v.min() - 3 * h, v.max() + 3 * h, grid_size)
    v = np.sort(v)
    return Density(grid, _cell_mass(v, h, grid), v, h)


def kl_divergence(p: Density, q: Density) -> float:
    """Discrete KL(p || q) in nats.

    KDE densities are first re-evaluated on a common grid spanning both
    ranges; plain mass vectors must already share a grid.
    """
    if p.samples is not None and q.samples is not None:
        size = max(p.grid.size, q.grid.size)
        grid = np.linspace(min(p.grid[0], q.grid[0]), max(p.grid[-1], q.grid[-1]), size)
        p, q = p.evaluate_on(grid), q.evaluate_on(grid)
    elif not np.array_equal(p.grid, q.grid):
        raise ValueError("densities without samples must share a grid")
    pm = np.maximum(p.mass, MASS_FLOOR)
    qm = np.maximum(q.mass, MASS_FLOOR)
    return float(np.sum(pm * np.log(pm / qm)))


def top_bottom_overlap(y_src, y_tgt, q: float = 0.10) -> tuple[float, float]:
    """Share of the source's best/worst ``q`` fraction that stays best/worst.

    Lower values are better. Ties are broken by ascending position.
    """
    ys, yt = _paired_vectors(y_src, y_tgt, 3)
    if not 0 < q < 0.5:
        raise UsageError(f"quantile must lie in (0, 0.5), got {q}")
    n = ys.size
    k = max(1, math.ceil(round(q * n, 9)))
    idx = np.arange(n)

    def best(v):
        return set(np.lexsort((idx, v))[:k].tolist())

    def worst(v):
        return set(np.lexsort((idx, -v))[:k].tolist())

    top = len(best(ys) & best(yt)) / k
    bottom = len(worst(ys) & worst(yt)) / k
    return top, bottom
