"""Bidirectional stepwise regression over main effects and pairwise products.

Terms enter or leave on partial-F p-values. With one added/removed column
the partial F has one numerator degree of freedom, so its p-value is the
two-sided Student-t p-value of sqrt(F).

By default both thresholds are Bonferroni-scaled by the number of candidate
terms. Unadjusted 0.05/0.10 thresholds admit a spurious term in most fits
once there are a few dozen candidates; pass ``adjust="none"`` to get them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from ..data import AggregatedDataset
from ..errors import DataError, UsageError
from ..stats import t_two_sided_p

P_ENTER = 0.05
P_REMOVE = 0.10
_RANK_TOL = 1e-10
_FIT_TOL = 1e-10


@dataclass(frozen=True)
class Term:
    options: tuple[int, ...]
    coef: float

    @property
    def kind(self) -> str:
        return "main" if len(self.options) == 1 else "pair"


@dataclass(frozen=True)
class InteractionModel:
    terms: tuple[Term, ...]
    intercept: float
    n_fit: int = 0
    skipped: int = 0  # rank-deficient candidates passed over during selection
    steps: int = 0
    params: dict = field(default_factory=dict, compare=False)

    @property
    def selected_pairs(self) -> frozenset[tuple[int, int]]:
        return frozenset(t.options for t in self.terms if t.kind == "pair")

    @property
    def pair_coefficients(self) -> dict[tuple[int, int], float]:
        return {t.options: t.coef for t in self.terms if t.kind == "pair"}

    def design(self, configs) -> np.ndarray:
        C = np.asarray(configs, dtype=np.float64)
        cols = [np.prod(C[:, list(t.options)], axis=1) for t in self.terms]
        return np.column_stack(cols) if cols else np.zeros((C.shape[0], 0))

    def predict(self, configs) -> np.ndarray:
        coefs = np.array([t.coef for t in self.terms])
        return self.intercept + self.design(configs) @ coefs


def candidate_terms(d: int) -> list[tuple[int, ...]]:
    return [(i,) for i in range(d)] + list(combinations(range(d), 2))


def candidate_matrix(configs, terms) -> np.ndarray:
    C = np.asarray(configs, dtype=np.float64)
    return np.column_stack([np.prod(C[:, list(t)], axis=1) for t in terms])


def _p_from_f(delta: float, sse: float, df: int, tss: float) -> float:
    if delta <= _FIT_TOL * tss:
        return 1.0
    if sse <= _FIT_TOL * tss:
        return 0.0
    return t_two_sided_p(math.sqrt(delta / (sse / df)), df)


class _Selector:
    def __init__(self, X: np.ndarray, y: np.ndarray):
        self.X, self.y = X, y
        self.n = y.size
        self.col_norm2 = np.einsum("ij,ij->j", X, X)
        yc = y - y.mean()
        self.tss = float(yc @ yc)
        self.skipped: set[int] = set()

    def _design(self, active: list[int]) -> np.ndarray:
        return np.column_stack([np.ones(self.n), self.X[:, active]])

    def fit(self, active: list[int]):
        A = self._design(active)
        Q, R = np.linalg.qr(A)
        beta = np.linalg.solve(R, Q.T @ self.y)
        resid = self.y - A @ beta
        return Q, R, beta, float(resid @ resid)

    def best_addition(self, active: list[int]) -> tuple[int, float] | None:
        Q, _, _, sse = self.fit(active)
        df = self.n - (len(active) + 2)
        if df <= 0:
            return None
        pool = np.array([j for j in range(self.X.shape[1]) if j not in active], dtype=np.intp)
        if pool.size == 0:
            return None
        C = self.X[:, pool]
        Rc = C - Q @ (Q.T @ C)
        norm2 = np.einsum("ij,ij->j", Rc, Rc)
        resid = self.y - Q @ (Q.T @ self.y)
        best = None
        for k, j in enumerate(pool):
            if norm2[k] <= _RANK_TOL * max(self.col_norm2[j], 1e-300):
                self.skipped.add(int(j))
                continue
            delta = float(resid @ Rc[:, k]) ** 2 / norm2[k]
            p = _p_from_f(delta, max(sse - delta, 0.0), df, self.tss)
            key = (p, -delta, int(j))
            if best is None or key < best[0]:
                best = (key, int(j), p)
        if best is None:
            return None
        return best[1], best[2]

    def worst_term(self, active: list[int]) -> tuple[int, float] | None:
        if not active:
            return None
        _, R, beta, sse = self.fit(active)
        df = self.n - (len(active) + 1)
        if df <= 0:
            return None
        Rinv = np.linalg.solve(R, np.eye(R.shape[0]))
        inv_diag = np.einsum("ij,ij->i", Rinv, Rinv)
        worst = None
        for pos, j in enumerate(active):
            delta = float(beta[pos + 1] ** 2 / inv_diag[pos + 1])
            p = _p_from_f(delta, sse, df, self.tss)
            key = (-p, -j)
            if worst is None or key < worst[0]:
                worst = (key, j, p)
        return worst[1], worst[2]


def stepwise_select(X, y, *, p_enter: float = P_ENTER, p_remove: float = P_REMOVE,
                    max_steps: int | None = None) -> tuple[list[int], int, set[int]]:
    """Return (selected column indices, steps taken, skipped columns)."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    sel = _Selector(X, y)
    active: list[int] = []
    if sel.tss == 0.0:
        return active, 0, set()
    cap = max_steps if max_steps is not None else 2 * X.shape[1]
    steps = 0
    while steps < cap:
        changed = False
        add = sel.best_addition(active)
        if add is not None and add[1] < p_enter:
            active.append(add[0])
            steps += 1
            changed = True
        while steps < cap:
            drop = sel.worst_term(active)
            if drop is None or drop[1] <= p_remove:
                break
            active.remove(drop[0])
            steps += 1
            changed = True
        if not changed:
            break
    return active, steps, sel.skipped


def fit_stepwise_interactions(ds: AggregatedDataset, *, p_enter: float = P_ENTER,
                              p_remove: float = P_REMOVE,
                              adjust: str = "bonferroni") -> InteractionModel:
    """Stepwise linear model with main effects and pairwise interactions.

    ``adjust`` is ``"bonferroni"`` (thresholds divided by the number of
    candidate terms) or ``"none"``.
    """
    if p_remove < p_enter:
        raise UsageError("p_remove must be >= p_enter or selection can cycle")
    ok = ds.valid_only()
    d = ds.space.d
    need = max(10, d + 2)
    if ok.n_configs < need:
        raise DataError(f"stepwise regression needs >= {need} valid configurations, "
                        f"got {ok.n_configs}")
    terms = candidate_terms(d)
    if adjust == "bonferroni":
        enter, remove = p_enter / len(terms), p_remove / len(terms)
    elif adjust == "none":
        enter, remove = p_enter, p_remove
    else:
        raise UsageError(f"unknown p-value adjustment {adjust!r}")
    X = candidate_matrix(ok.configs, terms)
    y = ok.mean_perf
    active, steps, skipped = stepwise_select(X, y, p_enter=enter, p_remove=remove)
    active = sorted(active, key=lambda j: (len(terms[j]), terms[j]))
    A = np.column_stack([np.ones(y.size), X[:, active]])
    beta = np.linalg.lstsq(A, y, rcond=None)[0]
    fitted = tuple(Term(terms[j], float(b)) for j, b in zip(active, beta[1:]))
    params = {"p_enter": p_enter, "p_remove": p_remove, "adjust": adjust}
    return InteractionModel(fitted, float(beta[0]), y.size, len(skipped - set(active)),
                            steps, params)
