"""Linear transfer function between source and target performance."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from ..data import EnvPair
from ..errors import DataError, DegenerateError


@dataclass(frozen=True)
class TransferModel:
    """target = alpha * source + beta, fitted by least squares."""

    alpha: float
    beta: float
    residual_sd: float
    n_fit: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, raw: dict) -> TransferModel:
        try:
            model = cls(float(raw["alpha"]), float(raw["beta"]),
                        float(raw["residual_sd"]), int(raw["n_fit"]))
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"malformed transfer model: {exc}") from None
        if not (math.isfinite(model.alpha) and math.isfinite(model.beta)):
            raise DataError("transfer model coefficients must be finite")
        return model

    @classmethod
    def from_json(cls, text: str) -> TransferModel:
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise DataError(f"transfer model is not valid JSON: {exc}") from None


def fit_linear(x, y) -> TransferModel:
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    n = x.size
    if n < 2:
        raise DataError(f"transfer fit needs >= 2 common valid configurations, got {n}")
    if np.all(x == x[0]):
        raise DegenerateError("degenerate source: constant performance, slope not identifiable")
    dx = x - x.mean()
    alpha = float(dx @ (y - y.mean())) / float(dx @ dx)
    beta = float(y.mean() - alpha * x.mean())
    resid = y - (alpha * x + beta)
    sse = float(resid @ resid)
    residual_sd = math.sqrt(sse / (n - 2)) if n > 2 else 0.0
    return TransferModel(alpha, beta, residual_sd, n)


def fit_linear_transfer(pair: EnvPair) -> TransferModel:
    """Regress target on source means over configurations valid on both sides."""
    s_idx, t_idx = pair.common_valid()
    return fit_linear(pair.source.mean_perf[s_idx], pair.target.mean_perf[t_idx])


def predict_transfer(model: TransferModel, y_src) -> np.ndarray:
    return model.alpha * np.asarray(y_src, dtype=np.float64) + model.beta
