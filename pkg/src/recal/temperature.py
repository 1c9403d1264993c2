"""Single-parameter temperature scaling and the group-size shrinkage rule."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import LogitsTable
from .exceptions import ContractError, DomainError
from .metrics import softmax

_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
_LOG_FLOOR = math.log(1e-300)


@dataclass(frozen=True)
class TemperatureFitConfig:
    t_min: float = 0.05
    t_max: float = 20.0
    tolerance: float = 1e-6
    max_evals: int = 200

    def __post_init__(self):
        if not (0 < self.t_min < self.t_max) or not math.isfinite(self.t_max):
            raise ContractError("temperature interval must satisfy 0 < t_min < t_max < inf")
        if not self.tolerance > 0:
            raise ContractError("tolerance must be positive")
        if self.max_evals < 3:
            raise ContractError("max_evals must be >= 3")


def _check_temperature(T) -> float:
    T = float(T)
    if not (math.isfinite(T) and T > 0):
        raise DomainError(f"temperature must be finite and positive, got {T}")
    return T


def apply_temperature(table: LogitsTable, T: float) -> LogitsTable:
    """Divide every logit by ``T``; labels pass through unchanged."""
    T = _check_temperature(T)
    return table.with_logits(table.logits / T)


def golden_section_minimize(f: Callable[[float], float], lo: float, hi: float,
                            tol: float = 1e-6, max_evals: int = 200) -> Tuple[float, float]:
    """Minimise a unimodal scalar function on ``[lo, hi]``.

    Stops when the bracket is narrower than ``tol`` or after ``max_evals``
    evaluations, and returns the better interior probe ``(x, f(x))``.
    """
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    evals = 2
    while b - a > tol and evals < max_evals:
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
        evals += 1
    return (c, fc) if fc <= fd else (d, fd)


def _nll_at(logits: np.ndarray, labels: np.ndarray) -> Callable[[float], float]:
    # shift once so each evaluation is a single exp/sum/log pass
    shifted = logits - logits.max(axis=1, keepdims=True)
    true_shifted = shifted[np.arange(len(labels)), labels]

    def objective(T: float) -> float:
        logp = true_shifted / T - np.log(np.exp(shifted / T).sum(axis=1))
        return float(-np.maximum(logp, _LOG_FLOOR).mean())

    return objective


# relative NLL gain below which a fitted temperature is not preferred to 1
_TIE_RTOL = 1e-12


def fit_temperature(table: LogitsTable, config: TemperatureFitConfig = TemperatureFitConfig()) -> float:
    """Temperature minimising NLL on ``table``, never worse than ``T = 1``.

    Golden-section search over ``[t_min, t_max]``; the result is then
    compared against the identity temperature and the lower-NLL one wins.
    Gains below floating-point resolution count as ties, which go to
    ``T = 1`` so already-calibrated logits are left exactly unchanged.
    """
    labels = table.require_labels()
    objective = _nll_at(table.logits, labels)
    t_star, f_star = golden_section_minimize(
        objective, config.t_min, config.t_max, config.tolerance, config.max_evals)
    f_one = objective(1.0)
    if f_star >= f_one - _TIE_RTOL * max(abs(f_one), 1.0):
        return 1.0
    return float(t_star)


def shrink_temperature(raw: float, group_size: int, validation_size: int) -> float:
    """Blend a group's fitted temperature toward 1 by its share of the data.

    ``(1 - w) * 1 + w * raw`` with ``w = group_size / validation_size``.
    """
    raw = _check_temperature(raw)
    if validation_size < 1:
        raise ContractError("validation_size must be >= 1")
    if not (0 <= group_size <= validation_size):
        raise ContractError(
            f"group_size {group_size} outside [0, validation_size={validation_size}]")
    w = group_size / validation_size
    value = (1.0 - w) * 1.0 + w * raw
    # rounding must not push the blend outside its two endpoints
    return min(max(value, min(1.0, raw)), max(1.0, raw))


class TemperatureScaling(BaseEstimator):
    """Post-hoc temperature scaling of classifier logits.

    Parameters
    ----------
    t_min, t_max : float, default=0.05, 20.0
        Search interval for the temperature.
    tol : float, default=1e-6
        Final bracket width of the golden-section search.
    max_evals : int, default=200
        Evaluation budget of the search.

    Attributes
    ----------
    temperature_ : float
        Fitted temperature.
    n_classes_ : int
        Number of logit columns seen during :meth:`fit`.
    """

    def __init__(self, t_min=0.05, t_max=20.0, tol=1e-6, max_evals=200):
        self.t_min = t_min
        self.t_max = t_max
        self.tol = tol
        self.max_evals = max_evals

    def fit(self, X, y):
        table = LogitsTable(X, y)
        config = TemperatureFitConfig(self.t_min, self.t_max, self.tol, self.max_evals)
        self.temperature_ = fit_temperature(table, config)
        self.n_classes_ = table.n_classes
        return self

    def _validate(self, X) -> LogitsTable:
        check_is_fitted(self, "temperature_")
        table = LogitsTable(X)
        if table.n_classes != self.n_classes_:
            raise ContractError(
                f"X has {table.n_classes} classes, estimator was fitted on {self.n_classes_}")
        return table

    def transform(self, X):
        """Calibrated logits."""
        return apply_temperature(self._validate(X), self.temperature_).logits.copy()

    def fit_transform(self, X, y):
        return self.fit(X, y).transform(X)

    def predict_proba(self, X):
        return softmax(self.transform(X))

    def predict(self, X):
        return np.argmax(self._validate(X).logits, axis=1)
