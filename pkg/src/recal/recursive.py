"""Recursive group-wise temperature calibration.

Fitting repeatedly samples one transformation from a pool, groups the
validation samples by how their prediction and confidence responded to
it, fits a temperature per group, shrinks each toward 1 by the group's
share of the data, and divides the group's rows of both the original and
the sampled transformed logits by it. Only the sampled transformation's
logits are updated in an iteration; the others keep their last state.

Runtime application replays the stored temperatures in the same order on
new logits; nothing is refitted.

Randomness: one ``numpy.random.default_rng(pool.seed)`` stream first
yields the pool's ``len(pool)`` uniform parameters, then one
``integers(len(pool))`` draw per fit iteration.
"""
from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from typing import List, Mapping, Optional, Sequence, Union

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .data import (
    GLOBAL_TRANSFORM_INDEX,
    CalibrationIteration,
    CalibrationMap,
    ComparisonMode,
    FitConfig,
    LogitsTable,
    TransformationKind,
    TransformationPool,
    TransformationSpec,
)
from .exceptions import ContractError
from .grouping import group_inputs
from .metrics import DEFAULT_BINS, ece_from_confidences, softmax
from .temperature import TemperatureFitConfig, fit_temperature, shrink_temperature

TransformedInput = Union[Sequence, Mapping[int, object], None]


def build_pool(kind, range_low: float, range_high: float, count: int, seed: int) -> TransformationPool:
    """Draw ``count`` parameters i.i.d. uniform on ``[range_low, range_high]``."""
    kind = TransformationKind.parse(kind)
    if not (0.0 < range_low <= range_high <= 1.0):
        raise ContractError(
            f"pool range must satisfy 0 < low <= high <= 1, got ({range_low}, {range_high})")
    if count < 1:
        raise ContractError("pool count must be >= 1")
    rng = np.random.default_rng(seed)
    params = rng.uniform(range_low, range_high, size=count)
    # uniform() is half-open; keep the draw inside the closed interval anyway
    params = np.clip(params, range_low, range_high)
    return TransformationPool(
        entries=tuple(TransformationSpec(kind, float(p)) for p in params),
        seed=seed, range_low=range_low, range_high=range_high)


def parse_pool_spec(text: str, seed: int) -> TransformationPool:
    """Build a pool from compact notation ``kind:low:high:count`` (e.g. ``z:0.1:0.9:20``)."""
    parts = text.split(":")
    if len(parts) != 4:
        raise ContractError(f"pool spec must be kind:low:high:count, got {text!r}")
    kind, low, high, count = parts
    try:
        return build_pool(kind, float(low), float(high), int(count), seed)
    except ValueError as exc:
        if isinstance(exc, ContractError):
            raise
        raise ContractError(f"bad pool spec {text!r}: {exc}") from None


def _sampling_rng(pool: TransformationPool) -> np.random.Generator:
    rng = np.random.default_rng(pool.seed)
    rng.uniform(size=len(pool))  # the draws consumed by build_pool
    return rng


@dataclass
class FitState:
    """Working logits of a fit after its last completed iteration."""

    logits: np.ndarray
    transformed: List[np.ndarray]
    labels: np.ndarray
    ece_trace: List[float] = field(default_factory=list)
    rng: Optional[np.random.Generator] = None


def _logits_of(obj) -> np.ndarray:
    if isinstance(obj, LogitsTable):
        return obj.logits
    return LogitsTable(obj).logits


def _check_aligned(z: LogitsTable, transformed: Sequence) -> List[np.ndarray]:
    arrays = []
    for i, t in enumerate(transformed):
        arr = _logits_of(t)
        if arr.shape != z.logits.shape:
            raise ContractError(
                f"transformed table {i} has shape {arr.shape}, expected {z.logits.shape}")
        if (isinstance(t, LogitsTable) and t.is_labeled and z.is_labeled
                and not np.array_equal(t.labels, z.labels)):
            raise ContractError(f"transformed table {i} carries different labels")
        arrays.append(arr.copy())
    return arrays


def _ece_of(logits: np.ndarray, labels: np.ndarray, bins: int) -> float:
    p = softmax(logits)
    return ece_from_confidences(p.max(axis=1), (p.argmax(axis=1) == labels), bins)


def fingerprint(z: LogitsTable, pool: Optional[TransformationPool], config: FitConfig) -> str:
    """SHA-256 over validation logits, labels, pool and config."""
    h = hashlib.sha256()
    h.update(np.asarray(z.logits.shape, dtype="<i8").tobytes())
    h.update(np.ascontiguousarray(z.logits, dtype="<f8").tobytes())
    if z.labels is not None:
        h.update(np.ascontiguousarray(z.labels, dtype="<i8").tobytes())
    meta = {
        "pool": None if pool is None else [pool.kind.value, pool.seed, pool.range_low,
                                           pool.range_high, list(pool.parameters)],
        "config": [config.method, config.max_iterations, repr(config.stopping_delta),
                   config.ece_bins, config.confidence_comparison_mode.value],
    }
    h.update(json.dumps(meta, sort_keys=True).encode("utf-8"))
    return h.hexdigest()


def fit(z: LogitsTable, z_transformed: Sequence, pool: TransformationPool,
        max_iterations: int = 100, delta: float = 1e-4, ece_bins: int = DEFAULT_BINS,
        mode=ComparisonMode.TRANSFORMED_MAX,
        temperature_config: TemperatureFitConfig = TemperatureFitConfig(),
        return_state: bool = False):
    """Learn a calibration map on labeled validation logits.

    Parameters
    ----------
    z : LogitsTable
        Labeled logits of the original validation inputs.
    z_transformed : sequence of LogitsTable or arrays
        One aligned table per pool entry, in pool order.
    pool : TransformationPool
    max_iterations : int
        Upper bound on iterations.
    delta : float
        Stop once consecutive validation ECEs differ by less than this.
        The first comparison is against the uncalibrated ECE.
    ece_bins : int
    mode : ComparisonMode
    temperature_config : TemperatureFitConfig
        Search settings of the per-group temperature fits.
    return_state : bool
        Also return the final :class:`FitState`.

    Returns
    -------
    CalibrationMap, or ``(CalibrationMap, FitState)`` with ``return_state``.
    """
    labels = z.require_labels()
    config = FitConfig(max_iterations=max_iterations, stopping_delta=delta,
                       ece_bins=ece_bins, confidence_comparison_mode=mode, method="recal")
    if len(z_transformed) != len(pool):
        raise ContractError(
            f"got {len(z_transformed)} transformed tables for a pool of {len(pool)}")
    n = z.n_samples
    state = FitState(logits=z.logits.copy(), transformed=_check_aligned(z, z_transformed),
                     labels=labels, rng=_sampling_rng(pool))
    state.ece_trace.append(_ece_of(state.logits, labels, ece_bins))

    iterations = []
    for _ in range(config.max_iterations):
        j = int(state.rng.integers(len(pool)))
        current_t = state.transformed[j]
        part = group_inputs(state.logits, current_t, config.confidence_comparison_mode)
        raws, temps = [], []
        for idx in part.groups:
            raw = 1.0
            if idx.size:
                raw = fit_temperature(LogitsTable(state.logits[idx], labels[idx]),
                                      temperature_config)
            sigma = shrink_temperature(raw, int(idx.size), n)
            state.logits[idx] /= sigma
            current_t[idx] /= sigma
            raws.append(raw)
            temps.append(sigma)
        score = _ece_of(state.logits, labels, ece_bins)
        state.ece_trace.append(score)
        iterations.append(CalibrationIteration(
            transform_index=j, temperatures=tuple(temps), raw_temperatures=tuple(raws),
            group_sizes=part.sizes, validation_ece_after=score))
        if abs(state.ece_trace[-1] - state.ece_trace[-2]) < config.stopping_delta:
            break

    cmap = CalibrationMap(pool=pool, iterations=tuple(iterations), config=config,
                          fingerprint=fingerprint(z, pool, config),
                          initial_validation_ece=state.ece_trace[0], validation_size=n)
    return (cmap, state) if return_state else cmap


def fit_global_temperature(z: LogitsTable, ece_bins: int = DEFAULT_BINS,
                           temperature_config: TemperatureFitConfig = TemperatureFitConfig()
                           ) -> CalibrationMap:
    """Plain temperature scaling packaged as a one-iteration map.

    The single iteration uses :data:`GLOBAL_TRANSFORM_INDEX` and stores the
    fitted temperature in all four slots; every sample is counted in group 4.
    """
    labels = z.require_labels()
    T = fit_temperature(z, temperature_config)
    config = FitConfig(max_iterations=1, stopping_delta=0.0, ece_bins=ece_bins, method="ts")
    after = _ece_of(z.logits / T, labels, ece_bins)
    it = CalibrationIteration(
        transform_index=GLOBAL_TRANSFORM_INDEX, temperatures=(T,) * 4,
        raw_temperatures=(T,) * 4, group_sizes=(0, 0, 0, z.n_samples),
        validation_ece_after=after)
    return CalibrationMap(pool=None, iterations=(it,), config=config,
                          fingerprint=fingerprint(z, None, config),
                          initial_validation_ece=_ece_of(z.logits, labels, ece_bins),
                          validation_size=z.n_samples)


def _runtime_tables(z_test: LogitsTable, transformed: TransformedInput,
                    cmap: CalibrationMap) -> Mapping[int, np.ndarray]:
    needed = cmap.referenced_transforms()
    if not needed:
        return {}
    if transformed is None:
        raise ContractError("this map needs transformed logits at runtime")
    if isinstance(transformed, Mapping):
        missing = [j for j in needed if j not in transformed]
        if missing:
            raise ContractError(f"missing transformed tables for pool indices {missing}")
        source = {j: transformed[j] for j in needed}
    else:
        if len(transformed) != len(cmap.pool):
            raise ContractError(
                f"got {len(transformed)} transformed tables for a pool of {len(cmap.pool)}")
        source = {j: transformed[j] for j in needed}
    out = {}
    for j, t in source.items():
        arr = _logits_of(t)
        if arr.shape != z_test.logits.shape:
            raise ContractError(
                f"transformed table {j} has shape {arr.shape}, expected {z_test.logits.shape}")
        out[j] = arr.copy()
    return out


def apply(z_test: LogitsTable, z_test_transformed: TransformedInput, cmap: CalibrationMap,
          expected_fingerprint: Optional[str] = None) -> LogitsTable:
    """Replay a fitted map on new logits.

    ``z_test_transformed`` is either one table per pool entry (pool order)
    or a mapping from pool index to table covering every index the map
    references. Tables may be omitted entirely for maps that reference
    none. A differing ``expected_fingerprint`` only warns.
    """
    if expected_fingerprint is not None and expected_fingerprint != cmap.fingerprint:
        warnings.warn(
            f"calibration map fingerprint {cmap.fingerprint[:12]}... does not match "
            f"expected {expected_fingerprint[:12]}...", stacklevel=2)
    tables = _runtime_tables(z_test, z_test_transformed, cmap)
    z = z_test.logits.copy()
    mode = cmap.config.confidence_comparison_mode
    for it in cmap.iterations:
        if it.transform_index == GLOBAL_TRANSFORM_INDEX:
            z /= it.temperatures[3]
            continue
        z_t = tables[it.transform_index]
        part = group_inputs(z, z_t, mode)
        for idx, sigma in zip(part.groups, it.temperatures):
            z[idx] /= sigma
            z_t[idx] /= sigma
    return z_test.with_logits(z)


def ece_trace(obj) -> List[float]:
    """Validation ECE before calibration and after each iteration."""
    if isinstance(obj, FitState):
        return list(obj.ece_trace)
    if isinstance(obj, CalibrationMap):
        return [obj.initial_validation_ece] + [it.validation_ece_after for it in obj.iterations]
    raise TypeError(f"expected FitState or CalibrationMap, got {type(obj).__name__}")


class ReCal(BaseEstimator):
    """Recursive lossy label-invariant calibration as an estimator.

    ``fit`` and ``transform`` take the original logits ``X`` plus
    ``X_transformed``: one aligned logits array per pool entry, obtained
    by running the same model on transformed copies of the inputs.

    Parameters
    ----------
    pool : TransformationPool, optional
        Pool the transformed logits were produced with. When omitted, an
        anonymous pool sized to ``X_transformed`` is used and
        ``random_state`` seeds the transformation sampling.
    max_iter : int, default=100
    delta : float, default=1e-4
        ECE-change threshold of the stopping rule.
    n_bins : int, default=15
        ECE bins used by the stopping rule.
    comparison_mode : {"transformed_max", "original_index"}
    t_min, t_max, tol : float
        Per-group temperature search settings.
    random_state : int, default=0

    Attributes
    ----------
    calibration_map_ : CalibrationMap
    n_iter_ : int
    temperatures_ : ndarray of shape (n_iter_, 4)
    raw_temperatures_ : ndarray of shape (n_iter_, 4)
    transform_indices_ : ndarray of shape (n_iter_,)
    ece_trace_ : list of float
    """

    def __init__(self, pool=None, max_iter=100, delta=1e-4, n_bins=DEFAULT_BINS,
                 comparison_mode="transformed_max", t_min=0.05, t_max=20.0, tol=1e-6,
                 random_state=0):
        self.pool = pool
        self.max_iter = max_iter
        self.delta = delta
        self.n_bins = n_bins
        self.comparison_mode = comparison_mode
        self.t_min = t_min
        self.t_max = t_max
        self.tol = tol
        self.random_state = random_state

    def _resolve_pool(self, n_transforms: int) -> TransformationPool:
        if self.pool is not None:
            return self.pool
        seed = 0 if self.random_state is None else int(self.random_state)
        entries = (TransformationSpec(TransformationKind.SYNTHETIC_LOSSY, 1.0),) * n_transforms
        return TransformationPool(entries=entries, seed=seed, range_low=1.0, range_high=1.0)

    def fit(self, X, y, X_transformed):
        table = LogitsTable(X, y)
        if len(X_transformed) == 0:
            raise ContractError("X_transformed must hold at least one table")
        pool = self._resolve_pool(len(X_transformed))
        tcfg = TemperatureFitConfig(self.t_min, self.t_max, self.tol)
        cmap, state = fit(table, X_transformed, pool, max_iterations=self.max_iter,
                          delta=self.delta, ece_bins=self.n_bins,
                          mode=self.comparison_mode, temperature_config=tcfg,
                          return_state=True)
        self.calibration_map_ = cmap
        self.n_iter_ = cmap.n_iterations
        self.temperatures_ = np.array([it.temperatures for it in cmap.iterations]).reshape(-1, 4)
        self.raw_temperatures_ = np.array(
            [it.raw_temperatures for it in cmap.iterations]).reshape(-1, 4)
        self.transform_indices_ = np.array([it.transform_index for it in cmap.iterations],
                                           dtype=np.int64)
        self.ece_trace_ = ece_trace(state)
        self.n_classes_ = table.n_classes
        return self

    def transform(self, X, X_transformed=None):
        """Calibrated logits of ``X``."""
        check_is_fitted(self, "calibration_map_")
        table = LogitsTable(X)
        if table.n_classes != self.n_classes_:
            raise ContractError(
                f"X has {table.n_classes} classes, estimator was fitted on {self.n_classes_}")
        return apply(table, X_transformed, self.calibration_map_).logits.copy()

    def fit_transform(self, X, y, X_transformed):
        return self.fit(X, y, X_transformed).transform(X, X_transformed)

    def predict_proba(self, X, X_transformed=None):
        return softmax(self.transform(X, X_transformed))

    def predict(self, X):
        # calibration divides whole rows by positive scalars, so argmax is unchanged
        check_is_fitted(self, "calibration_map_")
        return np.argmax(LogitsTable(X).logits, axis=1)
