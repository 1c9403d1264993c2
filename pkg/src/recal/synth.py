"""Synthetic classifier outputs for exercising the pipeline without a network.

``synth_generate`` draws logits whose softmax is (a sharpened version of)
the true class distribution. ``synth_lossy_logits`` mimics running the
same classifier on an information-losing transform of the input: logits
contract toward the uniform vector and pick up Gaussian noise.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional

import numpy as np

from .data import LogitsTable, TransformationKind, TransformationPool
from .exceptions import ContractError
from .recursive import build_pool

_LOG_FLOOR = np.log(1e-12)


def _check_sizes(n: int, k: int) -> None:
    if n < 1 or k < 2:
        raise ContractError(f"need n >= 1 and k >= 2, got n={n}, k={k}")


def _draw(n: int, k: int, alpha: float, rng: np.random.Generator):
    p = rng.dirichlet(np.full(k, alpha), size=n)
    u = rng.random(n)
    labels = np.minimum((np.cumsum(p, axis=1) < u[:, None]).sum(axis=1), k - 1)
    return p, labels


def synth_generate(n: int, k: int, dirichlet_alpha: float = 1.0, sharpen_a: float = 1.0,
                   seed: int = 0) -> LogitsTable:
    """Labeled logits ``sharpen_a * log p`` with labels drawn from ``p``.

    ``p`` is symmetric-Dirichlet; ``sharpen_a = 1`` gives a calibrated
    table and ``sharpen_a > 1`` an overconfident one.
    """
    _check_sizes(n, k)
    if not (dirichlet_alpha > 0 and sharpen_a > 0):
        raise ContractError("dirichlet_alpha and sharpen_a must be positive")
    p, labels = _draw(n, k, dirichlet_alpha, np.random.default_rng(seed))
    return LogitsTable(sharpen_a * np.maximum(np.log(p), _LOG_FLOOR), labels)


def _lossy(logits: np.ndarray, lossiness, noise_sd: float, rng: np.random.Generator) -> np.ndarray:
    lossiness = np.asarray(lossiness, dtype=np.float64)
    if lossiness.ndim == 1:
        lossiness = lossiness[:, None]
    out = (1.0 - lossiness) * logits
    if noise_sd > 0:
        out = out + rng.normal(0.0, noise_sd, size=logits.shape)
    return out


def synth_lossy_logits(z: LogitsTable, lossiness: float, noise_sd: float = 0.0,
                       seed: int = 0) -> LogitsTable:
    """``(1 - lossiness) * z + N(0, noise_sd^2)``, labels carried over."""
    if not (0.0 <= lossiness <= 1.0):
        raise ContractError(f"lossiness must lie in [0, 1], got {lossiness}")
    if not noise_sd >= 0:
        raise ContractError(f"noise_sd must be >= 0, got {noise_sd}")
    rng = np.random.default_rng(seed)
    return z.with_logits(_lossy(z.logits, lossiness, noise_sd, rng))


@dataclass(frozen=True)
class CohortScenario:
    """Aligned validation/test splits with their transformed-logit pools.

    ``val_cohort`` and ``test_cohort`` mark cohort A (``True``) per sample;
    they are ground truth for diagnostics and never read by calibrators.
    """

    pool: TransformationPool
    val: LogitsTable
    val_transformed: List[LogitsTable]
    test: LogitsTable
    test_transformed: List[LogitsTable]
    val_cohort: np.ndarray
    test_cohort: np.ndarray
    descriptor: dict


def synth_cohort_scenario(n: int, k: int, a_sharp: float = 3.0, transform_gap: float = 0.4,
                          seed: int = 0, pool: Optional[TransformationPool] = None,
                          dirichlet_alpha: float = 1.0, base_lossiness: float = 0.1,
                          noise_sd: float = 0.3) -> CohortScenario:
    """Two-cohort data where the cohorts need different temperatures.

    Each split has ``n`` samples; a random half forms cohort A, whose
    logits are sharpened by ``a_sharp`` and which loses
    ``base_lossiness * (1 - q) + transform_gap`` of its logit scale under
    a pool entry with parameter ``q``. Cohort B stays calibrated and only
    loses ``base_lossiness * (1 - q)``. Both receive ``noise_sd`` noise.
    The default pool is ``synthetic_lossy`` on ``[0.5, 0.9]`` with 10
    entries, seeded by ``seed``.
    """
    _check_sizes(n, k)
    if not a_sharp > 0:
        raise ContractError("a_sharp must be positive")
    if not (0.0 <= transform_gap <= 1.0 and 0.0 <= base_lossiness <= 1.0):
        raise ContractError("transform_gap and base_lossiness must lie in [0, 1]")
    if not noise_sd >= 0:
        raise ContractError("noise_sd must be >= 0")
    if pool is None:
        pool = build_pool(TransformationKind.SYNTHETIC_LOSSY, 0.5, 0.9, 10, seed)
    rng = np.random.default_rng([seed, 1])

    def split():
        p, labels = _draw(n, k, dirichlet_alpha, rng)
        cohort = np.zeros(n, dtype=bool)
        cohort[rng.permutation(n)[: n // 2]] = True
        scale = np.where(cohort, a_sharp, 1.0)[:, None]
        logits = scale * np.maximum(np.log(p), _LOG_FLOOR)
        transformed = []
        for q in pool.parameters:
            loss = base_lossiness * (1.0 - q) + np.where(cohort, transform_gap, 0.0)
            transformed.append(LogitsTable(
                _lossy(logits, np.clip(loss, 0.0, 1.0), noise_sd, rng), labels))
        return LogitsTable(logits, labels), transformed, cohort

    val, val_t, val_cohort = split()
    test, test_t, test_cohort = split()
    descriptor = {
        "n": n, "k": k, "a_sharp": a_sharp, "transform_gap": transform_gap, "seed": seed,
        "dirichlet_alpha": dirichlet_alpha, "base_lossiness": base_lossiness,
        "noise_sd": noise_sd, "pool_kind": pool.kind.value,
        "pool_parameters": list(pool.parameters),
    }
    return CohortScenario(pool, val, val_t, test, test_t, val_cohort, test_cohort, descriptor)
