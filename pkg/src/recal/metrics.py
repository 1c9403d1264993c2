"""Calibration and accuracy metrics on logits tables.

Confidence is the maximum softmax probability and the prediction is the
argmax, with ties broken toward the lowest class index everywhere.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Tuple

import numpy as np

from .data import LogitsTable
from .exceptions import ContractError, DomainError

DEFAULT_BINS = 15
_PROB_FLOOR = 1e-300


def softmax(logits) -> np.ndarray:
    """Row-wise softmax with max subtraction; accepts a vector or a matrix."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise DomainError("softmax requires finite inputs")
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def predictions(logits) -> np.ndarray:
    return np.argmax(np.asarray(logits), axis=-1)


def confidences(logits) -> np.ndarray:
    return softmax(logits).max(axis=-1)


@dataclass(frozen=True)
class ReliabilityBins:
    """Per-bin statistics over equal-width confidence bins.

    Bin ``i`` (0-based here) covers ``(i/B, (i+1)/B]``; a confidence of
    exactly 0 lands in the first bin. Empty bins report 0 for both means.
    """

    bin_count: int
    counts: np.ndarray
    mean_confidence: np.ndarray
    mean_accuracy: np.ndarray

    @property
    def edges(self) -> np.ndarray:
        return np.arange(self.bin_count + 1) / self.bin_count

    def ece(self) -> float:
        n = self.counts.sum()
        gaps = np.abs(self.mean_accuracy - self.mean_confidence)
        return float(np.sum(self.counts * gaps) / n)

    def to_csv(self) -> str:
        lines = ["bin,count,mean_confidence,mean_accuracy"]
        for i in range(self.bin_count):
            lines.append(f"{i + 1},{int(self.counts[i])},"
                         f"{float(self.mean_confidence[i])!r},{float(self.mean_accuracy[i])!r}")
        return "\n".join(lines) + "\n"


def bin_indices(conf, bin_count: int) -> np.ndarray:
    """0-based bin of each confidence under the left-open rule."""
    edges = np.arange(bin_count + 1) / bin_count
    idx = np.searchsorted(edges, np.asarray(conf, dtype=np.float64), side="left")
    return np.clip(idx, 1, bin_count) - 1


def reliability_bins(conf, correct, bin_count: int = DEFAULT_BINS) -> ReliabilityBins:
    if bin_count < 1:
        raise ContractError("bin_count must be >= 1")
    conf = np.asarray(conf, dtype=np.float64)
    correct = np.asarray(correct, dtype=np.float64)
    if conf.shape != correct.shape or conf.ndim != 1 or conf.size == 0:
        raise ContractError("confidences and correctness must be equal-length, non-empty vectors")
    idx = bin_indices(conf, bin_count)
    counts = np.bincount(idx, minlength=bin_count)
    conf_sum = np.bincount(idx, weights=conf, minlength=bin_count)
    acc_sum = np.bincount(idx, weights=correct, minlength=bin_count)
    nonzero = np.maximum(counts, 1)
    return ReliabilityBins(bin_count, counts, conf_sum / nonzero, acc_sum / nonzero)


def ece_from_confidences(conf, correct, bin_count: int = DEFAULT_BINS) -> float:
    """ECE from raw confidence and 0/1 correctness vectors."""
    return reliability_bins(conf, correct, bin_count).ece()


def _conf_correct(table: LogitsTable) -> Tuple[np.ndarray, np.ndarray]:
    labels = table.require_labels()
    p = softmax(table.logits)
    return p.max(axis=1), (p.argmax(axis=1) == labels).astype(np.float64)


def ece(table: LogitsTable, bin_count: int = DEFAULT_BINS) -> float:
    """Expected calibration error over ``bin_count`` equal-width bins."""
    conf, correct = _conf_correct(table)
    return ece_from_confidences(conf, correct, bin_count)


def table_reliability(table: LogitsTable, bin_count: int = DEFAULT_BINS) -> ReliabilityBins:
    conf, correct = _conf_correct(table)
    return reliability_bins(conf, correct, bin_count)


def brier_normalized(table: LogitsTable) -> float:
    """Brier score divided by the number of classes."""
    labels = table.require_labels()
    p = softmax(table.logits)
    onehot = np.zeros_like(p)
    onehot[np.arange(len(labels)), labels] = 1.0
    return float(np.mean((p - onehot) ** 2))


def nll(table: LogitsTable) -> float:
    labels = table.require_labels()
    logp = log_softmax(table.logits)[np.arange(len(labels)), labels]
    return float(-np.mean(np.maximum(logp, np.log(_PROB_FLOOR))))


def error_rate(table: LogitsTable) -> float:
    labels = table.require_labels()
    return float(np.mean(predictions(table.logits) != labels))


@dataclass(frozen=True)
class MetricsReport:
    ece: float
    brier_normalized: float
    nll: float
    error_rate: float
    bins: ReliabilityBins

    def to_text(self) -> str:
        return (f"ece={self.ece!r}\nbrier_normalized={self.brier_normalized!r}\n"
                f"nll={self.nll!r}\nerror_rate={self.error_rate!r}\n"
                f"bins={self.bins.bin_count}\n")


def evaluate(table: LogitsTable, bin_count: int = DEFAULT_BINS) -> MetricsReport:
    bins = table_reliability(table, bin_count)
    return MetricsReport(
        ece=bins.ece(),
        brier_normalized=brier_normalized(table),
        nll=nll(table),
        error_rate=error_rate(table),
        bins=bins,
    )


@dataclass(frozen=True)
class RankDistribution:
    """Ranks of the four groups per parameter and their histogram.

    ``ranks[p, g]`` is the rank (1 = lowest ECE) of group ``g + 1`` for
    parameter ``p``; ``fractions[g, r - 1]`` is the share of parameters
    at which group ``g + 1`` holds rank ``r``.
    """

    ranks: np.ndarray
    fractions: np.ndarray


def rank_groups(eces: Sequence[float]) -> np.ndarray:
    """Competition ranks of four ECEs; ties share the lower rank, NaN ranks last."""
    values = np.asarray(eces, dtype=np.float64)
    if values.shape != (4,):
        raise ContractError("each entry must hold exactly four ECE values")
    keyed = np.where(np.isnan(values), np.inf, values)
    return 1 + (keyed[None, :] < keyed[:, None]).sum(axis=1)


def group_rank_analysis(group_eces) -> RankDistribution:
    rows = list(group_eces)
    if not rows:
        raise ContractError("rank analysis needs at least one parameter")
    ranks = np.stack([rank_groups(r) for r in rows])
    fractions = np.stack([
        np.bincount(ranks[:, g] - 1, minlength=4) / len(rows) for g in range(4)
    ])
    return RankDistribution(ranks=ranks, fractions=fractions)
