"""Lossy label-invariant grouping.

Samples are split by whether a transformation changed the prediction and
whether it raised the confidence:

=========================  =================  =====================
                           confidence rose    confidence did not rise
=========================  =================  =====================
prediction changed         group 1            group 2
prediction unchanged       group 3            group 4
=========================  =================  =====================

Equal confidences count as "did not rise".
"""
from __future__ import annotations

from typing import List, Sequence, Tuple

import numpy as np

from .data import ComparisonMode, GroupPartition, LogitsTable
from .exceptions import ContractError
from .metrics import DEFAULT_BINS, ece, softmax


def group_number(y_hat: int, y_hat_t: int, p_hat: float, p_hat_t: float) -> int:
    """Group (1..4) of one sample from its original and transformed prediction."""
    return 2 * int(y_hat == y_hat_t) + int(p_hat >= p_hat_t) + 1


def _as_array(z) -> np.ndarray:
    return z.logits if isinstance(z, LogitsTable) else np.asarray(z, dtype=np.float64)


def prediction_changes(z, z_t, mode=ComparisonMode.TRANSFORMED_MAX):
    """Per-sample ``(y_hat, y_hat_t, p_hat, p_hat_t)`` arrays."""
    mode = ComparisonMode.parse(mode)
    a, b = _as_array(z), _as_array(z_t)
    if a.shape != b.shape:
        raise ContractError(f"original {a.shape} and transformed {b.shape} logits differ in shape")
    p, p_t = softmax(a), softmax(b)
    y_hat, y_hat_t = p.argmax(axis=1), p_t.argmax(axis=1)
    rows = np.arange(len(y_hat))
    p_hat = p[rows, y_hat]
    if mode is ComparisonMode.TRANSFORMED_MAX:
        p_hat_t = p_t[rows, y_hat_t]
    else:
        p_hat_t = p_t[rows, y_hat]
    return y_hat, y_hat_t, p_hat, p_hat_t


def group_numbers(z, z_t, mode=ComparisonMode.TRANSFORMED_MAX) -> np.ndarray:
    y_hat, y_hat_t, p_hat, p_hat_t = prediction_changes(z, z_t, mode)
    return 2 * (y_hat == y_hat_t) + (p_hat >= p_hat_t) + 1


def group_inputs(z, z_t, mode=ComparisonMode.TRANSFORMED_MAX) -> GroupPartition:
    """Partition samples by their response to one transformation.

    ``z`` and ``z_t`` are aligned logits (tables or arrays) for the original
    and transformed inputs.
    """
    y_hat, y_hat_t, p_hat, p_hat_t = prediction_changes(z, z_t, mode)
    changed = y_hat != y_hat_t
    increased = p_hat_t > p_hat
    masks = (changed & increased, changed & ~increased,
             ~changed & increased, ~changed & ~increased)
    return GroupPartition([np.flatnonzero(m) for m in masks], len(y_hat))


def group_ece_table(z: LogitsTable, z_t_list: Sequence[LogitsTable],
                    bin_count: int = DEFAULT_BINS,
                    mode=ComparisonMode.TRANSFORMED_MAX) -> List[Tuple[Tuple[float, int], ...]]:
    """ECE and size of each group, one row per transformed table.

    ECE is measured on the original logits restricted to the group; an
    empty group reports ``(nan, 0)``.
    """
    z.require_labels()
    rows = []
    for z_t in z_t_list:
        part = group_inputs(z, z_t, mode)
        cells = []
        for idx in part.groups:
            if idx.size == 0:
                cells.append((float("nan"), 0))
            else:
                cells.append((ece(z.take(idx), bin_count), int(idx.size)))
        rows.append(tuple(cells))
    return rows
