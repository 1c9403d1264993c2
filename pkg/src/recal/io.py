"""Readers and writers for logits CSVs, calibration maps and image tensors.

Floats are always written with :func:`repr`, the shortest decimal string
that parses back to the same double.
"""
from __future__ import annotations

import json
import math
import struct
from pathlib import Path

import numpy as np

from .data import (
    CalibrationIteration,
    CalibrationMap,
    ComparisonMode,
    FitConfig,
    ImageTensorSet,
    LogitsTable,
    TransformationKind,
    TransformationPool,
    TransformationSpec,
)
from .exceptions import FormatError, ParseError, ReCalError

MAP_FORMAT_VERSION = 1
TENSOR_MAGIC = b"RCT1"


def _fmt(x) -> str:
    return repr(float(x))


# ---------------------------------------------------------------------------
# logits CSV


def format_logits_csv(table: LogitsTable) -> str:
    k = table.n_classes
    lines = ["label," + ",".join(f"z{j}" for j in range(k))]
    labels = table.labels
    for i, row in enumerate(table.logits.tolist()):
        label = "" if labels is None else str(int(labels[i]))
        lines.append(label + "," + ",".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def write_logits_csv(table: LogitsTable, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(format_logits_csv(table))


def _parse_float(text: str, lineno: int) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"not a number: {text!r}", lineno) from None
    if not math.isfinite(value):
        raise ParseError(f"non-finite value {text!r}", lineno)
    return value


def parse_logits_csv(text: str) -> LogitsTable:
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty file", 1)
    header = [h.strip() for h in lines[0].rstrip("\r").split(",")]
    k = len(header) - 1
    if header[0] != "label" or k < 2 or header[1:] != [f"z{j}" for j in range(k)]:
        raise ParseError("header must be 'label,z0,z1,...' with at least two logit columns", 1)
    if len(lines) < 2:
        raise ParseError("no data rows", 2)

    logits = np.empty((len(lines) - 1, k), dtype=np.float64)
    raw_labels = []
    for i, line in enumerate(lines[1:]):
        lineno = i + 2
        cells = line.rstrip("\r").split(",")
        if len(cells) != k + 1:
            raise ParseError(f"expected {k + 1} columns, got {len(cells)}", lineno)
        logits[i] = [_parse_float(c, lineno) for c in cells[1:]]
        raw_labels.append((cells[0].strip(), lineno))

    present = [bool(lbl) for lbl, _ in raw_labels]
    if any(present) and not all(present):
        first_bad = raw_labels[present.index(not present[0])][1]
        raise ParseError("label column mixes empty and non-empty values", first_bad)
    labels = None
    if present[0]:
        labels = []
        for lbl, lineno in raw_labels:
            if not lbl.isdigit():
                raise ParseError(f"label must be a non-negative integer, got {lbl!r}", lineno)
            value = int(lbl)
            if value >= k:
                raise ParseError(f"label {value} out of range for {k} classes", lineno)
            labels.append(value)
    try:
        return LogitsTable(logits, labels)
    except ReCalError as exc:
        raise ParseError(str(exc)) from exc


def read_logits_csv(path) -> LogitsTable:
    return parse_logits_csv(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# calibration map


def map_to_dict(cmap: CalibrationMap) -> dict:
    pool = None
    if cmap.pool is not None:
        pool = {
            "seed": cmap.pool.seed,
            "kind": cmap.pool.kind.value,
            "range": [float(cmap.pool.range_low), float(cmap.pool.range_high)],
            "parameters": [float(p) for p in cmap.pool.parameters],
        }
    cfg = cmap.config
    return {
        "format_version": MAP_FORMAT_VERSION,
        "pool": pool,
        "config": {
            "method": cfg.method,
            "max_iterations": cfg.max_iterations,
            "stopping_delta": cfg.stopping_delta,
            "ece_bins": cfg.ece_bins,
            "confidence_comparison_mode": cfg.confidence_comparison_mode.value,
        },
        "validation_size": cmap.validation_size,
        "initial_validation_ece": cmap.initial_validation_ece,
        "iterations": [
            {
                "transform_index": it.transform_index,
                "raw_temperatures": list(it.raw_temperatures),
                "temperatures": list(it.temperatures),
                "group_sizes": list(it.group_sizes),
                "validation_ece_after": it.validation_ece_after,
            }
            for it in cmap.iterations
        ],
        "fingerprint": cmap.fingerprint,
    }


def map_from_dict(doc: dict) -> CalibrationMap:
    if not isinstance(doc, dict):
        raise FormatError("calibration map must be a JSON object")
    version = doc.get("format_version")
    if version != MAP_FORMAT_VERSION:
        raise FormatError(
            f"unsupported format_version {version!r} (expected {MAP_FORMAT_VERSION})")
    try:
        pool_doc = doc["pool"]
        pool = None
        if pool_doc is not None:
            kind = TransformationKind.parse(pool_doc["kind"])
            low, high = pool_doc["range"]
            pool = TransformationPool(
                entries=tuple(TransformationSpec(kind, p) for p in pool_doc["parameters"]),
                seed=pool_doc["seed"], range_low=low, range_high=high)
        cfg = doc["config"]
        config = FitConfig(
            max_iterations=cfg["max_iterations"],
            stopping_delta=cfg["stopping_delta"],
            ece_bins=cfg["ece_bins"],
            confidence_comparison_mode=ComparisonMode.parse(cfg["confidence_comparison_mode"]),
            method=cfg["method"],
        )
        iterations = tuple(
            CalibrationIteration(
                transform_index=it["transform_index"],
                temperatures=tuple(it["temperatures"]),
                raw_temperatures=tuple(it["raw_temperatures"]),
                group_sizes=tuple(it["group_sizes"]),
                validation_ece_after=it["validation_ece_after"],
            )
            for it in doc["iterations"]
        )
        return CalibrationMap(
            pool=pool,
            iterations=iterations,
            config=config,
            fingerprint=str(doc["fingerprint"]),
            initial_validation_ece=doc["initial_validation_ece"],
            validation_size=doc["validation_size"],
        )
    except KeyError as exc:
        raise FormatError(f"missing field {exc.args[0]!r}") from None
    except (TypeError, ValueError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"invalid calibration map: {exc}") from exc


def dumps_map(cmap: CalibrationMap) -> str:
    return json.dumps(map_to_dict(cmap), indent=2) + "\n"


def loads_map(text: str) -> CalibrationMap:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"calibration map is not valid JSON: {exc}") from None
    return map_from_dict(doc)


def save_map(cmap: CalibrationMap, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dumps_map(cmap))


def load_map(path) -> CalibrationMap:
    return loads_map(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# image tensors


def write_tensor(images: ImageTensorSet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<4I", *images.dims))
        fh.write(np.ascontiguousarray(images.values, dtype="<f4").tobytes())


def read_tensor(path) -> ImageTensorSet:
    blob = Path(path).read_bytes()
    if blob[:4] != TENSOR_MAGIC:
        raise FormatError("not an image tensor file (bad magic bytes)")
    if len(blob) < 20:
        raise FormatError("truncated tensor header")
    dims = struct.unpack("<4I", blob[4:20])
    count = int(np.prod(dims, dtype=np.int64))
    if len(blob) - 20 != 4 * count:
        raise FormatError(
            f"payload holds {(len(blob) - 20) // 4} floats, header promises {count}")
    values = np.frombuffer(blob, dtype="<f4", offset=20).reshape(dims)
    return ImageTensorSet(values)
