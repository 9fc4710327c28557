"""Scoring segmentations against ground truth."""

from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ConfigurationError


def _pair(predicted, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predicted, dtype=np.int64)
    t = np.asarray(truth, dtype=np.int64)
    if p.shape != t.shape or p.ndim != 1:
        raise ConfigurationError(f"label vectors differ in shape: {p.shape} vs {t.shape}")
    return p, t


def error_rate(predicted, truth, exclude=None) -> float:
    """Fraction of points whose labels disagree, skipping indices in ``exclude``."""
    p, t = _pair(predicted, truth)
    keep = np.ones(p.size, dtype=bool)
    if exclude is not None:
        keep[np.asarray(exclude, dtype=np.int64)] = False
    if not keep.any():
        raise ConfigurationError("no points left after exclusion")
    return float(np.count_nonzero(p[keep] != t[keep]) / np.count_nonzero(keep))


def confusion(predicted, truth, n_classes: int) -> np.ndarray:
    """``K x K`` counts with rows = obtained label and columns = true label."""
    p, t = _pair(predicted, truth)
    for name, v in (("predicted", p), ("truth", t)):
        if v.size and (v.min() < 0 or v.max() >= n_classes):
            raise ConfigurationError(f"{name} label outside [0, {n_classes - 1}]")
    m = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(m, (p, t), 1)
    return m


def format_confusion(matrix: np.ndarray) -> str:
    K = matrix.shape[0]
    width = max(6, len(str(matrix.max())) + 1)
    lines = ["obt/true" + "".join(f"{k:>{width}}" for k in range(K))]
    for k in range(K):
        lines.append(f"{k:>8}" + "".join(f"{v:>{width}}" for v in matrix[k]))
    return "\n".join(lines)


@dataclass(frozen=True)
class RunStatistics:
    errors: tuple[float, ...]
    mean: float
    std: float
    best: float
    count: int
    # a single run has no spread; std is then reported as 0
    std_defined: bool

    def to_dict(self) -> dict:
        d = asdict(self)
        d["errors"] = list(self.errors)
        return d


def aggregate(errors) -> RunStatistics:
    """Mean, sample standard deviation (n-1), minimum and count of per-run errors."""
    e = [float(x) for x in errors]
    if not e:
        raise ConfigurationError("cannot aggregate an empty error sequence")
    # statistics sums exactly, so a constant sequence has stddev exactly 0
    std = statistics.stdev(e) if len(e) > 1 else 0.0
    return RunStatistics(tuple(e), statistics.mean(e), std, min(e), len(e), len(e) > 1)
