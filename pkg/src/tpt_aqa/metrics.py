"""Spearman rank correlation and relative-L2 distance."""

import csv
import json
import os
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import ConfigError, ContractError


def spearman(pred, truth):
    """Pearson correlation of average ranks."""
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.ndim != 1 or len(pred) < 2:
        raise ContractError("spearman needs two equal-length 1-D sequences of length >= 2")
    p = rankdata(pred) - (len(pred) + 1) / 2.0
    q = rankdata(truth) - (len(truth) + 1) / 2.0
    denom = np.sqrt(np.sum(p * p) * np.sum(q * q))
    if denom == 0:
        raise ContractError("correlation undefined for a constant input")
    return float(np.clip(np.sum(p * q) / denom, -1.0, 1.0))


def relative_l2(pred, truth, s_min, s_max):
    """Mean squared error normalised by the declared score range."""
    if not s_max > s_min:
        raise ConfigError(f"s_max ({s_max}) must exceed s_min ({s_min})")
    pred = np.asarray(pred, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if pred.shape != truth.shape or pred.size < 1:
        raise ContractError("relative_l2 needs equal-length non-empty sequences")
    return float(np.mean((np.abs(truth - pred) / (s_max - s_min)) ** 2))


@dataclass
class EvalReport:
    spearman: float
    relative_l2: float
    N: int
    s_min: float
    s_max: float
    split: str = "test"
    epoch: int = -1
    config_hash: str = ""

    @property
    def relative_l2_x100(self):
        return 100.0 * self.relative_l2

    def to_json(self):
        d = asdict(self)
        d["relative_l2_x100"] = self.relative_l2_x100
        return json.dumps(d, sort_keys=True)

    def append_csv(self, path):
        d = asdict(self)
        new = not os.path.exists(path) or os.path.getsize(path) == 0
        with open(path, "a", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(d))
            if new:
                writer.writeheader()
            writer.writerow(d)


def evaluate_predictions(pred, truth, s_min, s_max, **kw):
    return EvalReport(
        spearman=spearman(pred, truth),
        relative_l2=relative_l2(pred, truth, s_min, s_max),
        N=len(pred),
        s_min=float(s_min),
        s_max=float(s_max),
        **kw,
    )
