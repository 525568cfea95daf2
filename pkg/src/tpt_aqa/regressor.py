"""Part-aware contrastive regression with group-aware (interval) targets."""

import csv
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError
from .nn import MLP, Module

FUSION_MODES = ("part-wise", "part-enhanced-holistic")
PROB_CLAMP = 1e-7


@dataclass
class GroupIntervals:
    """B contiguous intervals; interval n is ``[edges[n], edges[n + 1])``."""

    edges: np.ndarray
    counts: np.ndarray

    @property
    def B(self):
        return len(self.edges) - 1

    @property
    def left(self):
        return self.edges[:-1]

    @property
    def right(self):
        return self.edges[1:]

    def index(self, delta):
        """Interval index of each delta; out-of-range values go to the end intervals."""
        idx = np.searchsorted(self.edges[1:-1], delta, side="right")
        return idx

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n", "x_left", "x_right", "train_pair_count"])
            for n in range(self.B):
                writer.writerow([n + 1, f"{self.left[n]:.9f}", f"{self.right[n]:.9f}", int(self.counts[n])])


def intervals_from_deltas(deltas, B):
    """Split sorted relative scores into B equal-count bins.

    Inner edges sit halfway between the last member of one bin and the
    first member of the next; outer edges are the extreme deltas.
    """
    deltas = np.sort(np.asarray(deltas, dtype=float))
    if B < 1:
        raise ConfigError(f"B={B} must be >= 1")
    if len(np.unique(deltas)) < B:
        raise ConfigError(f"B={B} exceeds the {len(np.unique(deltas))} distinct pair deltas")
    bins = np.array_split(deltas, B)
    inner = [(bins[n][-1] + bins[n + 1][0]) / 2.0 for n in range(B - 1)]
    edges = np.array([deltas[0], *inner, deltas[-1]])
    return GroupIntervals(edges=edges, counts=np.array([len(b) for b in bins]))


def build_intervals(train_scores, B):
    """Intervals over the deltas of all ordered training pairs (i, j), i != j."""
    s = np.asarray(train_scores, dtype=float)
    if len(s) < 2:
        raise ConfigError("need at least two training scores")
    diff = s[:, None] - s[None, :]
    return intervals_from_deltas(diff[~np.eye(len(s), dtype=bool)], B)


@dataclass
class GroupTarget:
    labels: np.ndarray
    gamma: float
    index: int


def _gamma(delta, intervals, idx):
    width = intervals.right[idx] - intervals.left[idx]
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(width > 0, (delta - intervals.left[idx]) / np.where(width > 0, width, 1.0), 0.0)
    return np.clip(g, 0.0, 1.0)


def encode_target(delta, intervals):
    """One-hot interval label and in-interval fraction for a relative score."""
    idx = int(intervals.index(delta))
    labels = np.zeros(intervals.B)
    labels[idx] = 1.0
    return GroupTarget(labels, float(_gamma(delta, intervals, idx)), idx)


def encode_targets(deltas, intervals):
    """Vectorised :func:`encode_target`: returns ``(labels (N, B), gammas (N,))``."""
    deltas = np.asarray(deltas, dtype=float)
    idx = intervals.index(deltas)
    labels = np.zeros((len(deltas), intervals.B))
    labels[np.arange(len(deltas)), idx] = 1.0
    return labels, _gamma(deltas, intervals, idx)


def decode_score(probabilities, regressions, intervals, s0, difficulty=None):
    """Score from the most probable interval and its clamped fraction.

    ``s0`` is the exemplar's score (its raw score when ``difficulty`` is
    given, in which case the reconstructed raw score is multiplied by it).
    Works on single predictions ``(B,)`` or batches ``(N, B)``.
    """
    p = np.atleast_2d(np.asarray(probabilities, dtype=float))
    r = np.atleast_2d(np.asarray(regressions, dtype=float))
    n = np.argmax(p, axis=1)
    gamma = np.clip(r[np.arange(len(n)), n], 0.0, 1.0)
    delta = intervals.left[n] + gamma * (intervals.right[n] - intervals.left[n])
    s = np.asarray(s0, dtype=float) + delta
    if difficulty is not None:
        s = s * np.asarray(difficulty, dtype=float)
    return float(s[0]) if np.ndim(probabilities) == 1 else s


def classification_regression_loss(probabilities, regressions, labels, gammas):
    """Per-pair BCE over groups and squared error on the hot group's fraction."""
    p = ad.clip(probabilities, PROB_CLAMP, 1.0 - PROB_CLAMP)
    labels = np.asarray(labels, dtype=float)
    bce = labels * ad.log(p) + (1.0 - labels) * ad.log(1.0 - p)
    l_cls = ad.scale(bce.sum(axis=-1), -1.0)
    err = np.asarray(gammas, dtype=float)[..., None] - regressions
    l_reg = (labels * err * err).sum(axis=-1)
    return l_cls, l_reg


class ContrastiveRegressor(Module):
    """Shared pairwise MLP, average pool over parts, then classification and regression heads."""

    def __init__(self, d, B, rng, fusion="part-wise"):
        if fusion not in FUSION_MODES:
            raise ConfigError(f"unknown fusion mode {fusion!r}; expected one of {FUSION_MODES}")
        self.fusion = fusion
        self.relative = MLP(2 * d, d, d, rng)
        self.cls_head = MLP(d, d, B, rng)
        self.reg_head = MLP(d, d, B, rng)

    def relative_parts(self, parts, exemplar_parts):
        return self.relative(ad.concat([parts, exemplar_parts], axis=-1))

    def __call__(self, parts, exemplar_parts):
        parts, exemplar_parts = ad.as_tensor(parts), ad.as_tensor(exemplar_parts)
        if parts.shape != exemplar_parts.shape:
            raise ContractError(
                f"part sets differ: {parts.shape} vs exemplar {exemplar_parts.shape}"
            )
        if self.fusion == "part-wise":
            pooled = self.relative_parts(parts, exemplar_parts).mean(axis=-2)
        else:
            pooled = self.relative(
                ad.concat([parts.mean(axis=-2), exemplar_parts.mean(axis=-2)], axis=-1)
            )
        return ad.sigmoid(self.cls_head(pooled)), self.reg_head(pooled)
