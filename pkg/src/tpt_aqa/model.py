"""Full assessment model: part generator, contrastive regressor and score intervals."""

import numpy as np

from . import autodiff as ad
from .data import relative_score
from .decoder import AdaptivePooling, HolisticPooling, TemporalConv, TemporalParsingTransformer
from .errors import ConfigError, ContractError
from .losses import aggregate_attention_losses
from .nn import Module
from .regressor import (
    ContrastiveRegressor,
    GroupIntervals,
    classification_regression_loss,
    decode_score,
    encode_targets,
)

PART_GENERATORS = ("tpt", "baseline", "adaptive_pooling", "temporal_conv")


def build_generator(kind, D, T, tpt_config, rng):
    if kind == "tpt":
        return TemporalParsingTransformer(D, tpt_config, rng)
    if kind == "baseline":
        return HolisticPooling(D, tpt_config.d, rng)
    if kind == "adaptive_pooling":
        return AdaptivePooling(D, tpt_config.d, tpt_config.K, rng)
    if kind == "temporal_conv":
        return TemporalConv(D, tpt_config.d, tpt_config.K, T, rng)
    raise ConfigError(f"unknown part generator {kind!r}; expected one of {PART_GENERATORS}")


class AQAModel(Module):
    def __init__(self, D, T, tpt_config, B, rng, part_generator="tpt", fusion="part-wise"):
        tpt_config.validate()
        self.generator = build_generator(part_generator, D, T, tpt_config, rng)
        self.regressor = ContrastiveRegressor(tpt_config.d, B, rng, fusion=fusion)
        self.intervals = None
        self.rename()

    def named(self):
        return dict(self.named_parameters())

    def param_groups(self):
        """(embedding + part generator, regressor heads)."""
        return self.generator.parameters(), self.regressor.parameters()

    def decode(self, clips):
        return self.generator(clips)

    def forward_pairs(self, test_clips, exemplar_clips):
        """Decode both sides in one batch; returns ``(probs, regs, test_parts, exemplar_parts)``."""
        n = len(test_clips)
        both = np.concatenate([np.asarray(test_clips), np.asarray(exemplar_clips)], axis=0)
        test_ps, ex_ps = self.decode(both).split(n)
        probs, regs = self.regressor(test_ps.parts, ex_ps.parts)
        return probs, regs, test_ps, ex_ps

    def state(self):
        return {name: p.data.copy() for name, p in self.named_parameters()}

    def load_state(self, arrays):
        for name, p in self.named_parameters():
            p.data[...] = arrays[name]


def compute_losses(probs, regs, labels, gammas, partsets, weights, order_loss="rank",
                   sigma=1.0, detach_center=False):
    """Weighted total of classification, regression and attention losses.

    Pair losses are averaged over the batch; attention losses are summed
    over decoder layers and averaged over every decoded video (test and
    exemplar). Returns ``(total, components)`` with tensor components.
    """
    l_cls, l_reg = classification_regression_loss(probs, regs, labels, gammas)
    comp = {"cls": l_cls.mean(), "reg": l_reg.mean()}
    maps = [ad.concat([ps.attention[i] for ps in partsets], axis=0)
            for i in range(len(partsets[0].attention))]
    if maps:
        order, sparsity = aggregate_attention_losses(
            maps, weights.margin, order_loss, sigma, detach_center
        )
        comp["rank"] = order.mean()
        comp["sparsity"] = sparsity.mean()
    else:
        comp["rank"] = ad.Tensor(0.0)
        comp["sparsity"] = ad.Tensor(0.0)
    total = (
        ad.scale(comp["cls"], weights.cls)
        + ad.scale(comp["reg"], weights.reg)
        + ad.scale(comp["rank"], weights.rank)
        + ad.scale(comp["sparsity"], weights.sparsity)
    )
    return total, comp


def multi_exemplar_predict(model, test, exemplars, difficulty_mode=False, reduce="mean"):
    """Average (or median) of the scores reconstructed against each exemplar."""
    if not exemplars:
        raise ContractError("need at least one exemplar")
    if model.intervals is None:
        raise ContractError("model has no score intervals")
    n = len(exemplars)
    test_clips = np.repeat(test.clips[None], n, axis=0)
    ex_clips = np.stack([e.clips for e in exemplars])
    probs, regs, _, _ = model.forward_pairs(test_clips, ex_clips)
    preds = pair_scores(probs.data, regs.data, model.intervals, exemplars, test, difficulty_mode)
    return reduce_predictions(preds, reduce)


def pair_scores(probs, regs, intervals, exemplars, test, difficulty_mode):
    if difficulty_mode:
        s0 = np.array([e.raw_score for e in exemplars])
        return decode_score(probs, regs, intervals, s0, difficulty=test.difficulty)
    s0 = np.array([e.score for e in exemplars])
    return decode_score(probs, regs, intervals, s0)


def reduce_predictions(preds, reduce="mean"):
    preds = np.atleast_1d(preds)
    if reduce == "mean":
        return float(np.mean(preds))
    if reduce == "median":
        return float(np.median(preds))
    raise ConfigError(f"unknown exemplar reduction {reduce!r}")


def pair_targets(pairs, intervals, difficulty_mode):
    deltas = np.array([relative_score(p.test, p.exemplar, difficulty_mode) for p in pairs])
    return encode_targets(deltas, intervals)


def intervals_to_arrays(intervals: GroupIntervals):
    return {"edges": intervals.edges.tolist(), "counts": intervals.counts.tolist()}


def intervals_from_arrays(d):
    return GroupIntervals(edges=np.asarray(d["edges"], float), counts=np.asarray(d["counts"], int))
