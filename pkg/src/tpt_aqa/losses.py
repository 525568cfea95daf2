"""Unsupervised part-learning losses on cross-attention maps.

All functions accept a single map ``(K, T)`` or a batch ``(N, K, T)`` and
return one value per video (a scalar tensor for a single map).
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, ContractError

ROW_SUM_TOL = 1e-4


@dataclass
class LossWeights:
    cls: float = 1.0
    reg: float = 1.0
    rank: float = 1.0
    sparsity: float = 1.0
    margin: float = 1.0

    def validate(self):
        for name in ("cls", "reg", "rank", "sparsity"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be non-negative")
        return self


def clip_positions(T):
    """1-based clip indices as a float row."""
    return np.arange(1, T + 1, dtype=float)


def attention_center(attention):
    """Expected 1-based clip index under each query's attention row."""
    attention = ad.as_tensor(attention)
    rows = attention.data.sum(axis=-1)
    if np.any(np.abs(rows - 1.0) > ROW_SUM_TOL):
        raise ContractError(
            f"attention rows must sum to 1 (max deviation {np.abs(rows - 1.0).max():.3g})"
        )
    T = attention.shape[-1]
    return ad.matmul(attention, clip_positions(T).reshape(T, 1)).sum(axis=-1)


def ranking_loss(centers, T, margin=1.0):
    """Margin ranking loss on consecutive centers, with virtual centers at 1 and T."""
    centers = ad.as_tensor(centers)
    K = centers.shape[-1]
    if K < 1:
        raise ContractError("ranking_loss needs at least one center")
    first = centers[..., 0]
    last = centers[..., K - 1]
    loss = ad.relu(ad.scale(first, -1.0) + (1.0 + margin)) + ad.relu(last + (margin - T))
    if K > 1:
        gaps = centers[..., : K - 1] - centers[..., 1:] + margin
        loss = loss + ad.relu(gaps).sum(axis=-1)
    return loss


def sparsity_loss(attention, centers=None, detach_center=False):
    """Sum over queries of the attention-weighted absolute distance to the center."""
    attention = ad.as_tensor(attention)
    if centers is None:
        centers = attention_center(attention)
    if detach_center:
        centers = ad.Tensor(ad.as_tensor(centers).data)
    centers = ad.as_tensor(centers)
    T = attention.shape[-1]
    c = centers.reshape(*centers.shape, 1)
    dist = ad.abs_smooth(ad.as_tensor(clip_positions(T)) - c)
    return (dist * attention).sum(axis=(-2, -1))


def diversity_loss(centers, sigma=1.0):
    """Gaussian repulsion ``sum_{i<j} exp(-(c_i - c_j)^2 / (2 sigma^2))``."""
    if sigma <= 0:
        raise ConfigError("sigma must be positive")
    centers = ad.as_tensor(centers)
    K = centers.shape[-1]
    diff = centers.reshape(*centers.shape, 1) - centers.reshape(*centers.shape[:-1], 1, K)
    kernel = ad.exp(ad.scale(diff * diff, -0.5 / sigma**2))
    upper = np.triu(np.ones((K, K)), k=1)
    return (kernel * upper).sum(axis=(-2, -1))


def aggregate_attention_losses(maps, margin=1.0, order_loss="rank", sigma=1.0, detach_center=False):
    """Per-layer order and sparsity losses summed over layers.

    ``order_loss`` selects the margin ranking loss (``"rank"``) or the
    diversity loss (``"diversity"``). Returns ``(order, sparsity)``.
    """
    if not maps:
        raise ContractError("need at least one attention map")
    if order_loss not in ("rank", "diversity"):
        raise ConfigError(f"unknown order_loss {order_loss!r}")
    order = sparsity = None
    for attention in maps:
        attention = ad.as_tensor(attention)
        centers = attention_center(attention)
        if order_loss == "rank":
            o = ranking_loss(centers, attention.shape[-1], margin)
        else:
            o = diversity_loss(centers, sigma)
        s = sparsity_loss(attention, centers, detach_center=detach_center)
        order = o if order is None else order + o
        sparsity = s if sparsity is None else sparsity + s
    return order, sparsity
