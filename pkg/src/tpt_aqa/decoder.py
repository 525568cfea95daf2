"""Temporal parsing transformer: learnable queries decode clip features into parts."""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tensor
from .errors import ConfigError, ContractError, NumericError
from .nn import MLP, LayerNorm, Linear, Module

PE_MODES = ("off", "memory", "memory+query")


@dataclass
class TPTConfig:
    K: int = 5
    d: int = 128
    L: int = 2
    ffn_dim: int = 256
    self_attention_heads: int = 4
    tau_init: float = 1.0
    positional_encoding: str = "off"
    norm_first: bool = False

    def validate(self):
        if self.K < 1:
            raise ConfigError(f"K={self.K} must be >= 1")
        if self.L < 1:
            raise ConfigError(f"L={self.L} must be >= 1")
        if self.d % self.self_attention_heads:
            raise ConfigError(
                f"d={self.d} not divisible by self_attention_heads={self.self_attention_heads}"
            )
        if self.tau_init <= 0:
            raise ConfigError("tau_init must be positive")
        if self.positional_encoding not in PE_MODES:
            raise ConfigError(
                f"unknown positional_encoding {self.positional_encoding!r}; expected one of {PE_MODES}"
            )
        return self


@dataclass
class PartSet:
    """Decoded parts ``(N, K, d)`` and the per-layer ``(N, K, T)`` cross-attention maps."""

    parts: Tensor
    attention: list = field(default_factory=list)
    temperatures: list = field(default_factory=list)

    def split(self, n):
        """Split a batch of ``2n`` videos into the first ``n`` and the last ``n``."""
        first = PartSet(self.parts[:n], [a[:n] for a in self.attention], self.temperatures)
        second = PartSet(self.parts[n:], [a[n:] for a in self.attention], self.temperatures)
        return first, second


def sinusoidal_encoding(positions, dim):
    """Standard sin/cos encoding; row ``i`` encodes ``positions[i]``.

    Even channels hold sines and odd channels cosines, so position 0 maps
    to ``[0, 1, 0, 1, ...]``.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 1)
    freq = 1.0 / 10000.0 ** (2 * (np.arange(dim) // 2) / dim)
    angles = positions * freq
    return np.where(np.arange(dim) % 2 == 0, np.sin(angles), np.cos(angles))


def cross_attention(parts, queries, memory, tau, layer=None):
    """Single-head temperature cross-attention with residual part update.

    ``alpha[k, t] = softmax_t((p_k + q_k) . v_t / tau)`` and
    ``p'_k = sum_t alpha[k, t] v_t + p_k``. Shapes: parts ``(N, K, d)``,
    queries ``(K, d)``, memory ``(N, T, d)``. Returns ``(p', alpha)``.
    """
    for name, x in (("parts", parts), ("queries", queries), ("memory", memory), ("tau", tau)):
        if not np.all(np.isfinite(ad.as_tensor(x).data)):
            raise NumericError(f"non-finite {name} entering cross-attention of layer {layer}")
    logits = ad.matmul(parts + queries, ad.swap_last(memory)) / tau
    alpha = ad.softmax(logits, axis=-1)
    return ad.matmul(alpha, memory) + parts, alpha


class SelfAttention(Module):
    """Multi-head scaled dot-product self-attention over the K parts."""

    def __init__(self, d, heads, rng):
        self.heads = heads
        self.q = Linear(d, d, rng)
        self.k = Linear(d, d, rng)
        self.v = Linear(d, d, rng)
        self.out = Linear(d, d, rng)

    def __call__(self, x):
        n, k, d = x.shape
        h = self.heads
        dh = d // h

        def split(t):
            return t.reshape(n, k, h, dh).transpose(0, 2, 1, 3)

        q, kk, v = split(self.q(x)), split(self.k(x)), split(self.v(x))
        w = ad.softmax(ad.scale(ad.matmul(q, ad.swap_last(kk)), 1.0 / np.sqrt(dh)), axis=-1)
        y = ad.matmul(w, v).transpose(0, 2, 1, 3).reshape(n, k, d)
        return self.out(y)


class DecoderLayer(Module):
    """cross-attention -> self-attention -> FFN, each followed (or preceded) by layer norm."""

    def __init__(self, config, rng):
        self.norm_first = config.norm_first
        self.log_tau = Parameter("log_tau", np.array(np.log(config.tau_init)))
        self.self_attn = SelfAttention(config.d, config.self_attention_heads, rng)
        self.ffn = MLP(config.d, config.ffn_dim, config.d, rng)
        self.norm_cross = LayerNorm(config.d)
        self.norm_self = LayerNorm(config.d)
        self.norm_ffn = LayerNorm(config.d)

    @property
    def tau(self):
        return float(np.exp(self.log_tau.data))

    def __call__(self, parts, queries, memory, index=None):
        tau = ad.exp(self.log_tau)
        if self.norm_first:
            h = self.norm_cross(parts)
            updated, alpha = cross_attention(h, queries, memory, tau, layer=index)
            # cross_attention adds h back; swap that residual for the un-normalised parts
            x = updated - h + parts
            x = x + self.self_attn(self.norm_self(x))
            x = x + self.ffn(self.norm_ffn(x))
        else:
            updated, alpha = cross_attention(parts, queries, memory, tau, layer=index)
            x = self.norm_cross(updated)
            x = self.norm_self(x + self.self_attn(x))
            x = self.norm_ffn(x + self.ffn(x))
        return x, alpha


class ClipEmbedding(Module):
    """Linear projection of backbone clip features ``(N, T, D)`` to model width ``d``."""

    def __init__(self, D, d, rng):
        self.proj = Linear(D, d, rng)

    def __call__(self, clips):
        return self.proj(clips)


def _as_batch(clips):
    clips = ad.as_tensor(clips)
    if clips.ndim == 2:
        clips = clips.reshape(1, *clips.shape)
    if clips.ndim != 3:
        raise ContractError(f"expected clips of shape (T, D) or (N, T, D), got {clips.shape}")
    if clips.shape[1] == 0:
        raise ContractError("video has no clips (T = 0)")
    return clips


class TemporalParsingTransformer(Module):
    """Decoder-only transformer whose K queries are shared by every video."""

    def __init__(self, D, config, rng):
        self.config = config.validate()
        self.embed = ClipEmbedding(D, config.d, rng)
        self.queries = Parameter("queries", rng.standard_normal((config.K, config.d)))
        self.layers = [DecoderLayer(config, rng) for _ in range(config.L)]
        self.final_norm = LayerNorm(config.d) if config.norm_first else None

    def decoder_parameters(self):
        """Everything except the clip embedding."""
        embed = {id(p) for p in self.embed.parameters()}
        return [p for p in self.parameters() if id(p) not in embed]

    def __call__(self, clips):
        clips = _as_batch(clips)
        n, T, _ = clips.shape
        cfg = self.config
        memory = self.embed(clips)
        queries = self.queries
        if cfg.positional_encoding in ("memory", "memory+query"):
            memory = memory + sinusoidal_encoding(np.arange(1, T + 1), cfg.d)
        if cfg.positional_encoding == "memory+query":
            queries = queries + sinusoidal_encoding((T // cfg.K) * np.arange(1, cfg.K + 1), cfg.d)
        parts = Tensor(np.zeros((n, cfg.K, cfg.d)))
        maps = []
        for i, layer in enumerate(self.layers):
            parts, alpha = layer(parts, queries, memory, index=i)
            maps.append(alpha)
        if self.final_norm is not None:
            parts = self.final_norm(parts)
        return PartSet(parts, maps, [layer.tau for layer in self.layers])

    decode = __call__


# ------------------------------------------------------ alternative generators


class HolisticPooling(Module):
    """Mean-pool the embedded clips into a single part (the no-transformer baseline)."""

    def __init__(self, D, d, rng):
        self.embed = ClipEmbedding(D, d, rng)

    def decoder_parameters(self):
        return []

    def __call__(self, clips):
        memory = self.embed(_as_batch(clips))
        return PartSet(memory.mean(axis=1, keepdims=True))


def adaptive_pool_matrix(T, K):
    """Row k averages clips ``floor(k T / K) .. ceil((k + 1) T / K) - 1``."""
    A = np.zeros((K, T))
    for k in range(K):
        lo, hi = (k * T) // K, -((-(k + 1) * T) // K)
        A[k, lo:hi] = 1.0 / (hi - lo)
    return A


class AdaptivePooling(Module):
    """Down-sample T embedded clips to K parts by adaptive average pooling."""

    def __init__(self, D, d, K, rng):
        self.K = K
        self.embed = ClipEmbedding(D, d, rng)

    def decoder_parameters(self):
        return []

    def __call__(self, clips):
        memory = self.embed(_as_batch(clips))
        pool = adaptive_pool_matrix(memory.shape[1], self.K)
        return PartSet(ad.matmul(pool, memory))


class TemporalConv(Module):
    """Strided 1-D convolution with stride ``T // K`` producing exactly K parts."""

    def __init__(self, D, d, K, T, rng):
        if K > T:
            raise ConfigError(f"K={K} exceeds T={T}")
        self.K, self.T = K, T
        self.stride = T // K
        self.kernel = T - (K - 1) * self.stride
        self.embed = ClipEmbedding(D, d, rng)
        self.conv = Linear(self.kernel * d, d, rng)

    def decoder_parameters(self):
        return self.conv.parameters()

    def __call__(self, clips):
        memory = self.embed(_as_batch(clips))
        n, T, d = memory.shape
        if T != self.T:
            raise ContractError(f"TemporalConv built for T={self.T}, got {T}")
        idx = self.stride * np.arange(self.K)[:, None] + np.arange(self.kernel)[None, :]
        windows = memory[:, idx, :].reshape(n, self.K, self.kernel * d)
        return PartSet(self.conv(windows))
