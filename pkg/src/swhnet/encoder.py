"""DDM branch: patch embedding, channel aggregation, and the
spatial-channel attention encoder.

Each of the four receiver channels supplies a stack of three DDM types.
Per channel (weights shared across channels) the three maps are patch
embedded, a learnable global token is prepended, and sinusoidal position
codes are added. The four flattened channel sequences are stacked
token-major into an M x 4 tensor whose feature axis is the channel axis,
and each channel becomes one attention head (d_k = 1).

Cross-channel information flow is localized in the head-mixing output
projection, the feedforward maps, and the normalization statistics:
  * CD strategy: dense output projection, dense feedforward, per-token
    normalization over the 4 channels.
  * CI strategy: diagonal output projection, per-channel block-diagonal
    feedforward, per-channel normalization over the M tokens. Channel j
    of the output then depends on channel j of the input only, exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ParamBag, Tensor
from .config import DDM_TYPES, ModelConfig
from .errors import ConfigError, ShapeError

LN_EPS = 1e-5


@dataclass
class DdmStack:
    """Four-channel stack of the three DDM types, shape (4, 3, W, H)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 4 or self.values.shape[0] != 4 or self.values.shape[1] != 3:
            raise ShapeError(f"DdmStack must be (4, 3, W, H), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ShapeError("DdmStack contains non-finite values")


def positional_encoding(seq_len: int, dim: int) -> np.ndarray:
    """Sinusoidal position codes: sin on even dims, cos on odd dims.

    pe[pos, 2d] = sin(pos / 10000^(2d/dim)), pe[pos, 2d+1] = cos(...).
    Deterministic and not learnable.
    """
    if dim < 1 or seq_len < 1:
        raise ShapeError("positional_encoding requires seq_len >= 1 and dim >= 1")
    pe = np.zeros((seq_len, dim))
    pos = np.arange(seq_len, dtype=np.float64)[:, None]
    even = np.arange(0, dim, 2, dtype=np.float64)
    angles = pos / np.power(10000.0, even / dim)
    pe[:, 0::2] = np.sin(angles)
    pe[:, 1::2] = np.cos(angles[:, : dim // 2])
    return pe


def _xavier(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def channel_norm(x: Tensor, gamma: Tensor, beta: Tensor, strategy: str, eps: float = LN_EPS) -> Tensor:
    """Normalize an (M, 4) token tensor according to the channel strategy.

    CD normalizes each token over its 4 channel features; CI normalizes
    each channel column over its M tokens so no statistics are shared
    across channels. The affine parameters are per channel either way.
    """
    if strategy == "CD":
        return ad.layer_norm(x, gamma, beta, eps)
    if strategy == "CI":
        normed = ad.transpose(ad.normalize(ad.transpose(x), eps))
        return ad.add(ad.mul(normed, gamma), beta)
    raise ConfigError(f"unknown strategy {strategy!r}")


def add_norm(
    residual: Tensor,
    features: Tensor,
    gamma: Tensor,
    beta: Tensor,
    strategy: str,
    dropout_p: float,
    train: bool,
    rng: np.random.Generator | None,
) -> Tensor:
    """Residual combiner: residual + Dropout(Norm(features)).

    Note the order: the *normalized* sublayer output passes through
    dropout and is added back to the raw tensor. For the attention block
    residual and features are the same tensor.
    """
    normed = channel_norm(features, gamma, beta, strategy)
    return ad.add(residual, ad.dropout(normed, dropout_p, train, rng))


class DdmEncoder:
    """Patch embedding plus a stack of spatial-channel attention layers."""

    def __init__(self, cfg: ModelConfig, bag: ParamBag, rng: np.random.Generator, prefix: str = "encoder"):
        self.cfg = cfg
        p, de = cfg.patch_size, cfg.embed_dim
        self.kernels = []
        self.kernel_biases = []
        for name in DDM_TYPES:
            k = bag.add(f"{prefix}.embed.{name}.kernel", _xavier(rng, (de, 1, p, p), p * p, de))
            b = bag.add(f"{prefix}.embed.{name}.bias", np.zeros(de))
            self.kernels.append(k)
            self.kernel_biases.append(b)
        self.global_token = bag.add(f"{prefix}.embed.global_token", rng.normal(0.0, 0.02, size=de))
        self.pe = Tensor(positional_encoding(cfg.seq_len, de))

        self.layers = []
        dff4 = cfg.d_ff // 4
        for i in range(cfg.n_layers):
            lp = f"{prefix}.layer{i}"
            layer = {
                "wq": bag.add(f"{lp}.attn.wq", _xavier(rng, (4,), 1, 1)),
                "wk": bag.add(f"{lp}.attn.wk", _xavier(rng, (4,), 1, 1)),
                "wv": bag.add(f"{lp}.attn.wv", _xavier(rng, (4,), 1, 1)),
            }
            if cfg.strategy == "CD":
                layer["wo"] = bag.add(f"{lp}.attn.wo", _xavier(rng, (4, 4), 4, 4))
            else:
                layer["wo"] = bag.add(f"{lp}.attn.wo", _xavier(rng, (4,), 1, 1))
            layer["norm1_gamma"] = bag.add(f"{lp}.norm1.gamma", np.ones(4))
            layer["norm1_beta"] = bag.add(f"{lp}.norm1.beta", np.zeros(4))
            if cfg.strategy == "CD":
                layer["ffn_w1"] = bag.add(f"{lp}.ffn.w1", _xavier(rng, (4, cfg.d_ff), 4, cfg.d_ff))
                layer["ffn_b1"] = bag.add(f"{lp}.ffn.b1", np.zeros(cfg.d_ff))
                layer["ffn_w2"] = bag.add(f"{lp}.ffn.w2", _xavier(rng, (cfg.d_ff, 4), cfg.d_ff, 4))
                layer["ffn_b2"] = bag.add(f"{lp}.ffn.b2", np.zeros(4))
            else:
                # One independent 1 -> d_ff/4 -> 1 map per channel.
                layer["ffn_w1"] = bag.add(f"{lp}.ffn.w1", _xavier(rng, (4, dff4), 1, dff4))
                layer["ffn_b1"] = bag.add(f"{lp}.ffn.b1", np.zeros((4, dff4)))
                layer["ffn_w2"] = bag.add(f"{lp}.ffn.w2", _xavier(rng, (4, dff4), dff4, 1))
                layer["ffn_b2"] = bag.add(f"{lp}.ffn.b2", np.zeros(4))
            layer["norm2_gamma"] = bag.add(f"{lp}.norm2.gamma", np.ones(4))
            layer["norm2_beta"] = bag.add(f"{lp}.norm2.beta", np.zeros(4))
            self.layers.append(layer)

    # -- embedding ------------------------------------------------------------

    def embed_channel(self, ddms: Tensor) -> Tensor:
        """Embed one channel's (3, W, H) DDM stack into (3N+1, embed_dim) tokens.

        Each DDM type gets its own patch kernel; the learnable global
        token occupies position 0 and position codes cover the full
        sequence including it.
        """
        per_type = ad.split(ddms, 3, axis=0)
        seqs = []
        for t, (kernel, bias) in enumerate(zip(self.kernels, self.kernel_biases)):
            emb = ad.conv_patchify(per_type[t], kernel, bias, self.cfg.patch_size)
            seqs.append(ad.transpose(emb))  # (N, embed_dim)
        glb = ad.reshape(self.global_token, (1, self.cfg.embed_dim))
        tokens = ad.concat([glb] + seqs, axis=0)
        return ad.add(tokens, self.pe)

    def aggregate_channels(self, per_channel: list[Tensor]) -> Tensor:
        """Flatten four (3N+1, embed_dim) sequences and stack them as columns.

        The flatten order is row-major over (token, embed_dim) with the
        token axis enumerating (global, ddm_type, patch); the result is
        (M, 4) with channel c in feature column c.
        """
        if len(per_channel) != 4:
            raise ShapeError(f"expected 4 channel sequences, got {len(per_channel)}")
        shapes = {t.shape for t in per_channel}
        if len(shapes) != 1:
            raise ShapeError(f"ragged channel sequences: {sorted(shapes)}")
        return ad.stack([ad.flatten(t) for t in per_channel], axis=1)

    # -- encoder layers ---------------------------------------------------------

    def sca_attention(self, tokens: Tensor, layer: dict) -> Tensor:
        """Per-channel spatial attention with cross-channel output mixing.

        Query/key/value projections are diagonal (one scalar per
        channel) so head i sees channel i only; the output projection is
        dense in CD mode and diagonal in CI mode.
        """
        d_k = 1.0
        scale = 1.0 / math.sqrt(d_k)
        qs = ad.split(ad.mul(tokens, layer["wq"]), 4, axis=1)
        ks = ad.split(ad.mul(tokens, layer["wk"]), 4, axis=1)
        vs = ad.split(ad.mul(tokens, layer["wv"]), 4, axis=1)
        heads = []
        for i in range(4):
            scores = ad.mul(ad.matmul(qs[i], ad.transpose(ks[i])), scale)
            attn = ad.softmax_rows(scores)
            heads.append(ad.matmul(attn, vs[i]))
        h = ad.concat(heads, axis=1)
        if self.cfg.strategy == "CD":
            return ad.matmul(h, layer["wo"])
        return ad.mul(h, layer["wo"])

    def ffn(self, x: Tensor, layer: dict, train: bool, rng: np.random.Generator | None) -> Tensor:
        """Token-wise feedforward; dense in CD, per-channel blocks in CI."""
        p = self.cfg.dropout_p
        if self.cfg.strategy == "CD":
            hidden = ad.dropout(ad.relu(ad.add(ad.matmul(x, layer["ffn_w1"]), layer["ffn_b1"])), p, train, rng)
            return ad.add(ad.matmul(hidden, layer["ffn_w2"]), layer["ffn_b2"])
        cols = ad.split(x, 4, axis=1)
        w1_rows = ad.split(layer["ffn_w1"], 4, axis=0)
        b1_rows = ad.split(layer["ffn_b1"], 4, axis=0)
        w2_rows = ad.split(layer["ffn_w2"], 4, axis=0)
        b2_parts = ad.split(layer["ffn_b2"], 4, axis=0)
        outs = []
        for c in range(4):
            pre = ad.add(ad.mul(cols[c], w1_rows[c]), b1_rows[c])  # (M, d_ff/4)
            hidden = ad.dropout(ad.relu(pre), p, train, rng)
            out = ad.add(ad.matmul(hidden, ad.transpose(w2_rows[c])), b2_parts[c])
            outs.append(out)
        return ad.concat(outs, axis=1)

    def layer_forward(self, tokens: Tensor, layer: dict, train: bool, rng: np.random.Generator | None) -> Tensor:
        cfg = self.cfg
        p = cfg.dropout_p
        o = self.sca_attention(tokens, layer)
        if cfg.standard_residual:
            d = channel_norm(ad.add(tokens, ad.dropout(o, p, train, rng)),
                             layer["norm1_gamma"], layer["norm1_beta"], cfg.strategy)
        else:
            d = add_norm(o, o, layer["norm1_gamma"], layer["norm1_beta"], cfg.strategy, p, train, rng)
        f = self.ffn(d, layer, train, rng)
        if cfg.standard_residual:
            return channel_norm(ad.add(d, ad.dropout(f, p, train, rng)),
                                layer["norm2_gamma"], layer["norm2_beta"], cfg.strategy)
        return add_norm(d, f, layer["norm2_gamma"], layer["norm2_beta"], cfg.strategy, p, train, rng)

    def forward(self, stack: Tensor, train: bool = False, rng: np.random.Generator | None = None) -> Tensor:
        """Encode a (4, 3, W, H) stack into (M, 4) channel features."""
        if stack.shape[:2] != (4, 3):
            raise ShapeError(f"encoder input must be (4, 3, W, H), got {stack.shape}")
        channels = ad.split(stack, 4, axis=0)
        per_channel = [self.embed_channel(ad.reshape(ch, stack.shape[1:])) for ch in channels]
        tokens = self.aggregate_channels(per_channel)
        for layer in self.layers:
            tokens = self.layer_forward(tokens, layer, train, rng)
        return tokens
