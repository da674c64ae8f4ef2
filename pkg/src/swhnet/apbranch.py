"""Auxiliary-parameter branch: lightweight spatial and channel gating.

The standardized 4 x K_ap parameter matrix is embedded position-wise to
eight channels, split into two 4 x K_ap maps, and each map drives a
sigmoid gate: one projected along the spatial (parameter) axis, one along
the channel axis. Both gates multiply the raw standardized input
elementwise, so the branch output is a per-entry contraction of its input.

Under the CI strategy every channel-mixing map here (the embedding and
the channel-gate projections) is constrained block-diagonal per channel,
mirroring the encoder's CI constraints; otherwise gate values computed
for channel i would leak information from channel j.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import ParamBag, Tensor
from .config import ModelConfig
from .encoder import _xavier
from .errors import ShapeError

SPATIAL_UP_FACTOR = 4   # K_ap -> 4*K_ap up-projection
CHANNEL_HIDDEN = 16     # 4 -> 16 -> 4 channel projection (4 -> 4 per channel in CI)


class ApGateBranch:
    def __init__(self, cfg: ModelConfig, bag: ParamBag, rng: np.random.Generator, prefix: str = "ap"):
        self.cfg = cfg
        k = cfg.k_ap
        up = SPATIAL_UP_FACTOR * k
        if cfg.strategy == "CD":
            self.embed_kernel = bag.add(f"{prefix}.embed.kernel", _xavier(rng, (8, 4), 4, 8))
        else:
            self.embed_kernel = bag.add(f"{prefix}.embed.kernel", _xavier(rng, (8,), 1, 1))
        self.embed_bias = bag.add(f"{prefix}.embed.bias", np.zeros(8))
        self.p1 = bag.add(f"{prefix}.spatial.p1", _xavier(rng, (k, up), k, up))
        self.b1 = bag.add(f"{prefix}.spatial.b1", np.zeros(up))
        self.p2 = bag.add(f"{prefix}.spatial.p2", _xavier(rng, (up, k), up, k))
        self.b2 = bag.add(f"{prefix}.spatial.b2", np.zeros(k))
        if cfg.strategy == "CD":
            self.p3 = bag.add(f"{prefix}.channel.p3", _xavier(rng, (4, CHANNEL_HIDDEN), 4, CHANNEL_HIDDEN))
            self.b3 = bag.add(f"{prefix}.channel.b3", np.zeros(CHANNEL_HIDDEN))
            self.p4 = bag.add(f"{prefix}.channel.p4", _xavier(rng, (CHANNEL_HIDDEN, 4), CHANNEL_HIDDEN, 4))
            self.b4 = bag.add(f"{prefix}.channel.b4", np.zeros(4))
        else:
            # Per-channel 1 -> 4 -> 1 blocks, one row per channel.
            self.p3 = bag.add(f"{prefix}.channel.p3", _xavier(rng, (4, 4), 1, 4))
            self.b3 = bag.add(f"{prefix}.channel.b3", np.zeros((4, 4)))
            self.p4 = bag.add(f"{prefix}.channel.p4", _xavier(rng, (4, 4), 4, 1))
            self.b4 = bag.add(f"{prefix}.channel.b4", np.zeros(4))

    def ap_embed(self, a: Tensor) -> tuple[Tensor, Tensor]:
        """Position-wise embedding to 8 channels, split into two 4 x K_ap maps."""
        if a.shape != (4, self.cfg.k_ap):
            raise ShapeError(f"AP matrix must be (4, {self.cfg.k_ap}), got {a.shape}")
        if self.cfg.strategy == "CD":
            embedded = ad.conv1d_embed(a, self.embed_kernel, self.embed_bias)
            a1, a2 = ad.split(embedded, 2, axis=0)
            return a1, a2
        w1, w2 = ad.split(self.embed_kernel, 2, axis=0)
        b1, b2 = ad.split(self.embed_bias, 2, axis=0)
        a1 = ad.add(ad.mul(a, ad.reshape(w1, (4, 1))), ad.reshape(b1, (4, 1)))
        a2 = ad.add(ad.mul(a, ad.reshape(w2, (4, 1))), ad.reshape(b2, (4, 1)))
        return a1, a2

    def spatial_gate(self, a1: Tensor) -> Tensor:
        """Row-wise up/down projection along the parameter axis, then sigmoid."""
        hidden = ad.add(ad.matmul(a1, self.p1), self.b1)
        return ad.sigmoid(ad.add(ad.matmul(hidden, self.p2), self.b2))

    def channel_gate(self, a2: Tensor) -> Tensor:
        """Transpose, project the channel vector at each position, transpose back."""
        t = ad.transpose(a2)  # (K_ap, 4)
        if self.cfg.strategy == "CD":
            hidden = ad.add(ad.matmul(t, self.p3), self.b3)
            gates = ad.sigmoid(ad.add(ad.matmul(hidden, self.p4), self.b4))
            return ad.transpose(gates)
        cols = ad.split(t, 4, axis=1)
        p3_rows = ad.split(self.p3, 4, axis=0)
        b3_rows = ad.split(self.b3, 4, axis=0)
        p4_rows = ad.split(self.p4, 4, axis=0)
        b4_parts = ad.split(self.b4, 4, axis=0)
        outs = []
        for c in range(4):
            hidden = ad.add(ad.mul(cols[c], p3_rows[c]), b3_rows[c])  # (K_ap, 4)
            z = ad.add(ad.matmul(hidden, ad.transpose(p4_rows[c])), b4_parts[c])
            outs.append(ad.sigmoid(z))
        return ad.transpose(ad.concat(outs, axis=1))

    @staticmethod
    def apply_gates(a: Tensor, w_spatial: Tensor, w_channel: Tensor) -> Tensor:
        """Elementwise triple product A' = A * W_spatial * W_channel."""
        if a.shape != w_spatial.shape or a.shape != w_channel.shape:
            raise ShapeError(f"gate shapes {w_spatial.shape}/{w_channel.shape} do not match input {a.shape}")
        return ad.mul(ad.mul(a, w_spatial), w_channel)

    def forward(self, a: Tensor) -> Tensor:
        a1, a2 = self.ap_embed(a)
        return self.apply_gates(a, self.spatial_gate(a1), self.channel_gate(a2))
