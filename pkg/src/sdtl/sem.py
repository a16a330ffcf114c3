"""Structure Enhancement Module: per-band structure attention, then cross-band fusion.

Attention here is channel attention: with keys and queries of shape (N, C),
``K^T Q`` is a C x C map, softmaxed over its last axis and applied to the
other stream laid out as (C, N).
"""
import math

from sdtl import tensor as T
from sdtl.errors import ShapeError
from sdtl.layers import MLP, Conv2d, ConvBlock, LayerNorm, Linear, Module, ModuleList

BANDS = ("hl", "lh", "hh")


def flatten_tokens(x):
    """(B, C, H, W) -> (B, H*W, C)."""
    B, C, H, W = x.shape
    return T.swapaxes(T.reshape(x, (B, C, H * W)), 1, 2)


def unflatten_tokens(x, H, W):
    B, N, C = x.shape
    return T.reshape(T.swapaxes(x, 1, 2), (B, C, H, W))


def channel_attention(k, q, v, alpha):
    """softmax(K^T Q / alpha) applied to ``v`` reshaped to (C, N); returns ((B, N, C), map)."""
    attn = T.softmax(T.scale(T.matmul(T.swapaxes(k, 1, 2), q), 1.0 / alpha), axis=-1)
    out = T.matmul(attn, T.swapaxes(v, 1, 2))
    return T.swapaxes(out, 1, 2), attn


class BandEnhancer(Module):
    def __init__(self, rng, c_band, c_struct, c_hat=None):
        super().__init__()
        c_hat = c_hat or c_band
        self.alpha = math.sqrt(c_hat)
        self.in_feat = Linear(rng, c_band, c_hat)
        self.in_struct = Linear(rng, c_struct, c_hat)
        self.key_feat = Linear(rng, c_hat, c_hat)
        self.query_feat = Linear(rng, c_hat, c_hat)
        self.key_struct = Linear(rng, c_hat, c_hat)
        self.query_struct = Linear(rng, c_hat, c_hat)
        self.post_feat = Linear(rng, c_hat, c_hat)
        self.post_struct = Linear(rng, c_hat, c_hat)
        self.norm_feat = LayerNorm(c_hat)
        self.norm_struct = LayerNorm(c_hat)
        self.merge = ConvBlock(rng, 2 * c_hat, c_band)

    def forward(self, band, s, attn_log=None):
        if band.shape[-2:] != s.shape[-2:] or band.shape[0] != s.shape[0]:
            raise ShapeError(f"band {band.shape} and structure {s.shape} are not aligned")
        H, W = band.shape[-2:]
        x_i = self.in_feat(flatten_tokens(band))
        x_s = self.in_struct(flatten_tokens(s))
        e_i, a_i = channel_attention(self.key_feat(x_i), self.query_feat(x_i), x_s, self.alpha)
        e_s, a_s = channel_attention(self.key_struct(x_s), self.query_struct(x_s), x_i, self.alpha)
        if attn_log is not None:
            attn_log.extend([a_i, a_s])
        e_i = self.norm_feat(self.post_feat(e_i)) + x_i
        e_s = self.norm_struct(self.post_struct(e_s)) + x_s
        merged = unflatten_tokens(T.concat([e_i, e_s], axis=-1), H, W)
        return self.merge(merged)


class ChannelGate(Module):
    """x * sigmoid(MLP(avgpool(x))) with per-channel gates."""

    def __init__(self, rng, channels, ratio=4, zero_init=False):
        super().__init__()
        self.mlp = MLP(rng, channels, max(channels // ratio, 1), channels, zero_init=zero_init)

    def gates(self, x):
        return T.sigmoid(self.mlp(T.global_avg_pool(x)))

    def forward(self, x):
        g = self.gates(x)
        return T.reshape(g, g.shape + (1, 1)) * x


def channel_gate(x, gate):
    return gate(x)


class BandFusion(Module):
    def __init__(self, rng, channels, ratio=4):
        super().__init__()
        self.convs = ModuleList(Conv2d(rng, channels, channels) for _ in BANDS)
        self.gates = ModuleList(ChannelGate(rng, 2 * channels, ratio) for _ in BANDS)
        self.projs = ModuleList(Conv2d(rng, 2 * channels, channels, k=1) for _ in BANDS)
        self.summary = Conv2d(rng, 3 * channels, 3 * channels)

    def forward(self, bands):
        bands = list(bands)
        shapes = {b.shape for b in bands}
        if len(shapes) != 1:
            raise ShapeError(f"fuse_bands: band shapes differ: {sorted(shapes)}")
        fused = []
        for d in range(3):
            others = T.concat([bands[i] for i in range(3) if i != d], axis=1)
            fused.append(self.convs[d](bands[d]) + self.projs[d](self.gates[d](others)))
        c = bands[0].shape[1]
        corr = self.summary(T.concat(fused, axis=1))
        return tuple(fused[d] + corr[:, d * c:(d + 1) * c] for d in range(3))


def fuse_bands(hl, lh, hh, fusion):
    return fusion((hl, lh, hh))


class SEM(Module):
    """Enhancement (optional) followed by fusion (optional) over the three high bands."""

    def __init__(self, rng, channels, struct_channels, enhance=True, fusion=True, gate_ratio=4):
        super().__init__()
        self.use_enhance = enhance
        self.use_fusion = fusion
        if enhance:
            self.enhance = ModuleList(BandEnhancer(rng, channels, struct_channels) for _ in BANDS)
        if fusion:
            self.fusion = BandFusion(rng, channels, gate_ratio)

    def forward(self, highs, s, attn_log=None):
        highs = tuple(highs)
        if self.use_enhance:
            highs = tuple(enh(b, s, attn_log) for enh, b in zip(self.enhance, highs))
        if self.use_fusion:
            highs = self.fusion(highs)
        return highs


def sem_forward(highs, s, sem):
    return sem(highs, s)
