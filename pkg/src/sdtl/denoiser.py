"""Noise-prediction transformer: patchify, timestep conditioning, SDT blocks, unpatchify.

An SDT block is a pre-norm ViT block followed by a structure-guided attention
block (SAB). Encoder block outputs are cached and merged into the decoder
blocks through a linear layer over the concatenated tokens.
"""
import math
from dataclasses import dataclass

import numpy as np

from sdtl import tensor as T
from sdtl.errors import ConfigError, ContractError, ShapeError
from sdtl.layers import MLP, LayerNorm, Linear, Module, ModuleList
from sdtl.tensor import Tensor, get_dtype


@dataclass(frozen=True)
class DitConfig:
    depth: int = 6
    embed_dim: int = 384
    heads: int = 6
    patch: int = 4
    encoder_blocks: int = 4
    decoder_blocks: int = 2
    sab: bool = True

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ConfigError(f"embed_dim {self.embed_dim} is not divisible by heads {self.heads}")
        if self.encoder_blocks + self.decoder_blocks != self.depth:
            raise ConfigError(
                f"encoder_blocks {self.encoder_blocks} + decoder_blocks {self.decoder_blocks} "
                f"!= depth {self.depth}")
        if self.encoder_blocks < 1 or self.decoder_blocks < 0 or self.patch < 1:
            raise ConfigError("need at least one encoder block and a positive patch size")

    @classmethod
    def for_depth(cls, depth, **kw):
        """Split ``depth`` into encoder/decoder blocks: 6 -> 4+2, 4 -> 3+1, 2 -> 1+1."""
        dec = max(1, depth // 3) if depth > 1 else 0
        return cls(depth=depth, encoder_blocks=depth - dec, decoder_blocks=dec, **kw)


@dataclass
class TokenSequence:
    tokens: Tensor  # (B, N, D)
    grid: tuple


def patchify_tensor(x, p):
    """(B, C, H, W) -> (B, (H/p)(W/p), C*p*p), patches in row-major grid order."""
    B, C, H, W = x.shape
    if H % p or W % p:
        raise ConfigError(f"spatial size {H}x{W} is not divisible by patch size {p}")
    gh, gw = H // p, W // p
    x = T.reshape(x, (B, C, gh, p, gw, p))
    x = T.transpose(x, (0, 2, 4, 1, 3, 5))
    return T.reshape(x, (B, gh * gw, C * p * p)), (gh, gw)


def unpatchify_tensor(tokens, grid, channels, p):
    B, N, _ = tokens.shape
    gh, gw = grid
    if N != gh * gw:
        raise ShapeError(f"{N} tokens do not fill a {gh}x{gw} grid")
    x = T.reshape(tokens, (B, gh, gw, channels, p, p))
    x = T.transpose(x, (0, 3, 1, 4, 2, 5))
    return T.reshape(x, (B, channels, gh * p, gw * p))


def patchify(x, p, proj=None, pos=None):
    tokens, grid = patchify_tensor(x, p)
    if proj is not None:
        tokens = proj(tokens)
    if pos is not None:
        tokens = tokens + pos
    return TokenSequence(tokens, grid)


def unpatchify(seq, channels, p):
    return unpatchify_tensor(seq.tokens, seq.grid, channels, p)


def sinusoidal_embedding(t, dim, max_period=10000.0):
    """First half sin, second half cos, over log-spaced frequencies."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb


def multihead_attention(q, k, v, heads, attn_log=None):
    """Token attention. q: (B, Nq, D); k, v: (B, Nk, D)."""
    B, Nq, D = q.shape
    Nk = k.shape[1]
    dh = D // heads

    def split(x, n):
        return T.transpose(T.reshape(x, (B, n, heads, dh)), (0, 2, 1, 3))

    qh, kh, vh = split(q, Nq), split(k, Nk), split(v, Nk)
    scores = T.scale(T.matmul(qh, T.swapaxes(kh, -1, -2)), 1.0 / math.sqrt(dh))
    attn = T.softmax(scores, axis=-1)
    if attn_log is not None:
        attn_log.append(attn)
    out = T.matmul(attn, vh)
    return T.reshape(T.transpose(out, (0, 2, 1, 3)), (B, Nq, D))


class TimestepEmbedder(Module):
    def __init__(self, rng, dim, num_timesteps):
        super().__init__()
        self.dim = dim
        self.num_timesteps = num_timesteps
        self.mlp = MLP(rng, dim, dim, dim)

    def forward(self, t):
        t = np.asarray(t).reshape(-1)
        if np.any(t < 0) or np.any(t >= self.num_timesteps):
            raise ContractError(f"timestep out of range [0, {self.num_timesteps}): {t}")
        return self.mlp(Tensor(sinusoidal_embedding(t, self.dim)))


def timestep_embed(t, embedder):
    return embedder(t)


class ViTBlock(Module):
    def __init__(self, rng, dim, heads, mlp_ratio=4):
        super().__init__()
        self.heads = heads
        self.norm1 = LayerNorm(dim)
        self.qkv = Linear(rng, dim, 3 * dim)
        self.proj = Linear(rng, dim, dim)
        self.norm2 = LayerNorm(dim)
        self.mlp = MLP(rng, dim, mlp_ratio * dim, dim)

    def forward(self, x, attn_log=None):
        D = x.shape[-1]
        qkv = self.qkv(self.norm1(x))
        q, k, v = qkv[..., :D], qkv[..., D:2 * D], qkv[..., 2 * D:]
        x = x + self.proj(multihead_attention(q, k, v, self.heads, attn_log))
        return x + self.mlp(self.norm2(x))


class SAB(Module):
    """Structure-guided attention.

    Structure tokens are fused into the features by token cross-attention;
    queries and keys come from the fused tokens, values from the features,
    and a D x D channel-attention map mixes the value channels.
    """

    def __init__(self, rng, dim, heads):
        super().__init__()
        self.heads = heads
        self.alpha = math.sqrt(dim)
        self.norm = LayerNorm(dim)
        self.norm_struct = LayerNorm(dim)
        self.fuse_q = Linear(rng, dim, dim)
        self.fuse_kv = Linear(rng, dim, 2 * dim)
        self.fuse_proj = Linear(rng, dim, dim)
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.out = Linear(rng, dim, dim)

    def forward(self, x, s_tokens, attn_log=None):
        if s_tokens.shape[:2] != x.shape[:2]:
            raise ShapeError(f"structure tokens {s_tokens.shape} do not match feature tokens {x.shape}")
        D = x.shape[-1]
        h = self.norm(x)
        kv = self.fuse_kv(self.norm_struct(s_tokens))
        cross = multihead_attention(self.fuse_q(h), kv[..., :D], kv[..., D:], self.heads)
        fused = h + self.fuse_proj(cross)
        q, k, v = self.q(fused), self.k(fused), self.v(h)
        scores = T.scale(T.matmul(T.swapaxes(k, 1, 2), q), 1.0 / self.alpha)
        attn = T.softmax(scores, axis=-1)
        if attn_log is not None:
            attn_log.append(attn)
        mixed = T.swapaxes(T.matmul(attn, T.swapaxes(v, 1, 2)), 1, 2)
        return x + self.out(mixed)


def vit_block(seq, block):
    return TokenSequence(block(seq.tokens), seq.grid)


def sab(seq, s_seq, block):
    if tuple(seq.grid) != tuple(s_seq.grid):
        raise ShapeError(f"token grids differ: {seq.grid} vs {s_seq.grid}")
    return TokenSequence(block(seq.tokens, s_seq.tokens), seq.grid)


class SDTBlock(Module):
    def __init__(self, rng, dim, heads, use_sab=True):
        super().__init__()
        self.vit = ViTBlock(rng, dim, heads)
        if use_sab:
            self.sab = SAB(rng, dim, heads)
        self.use_sab = use_sab

    def forward(self, x, s_tokens=None, attn_log=None):
        x = self.vit(x, attn_log)
        if self.use_sab:
            x = self.sab(x, s_tokens, attn_log)
        return x


class Denoiser(Module):
    """epsilon_theta(x_t, t | cond, structure): (B, 6, H, W) -> (B, 3, H, W)."""

    def __init__(self, rng, cfg, struct_channels, grid, num_timesteps, in_channels=6, out_channels=3):
        super().__init__()
        self.cfg = cfg
        self.grid = tuple(grid)
        self.out_channels = out_channels
        p, D = cfg.patch, cfg.embed_dim
        self.patch_embed = Linear(rng, in_channels * p * p, D)
        self.pos_embed = Tensor(
            (0.02 * rng.standard_normal((self.grid[0] * self.grid[1], D))).astype(get_dtype()),
            requires_grad=True)
        self.time_embed = TimestepEmbedder(rng, D, num_timesteps)
        if cfg.sab:
            self.struct_embed = Linear(rng, struct_channels * p * p, D)
        self.blocks = ModuleList(SDTBlock(rng, D, cfg.heads, cfg.sab) for _ in range(cfg.depth))
        self.skips = ModuleList(Linear(rng, 2 * D, D) for _ in range(cfg.decoder_blocks))
        self.final_norm = LayerNorm(D)
        self.head = Linear(rng, D, p * p * out_channels, zero_init=True)

    def positions(self, grid):
        if tuple(grid) == self.grid:
            return self.pos_embed
        # other resolutions reuse the nearest learned position
        gh, gw = self.grid
        rows = np.minimum((np.arange(grid[0]) * gh) // grid[0], gh - 1)
        cols = np.minimum((np.arange(grid[1]) * gw) // grid[1], gw - 1)
        idx = (rows[:, None] * gw + cols[None, :]).reshape(-1)
        return self.pos_embed[idx]

    def skip_source(self, j):
        """Index of the encoder cache merged into decoder block ``j`` (0-based)."""
        return max(self.cfg.encoder_blocks - (j + 1), 1) - 1

    def forward(self, x, t, s2=None, attn_log=None):
        if x.ndim == 3:
            x = T.reshape(x, (1,) + x.shape)
            s2 = T.reshape(s2, (1,) + s2.shape) if s2 is not None else None
            out = self.forward(x, t, s2, attn_log)
            return T.reshape(out, out.shape[1:])
        cfg = self.cfg
        tokens, grid = patchify_tensor(x, cfg.patch)
        B = x.shape[0]
        temb = self.time_embed(np.broadcast_to(np.asarray(t).reshape(-1), (B,)))
        h = self.patch_embed(tokens) + self.positions(grid) + T.reshape(temb, (B, 1, cfg.embed_dim))
        s_tokens = None
        if cfg.sab:
            if s2 is None:
                raise ContractError("structure map is required when SAB is enabled")
            st, sgrid = patchify_tensor(s2, cfg.patch)
            if sgrid != grid:
                raise ShapeError(f"structure grid {sgrid} does not match feature grid {grid}")
            s_tokens = self.struct_embed(st)
        caches = []
        blocks = list(self.blocks)
        for blk in blocks[:cfg.encoder_blocks]:
            h = blk(h, s_tokens, attn_log)
            caches.append(h)
        for j, blk in enumerate(blocks[cfg.encoder_blocks:]):
            h = self.skips[j](T.concat([h, caches[self.skip_source(j)]], axis=-1))
            h = blk(h, s_tokens, attn_log)
        out = self.head(self.final_norm(h))
        return unpatchify_tensor(out, grid, self.out_channels, cfg.patch)


def denoiser_forward(x, t, s2, denoiser):
    return denoiser(x, t, s2)
