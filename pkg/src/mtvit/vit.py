"""Shared transformer encoder: pre-norm MSA/MLP blocks, class token and head.

All functions accept token tensors of shape ``(..., N+1, d)``; the leading
axes are batch axes. Row 0 of the token axis is the class token.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    depth: int = 2
    dim: int = 64
    heads: int = 4
    mlp_ratio: int = 4
    classes: int = 10
    eps: float = 1e-6

    def __post_init__(self):
        if self.depth < 0 or self.dim < 1 or self.heads < 1 or self.mlp_ratio < 1 or self.classes < 1:
            raise ValueError(f"invalid encoder config {self}")
        if self.dim % self.heads:
            raise ValueError(f"dim {self.dim} is not divisible by heads {self.heads}")
        if self.eps <= 0:
            raise ValueError("layer-norm eps must be positive")

    @property
    def head_dim(self) -> int:
        return self.dim // self.heads


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) truncated to +-2 std by resampling."""
    z = rng.standard_normal(shape)
    bad = np.abs(z) > 2.0
    while bad.any():
        z[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(z) > 2.0
    return (z * std).astype(dtype)


def _param(data, name) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


@dataclass
class LayerParams:
    ln1_g: Tensor
    ln1_b: Tensor
    w_qkv: Tensor
    b_qkv: Tensor
    w_proj: Tensor
    b_proj: Tensor
    ln2_g: Tensor
    ln2_b: Tensor
    w_fc1: Tensor
    b_fc1: Tensor
    w_fc2: Tensor
    b_fc2: Tensor

    @classmethod
    def init(cls, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32) -> "LayerParams":
        d, h = cfg.dim, cfg.dim * cfg.mlp_ratio
        ones, zeros = (lambda n: np.ones(n, dtype)), (lambda n: np.zeros(n, dtype))
        return cls(
            ln1_g=_param(ones(d), "ln1_g"),
            ln1_b=_param(zeros(d), "ln1_b"),
            w_qkv=_param(trunc_normal(rng, (d, 3 * d), dtype=dtype), "w_qkv"),
            b_qkv=_param(zeros(3 * d), "b_qkv"),
            w_proj=_param(trunc_normal(rng, (d, d), dtype=dtype), "w_proj"),
            b_proj=_param(zeros(d), "b_proj"),
            ln2_g=_param(ones(d), "ln2_g"),
            ln2_b=_param(zeros(d), "ln2_b"),
            w_fc1=_param(trunc_normal(rng, (d, h), dtype=dtype), "w_fc1"),
            b_fc1=_param(zeros(h), "b_fc1"),
            w_fc2=_param(trunc_normal(rng, (h, d), dtype=dtype), "w_fc2"),
            b_fc2=_param(zeros(d), "b_fc2"),
        )

    def named(self) -> dict[str, Tensor]:
        return dict(vars(self))


@dataclass
class EncoderParams:
    """The single shared copy of encoder, class token, final norm and head."""

    config: EncoderConfig
    layers: list[LayerParams]
    cls_token: Tensor
    norm_g: Tensor
    norm_b: Tensor
    head_w: Tensor
    head_b: Tensor

    @classmethod
    def init(cls, cfg: EncoderConfig, rng: np.random.Generator, dtype=np.float32) -> "EncoderParams":
        d = cfg.dim
        layers = [LayerParams.init(cfg, rng, dtype) for _ in range(cfg.depth)]
        return cls(
            config=cfg,
            layers=layers,
            cls_token=_param(trunc_normal(rng, (1, d), dtype=dtype), "cls_token"),
            norm_g=_param(np.ones(d, dtype), "norm_g"),
            norm_b=_param(np.zeros(d, dtype), "norm_b"),
            head_w=_param(trunc_normal(rng, (d, cfg.classes), dtype=dtype), "head_w"),
            head_b=_param(np.zeros(cfg.classes, dtype), "head_b"),
        )

    def named_parameters(self, prefix: str = "encoder") -> dict[str, Tensor]:
        out = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.named().items():
                out[f"{prefix}.layer{i}.{k}"] = v
        for k in ("cls_token", "norm_g", "norm_b", "head_w", "head_b"):
            out[f"{prefix}.{k}"] = getattr(self, k)
        return out


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    y = T.matmul(x, w)
    return y + b if b is not None else y


def qkv_project(z: Tensor, w_qkv: Tensor, b_qkv: Tensor | None = None) -> tuple[Tensor, Tensor, Tensor]:
    """[Q, K, V] = Z W_qkv, split column-wise into three d-wide blocks."""
    d = z.shape[-1]
    if w_qkv.shape != (d, 3 * d):
        raise T.ShapeError(f"W_qkv must be ({d}, {3 * d}), got {w_qkv.shape}")
    qkv = linear(z, w_qkv, b_qkv)
    return qkv[..., :d], qkv[..., d : 2 * d], qkv[..., 2 * d :]


def self_attention(q: Tensor, k: Tensor, v: Tensor, head_dim: int, attn_maps: list | None = None) -> Tensor:
    """softmax(Q K^T / sqrt(head_dim)) V over the last two axes."""
    logits = T.matmul(q, k.T) * (1.0 / np.sqrt(head_dim))
    attn = T.softmax(logits, axis=-1)
    if attn_maps is not None:
        attn_maps.append(attn.data)
    return T.matmul(attn, v)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    *lead, n, d = x.shape
    x = x.reshape(*lead, n, heads, d // heads)
    nl = len(lead)
    return x.transpose(*range(nl), nl + 1, nl, nl + 2)


def _merge_heads(x: Tensor) -> Tensor:
    *lead, h, n, dh = x.shape
    nl = len(lead)
    x = x.transpose(*range(nl), nl + 1, nl, nl + 2)
    return x.reshape(*lead, n, h * dh)


def msa(z: Tensor, p: LayerParams, heads: int, attn_maps: list | None = None) -> Tensor:
    """Multi-head self-attention followed by the output projection."""
    d = z.shape[-1]
    if d % heads:
        raise ValueError(f"dim {d} is not divisible by heads {heads}")
    q, k, v = qkv_project(z, p.w_qkv, p.b_qkv)
    q, k, v = (_split_heads(t, heads) for t in (q, k, v))
    out = _merge_heads(self_attention(q, k, v, d // heads, attn_maps))
    return linear(out, p.w_proj, p.b_proj)


def mlp_block(z: Tensor, p: LayerParams) -> Tensor:
    return linear(T.gelu(linear(z, p.w_fc1, p.b_fc1)), p.w_fc2, p.b_fc2)


def encoder_layer(z: Tensor, p: LayerParams, cfg: EncoderConfig, attn_maps: list | None = None) -> Tensor:
    z = z + msa(T.layer_norm(z, p.ln1_g, p.ln1_b, cfg.eps), p, cfg.heads, attn_maps)
    return z + mlp_block(T.layer_norm(z, p.ln2_g, p.ln2_b, cfg.eps), p)


def encode_and_classify(z: Tensor, params: EncoderParams, attn_maps: list | None = None) -> Tensor:
    """Run all layers, the final layer norm, and the head on the class-token row.

    ``z`` is ``(N+1, d)`` or ``(B, N+1, d)``; returns ``(m,)`` or ``(B, m)`` logits.
    """
    cfg = params.config
    if z.shape[-1] != cfg.dim:
        raise T.ShapeError(f"token width {z.shape[-1]} != encoder dim {cfg.dim}")
    for layer in params.layers:
        z = encoder_layer(z, layer, cfg, attn_maps)
    cls_row = z[..., 0, :]
    return linear(T.layer_norm(cls_row, params.norm_g, params.norm_b, cfg.eps), params.head_w, params.head_b)
