"""Image-to-token tails and the multi-tailed model built on one shared encoder."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .objective import weighted_prediction
from .selector import Decision, PredictorParams, check_one_hot, predictor_logits, straight_through
from .tensor import Tensor
from .vit import EncoderConfig, EncoderParams, encode_and_classify, trunc_normal


class ConfigError(ValueError):
    """Invalid tail / model configuration."""


@dataclass(frozen=True)
class TailConfig:
    patch_size: int
    grid: int
    resize_to: tuple[int, int] | None = None

    @property
    def tokens(self) -> int:
        return self.grid * self.grid

    def validate(self, h: int, w: int) -> None:
        if self.resize_to is not None:
            h, w = self.resize_to
        p = self.patch_size
        if h % p or w % p or h // p != self.grid or w // p != self.grid:
            raise ConfigError(f"image {h}x{w} with patch {p} does not give a {self.grid}x{self.grid} grid")


# Desk-scale tails for 32x32 inputs and the 224-pixel preset used for cost validation.
DESK_TAILS = (TailConfig(16, 2), TailConfig(8, 4), TailConfig(4, 8))
PAPER_TAILS = (TailConfig(32, 7), TailConfig(23, 10, resize_to=(230, 230)), TailConfig(16, 14))


@dataclass
class TailParams:
    proj_w: Tensor
    proj_b: Tensor
    pos: Tensor

    @classmethod
    def init(cls, tail: TailConfig, channels: int, dim: int, rng: np.random.Generator, dtype=np.float32):
        fan_in = tail.patch_size**2 * channels
        return cls(
            proj_w=Tensor(trunc_normal(rng, (fan_in, dim), dtype=dtype), requires_grad=True, name="proj_w"),
            proj_b=Tensor(np.zeros(dim, dtype), requires_grad=True, name="proj_b"),
            pos=Tensor(trunc_normal(rng, (tail.tokens + 1, dim), dtype=dtype), requires_grad=True, name="pos"),
        )


def extract_patches(images, p: int) -> Tensor:
    """Non-overlapping p x p patches in row-major order, each flattened as (py, px, c).

    ``images`` is (h, w, c) or (B, h, w, c); returns (N, p*p*c) or (B, N, p*p*c).
    """
    x = np.asarray(images.data if isinstance(images, Tensor) else images)
    single = x.ndim == 3
    if single:
        x = x[None]
    b, h, w, c = x.shape
    if h % p or w % p:
        raise ConfigError(f"image {h}x{w} is not divisible by patch size {p}")
    gh, gw = h // p, w // p
    patches = x.reshape(b, gh, p, gw, p, c).transpose(0, 1, 3, 2, 4, 5).reshape(b, gh * gw, p * p * c)
    return Tensor(patches[0] if single else patches)


def prepare_images(images, tail: TailConfig) -> np.ndarray:
    x = np.asarray(images.data if isinstance(images, Tensor) else images)
    if tail.resize_to is not None and x.shape[-3:-1] != tuple(tail.resize_to):
        x = T.bilinear_resize(x, *tail.resize_to).astype(x.dtype)
    return x


def tail_forward(images, tail: TailConfig, params: TailParams, cls_token: Tensor) -> Tensor:
    """Tokens (B, N+1, d): class token row followed by projected patches, plus positions."""
    x = prepare_images(images, tail)
    single = x.ndim == 3
    if single:
        x = x[None]
    tail.validate(x.shape[1], x.shape[2])
    patches = extract_patches(x.astype(params.proj_w.dtype, copy=False), tail.patch_size)
    b, n, _ = patches.shape
    emb = T.matmul(patches.reshape(b * n, -1), params.proj_w).reshape(b, n, -1) + params.proj_b
    cls = T.broadcast_to(cls_token.reshape(1, 1, -1), (b, 1, cls_token.shape[-1]))
    z = T.concat([cls, emb], axis=1) + params.pos
    return z[0] if single else z


@dataclass
class MultiTailViT:
    """K tails feeding one shared encoder/head, plus an optional tail predictor."""

    encoder: EncoderParams
    tails: tuple[TailConfig, ...]
    tail_params: list[TailParams]
    image_hw: tuple[int, int]
    channels: int
    predictor: PredictorParams | None = None
    branch_images: list[int] = field(default_factory=list)

    def __post_init__(self):
        if not self.branch_images:
            self.branch_images = [0] * len(self.tails)

    @classmethod
    def init(
        cls,
        cfg: EncoderConfig,
        tails: Sequence[TailConfig],
        image_hw: tuple[int, int] = (32, 32),
        channels: int = 3,
        seed: int = 0,
        dtype=np.float32,
        with_predictor: bool = True,
    ) -> "MultiTailViT":
        rng = np.random.default_rng(seed)
        for t in tails:
            t.validate(*image_hw)
        encoder = EncoderParams.init(cfg, rng, dtype)
        tail_params = [TailParams.init(t, channels, cfg.dim, rng, dtype) for t in tails]
        predictor = PredictorParams.init(image_hw, channels, len(tails), rng, dtype) if with_predictor else None
        return cls(encoder, tuple(tails), tail_params, tuple(image_hw), channels, predictor)

    @property
    def k(self) -> int:
        return len(self.tails)

    def backbone_parameters(self) -> dict[str, Tensor]:
        out = self.encoder.named_parameters()
        for i, tp in enumerate(self.tail_params):
            for name, t in vars(tp).items():
                out[f"tail{i}.{name}"] = t
        return out

    def predictor_parameters(self) -> dict[str, Tensor]:
        return self.predictor.named_parameters() if self.predictor is not None else {}

    def named_parameters(self) -> dict[str, Tensor]:
        return {**self.backbone_parameters(), **self.predictor_parameters()}

    def branch(self, images, i: int, attn_maps: list | None = None) -> Tensor:
        """Logits of tail ``i`` through the shared encoder, shape (B, m)."""
        z = tail_forward(images, self.tails[i], self.tail_params[i], self.encoder.cls_token)
        self.branch_images[i] += z.shape[0] if z.ndim == 3 else 1
        return encode_and_classify(z, self.encoder, attn_maps)

    def predictor_logits(self, images) -> Tensor:
        if self.predictor is None:
            raise ConfigError("model has no tail predictor")
        return predictor_logits(images, self.predictor)


def multi_tail_forward(model: MultiTailViT, images, decision: Decision, mode: str = "train") -> Tensor:
    """Routed logits sum_i D_i f_i(x).

    ``train`` evaluates every branch and mixes them with straight-through
    weights; ``infer`` runs only the selected branch per image.
    """
    hard = np.asarray(decision.hard)
    if hard.ndim == 1:
        hard = hard[None]
    if hard.shape[-1] != model.k:
        raise ValueError(f"decision has {hard.shape[-1]} entries for {model.k} tails")
    check_one_hot(hard)
    x = np.asarray(images.data if isinstance(images, Tensor) else images)
    if mode == "train":
        logits = [model.branch(x, i) for i in range(model.k)]
        weights = straight_through(Decision(hard.astype(logits[0].dtype), decision.soft, decision.tau))
        return weighted_prediction(weights, logits)
    if mode != "infer":
        raise ValueError(f"unknown mode {mode!r}")
    idx = hard.argmax(axis=-1)
    out = None
    for i in range(model.k):
        rows = np.flatnonzero(idx == i)
        if rows.size == 0:
            continue
        with T.no_grad():
            f = model.branch(x[rows], i).data
        if out is None:
            out = np.zeros((len(idx), f.shape[-1]), dtype=f.dtype)
        out[rows] = f
    return Tensor(out)
