"""Analytic FLOPs accounting for multi-tailed ViTs.

Encoder costs use the dominant-term model (attention projections, attention
products, MLP); layer norms, biases and the head are ignored. Counts are exact
Python integers. The sequence length passed to the encoder formulas includes
the class token.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .tails import DESK_TAILS, PAPER_TAILS, TailConfig
from .vit import EncoderConfig


def msa_flops(n: int, d: int) -> int:
    """4 N d^2 + 2 N^2 d for a length-N sequence of width d."""
    _positive(n=n, d=d)
    return 4 * n * d * d + 2 * n * n * d


def mlp_flops(n: int, d: int, r: int) -> int:
    _positive(n=n, d=d, r=r)
    return 2 * n * d * d * r


def encoder_flops(depth: int, n: int, d: int, r: int) -> int:
    _positive(depth=depth, n=n, d=d, r=r)
    return depth * (msa_flops(n, d) + mlp_flops(n, d, r))


def soft_split_tokens(h: int, w: int, k: int, p: int, s: int) -> int:
    """Token count of an overlapping unfold with kernel p, overlap s, padding k."""
    if not p > s >= 0:
        raise ValueError(f"soft split needs p > s >= 0, got p={p}, s={s}")
    if k < 0 or h + 2 * k < p or w + 2 * k < p:
        raise ValueError(f"padded input {h}x{w} (k={k}) smaller than kernel {p}")
    step = p - s
    return ((h + 2 * k - p) // step + 1) * ((w + 2 * k - p) // step + 1)


def soft_split_chain(side: int, stages: Sequence[tuple[int, int, int]]) -> list[int]:
    """Per-side token grid after each (k, p, s) stage, starting from a square image."""
    sides = []
    for k, p, s in stages:
        n = soft_split_tokens(side, side, k, p, s)
        side = int(round(np.sqrt(n)))
        sides.append(side)
    return sides


def tail_flops(tail: TailConfig, d: int, c: int = 3) -> int:
    """Patch projection cost 2 * N * (p^2 c) * d; any resize is ignored."""
    return 2 * tail.tokens * tail.patch_size**2 * c * d


def conv_flops(h_out: int, w_out: int, k: int, c_in: int, c_out: int) -> int:
    return 2 * h_out * w_out * k * k * c_in * c_out


def predictor_flops(image_hw: tuple[int, int], channels: int, k: int) -> int:
    """Cost of the two-conv tail predictor (convs, pooling adds, linear)."""
    h, w = image_hw
    f = conv_flops(h, w, 3, channels, 8) + h * w * 8
    f += conv_flops(h // 2, w // 2, 3, 8, 16) + (h // 2) * (w // 2) * 16
    f += 2 * (h // 4) * (w // 4) * 16 * k
    return f


def normalized_costs(per_tail) -> np.ndarray:
    f = np.asarray(per_tail, dtype=np.float64)
    return f / f.max()


@dataclass
class FlopsReport:
    per_tail_flops: np.ndarray
    normalized_costs: np.ndarray
    predictor_flops: float
    usage: np.ndarray
    overall: float


def overall_flops(per_tail, usage, predictor: float = 0.0) -> FlopsReport:
    """Usage-weighted mean of per-tail FLOPs plus the predictor's cost."""
    f = np.asarray(per_tail, dtype=np.float64)
    n = np.asarray(usage, dtype=np.float64)
    if f.shape != n.shape:
        raise ValueError(f"{f.size} tail costs but {n.size} usage counts")
    if (n < 0).any() or n.sum() <= 0:
        raise ValueError("total tail usage must be positive")
    overall = float((f * n).sum() / n.sum() + predictor)
    return FlopsReport(f, normalized_costs(f), float(predictor), n, overall)


@dataclass
class BackboneSpec:
    name: str
    encoder: EncoderConfig
    tails: tuple[TailConfig, ...]
    image_hw: tuple[int, int] = (32, 32)
    channels: int = 3
    predictor: float | None = None  # fixed cost; computed from the CNN when None

    def __post_init__(self):
        n = [t.tokens for t in self.tails]
        if any(b <= a for a, b in zip(n, n[1:])):
            raise ValueError(f"tail token counts must be strictly increasing, got {n}")

    def encoder_flops(self) -> list[int]:
        e = self.encoder
        return [encoder_flops(e.depth, t.tokens + 1, e.dim, e.mlp_ratio) for t in self.tails]

    def per_tail_flops(self) -> list[int]:
        e = self.encoder
        return [f + tail_flops(t, e.dim, self.channels) for f, t in zip(self.encoder_flops(), self.tails)]

    def predictor_cost(self) -> float:
        if self.predictor is not None:
            return self.predictor
        return predictor_flops(self.image_hw, self.channels, len(self.tails))

    def report(self, usage=None) -> FlopsReport:
        usage = np.ones(len(self.tails)) if usage is None else usage
        return overall_flops(self.per_tail_flops(), usage, self.predictor_cost())

    def table(self) -> list[dict]:
        e = self.encoder
        f = self.per_tail_flops()
        c = normalized_costs(f)
        return [
            dict(tail=i, N=t.tokens, d=e.dim, L=e.depth, r=e.mlp_ratio, flops=fi, normalized_cost=float(ci))
            for i, (t, fi, ci) in enumerate(zip(self.tails, f, c))
        ]


CSV_COLUMNS = ("tail", "N", "d", "L", "r", "flops", "normalized_cost")


def table_csv(spec: BackboneSpec) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in spec.table():
        w.writerow({**row, "normalized_cost": f"{row['normalized_cost']:.6f}"})
    return buf.getvalue()


def table_text(spec: BackboneSpec) -> str:
    lines = [f"{spec.name}", f"{'tail':>4} {'N':>5} {'d':>5} {'L':>3} {'r':>3} {'GFLOPs':>10} {'cost':>8}"]
    for row in spec.table():
        lines.append(
            f"{row['tail']:>4} {row['N']:>5} {row['d']:>5} {row['L']:>3} {row['r']:>3} "
            f"{row['flops'] / 1e9:>10.4f} {row['normalized_cost']:>8.4f}"
        )
    lines.append(f"predictor: {spec.predictor_cost() / 1e9:.4f} GFLOPs")
    return "\n".join(lines)


PRESETS = {
    "deit-ti": BackboneSpec("DeiT-Ti", EncoderConfig(12, 192, 3, 4, 1000), PAPER_TAILS, (224, 224), 3, 0.06e9),
    "deit-s": BackboneSpec("DeiT-S", EncoderConfig(12, 384, 6, 4, 1000), PAPER_TAILS, (224, 224), 3, 0.06e9),
    "deit-b": BackboneSpec("DeiT-B", EncoderConfig(12, 768, 12, 4, 1000), PAPER_TAILS, (224, 224), 3, 0.06e9),
    "desk": BackboneSpec("desk", EncoderConfig(), DESK_TAILS),
}

# (k, p, s) per soft-split stage of T2T tails on 224x224 inputs. No nonnegative
# padding turns the short tail's p=[14,3,3], s=[7,1,1] into a 7x7 grid, so it is omitted.
T2T_STAGES = {
    "middle": ((2, 11, 5), (1, 3, 1), (1, 3, 1)),
    "long": ((2, 7, 3), (1, 3, 1), (1, 3, 1)),
}


def _positive(**kw):
    for k, v in kw.items():
        if v < 1:
            raise ValueError(f"{k} must be >= 1, got {v}")
