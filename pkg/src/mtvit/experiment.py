"""Desk-scale accuracy/FLOPs trade-off study over lambda and seeds."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from .config import RunConfig
from .data import gen_data
from .train import Datasets, build_model, evaluate, finetune, mean_selected_cost, pretrain

log = logging.getLogger(__name__)


@dataclass
class SeedResult:
    seed: int
    longest_accuracy: float  # pretrained backbone, every image on the longest tail
    longest_flops: float
    lams: list[float]
    accuracy: list[float]  # dynamic routing after finetuning at each lambda
    mean_cost: list[float]
    overall_flops: list[float]
    usage: list[list[int]]

    def at(self, lam: float) -> int:
        return self.lams.index(lam)

    def cost_strictly_decreasing(self) -> bool:
        c = self.mean_cost
        return all(b < a for a, b in zip(c, c[1:]))


def run_seed(
    cfg: RunConfig,
    lams: Sequence[float],
    work_dir: str | Path,
    train_count: int = 3000,
    test_count: int = 1000,
) -> SeedResult:
    """Generate data, pretrain once, then finetune a copy per lambda (ascending)."""
    lams = sorted(float(x) for x in lams)
    work = Path(work_dir) / f"seed{cfg.seed}"
    gen_data(cfg.seed, train_count, work / "data", test_count=test_count)
    cfg = cfg.replace(data_dir=str(work / "data"))
    data = Datasets.load(cfg.data_dir)
    model, _ = pretrain(cfg, data, work)
    state = checkpoint.state_of(model)
    longest = evaluate(cfg, model, data, force_tail=model.k - 1)
    res = SeedResult(cfg.seed, longest.accuracy, longest.overall_flops, lams, [], [], [], [])
    for lam in lams:
        run = cfg.replace(lam=lam)
        m = build_model(run)
        checkpoint.restore(m, state)
        finetune(run, m, data)
        ev = evaluate(run, m, data)
        res.accuracy.append(ev.accuracy)
        res.mean_cost.append(mean_selected_cost(run, ev.usage))
        res.overall_flops.append(ev.overall_flops)
        res.usage.append(list(ev.usage))
        log.info("seed %d lambda %g: acc %.4f usage %s cost %.3f", cfg.seed, lam, ev.accuracy, ev.usage, res.mean_cost[-1])
    return res


@dataclass
class TradeoffSummary:
    seeds: list[SeedResult]
    lam: float  # the operating point compared against the longest tail

    @property
    def mean_cost(self) -> np.ndarray:
        return np.mean([s.mean_cost for s in self.seeds], axis=0)

    @property
    def accuracy_gap(self) -> float:
        """Seed-mean dynamic accuracy minus seed-mean longest-tail accuracy, in points."""
        dyn = np.mean([s.accuracy[s.at(self.lam)] for s in self.seeds])
        ref = np.mean([s.longest_accuracy for s in self.seeds])
        return float(100.0 * (dyn - ref))

    @property
    def flops_saving(self) -> float:
        """Fractional saving of seed-mean overall FLOPs against always-longest."""
        dyn = np.mean([s.overall_flops[s.at(self.lam)] for s in self.seeds])
        ref = np.mean([s.longest_flops for s in self.seeds])
        return float(1.0 - dyn / ref)

    def trend_ok(self) -> bool:
        c = self.mean_cost
        return all(s.cost_strictly_decreasing() for s in self.seeds) and bool(np.all(np.diff(c) < 0))

    def lines(self) -> list[str]:
        out = []
        for s in self.seeds:
            out.append(
                f"seed {s.seed}: longest acc {s.longest_accuracy:.4f}; "
                + "; ".join(
                    f"lam {lam:g} acc {a:.4f} cost {c:.3f} flops/longest {f / s.longest_flops:.3f}"
                    for lam, a, c, f in zip(s.lams, s.accuracy, s.mean_cost, s.overall_flops)
                )
            )
        out.append(f"mean cost by lambda {np.round(self.mean_cost, 4).tolist()}")
        out.append(f"lam {self.lam:g}: accuracy gap {self.accuracy_gap:+.2f} points, FLOPs saving {100 * self.flops_saving:.1f}%")
        return out


def tradeoff_study(
    cfg: RunConfig,
    seeds: Sequence[int] = (0, 1, 2),
    lams: Sequence[float] = (0.0, 0.5, 2.0),
    work_dir: str | Path = "tradeoff",
    operating_lam: float = 0.5,
    train_count: int = 3000,
    test_count: int = 1000,
) -> TradeoffSummary:
    results = [run_seed(cfg.replace(seed=s), lams, work_dir, train_count, test_count) for s in seeds]
    return TradeoffSummary(results, float(operating_lam))
