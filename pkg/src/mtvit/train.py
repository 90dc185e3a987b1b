"""Two-phase training (all-tail pretraining, then joint finetuning with the
predictor), dynamic evaluation, hyper-parameter sweeps and metric logging."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import checkpoint
from . import tensor as T
from .config import RunConfig
from .data import SyntheticDataset, read_dataset
from .flops import BackboneSpec, overall_flops
from .objective import classification_loss, flops_regularization, pretrain_loss, total_loss, weighted_prediction
from .optim import cosine_lr, make_optimizer
from .selector import Decision, gumbel_sample, straight_through, temperature
from .tails import MultiTailViT, multi_tail_forward

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("phase", "epoch", "loss", "accuracy", "usage", "overall_flops", "lam", "alpha", "tau")
CURVE_COLUMNS = ("lam", "alpha", "accuracy", "overall_flops", "mean_cost")
EVAL_BATCH = 250


class TrainingError(RuntimeError):
    pass


@dataclass
class MetricsRow:
    phase: str
    epoch: int
    loss: float
    accuracy: float
    usage: list[int]
    overall_flops: float
    lam: float
    alpha: float
    tau: float

    def as_csv(self) -> list[str]:
        return [
            self.phase,
            str(self.epoch),
            repr(float(self.loss)),
            repr(float(self.accuracy)),
            ";".join(str(int(n)) for n in self.usage),
            repr(float(self.overall_flops)),
            repr(float(self.lam)),
            repr(float(self.alpha)),
            repr(float(self.tau)),
        ]


class MetricsLog:
    """Append-only CSV with a fixed header."""

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        self.rows: list[MetricsRow] = []
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            if not self.path.exists() or self.path.stat().st_size == 0:
                with open(self.path, "w", newline="") as f:
                    csv.writer(f, lineterminator="\n").writerow(METRIC_COLUMNS)

    def append(self, row: MetricsRow) -> None:
        self.rows.append(row)
        if self.path is not None:
            with open(self.path, "a", newline="") as f:
                csv.writer(f, lineterminator="\n").writerow(row.as_csv())


@dataclass
class Datasets:
    train: SyntheticDataset
    test: SyntheticDataset
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def load(cls, data_dir: str | Path) -> "Datasets":
        d = Path(data_dir)
        return cls(read_dataset(d / "train"), read_dataset(d / "test"))

    def x(self, split: str) -> np.ndarray:
        if split not in self._cache:
            self._cache[split] = getattr(self, split).floats()
        return self._cache[split]

    def y(self, split: str) -> np.ndarray:
        return getattr(self, split).labels.astype(np.int64)


def backbone_spec(cfg: RunConfig) -> BackboneSpec:
    return BackboneSpec("run", cfg.encoder_config(), cfg.tails(), (cfg.image_size, cfg.image_size))


def build_model(cfg: RunConfig) -> MultiTailViT:
    return MultiTailViT.init(cfg.encoder_config(), cfg.tails(), (cfg.image_size, cfg.image_size), 3, seed=cfg.seed)


def load_model(cfg: RunConfig, path: str | Path) -> MultiTailViT:
    model = build_model(cfg)
    checkpoint.restore(model, checkpoint.load(path))
    return model


def _batches(n: int, batch: int, rng: np.random.Generator | None):
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for s in range(0, n, batch):
        yield order[s : s + batch]


def _check_finite(loss: T.Tensor, phase: str, epoch: int, step: int) -> None:
    if not np.isfinite(loss.data).all():
        raise TrainingError(f"{phase}: non-finite loss {loss.item()} at epoch {epoch}, step {step}")


# -- evaluation ------------------------------------------------------------------------
def tail_accuracy(model: MultiTailViT, x: np.ndarray, y: np.ndarray, tail: int) -> float:
    with T.no_grad():
        pred = np.concatenate([model.branch(x[b], tail).data.argmax(-1) for b in _batches(len(y), EVAL_BATCH, None)])
    return float((pred == y).mean())


def route(model: MultiTailViT, x: np.ndarray) -> np.ndarray:
    """Deterministic eval routing: argmax of the predictor distribution."""
    with T.no_grad():
        return np.concatenate(
            [model.predictor_logits(x[b]).data.argmax(-1) for b in _batches(len(x), EVAL_BATCH, None)]
        )


def evaluate(
    cfg: RunConfig,
    model: MultiTailViT,
    data: Datasets,
    split: str = "test",
    force_tail: int | None = None,
    phase: str = "eval",
    epoch: int = 0,
    tau: float = 0.0,
) -> MetricsRow:
    """Accuracy, per-tail usage and overall FLOPs with hard routing.

    Only the selected branch runs for each image. With ``force_tail`` the
    predictor is bypassed and its cost is not charged.
    """
    x, y = data.x(split), data.y(split)
    k = model.k
    if force_tail is None:
        idx = route(model, x)
        pred_cost = backbone_spec(cfg).predictor_cost()
    else:
        idx = np.full(len(y), force_tail)
        pred_cost = 0.0
    preds = np.empty(len(y), dtype=np.int64)
    for b in _batches(len(y), EVAL_BATCH, None):
        dec = Decision.forced(idx[b], len(b), k)
        preds[b] = multi_tail_forward(model, x[b], dec, mode="infer").data.argmax(-1)
    usage = np.bincount(idx, minlength=k)
    report = overall_flops(backbone_spec(cfg).per_tail_flops(), usage, pred_cost)
    return MetricsRow(
        phase, epoch, float("nan"), float((preds == y).mean()), usage.tolist(), report.overall, cfg.lam, cfg.alpha, tau
    )


def mean_selected_cost(cfg: RunConfig, usage: Sequence[int]) -> float:
    rep = overall_flops(backbone_spec(cfg).per_tail_flops(), usage)
    return float((rep.normalized_costs * rep.usage).sum() / rep.usage.sum())


# -- phase 1 --------------------------------------------------------------------------
def pretrain(
    cfg: RunConfig,
    data: Datasets | None = None,
    out_dir: str | Path | None = None,
    model: MultiTailViT | None = None,
) -> tuple[MultiTailViT, list[MetricsRow]]:
    """Train encoder and every tail on the sum of per-tail losses; predictor untouched."""
    data = data or Datasets.load(cfg.data_dir)
    model = model or build_model(cfg)
    metrics = MetricsLog(Path(out_dir) / "metrics_pretrain.csv" if out_dir else None)
    params = list(model.backbone_parameters().values())
    opt = make_optimizer(cfg.optimizer, params, cfg.lr, cfg.momentum, cfg.weight_decay)
    x, y = data.x("train"), data.y("train")
    steps_per_epoch = math.ceil(len(y) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs_pretrain
    spec = backbone_spec(cfg)
    step = 0
    for epoch in range(cfg.epochs_pretrain):
        rng = np.random.default_rng([cfg.seed, 1, epoch])
        losses = []
        for b in _batches(len(y), cfg.batch_size, rng):
            opt.lr = cosine_lr(cfg.lr, step, total, cfg.warmup_epochs * steps_per_epoch)
            loss = pretrain_loss([model.branch(x[b], i) for i in range(model.k)], y[b])
            _check_finite(loss, "pretrain", epoch, step)
            opt.zero_grad()
            loss.backward()
            opt.step()
            losses.append(loss.item())
            step += 1
        train_loss = float(np.mean(losses))
        for i in range(model.k):
            acc = tail_accuracy(model, data.x("test"), data.y("test"), i)
            usage = [0] * model.k
            usage[i] = len(data.test)
            flops = overall_flops(spec.per_tail_flops(), usage).overall
            metrics.append(MetricsRow(f"pretrain/tail{i}", epoch, train_loss, acc, usage, flops, cfg.lam, cfg.alpha, 0.0))
        log.info("pretrain epoch %d loss %.4f", epoch, train_loss)
    if out_dir:
        checkpoint.save(checkpoint.state_of(model), Path(out_dir) / "pretrain.mtvt")
    return model, metrics.rows


# -- phase 2 --------------------------------------------------------------------------
def finetune_step(
    model: MultiTailViT,
    x: np.ndarray,
    y: np.ndarray,
    costs: np.ndarray,
    lam: float,
    alpha: float,
    tau: float,
    rng: np.random.Generator,
) -> tuple[T.Tensor, Decision]:
    """Routed forward and the total loss for one batch (no parameter update)."""
    log_zeta = T.log_softmax(model.predictor_logits(x), axis=-1)
    decision = gumbel_sample(None, tau, rng, log_zeta=log_zeta)
    weights = straight_through(decision)
    logits = weighted_prediction(weights, [model.branch(x, i) for i in range(model.k)])
    loss = total_loss(classification_loss(logits, y), flops_regularization(weights, costs, alpha), lam)
    return loss, decision


def finetune(
    cfg: RunConfig,
    model: MultiTailViT,
    data: Datasets | None = None,
    out_dir: str | Path | None = None,
) -> tuple[MultiTailViT, list[MetricsRow]]:
    """Jointly optimize backbone and predictor on L_cls + lambda * L_f."""
    data = data or Datasets.load(cfg.data_dir)
    metrics = MetricsLog(Path(out_dir) / "metrics_finetune.csv" if out_dir else None)
    spec = backbone_spec(cfg)
    costs = spec.report().normalized_costs
    cfg.loss_config(costs)  # validates lambda / alpha / costs
    backbone = make_optimizer(cfg.optimizer, list(model.backbone_parameters().values()), cfg.finetune_lr, cfg.momentum, cfg.weight_decay)
    predictor = make_optimizer(cfg.optimizer, list(model.predictor_parameters().values()), cfg.predictor_lr, cfg.momentum, 0.0)
    x, y = data.x("train"), data.y("train")
    steps_per_epoch = math.ceil(len(y) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs_finetune
    schedule = cfg.schedule()
    sample_rng = np.random.default_rng([cfg.seed, 3])
    step = 0
    for epoch in range(cfg.epochs_finetune):
        tau = temperature(schedule, epoch, cfg.epochs_finetune)
        rng = np.random.default_rng([cfg.seed, 2, epoch])
        losses, picks = [], np.zeros(model.k, dtype=np.int64)
        for b in _batches(len(y), cfg.batch_size, rng):
            backbone.lr = cosine_lr(cfg.finetune_lr, step, total)
            predictor.lr = cosine_lr(cfg.predictor_lr, step, total)
            loss, decision = finetune_step(model, x[b], y[b], costs, cfg.lam, cfg.alpha, tau, sample_rng)
            _check_finite(loss, "finetune", epoch, step)
            backbone.zero_grad()
            predictor.zero_grad()
            loss.backward()
            backbone.step()
            predictor.step()
            losses.append(loss.item())
            picks += np.bincount(decision.index, minlength=model.k)
            step += 1
        row = evaluate(cfg, model, data, phase="finetune", epoch=epoch, tau=tau)
        row.loss = float(np.mean(losses))
        metrics.append(row)
        log.info("finetune epoch %d tau %.3f loss %.4f acc %.4f usage %s train-picks %s",
                 epoch, tau, row.loss, row.accuracy, row.usage, picks.tolist())
    if out_dir:
        checkpoint.save(checkpoint.state_of(model), Path(out_dir) / "finetune.mtvt")
    return model, metrics.rows


# -- sweeps ---------------------------------------------------------------------------
def curve(
    cfg: RunConfig,
    pretrained: str | Path | dict,
    lams: Sequence[float],
    alphas: Sequence[float],
    data: Datasets | None = None,
    out_csv: str | Path | None = None,
) -> list[dict]:
    """Finetune + evaluate from the same pretrained weights for each (lambda, alpha)."""
    data = data or Datasets.load(cfg.data_dir)
    state = checkpoint.load(pretrained) if not isinstance(pretrained, dict) else pretrained
    rows = []
    for lam in lams:
        for alpha in alphas:
            run = cfg.replace(lam=float(lam), alpha=float(alpha))
            model = build_model(run)
            checkpoint.restore(model, state)
            finetune(run, model, data)
            ev = evaluate(run, model, data)
            rows.append(
                dict(lam=run.lam, alpha=run.alpha, accuracy=ev.accuracy, overall_flops=ev.overall_flops,
                     mean_cost=mean_selected_cost(run, ev.usage))
            )
    if out_csv is not None:
        write_curve(rows, out_csv)
    return rows


def write_curve(rows: Sequence[dict], path: str | Path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CURVE_COLUMNS)
        for r in rows:
            w.writerow([repr(float(r[c])) for c in CURVE_COLUMNS])


def curve_trend_ok(rows: Sequence[dict], tol: float = 0.0) -> bool:
    """True when overall FLOPs are non-increasing in lambda for every alpha."""
    ok = True
    for alpha in sorted({r["alpha"] for r in rows}):
        col = sorted((r for r in rows if r["alpha"] == alpha), key=lambda r: r["lam"])
        ok &= all(b["overall_flops"] <= a["overall_flops"] + tol for a, b in zip(col, col[1:]))
    return bool(ok)
