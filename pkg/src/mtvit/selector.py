"""Tail predictor and differentiable tail sampling (Gumbel-max + straight-through)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor
from .vit import trunc_normal

GUMBEL_EPS = 1e-12


@dataclass
class Decision:
    """A batch of K-way tail choices.

    ``hard`` is one-hot with shape (B, K); ``soft`` is the Gumbel-Softmax
    relaxation produced from the same noise (``None`` for externally forced
    decisions, which carry no gradient).
    """

    hard: np.ndarray
    soft: Tensor | None = None
    tau: float | None = None

    @property
    def index(self) -> np.ndarray:
        return self.hard.argmax(axis=-1)

    @classmethod
    def forced(cls, index, batch: int, k: int) -> "Decision":
        idx = np.broadcast_to(np.asarray(index, dtype=np.int64), (batch,))
        hard = np.zeros((batch, k), dtype=np.float32)
        hard[np.arange(batch), idx] = 1.0
        return cls(hard=hard)


def check_one_hot(hard: np.ndarray) -> None:
    hard = np.asarray(hard)
    ok = np.isin(hard, (0.0, 1.0)).all() and (hard.sum(axis=-1) == 1).all()
    if not ok:
        raise ValueError("hard decision must be exactly one-hot in every row")


@dataclass
class PredictorParams:
    """conv3x3(c->8) - relu - pool2 - conv3x3(8->16) - relu - pool2 - linear -> K."""

    conv1_w: Tensor
    conv1_b: Tensor
    conv2_w: Tensor
    conv2_b: Tensor
    fc_w: Tensor
    fc_b: Tensor

    @classmethod
    def init(cls, image_hw: tuple[int, int], channels: int, k: int, rng: np.random.Generator, dtype=np.float32):
        h, w = image_hw
        if h % 4 or w % 4:
            raise ValueError(f"predictor needs image sides divisible by 4, got {image_hw}")
        flat = (h // 4) * (w // 4) * 16

        def he(fan_in, fan_out):
            return (rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)).astype(dtype)

        p = lambda a, n: Tensor(a, requires_grad=True, name=n)  # noqa: E731
        return cls(
            conv1_w=p(he(9 * channels, 8), "conv1_w"),
            conv1_b=p(np.zeros(8, dtype), "conv1_b"),
            conv2_w=p(he(9 * 8, 16), "conv2_w"),
            conv2_b=p(np.zeros(16, dtype), "conv2_b"),
            fc_w=p(trunc_normal(rng, (flat, k), std=0.01, dtype=dtype), "fc_w"),
            fc_b=p(np.zeros(k, dtype), "fc_b"),
        )

    def named_parameters(self, prefix: str = "predictor") -> dict[str, Tensor]:
        return {f"{prefix}.{k}": v for k, v in vars(self).items()}


def predictor_logits(images, params: PredictorParams) -> Tensor:
    x = T.as_tensor(images, params.conv1_w)
    x = T.avg_pool2d(T.relu(T.conv2d(x, params.conv1_w, params.conv1_b, pad=1)))
    x = T.avg_pool2d(T.relu(T.conv2d(x, params.conv2_w, params.conv2_b, pad=1)))
    x = x.reshape(x.shape[0], -1)
    return T.matmul(x, params.fc_w) + params.fc_b


def predictor_forward(images, params: PredictorParams) -> Tensor:
    """Categorical distribution over tails, shape (B, K)."""
    return T.softmax(predictor_logits(images, params), axis=-1)


def gumbel_noise(rng: np.random.Generator, shape=()) -> np.ndarray:
    u = np.clip(rng.random(shape), GUMBEL_EPS, 1.0 - GUMBEL_EPS)
    return gumbel_from_uniform(u)


def gumbel_from_uniform(u) -> np.ndarray:
    """Inverse-CDF map of uniform samples to Gumbel(0, 1)."""
    return -np.log(-np.log(np.asarray(u, dtype=np.float64)))


def gumbel_sample(
    zeta: Tensor | None,
    tau: float,
    rng: np.random.Generator,
    log_zeta: Tensor | None = None,
) -> Decision:
    """Draw hard = one_hot(argmax(g + log zeta)) and soft = softmax((log zeta + g) / tau).

    Pass ``log_zeta`` directly (e.g. a log-softmax output) to avoid taking the
    log of an underflowed probability.
    """
    if tau <= 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    if log_zeta is None:
        zeta = T.as_tensor(zeta)
        if (zeta.data <= 0).any():
            raise ValueError("zeta must be strictly positive")
        log_zeta = T.log(zeta)
    g = gumbel_noise(rng, log_zeta.shape).astype(log_zeta.dtype)
    perturbed = log_zeta + g
    idx = perturbed.data.argmax(axis=-1)  # first index wins ties
    hard = np.zeros(log_zeta.shape, dtype=log_zeta.dtype)
    np.put_along_axis(hard, np.expand_dims(idx, -1), 1.0, axis=-1)
    soft = T.softmax(perturbed * (1.0 / tau), axis=-1)
    return Decision(hard=hard, soft=soft, tau=tau)


def straight_through(decision: Decision) -> Tensor:
    """Routing weights whose value is ``hard`` and whose gradient flows through ``soft``."""
    if decision.soft is None:
        return Tensor(decision.hard)
    return T.straight_through(decision.hard, decision.soft)


@dataclass(frozen=True)
class TemperatureSchedule:
    start: float = 5.0
    end: float = 0.5
    mode: str = "linear"  # or "constant" (uses ``start``)

    def __post_init__(self):
        if self.mode not in ("linear", "constant"):
            raise ValueError(f"unknown temperature mode {self.mode!r}")
        if self.start <= 0 or self.end <= 0:
            raise ValueError("temperatures must be positive")


def temperature(schedule: TemperatureSchedule, epoch: int, epochs: int) -> float:
    """Linear anneal from ``start`` at epoch 0 to ``end`` at epoch ``epochs - 1``."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if schedule.mode == "constant" or epochs <= 1:
        return schedule.start
    t = min(epoch, epochs - 1) / (epochs - 1)
    return schedule.start + t * (schedule.end - schedule.start)
