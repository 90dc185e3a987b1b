"""Encoder, tails, routing and end-to-end gradients on the micro model."""

import numpy as np
import pytest
from conftest import MICRO_TAILS, micro_batch, micro_model

from mtvit import objective as O
from mtvit import tensor as T
from mtvit.gradcheck import check_gradients, numeric_grad, relative_error
from mtvit.selector import Decision, gumbel_sample
from mtvit.tails import ConfigError, MultiTailViT, TailConfig, extract_patches, multi_tail_forward, tail_forward
from mtvit.tensor import Tensor
from mtvit.train import finetune_step
from mtvit.vit import EncoderConfig, self_attention

COSTS = np.array([0.3, 1.0])


# -- encoder pieces -----------------------------------------------------------------
def test_attention_with_identical_keys_averages_values():
    rng = np.random.default_rng(0)
    q = Tensor(rng.standard_normal((5, 4)))
    k = Tensor(np.ones((5, 4)))
    v = Tensor(rng.standard_normal((5, 3)))
    out = self_attention(q, k, v, 4)
    np.testing.assert_allclose(out.data, np.broadcast_to(v.data.mean(0), (5, 3)), rtol=1e-5)


def test_attention_hand_value():
    # one query, two keys; logits 0 and ln 3 after scaling by 1/sqrt(1)
    q = Tensor([[1.0]], dtype=np.float64)
    k = Tensor([[0.0], [np.log(3.0)]], dtype=np.float64)
    v = Tensor([[4.0], [8.0]], dtype=np.float64)
    assert self_attention(q, k, v, 1).data[0, 0] == pytest.approx(0.25 * 4 + 0.75 * 8)


def test_attention_maps_are_row_stochastic(micro):
    x, _ = micro_batch(0)
    maps = []
    micro.branch(x, 1, maps)
    assert len(maps) == 1 and maps[0].shape == (3, 2, 17, 17)
    np.testing.assert_allclose(maps[0].sum(-1), 1.0, atol=1e-12)


def test_encoder_config_validation():
    with pytest.raises(ValueError):
        EncoderConfig(dim=30, heads=4)
    with pytest.raises(ValueError):
        EncoderConfig(depth=-1)


# -- tails ---------------------------------------------------------------------------
def test_extract_patches_order():
    img = np.arange(4 * 4 * 1, dtype=np.float64).reshape(4, 4, 1)
    p = extract_patches(img, 2).data
    assert p.shape == (4, 4)
    np.testing.assert_array_equal(p[0], [0, 1, 4, 5])
    np.testing.assert_array_equal(p[3], [10, 11, 14, 15])


def test_extract_patches_token_counts():
    for side, patch, n in ((224, 16, 196), (224, 32, 49), (230, 23, 100), (32, 4, 64)):
        assert extract_patches(np.zeros((side, side, 3)), patch).shape[0] == n


def test_extract_patches_rejects_indivisible():
    with pytest.raises(ConfigError):
        extract_patches(np.zeros((10, 10, 3)), 3)


def test_tail_forward_shape_and_class_row(micro):
    x, _ = micro_batch(1)
    for i, tail in enumerate(MICRO_TAILS):
        z = tail_forward(x, tail, micro.tail_params[i], micro.encoder.cls_token)
        assert z.shape == (3, tail.tokens + 1, 16)
        expected = micro.encoder.cls_token.data[0] + micro.tail_params[i].pos.data[0]
        np.testing.assert_array_equal(z.data[:, 0], np.broadcast_to(expected, (3, 16)))


def test_tail_config_validation():
    with pytest.raises(ConfigError):
        TailConfig(8, 3).validate(32, 32)
    TailConfig(23, 10, (230, 230)).validate(224, 224)


def test_resized_tail_runs():
    cfg = EncoderConfig(depth=1, dim=8, heads=2, mlp_ratio=2, classes=4)
    m = MultiTailViT.init(cfg, (TailConfig(4, 2), TailConfig(3, 3, (9, 9))), (8, 8), 3, seed=0)
    assert m.branch(np.random.default_rng(0).random((2, 8, 8, 3)), 1).shape == (2, 4)


def test_shared_parameters_are_shared(micro):
    names = micro.backbone_parameters()
    assert sum(n.startswith("encoder.") for n in names) == len(micro.encoder.named_parameters())
    assert {n.split(".")[0] for n in names} == {"encoder", "tail0", "tail1"}


# -- routing identities ----------------------------------------------------------------------
@pytest.mark.parametrize("i", range(2))
@pytest.mark.parametrize("mode", ["train", "infer"])
def test_one_hot_output_equals_standalone_branch(i, mode):
    m = micro_model(dtype=np.float32)
    x, _ = micro_batch(2, 5, np.float32)
    ref = m.branch(x, i).data
    out = multi_tail_forward(m, x, Decision.forced(i, 5, 2), mode).data
    assert out.tobytes() == ref.tobytes()


def test_train_and_infer_agree_for_mixed_decisions():
    m = micro_model(dtype=np.float32)
    x, _ = micro_batch(3, 6, np.float32)
    dec = Decision.forced([0, 1, 1, 0, 1, 0], 6, 2)
    a = multi_tail_forward(m, x, dec, "train").data
    b = multi_tail_forward(m, x, dec, "infer").data
    np.testing.assert_allclose(a, b, rtol=1e-5, atol=1e-6)


def test_infer_runs_only_selected_branches():
    m = micro_model(dtype=np.float32)
    x, _ = micro_batch(4, 6, np.float32)
    multi_tail_forward(m, x, Decision.forced([1, 1, 0, 1, 1, 1], 6, 2), "infer")
    assert m.branch_images == [1, 5]
    multi_tail_forward(m, x, Decision.forced(1, 6, 2), "infer")
    assert m.branch_images == [1, 11]


def test_forward_rejects_bad_decisions(micro):
    x, _ = micro_batch(0, 2)
    with pytest.raises(ValueError):
        multi_tail_forward(micro, x, Decision(np.array([[0.5, 0.5], [1, 0]])))
    with pytest.raises(ValueError):
        multi_tail_forward(micro, x, Decision(np.eye(3)[:2]))
    with pytest.raises(ValueError):
        multi_tail_forward(micro, x, Decision.forced(0, 2, 2), "sideways")


# -- gradients through the whole model ---------------------------------------------------------
def _step_fn(model, x, y, seed, lam=0.7, alpha=0.25, tau=1.3):
    return lambda: finetune_step(model, x, y, COSTS, lam, alpha, tau, np.random.default_rng(seed))[0]


@pytest.mark.parametrize("seed", range(20))
def test_full_step_backbone_gradients(seed):
    m = micro_model(seed)
    x, y = micro_batch(seed)
    params = list(m.backbone_parameters().values())
    err = check_gradients(_step_fn(m, x, y, seed), params, fraction=0.3, rng=np.random.default_rng(seed))
    assert err < 1e-3


def soft_surrogate_check(seed: int, lam: float = 0.7, alpha: float = 0.25, tau: float = 1.3) -> float:
    """Relative error between the straight-through predictor gradient and FD of sum_i soft_i a_i.

    a = dL/dw at w = hard is computed on a separate tape with the backbone frozen.
    """
    m = micro_model(seed)
    x, y = micro_batch(seed)
    pred = list(m.predictor_parameters().values())
    for p in pred:
        p.zero_grad()
    loss, decision = finetune_step(m, x, y, COSTS, lam, alpha, tau, np.random.default_rng(seed))
    loss.backward()
    tape = np.concatenate([p.grad.ravel() for p in pred])

    with T.no_grad():
        branches = [Tensor(m.branch(x, i).data) for i in range(m.k)]
    w = Tensor(decision.hard, requires_grad=True)
    O.total_loss(
        O.classification_loss(O.weighted_prediction(w, branches), y),
        O.flops_regularization(w, COSTS, alpha),
        lam,
    ).backward()
    a = w.grad.copy()

    def surrogate():
        log_zeta = T.log_softmax(m.predictor_logits(x), axis=-1)
        d = gumbel_sample(None, tau, np.random.default_rng(seed), log_zeta=log_zeta)
        assert (d.hard == decision.hard).all()
        return (d.soft * a).sum()

    num = np.concatenate([numeric_grad(surrogate, p) for p in pred])
    return relative_error(tape, num)


@pytest.mark.parametrize("seed", range(20))
def test_predictor_gradient_is_soft_surrogate_gradient(seed):
    assert soft_surrogate_check(seed) < 1e-3


def test_routing_value_is_exactly_one_hot():
    m = micro_model(0)
    x, y = micro_batch(0, 6)
    _, decision = finetune_step(m, x, y, COSTS, 0.5, 0.25, 2.0, np.random.default_rng(0))
    assert set(np.unique(decision.hard)) <= {0.0, 1.0}
    np.testing.assert_array_equal(decision.hard.sum(-1), 1.0)


def test_predictor_gradient_nonzero_when_branches_differ():
    m = micro_model(5)
    x, y = micro_batch(5)
    loss, _ = finetune_step(m, x, y, COSTS, 0.0, 0.25, 1.0, np.random.default_rng(5))
    loss.backward()
    assert np.abs(m.predictor.fc_w.grad).max() > 0


def test_unselected_branch_gets_no_gradient():
    m = micro_model(6)
    x, y = micro_batch(6, 2)
    w = T.straight_through(np.array([[1.0, 0.0], [1.0, 0.0]]), T.softmax(Tensor(np.zeros((2, 2)), requires_grad=True)))
    logits = [m.branch(x, 0), m.branch(x, 1)]
    O.classification_loss(O.weighted_prediction(w, logits), y).backward()
    assert np.abs(m.tail_params[0].proj_w.grad).max() > 0
    assert m.tail_params[1].proj_w.grad is None or not m.tail_params[1].proj_w.grad.any()
