import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtvit import flops as F
from mtvit import tensor as T
from mtvit.tails import DESK_TAILS, MultiTailViT, TailConfig
from mtvit.vit import EncoderConfig


def test_msa_and_mlp_hand_values():
    assert F.msa_flops(197, 384) == 146_000_640
    assert F.mlp_flops(197, 384, 4) == 232_390_656
    assert F.msa_flops(1, 1) == 6


def test_encoder_is_depth_times_block():
    assert F.encoder_flops(12, 197, 384, 4) == 12 * (146_000_640 + 232_390_656)


def test_encoder_quadratic_in_tokens():
    # second difference in N isolates the 2 N^2 d attention term
    d, r, L = 64, 4, 3
    f = [F.encoder_flops(L, n, d, r) for n in (10, 11, 12)]
    assert f[2] - 2 * f[1] + f[0] == L * 4 * d


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 300), st.integers(1, 128), st.integers(1, 8), st.integers(1, 24))
def test_encoder_matches_closed_form(n, d, r, depth):
    assert F.encoder_flops(depth, n, d, r) == depth * (4 * n * d * d + 2 * n * n * d + 2 * n * d * d * r)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 200), st.integers(1, 64))
def test_encoder_monotone_in_tokens(n, d):
    assert F.encoder_flops(2, n + 1, d, 4) > F.encoder_flops(2, n, d, 4)


def test_bad_arguments():
    with pytest.raises(ValueError):
        F.encoder_flops(0, 10, 8, 4)
    with pytest.raises(ValueError):
        F.msa_flops(10, 0)


class MacCounter:
    """Counts multiply-adds of every matmul executed through the tensor module."""

    def __init__(self, monkeypatch):
        self.calls = []
        self.depth = 0
        real = T.matmul

        def counting(a, b):
            # batched matmul re-enters itself; only the outermost call is counted
            self.depth += 1
            try:
                out = real(a, b)
            finally:
                self.depth -= 1
            if self.depth == 0:
                self.calls.append(int(np.prod(out.shape)) * T.as_tensor(a).shape[-1])
            return out

        monkeypatch.setattr(T, "matmul", counting)


@pytest.mark.parametrize("tail_index", range(3))
def test_formulas_match_multiply_adds_of_a_real_forward(monkeypatch, tail_index):
    cfg = EncoderConfig(depth=2, dim=32, heads=4, mlp_ratio=4, classes=10)
    m = MultiTailViT.init(cfg, DESK_TAILS, (32, 32), 3, seed=0)
    counter = MacCounter(monkeypatch)
    with T.no_grad():
        m.branch(np.zeros((1, 32, 32, 3), np.float32), tail_index)
    tail = DESK_TAILS[tail_index]
    embed, *encoder, head = counter.calls
    assert head == cfg.dim * cfg.classes
    assert 2 * embed == F.tail_flops(tail, cfg.dim)
    assert sum(encoder) == F.encoder_flops(cfg.depth, tail.tokens + 1, cfg.dim, cfg.mlp_ratio)


def test_tail_flops_hand_value():
    assert F.tail_flops(TailConfig(16, 14), 384) == 2 * 196 * 768 * 384


# -- soft split ----------------------------------------------------------------------
def test_soft_split_plain_patching():
    assert F.soft_split_tokens(224, 224, 0, 16, 0) == 196


def test_t2t_long_chain():
    assert F.soft_split_chain(224, F.T2T_STAGES["long"]) == [56, 28, 14]


def test_t2t_middle_chain():
    assert F.soft_split_chain(224, F.T2T_STAGES["middle"])[-1] == 10


def test_t2t_short_chain_is_unreachable():
    # p=[14,3,3], s=[7,1,1]: no nonnegative first-stage padding yields a 7x7 grid
    for k in range(0, 20):
        side = int(math.isqrt(F.soft_split_tokens(224, 224, k, 14, 7)))
        final = F.soft_split_chain(side, ((1, 3, 1), (1, 3, 1)))[-1]
        assert final != 7


@pytest.mark.parametrize("args", [(8, 8, 0, 3, 3), (8, 8, 0, 3, 5), (2, 2, 0, 5, 1), (8, 8, -1, 3, 1)])
def test_soft_split_rejects(args):
    with pytest.raises(ValueError):
        F.soft_split_tokens(*args)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 64), st.integers(0, 4), st.integers(2, 9), st.data())
def test_soft_split_matches_unfold_count(side, k, p, data):
    s = data.draw(st.integers(0, p - 1))
    if side + 2 * k < p:
        return
    n = F.soft_split_tokens(side, side, k, p, s)
    # oracle: count window origins directly
    origins = len(range(0, side + 2 * k - p + 1, p - s))
    assert n == origins * origins


# -- overall metric ---------------------------------------------------------------------
def test_overall_flops_hand_value():
    rep = F.overall_flops([1.0, 2.0, 4.0], [2, 1, 1], predictor=0.5)
    assert rep.overall == pytest.approx((2 + 2 + 4) / 4 + 0.5)
    np.testing.assert_allclose(rep.normalized_costs, [0.25, 0.5, 1.0])


def test_overall_flops_single_tail_is_that_tail():
    assert F.overall_flops([3.0, 7.0], [0, 10]).overall == 7.0


def test_overall_flops_errors():
    with pytest.raises(ValueError):
        F.overall_flops([1.0, 2.0], [0, 0])
    with pytest.raises(ValueError):
        F.overall_flops([1.0, 2.0], [1, 1, 1])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=3, max_size=3).filter(lambda u: sum(u) > 0))
def test_overall_lies_between_cheapest_and_dearest(usage):
    f = [1.0, 3.0, 9.0]
    o = F.overall_flops(f, usage).overall
    assert min(f) <= o <= max(f)


def test_normalized_costs_max_is_one():
    c = F.normalized_costs([5, 10, 20])
    assert c.max() == 1.0 and c.tolist() == [0.25, 0.5, 1.0]


def test_backbone_spec_requires_increasing_tokens():
    with pytest.raises(ValueError):
        F.BackboneSpec("bad", EncoderConfig(), (TailConfig(8, 4), TailConfig(16, 2)))


def test_predictor_flops_hand_value():
    expected = (32 * 32 * 27 * 8 * 2 + 32 * 32 * 8) + (16 * 16 * 72 * 16 * 2 + 16 * 16 * 16) + 2 * 8 * 8 * 16 * 3
    assert F.predictor_flops((32, 32), 3, 3) == expected


def test_table_outputs():
    spec = F.PRESETS["deit-s"]
    csv_text = F.table_csv(spec)
    lines = csv_text.strip().splitlines()
    assert lines[0] == ",".join(F.CSV_COLUMNS)
    assert len(lines) == 4
    assert "DeiT-S" in F.table_text(spec)


def test_desk_costs_are_ordered():
    c = F.PRESETS["desk"].report().normalized_costs
    assert c[0] < c[1] < c[2] == 1.0
