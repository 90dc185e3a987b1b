"""Dataset generator and format, run configs, checkpoints, optimizers."""

import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtvit import checkpoint, data
from mtvit.config import RunConfig
from mtvit.optim import SGD, Adam, cosine_lr, make_optimizer
from mtvit.tails import ConfigError
from mtvit.tensor import Tensor

from conftest import micro_model


# -- synthetic data -------------------------------------------------------------------------
def test_render_is_pure_function_of_seed_and_index():
    a = data.render(3, 17)
    b = data.render(3, 17)
    assert a[0].tobytes() == b[0].tobytes() and a[1:] == b[1:]
    assert data.render(3, 18)[0].tobytes() != a[0].tobytes()
    assert data.render(4, 17)[0].tobytes() != a[0].tobytes()


def test_render_output_types():
    img, label, diff = data.render(0, 7)
    assert img.shape == (32, 32, 3) and img.dtype == np.uint8
    assert label == 7 and 0.0 <= diff <= 1.0


def test_class_balance():
    ds, _ = data.generate(0, 1000)
    counts = np.bincount(ds.labels, minlength=10)
    assert ((counts >= 90) & (counts <= 110)).all()


def test_difficulty_signal_exists():
    ds, diff = data.generate(1, 1000)
    x = ds.floats()
    easy, hard = x[diff < 0.25], x[diff > 0.75]
    # shapes shrink with difficulty, so fewer bright foreground pixels
    assert easy.mean() - hard.mean() > 0.05


def test_difficulty_shrinks_shapes():
    ds, diff = data.generate(2, 400)
    bright = (ds.floats().max(axis=-1) > 0.5).mean(axis=(1, 2))
    assert np.corrcoef(diff, bright)[0, 1] < -0.3


def test_dataset_round_trip(tmp_path):
    ds, _ = data.generate(5, 20)
    img_path, lab_path = data.write_dataset(ds, tmp_path / "d")
    back = data.read_dataset(tmp_path / "d")
    assert back.images.tobytes() == ds.images.tobytes()
    assert back.labels.tobytes() == ds.labels.tobytes()
    data.write_dataset(back, tmp_path / "e")
    assert (tmp_path / "e.mtds").read_bytes() == img_path.read_bytes()
    assert (tmp_path / "e.mtlb").read_bytes() == lab_path.read_bytes()


def test_dataset_header_layout(tmp_path):
    ds, _ = data.generate(0, 3)
    img_path, lab_path = data.write_dataset(ds, tmp_path / "h")
    raw = img_path.read_bytes()
    assert raw[:4] == b"MTDS"
    assert struct.unpack_from("<5I", raw, 4) == (1, 3, 32, 32, 3)
    assert len(raw) == 24 + 3 * 32 * 32 * 3
    lab = lab_path.read_bytes()
    assert lab[:4] == b"MTLB" and struct.unpack_from("<2I", lab, 4) == (1, 3)
    assert list(lab[12:]) == [0, 1, 2]


def test_gen_data_is_deterministic(tmp_path):
    data.gen_data(9, 30, tmp_path / "a", test_count=10)
    data.gen_data(9, 30, tmp_path / "b", test_count=10)
    for name in ("train.mtds", "train.mtlb", "test.mtds", "test.mtlb"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_corrupt_dataset_errors(tmp_path):
    ds, _ = data.generate(0, 4)
    img_path, _ = data.write_dataset(ds, tmp_path / "c")
    img_path.write_bytes(img_path.read_bytes()[:-5])
    with pytest.raises(ValueError, match="truncated"):
        data.read_dataset(tmp_path / "c")
    img_path.write_bytes(b"XXXX" + img_path.read_bytes()[4:])
    with pytest.raises(ValueError, match="magic"):
        data.read_dataset(tmp_path / "c")
    with pytest.raises(OSError, match="missing"):
        data.read_dataset(tmp_path / "missing")


# -- run config ----------------------------------------------------------------------------
def test_config_round_trip_is_byte_identical():
    cfg = RunConfig(seed=3, lam=2.0, alpha=0.5, tail_patches=(8, 4), tail_resize=(0, 0))
    text = cfg.to_text()
    again = RunConfig.from_text(text)
    assert again == cfg
    assert again.to_text() == text


@settings(max_examples=40, deadline=None)
@given(
    st.integers(0, 10**6),
    st.floats(0.0, 10.0, allow_nan=False),
    st.floats(0.0, 1.0),
    st.floats(1e-5, 1.0),
)
def test_config_round_trip_property(seed, lam, alpha, lr):
    cfg = RunConfig(seed=seed, lam=lam, alpha=alpha, lr=lr)
    assert RunConfig.from_text(cfg.to_text()) == cfg


def test_config_comments_and_partial_files():
    cfg = RunConfig.from_text("# desk run\nseed = 4  # trailing\n\nlam=1.5\n")
    assert cfg.seed == 4 and cfg.lam == 1.5 and cfg.dim == RunConfig().dim


@pytest.mark.parametrize(
    "text",
    [
        "bogus=1\n",
        "seed=1\nseed=2\n",
        "seed\n",
        "seed=one\n",
        "lr=0\n",
        "alpha=1.5\n",
        "dim=30\n",
        "tail_patches=16,8\n",
        "tail_patches=5,8,4\n",
        "optimizer=rmsprop\n",
        "tau_mode=cosine\n",
    ],
)
def test_config_errors(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_config_load_missing(tmp_path):
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "nope.txt")


def test_config_derived_views():
    cfg = RunConfig()
    assert [t.tokens for t in cfg.tails()] == [4, 16, 64]
    assert cfg.encoder_config().dim == cfg.dim
    resized = RunConfig(tail_patches=(16, 12, 4), tail_resize=(0, 36, 0)).tails()
    assert resized[1].grid == 3 and resized[1].resize_to == (36, 36)


# -- checkpoints ------------------------------------------------------------------------------
def test_checkpoint_round_trip(tmp_path):
    m = micro_model(1, np.float32)
    path = checkpoint.save(checkpoint.state_of(m), tmp_path / "m.mtvt")
    loaded = checkpoint.load(path)
    assert list(loaded) == list(m.named_parameters())
    for k, v in m.named_parameters().items():
        assert loaded[k].tobytes() == v.data.tobytes()
    assert checkpoint.encode(loaded) == path.read_bytes()


def test_checkpoint_restore_into_fresh_model(tmp_path):
    a, b = micro_model(1, np.float32), micro_model(2, np.float32)
    checkpoint.restore(b, checkpoint.state_of(a), strict=True)
    x = np.random.default_rng(0).random((2, 8, 8, 3)).astype(np.float32)
    assert a.branch(x, 1).data.tobytes() == b.branch(x, 1).data.tobytes()


def test_checkpoint_errors(tmp_path):
    m = micro_model(0, np.float32)
    state = checkpoint.state_of(m)
    blob = checkpoint.encode(state)
    with pytest.raises(ValueError, match="magic"):
        checkpoint.decode(b"NOPE" + blob[4:])
    with pytest.raises(ValueError, match="trailing"):
        checkpoint.decode(blob + b"\0")
    with pytest.raises(KeyError):
        checkpoint.restore(m, {}, strict=True)
    bad = dict(state)
    bad["encoder.cls_token"] = np.zeros((2, 2), np.float32)
    with pytest.raises(ValueError, match="shape"):
        checkpoint.restore(m, bad)


def test_checkpoint_scalar_and_empty_arrays():
    arrays = {"s": np.float32(2.5), "e": np.zeros((0, 3), np.float32)}
    back = checkpoint.decode(checkpoint.encode(arrays))
    assert back["s"].shape == () and back["s"] == 2.5
    assert back["e"].shape == (0, 3)


# -- optimizers --------------------------------------------------------------------------------
def test_cosine_schedule_endpoints():
    assert cosine_lr(1.0, 0, 100) == 1.0
    assert cosine_lr(1.0, 50, 100) == pytest.approx(0.5)
    assert cosine_lr(1.0, 100, 100) == pytest.approx(0.0, abs=1e-15)
    assert cosine_lr(1.0, 0, 100, warmup=4) == 0.25
    assert cosine_lr(1.0, 4, 100, warmup=4) == 1.0


def test_sgd_momentum_hand_value():
    p = Tensor([1.0], requires_grad=True, dtype=np.float64)
    opt = SGD([p], lr=0.1, momentum=0.5)
    for _ in range(2):
        p.grad = np.array([2.0])
        opt.step()
    # buffers 2 then 3: 1 - 0.1 * (2 + 3)
    assert p.data[0] == pytest.approx(0.5)


def test_adam_first_step_is_lr_times_sign():
    p = Tensor([1.0, -1.0], requires_grad=True, dtype=np.float64)
    opt = Adam([p], lr=0.01)
    p.grad = np.array([3.0, -0.2])
    opt.step()
    np.testing.assert_allclose(p.data, [0.99, -0.99], rtol=1e-6)


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_optimizers_minimize_a_quadratic(kind):
    target = np.array([1.0, -2.0, 0.5])
    p = Tensor(np.zeros(3), requires_grad=True, dtype=np.float64)
    opt = make_optimizer(kind, [p], 0.05)
    for _ in range(500):
        opt.zero_grad()
        ((p - target) * (p - target)).sum().backward()
        opt.step()
    np.testing.assert_allclose(p.data, target, atol=1e-2)


def test_weight_decay_skips_vectors():
    w = Tensor(np.ones((2, 2)), requires_grad=True, dtype=np.float64)
    b = Tensor(np.ones(2), requires_grad=True, dtype=np.float64)
    opt = SGD([w, b], lr=0.1, momentum=0.0, weight_decay=0.5)
    w.grad, b.grad = np.zeros((2, 2)), np.zeros(2)
    opt.step()
    np.testing.assert_allclose(w.data, 0.95)
    np.testing.assert_allclose(b.data, 1.0)


def test_unknown_optimizer():
    with pytest.raises(ValueError):
        make_optimizer("lbfgs", [], 0.1)
