import csv

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xyscannet.data import DataConfig, blur, make_pairs, motion_kernel, sample_batch, synth_pair
from xyscannet.errors import ConfigError, ContractError
from xyscannet.io import checkpoint_load
from xyscannet.metrics import psnr
from xyscannet.network import ModelConfig, build_model
from xyscannet.train import LOG_COLUMNS, TrainConfig, train_loop

TINY = ModelConfig(base_channels=4, blocks_per_level=(1, 1, 1), state_dim=2)


# -------------------------------------------------------------------- data


@given(st.floats(1, 25), st.floats(0, 360))
def test_motion_kernel_normalized_and_odd(length, angle):
    k = motion_kernel(length, angle)
    assert k.shape[0] == k.shape[1] and k.shape[0] % 2 == 1
    assert abs(k.sum() - 1.0) < 1e-12
    assert np.all(k >= 0)


def test_motion_kernel_special_cases():
    np.testing.assert_array_equal(motion_kernel(1, 30), [[1.0]])
    k = motion_kernel(5, 0)
    assert k.shape == (5, 5)
    assert k[2].sum() == pytest.approx(1.0, abs=1e-12)  # horizontal segment stays on the centre row
    np.testing.assert_allclose(k[2], k[2, ::-1], atol=1e-15)
    assert np.all(k[2] > 0)
    with pytest.raises(ContractError):
        motion_kernel(0.5, 0)


def test_blur_identity_and_constant():
    img = np.random.default_rng(0).uniform(0, 1, (10, 12, 3))
    np.testing.assert_array_equal(blur(img, motion_kernel(1, 0)), img)
    const = np.full((16, 16, 3), 0.3)
    np.testing.assert_allclose(blur(const, motion_kernel(9, 37)), 0.3, atol=1e-14)


def test_blur_matches_direct_convolution():
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 1, (9, 9, 1))
    k = motion_kernel(3, 45)
    out = blur(img, k)
    p = np.pad(img[..., 0], 1, mode="reflect")
    ref = np.zeros((9, 9))
    for y in range(9):
        for x in range(9):
            for u in range(3):
                for v in range(3):
                    ref[y, x] += k[u, v] * p[y + 2 - u, x + 2 - v]
    np.testing.assert_allclose(out[..., 0], ref, atol=1e-14)


def test_longer_blur_lowers_psnr():
    sharp = synth_pair(np.random.default_rng(2), 64)[1]
    scores = [psnr(blur(sharp, motion_kernel(n, 20)), sharp) for n in (3, 7, 15)]
    assert scores[0] > scores[1] > scores[2]


def test_synth_pair_range_and_determinism():
    a = make_pairs(3, 2, 32)
    b = make_pairs(3, 2, 32)
    for (bl, sh), (bl2, sh2) in zip(a, b):
        np.testing.assert_array_equal(bl, bl2)
        np.testing.assert_array_equal(sh, sh2)
        assert bl.shape == sh.shape == (32, 32, 3)
        assert bl.min() >= 0 and bl.max() <= 1
    with pytest.raises(ContractError):
        synth_pair(np.random.default_rng(0), 16, kernel_len_range=(0, 3))


def test_sample_batch():
    pairs = make_pairs(0, 3, 24)
    bl, sh = sample_batch(np.random.default_rng(0), pairs, 5, 16)
    assert bl.shape == sh.shape == (5, 16, 16, 3) and bl.dtype == np.float32
    with pytest.raises(ContractError):
        sample_batch(np.random.default_rng(0), [], 1, 8)


def test_data_config_validation():
    assert len(DataConfig(pairs=2, size=16).make(0)) == 2
    with pytest.raises(ConfigError):
        DataConfig(kernel_min=9, kernel_max=3)
    with pytest.raises(ConfigError):
        DataConfig(pairs=0)


# ------------------------------------------------------------------- train


def test_zero_steps_returns_initialization(tmp_path):
    pairs = make_pairs(0, 2, 16)
    res = train_loop(TINY, pairs, steps=0, holdout=pairs[0], out_dir=tmp_path)
    init, _ = build_model(TINY)
    assert all(np.array_equal(res.weights[k], init[k]) for k in init)
    assert len(res.log) == 1
    assert float(res.log[0]["psnr_holdout"]) == pytest.approx(psnr(pairs[0][0], pairs[0][1]), abs=1e-4)
    w, cfg = checkpoint_load(res.checkpoint)
    assert cfg == TINY
    with open(tmp_path / "metrics.csv") as fh:
        assert tuple(csv.DictReader(fh).fieldnames) == LOG_COLUMNS


def test_short_overfit_lowers_loss():
    pairs = make_pairs(1, 1, 16)
    tc = TrainConfig(batch=1, patch=16, lr0=3e-3, eval_every=0)
    res = train_loop(TINY, pairs, steps=25, train_cfg=tc, holdout=pairs[0])
    assert res.log[-1]["loss"] < res.log[0]["loss"]
    assert [r["step"] for r in res.log] == list(range(26))


def test_training_is_bitwise_deterministic():
    pairs = make_pairs(2, 2, 16)
    tc = TrainConfig(batch=2, patch=16, lr0=1e-3, eval_every=0)
    a = train_loop(TINY, pairs, steps=3, seed=5, train_cfg=tc, holdout=pairs[0])
    b = train_loop(TINY, pairs, steps=3, seed=5, train_cfg=tc, holdout=pairs[0])
    assert all(np.array_equal(a.weights[k], b.weights[k]) for k in a.weights)
    assert [r["loss"] for r in a.log] == [r["loss"] for r in b.log]


def test_train_rejects_bad_input():
    with pytest.raises(ContractError):
        train_loop(TINY, [], steps=1)
    with pytest.raises(ConfigError):
        TrainConfig(batch=0)
