import math

import numpy as np
import pytest

import reference as ref
from daonet import ops
from daonet.dafm import (DafmConfig, DafmWeights, dafm_attention,
                         dafm_context_branch, dafm_cost, dafm_forward,
                         dafm_local_branch, init_dafm)
from daonet.tensor import Rng, Tape, Tensor, backward, rand_uniform


def _fixture(seed=0, c=8, g=2, dims=(1, 8, 6, 6)):
    rng = Rng(seed)
    cfg = DafmConfig(c, g)
    w = init_dafm(cfg, rng)
    x = rand_uniform(rng, list(dims), -1.0, 1.0)
    return cfg, w, x


def _zero(params):
    for _, t in params.entries(""):
        t.data[...] = 0.0


def _identity_local_weights(w: DafmWeights, c: int, g: int):
    """Channel-identity kernels: 1x1 identity, depthwise centre taps, zero bias."""
    _zero(w.local_pw)
    w.local_pw.weight.data[...] = np.eye(c, dtype=np.float32).reshape(c, c, 1, 1)
    for dw in w.local_group_dw:
        _zero(dw)
        dw.weight.data[:, 0, 1, 1] = 1.0
    _zero(w.local_out.dw)
    w.local_out.dw.weight.data[:, 0, 1, 1] = 1.0
    _zero(w.local_out.pw)
    w.local_out.pw.weight.data[...] = np.eye(c, dtype=np.float32).reshape(c, c, 1, 1)


def test_local_branch_identity_kernels_reduce_to_shuffle():
    cfg, w, x = _fixture()
    _identity_local_weights(w, cfg.channels, cfg.shuffle_groups)
    got = dafm_local_branch(x, cfg, w)
    want = ops.channel_shuffle(x, cfg.shuffle_groups)
    assert np.abs(got.data - want.data).max() < 1e-6


def test_local_branch_zero_input_zero_bias():
    cfg, w, _ = _fixture()
    for params in (w.local_pw, *w.local_group_dw, w.local_out.dw, w.local_out.pw):
        params.bias.data[...] = 0.0
    y = dafm_local_branch(Tensor.zeros((2, 8, 5, 5)), cfg, w)
    assert np.abs(y.data).max() == 0.0


def test_local_branch_matches_composition_oracle():
    cfg, w, x = _fixture(seed=3)
    weights = dict(w.entries("dafm"))
    c, g = cfg.channels, cfg.shuffle_groups
    cg = c // g
    t = ref._conv_path(weights, "dafm.local_pw", x.data.astype(np.float64))
    parts = [ref._conv_path(weights, f"dafm.local_group_dw.{i}",
                            t[:, i * cg:(i + 1) * cg], ph=1, pw=1, groups=cg)
             for i in range(g)]
    t = ref.shuffle_ref(np.concatenate(parts, axis=1), g)
    want = ref._dwsep_path(weights, "dafm.local_out", t, 3)
    got = dafm_local_branch(x, cfg, w)
    assert np.abs(got.data - want).max() < 1e-5


def test_attention_zero_scores_give_row_means():
    rng = Rng(4)
    n, hw, c = 2, 5, 4
    q = rand_uniform(rng, [n, hw, c], -1.0, 1.0)
    k = Tensor.zeros((n, c, hw))
    v = rand_uniform(rng, [n, hw, c], -1.0, 1.0)
    out = dafm_attention(q, k, v, Tensor.scalar(2.0))
    means = v.data.mean(axis=2, keepdims=True)
    assert np.abs(out.data - means).max() < 1e-6


def test_attention_huge_scale_gives_row_means():
    rng = Rng(5)
    n, hw, c = 1, 4, 3
    q = rand_uniform(rng, [n, hw, c], -1.0, 1.0)
    k = rand_uniform(rng, [n, c, hw], -1.0, 1.0)
    v = rand_uniform(rng, [n, hw, c], -1.0, 1.0)
    out = dafm_attention(q, k, v, Tensor.scalar(1e9))
    means = v.data.mean(axis=2, keepdims=True)
    assert np.abs(out.data - means).max() < 1e-5


def test_attention_two_channel_hand_case():
    # K@Q = [[1,0],[0,0]], scale 1, V = [[1,2]]
    q = Tensor(np.asarray([[[1.0, 0.0]]], dtype=np.float32))        # 1 x HW x C
    k = Tensor(np.asarray([[[1.0], [0.0]]], dtype=np.float32))      # 1 x C x HW
    v = Tensor(np.asarray([[[1.0, 2.0]]], dtype=np.float32))
    out = dafm_attention(q, k, v, Tensor.scalar(1.0))
    e = math.e
    want = np.asarray([[[e / (e + 1) + 1.0, 1.0 / (e + 1) + 1.0]]])
    assert np.abs(out.data - np.float32(want)).max() < 1e-6
    # frozen values from the hand evaluation above
    assert out.data[0, 0, 0] == pytest.approx(1.7310586, abs=1e-6)
    assert out.data[0, 0, 1] == pytest.approx(1.2689414, abs=1e-6)


def test_forward_zero_weights_keep_residual():
    cfg, w, x = _fixture(seed=6)
    for path, t in w.entries("dafm"):
        if not path.endswith("attn_scale"):
            t.data[...] = 0.0
    y = dafm_forward(x, cfg, w)
    assert np.array_equal(y.data, x.data)


@pytest.mark.parametrize("dims,g", [((1, 8, 4, 4), 2), ((2, 16, 7, 5), 4),
                                    ((3, 12, 3, 3), 3)])
def test_forward_preserves_dims(dims, g):
    rng = Rng(7)
    cfg = DafmConfig(dims[1], g)
    w = init_dafm(cfg, rng)
    y = dafm_forward(rand_uniform(rng, list(dims), -1.0, 1.0), cfg, w)
    assert y.dims == dims


def test_forward_equals_sum_of_branches():
    cfg, w, x = _fixture(seed=8)
    whole = dafm_forward(x, cfg, w)
    summed = (dafm_local_branch(x, cfg, w).data
              + dafm_context_branch(x, cfg, w).data)
    assert np.array_equal(whole.data, summed)


def test_forward_matches_loop_oracle():
    cfg, w, x = _fixture(seed=9)
    want = ref.dafm_ref(x.data.astype(np.float64), cfg.channels,
                        cfg.shuffle_groups, dict(w.entries("dafm")))
    got = dafm_forward(x, cfg, w)
    assert np.abs(got.data - want).max() < 1e-5


def test_context_branch_residual_when_output_conv_zeroed():
    cfg, w, x = _fixture(seed=10)
    _zero(w.attn_out.dw)
    _zero(w.attn_out.pw)
    y = dafm_context_branch(x, cfg, w)
    assert np.array_equal(y.data, x.data)


def test_scale_gradient_flows():
    cfg, w, x = _fixture(seed=11)
    tape = Tape()
    proj = rand_uniform(Rng(99), list(x.dims), -1.0, 1.0)
    loss = ops.sum_all(ops.mul(dafm_forward(x, cfg, w, tape), proj, tape), tape)
    backward(tape, loss)
    g = tape.grad(w.attn_scale)
    assert g is not None and abs(g.data[0]) > 0.0


def test_attention_cost_is_linear_in_hw():
    cfg = DafmConfig(32, 4)
    w = init_dafm(cfg, Rng(12))
    f1 = dafm_cost(cfg, w, 8, 8).subtotal("dafm.attention")[1]
    f2 = dafm_cost(cfg, w, 16, 16).subtotal("dafm.attention")[1]
    assert f2 == 4 * f1
    # and quadratic in channels
    cfg2 = DafmConfig(64, 4)
    f3 = dafm_cost(cfg2, init_dafm(cfg2, Rng(13)), 8, 8).subtotal("dafm.attention")[1]
    assert f3 == 4 * f1


def test_config_validates_group_divisibility():
    with pytest.raises(ValueError, match="divisible"):
        DafmConfig(10, 4)
