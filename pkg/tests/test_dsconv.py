import math

import numpy as np
import pytest

import reference as ref
from daonet import ops
from daonet.dsconv import (DsconvConfig, dsconv_branch_weights, dsconv_forward,
                           init_dsconv)
from daonet.model import C2fBlock
from daonet.tensor import Rng, Tape, Tensor, backward, rand_uniform


def _fixture(seed=0, c=8, dims=(1, 8, 6, 6), k=3, m=5):
    rng = Rng(seed)
    cfg = DsconvConfig(c, k, m)
    w = init_dsconv(cfg, rng)
    x = rand_uniform(rng, list(dims), -1.0, 1.0)
    return cfg, w, x


def test_zeroed_score_fc_gives_uniform_mix():
    cfg, w, x = _fixture()
    w.fc_score.weight.data[...] = 0.0
    w.fc_score.bias.data[...] = 0.0
    a = dsconv_branch_weights(x, w)
    assert np.abs(a.data - 1.0 / 3.0).max() < 1e-6


def test_log2_bias_gives_half_quarter_quarter():
    cfg, w, x = _fixture(seed=1)
    w.fc_score.weight.data[...] = 0.0
    w.fc_score.bias.data[...] = np.asarray([math.log(2.0), 0.0, 0.0],
                                           dtype=np.float32)
    a = dsconv_branch_weights(x, w)
    want = np.asarray([0.5, 0.25, 0.25])
    assert np.abs(a.data - want).max() < 1e-6


def test_mix_invariant_to_spatial_permutation():
    cfg, w, x = _fixture(seed=2)
    a1 = dsconv_branch_weights(x, w)
    flipped = Tensor(np.ascontiguousarray(x.data[:, :, ::-1, ::-1]))
    rolled = Tensor(np.roll(x.data, 3, axis=3))
    for perm in (flipped, rolled):
        a2 = dsconv_branch_weights(perm, w)
        assert np.abs(a1.data - a2.data).max() < 1e-6


def test_identity_branches_pass_input_through():
    cfg, w, x = _fixture(seed=3)
    w.fc_score.weight.data[...] = 0.0
    w.fc_score.bias.data[...] = 0.0
    for branch, centre in ((w.square, (1, 1)), (w.vertical, (2, 0)),
                           (w.horizontal, (0, 2))):
        branch.dw.weight.data[...] = 0.0
        branch.dw.weight.data[:, 0, centre[0], centre[1]] = 1.0
        branch.dw.bias.data[...] = 0.0
        branch.pw.weight.data[...] = np.eye(cfg.channels,
                                            dtype=np.float32).reshape(8, 8, 1, 1)
        branch.pw.bias.data[...] = 0.0
    y = dsconv_forward(x, cfg, w)
    assert np.abs(y.data - x.data).max() < 1e-6


def test_saturated_scores_select_square_branch():
    cfg, w, x = _fixture(seed=4)
    w.fc_score.weight.data[...] = 0.0
    w.fc_score.bias.data[...] = np.asarray([20.0, -20.0, -20.0], dtype=np.float32)
    y = dsconv_forward(x, cfg, w)
    square = w.square(x)
    assert np.abs(y.data - square.data).max() < 1e-5


def test_forward_matches_loop_oracle():
    cfg, w, x = _fixture(seed=5)
    want = ref.dsconv_ref(x.data.astype(np.float64), cfg.channels, cfg.square_k,
                          cfg.strip_m, dict(w.entries("dsconv")))
    got = dsconv_forward(x, cfg, w)
    assert np.abs(got.data - want).max() < 1e-5


def test_simplex_constraints_per_sample():
    cfg, w, x = _fixture(seed=6, dims=(4, 8, 5, 5))
    a = dsconv_branch_weights(x, w)
    assert a.dims == (4, 3)
    assert np.abs(a.data.sum(axis=1) - 1.0).max() < 1e-6
    assert (a.data > 0.0).all()


@pytest.mark.parametrize("k,m", [(1, 1), (3, 3), (3, 5), (5, 7)])
def test_shape_preserved_for_odd_kernels(k, m):
    cfg, w, x = _fixture(seed=7, k=k, m=m, dims=(2, 8, 6, 7))
    assert dsconv_forward(x, cfg, w).dims == x.dims


def test_even_kernels_rejected():
    with pytest.raises(ValueError, match="odd"):
        DsconvConfig(8, square_k=2)
    with pytest.raises(ValueError, match="odd"):
        DsconvConfig(8, strip_m=4)


def test_score_fc_receives_gradient():
    cfg, w, x = _fixture(seed=8)
    tape = Tape()
    proj = rand_uniform(Rng(88), list(x.dims), -1.0, 1.0)
    loss = ops.sum_all(ops.mul(dsconv_forward(x, cfg, w, tape), proj, tape), tape)
    backward(tape, loss)
    g = tape.grad(w.fc_score.weight)
    assert g is not None and np.abs(g.data).max() > 0.0


# --- the cross-stage block wrapping the unit ----------------------------------


def test_c2f_no_units_with_identity_convs_is_identity():
    rng = Rng(9)
    block = C2fBlock(16, 16, n=0, shortcut=True, rng=rng, act="none")
    eye16 = np.eye(16, dtype=np.float32).reshape(16, 16, 1, 1)
    block.cv1.weight.data[...] = eye16
    block.cv1.bias.data[...] = 0.0
    block.cv2.weight.data[...] = eye16
    block.cv2.bias.data[...] = 0.0
    x = rand_uniform(rng, [2, 16, 5, 5], -1.0, 1.0)
    y = block.forward(x)
    assert np.array_equal(y.data, x.data)


@pytest.mark.parametrize("n", [0, 1, 2])
def test_c2f_output_shape_rule(n):
    rng = Rng(10)
    block = C2fBlock(24, 16, n=n, shortcut=True, rng=rng, dsconv_kernels=(3, 5))
    x = rand_uniform(rng, [1, 24, 6, 6], -1.0, 1.0)
    assert block.forward(x).dims == (1, 16, 6, 6)


def test_c2f_rejects_odd_output_channels():
    with pytest.raises(ValueError, match="odd hidden"):
        C2fBlock(8, 7, n=1, shortcut=True, rng=Rng(11))


def test_dsconv_unit_cheaper_than_bottleneck():
    rng = Rng(12)
    plain = C2fBlock(64, 64, n=2, shortcut=True, rng=rng)
    dyn = C2fBlock(64, 64, n=2, shortcut=True, rng=rng, dsconv_kernels=(3, 5))
    p_plain = plain.cost("c2f", 20, 20).total_params
    p_dyn = dyn.cost("c2f_dsconv", 20, 20).total_params
    assert p_dyn < p_plain


def test_dsconv_unit_forward_has_shortcut():
    rng = Rng(13)
    block = C2fBlock(16, 16, n=1, shortcut=True, rng=rng, dsconv_kernels=(3, 5))
    unit = block.units[0]
    x = rand_uniform(rng, [1, 8, 4, 4], -1.0, 1.0)
    with_short = unit.forward(x, None)
    unit.shortcut = False
    without = unit.forward(x, None)
    assert np.abs((with_short.data - without.data) - x.data).max() < 1e-6
