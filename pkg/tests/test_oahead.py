import numpy as np
import pytest

import reference as ref
from daonet import ops
from daonet.oahead import (HeadConfig, OaheadConfig, head_branch_forward,
                           init_head_branch, init_oahead, oahead_forward,
                           oahead_gate)
from daonet.tensor import Rng, Tape, Tensor, backward, rand_uniform


def _fixture(seed=0, c=8, dims=(1, 8, 4, 4)):
    rng = Rng(seed)
    cfg = OaheadConfig(c)
    w = init_oahead(cfg, rng)
    x = rand_uniform(rng, list(dims), -1.0, 1.0)
    return cfg, w, x


def test_zeroed_fc2_gates_at_exactly_half():
    cfg, w, x = _fixture()
    w.fc2.weight.data[...] = 0.0
    w.fc2.bias.data[...] = 0.0
    out = oahead_forward(x, cfg, w)
    assert np.array_equal(out.data, x.data * np.float32(0.5))


def test_saturated_fc2_bias_passes_input_through():
    cfg, w, x = _fixture(seed=1)
    w.fc2.weight.data[...] = 0.0
    w.fc2.bias.data[...] = 20.0
    out = oahead_forward(x, cfg, w)
    assert np.abs(out.data - x.data).max() < 1e-6


def test_gate_matches_composition_oracle_and_is_spatially_constant():
    cfg, w, x = _fixture(seed=2)
    out = oahead_forward(x, cfg, w)
    weights = dict(w.entries("oahead"))
    gate_ref = ref.oahead_gate_ref(x.data.astype(np.float64), cfg.channels,
                                   cfg.dw_kernels, weights)
    ratio = out.data / x.data  # x is generic, no zeros in this draw
    for n in range(x.dims[0]):
        for c in range(x.dims[1]):
            vals = ratio[n, c]
            assert np.abs(vals - vals[0, 0]).max() < 1e-6
            assert abs(vals[0, 0] - gate_ref[n, c]) < 1e-6


def test_gate_strictly_inside_unit_interval():
    cfg, w, x = _fixture(seed=3, dims=(3, 8, 5, 5))
    gate = oahead_gate(x, cfg, w)
    assert (gate.data > 0.0).all() and (gate.data < 1.0).all()


def test_output_never_grows_in_magnitude():
    cfg, w, x = _fixture(seed=4, dims=(2, 8, 6, 6))
    out = oahead_forward(x, cfg, w)
    assert (np.abs(out.data) <= np.abs(x.data)).all()


def test_gate_gradients_reach_fc2():
    cfg, w, x = _fixture(seed=5)
    tape = Tape()
    proj = rand_uniform(Rng(55), list(x.dims), -1.0, 1.0)
    loss = ops.sum_all(ops.mul(oahead_forward(x, cfg, w, tape), proj, tape), tape)
    backward(tape, loss)
    g = tape.grad(w.fc2.weight)
    assert g is not None and np.abs(g.data).max() > 0.0


def test_channel_mismatch_raises():
    cfg, w, _ = _fixture()
    with pytest.raises(ValueError, match="channel mismatch"):
        oahead_forward(Tensor.zeros((1, 4, 4, 4)), cfg, w)


def test_config_validation():
    with pytest.raises(ValueError, match="odd"):
        OaheadConfig(8, dw_kernels=(2, 4))
    with pytest.raises(ValueError, match="hidden"):
        OaheadConfig(2, fc_reduction=4)


# --- head branch -------------------------------------------------------------


def test_head_branch_keeps_spatial_dims_and_class_channels():
    rng = Rng(6)
    hcfg = HeadConfig(12, 16, 6, OaheadConfig(16))
    w = init_head_branch(hcfg, rng)
    x = rand_uniform(rng, [2, 12, 5, 7], -1.0, 1.0)
    y = head_branch_forward(x, hcfg, w)
    assert y.dims == (2, 6, 5, 7)


def test_head_gate_at_half_halves_the_gated_stage_exactly():
    rng = Rng(7)
    hcfg = HeadConfig(12, 16, 6, OaheadConfig(16))
    w = init_head_branch(hcfg, rng)
    x = rand_uniform(rng, [1, 12, 4, 4], -1.0, 1.0)
    w.oa.fc2.weight.data[...] = 0.0
    w.oa.fc2.bias.data[...] = 0.0
    stem_out = w.stem(x)               # features entering the gate
    gated = ops.mul(stem_out, Tensor.scalar(0.5))  # gate bypassed -> halved
    via_block = head_branch_forward(x, hcfg, w)
    manual = w.pred(w.post(gated))
    assert np.array_equal(via_block.data, manual.data)


def test_plain_head_branch_has_no_gate():
    rng = Rng(8)
    hcfg = HeadConfig(12, 16, 64, None)
    w = init_head_branch(hcfg, rng)
    assert w.oa is None
    x = rand_uniform(rng, [1, 12, 4, 4], -1.0, 1.0)
    assert head_branch_forward(x, hcfg, w).dims == (1, 64, 4, 4)
    paths = [p for p, _ in w.entries("head.p3.cls")]
    assert not any(".oahead." in p for p in paths)
