"""Module-level gradient checks behind ``daonet gradcheck``.

Block checks probe every coordinate of every parameter group against a
projection-weighted scalar loss (a plain sum would cancel the attention
and softmax paths).  The toy whole-model check uses the sum of all head
outputs and probes a deterministic sample of coordinates per group, which
keeps the full run inside the time budget while still covering every
parameter tensor.

Composite blocks use h = 1e-4 instead of the single-op default 1e-3:
through a stacked attention/softmax chain the O(h^2) truncation term of a
central difference alone can exceed the 1e-4 relative tolerance (it
shrinks 100x when h drops 10x, which is how we distinguish truncation
from a wrong adjoint).  Roundoff at h = 1e-4 in float64 is ~1e-11, so the
comparison stays sharp.
"""

from __future__ import annotations

import numpy as np

from .dafm import DafmConfig, dafm_forward, init_dafm
from .dsconv import DsconvConfig, dsconv_forward, init_dsconv
from .gradcheck import GroupResult, check_gradients, promote_f64
from .model import C2fBlock, ModelConfig, build
from .oahead import OaheadConfig, init_oahead, oahead_forward
from .ops import add, mul, sum_all
from .tensor import Rng, Tensor, rand_uniform

__all__ = ["GRADCHECK_MODULES", "gradcheck_module", "MODULE_H"]

MODULE_H = 1e-4

GRADCHECK_MODULES = ("dafm", "oahead", "dsconv", "c2f_dsconv", "model-toy")


def _projected(y, proj, tape):
    return sum_all(mul(y, proj, tape), tape)


def _f64_input(rng: Rng, dims) -> Tensor:
    t = rand_uniform(rng, dims, -1.0, 1.0)
    t.data = t.data.astype(np.float64)
    return t


def _block_case(seed: int, make):
    """Common scaffolding: f64 weights, input and projection, full probing."""
    rng = Rng(seed)
    forward, entries, in_dims, out_dims = make(rng)
    x = _f64_input(rng, in_dims)
    proj = _f64_input(rng, out_dims)
    promote_f64(entries)
    tensors = {path: t for path, t in entries}
    tensors["input"] = x

    def loss_fn(tape):
        return _projected(forward(x, tape), proj, tape)

    return check_gradients(loss_fn, tensors, h=MODULE_H)


def _dafm_case(rng: Rng):
    cfg = DafmConfig(8, 2)
    w = init_dafm(cfg, rng)
    dims = [1, 8, 6, 6]
    return (lambda x, tape: dafm_forward(x, cfg, w, tape),
            list(w.entries("dafm")), dims, dims)


def _oahead_case(rng: Rng):
    cfg = OaheadConfig(8)
    w = init_oahead(cfg, rng)
    dims = [1, 8, 6, 6]
    return (lambda x, tape: oahead_forward(x, cfg, w, tape),
            list(w.entries("oahead")), dims, dims)


def _dsconv_case(rng: Rng):
    cfg = DsconvConfig(8)
    w = init_dsconv(cfg, rng)
    dims = [1, 8, 6, 6]
    return (lambda x, tape: dsconv_forward(x, cfg, w, tape),
            list(w.entries("dsconv")), dims, dims)


def _c2f_dsconv_case(rng: Rng):
    block = C2fBlock(16, 16, n=1, shortcut=True, rng=rng, dsconv_kernels=(3, 5))
    dims = [1, 16, 6, 6]
    return (lambda x, tape: block.forward(x, tape),
            list(block.entries("c2f_dsconv")), dims, dims)


def _model_toy_case(seed: int):
    rng = Rng(seed)
    cfg = ModelConfig.daonet(width_multiple=0.125, input_size=64)
    model, store = build(cfg, rng)
    x = _f64_input(rng, [1, 3, 64, 64])
    promote_f64(store.entries)
    tensors = dict(store.entries)
    tensors["input"] = x

    def loss_fn(tape):
        total = None
        for cls, box in model.forward(x, tape):
            for part in (sum_all(cls, tape), sum_all(box, tape)):
                total = part if total is None else add(total, part, tape)
        return total

    return check_gradients(loss_fn, tensors, h=MODULE_H,
                           max_probes_per_group=2)


def gradcheck_module(module: str, seed: int = 0) -> list[GroupResult]:
    if module == "dafm":
        return _block_case(seed, _dafm_case)
    if module == "oahead":
        return _block_case(seed, _oahead_case)
    if module == "dsconv":
        return _block_case(seed, _dsconv_case)
    if module == "c2f_dsconv":
        return _block_case(seed, _c2f_dsconv_case)
    if module == "model-toy":
        return _model_toy_case(seed)
    raise ValueError(f"unknown gradcheck module '{module}' "
                     f"(choose from {', '.join(GRADCHECK_MODULES)})")
