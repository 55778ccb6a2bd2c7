"""Naive reference implementations used as test oracles.

Everything here works on plain float64 numpy arrays with loop-level or
reshape-level algorithms, independent of the production einsum kernels.
Module references take the weight dict produced by ``weights.entries()``.
"""

import numpy as np


def conv2d_ref(x, w, b=None, stride=1, ph=0, pw=0, groups=1):
    n, c, h, wd = x.shape
    o, cg, kh, kw = w.shape
    oh = (h + 2 * ph - kh) // stride + 1
    ow = (wd + 2 * pw - kw) // stride + 1
    xp = np.zeros((n, c, h + 2 * ph, wd + 2 * pw))
    xp[:, :, ph:ph + h, pw:pw + wd] = x
    y = np.zeros((n, o, oh, ow))
    og = o // groups
    for ni in range(n):
        for oi in range(o):
            g = oi // og
            for i in range(oh):
                for j in range(ow):
                    patch = xp[ni, g * cg:(g + 1) * cg,
                               i * stride:i * stride + kh,
                               j * stride:j * stride + kw]
                    y[ni, oi, i, j] = (patch * w[oi]).sum()
            if b is not None:
                y[ni, oi] += b[oi]
    return y


def linear_ref(x, w, b=None):
    n, f = x.shape
    o = w.shape[0]
    y = np.zeros((n, o))
    for ni in range(n):
        for oi in range(o):
            y[ni, oi] = sum(x[ni, fi] * w[oi, fi] for fi in range(f))
            if b is not None:
                y[ni, oi] += b[oi]
    return y


def gap_ref(x):
    n, c, h, w = x.shape
    return np.array([[x[ni, ci].sum() / (h * w) for ci in range(c)]
                     for ni in range(n)])


def softmax_ref(x, axis):
    e = np.exp(x - x.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def silu_ref(x):
    return x / (1.0 + np.exp(-x))


def sigmoid_ref(x):
    return 1.0 / (1.0 + np.exp(-x))


def shuffle_ref(x, g):
    n, c, h, w = x.shape
    return (x.reshape(n, g, c // g, h, w)
             .transpose(0, 2, 1, 3, 4)
             .reshape(n, c, h, w))


def maxpool_ref(x, k, stride=1, pad=0):
    n, c, h, w = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    xp[:, :, pad:pad + h, pad:pad + w] = x
    y = np.zeros((n, c, oh, ow))
    for ni in range(n):
        for ci in range(c):
            for i in range(oh):
                for j in range(ow):
                    y[ni, ci, i, j] = xp[ni, ci, i * stride:i * stride + k,
                                         j * stride:j * stride + k].max()
    return y


def upsample2x_ref(x):
    return np.kron(x, np.ones((1, 1, 2, 2)))


def _w(weights, path):
    return weights[path].data.astype(np.float64)


def _conv_path(weights, path, x, stride=1, ph=0, pw=0, groups=1):
    b = (_w(weights, path + ".bias") if path + ".bias" in weights else None)
    return conv2d_ref(x, _w(weights, path + ".weight"), b, stride, ph, pw, groups)


def _dwsep_path(weights, path, x, k):
    c = x.shape[1]
    t = _conv_path(weights, path + ".dw", x, ph=k // 2, pw=k // 2, groups=c)
    return _conv_path(weights, path + ".pw", t)


def dafm_ref(x, channels, groups, weights):
    """Whole-block reference: local branch + attention branch."""
    c, g = channels, groups
    cg = c // g
    # local branch
    t = _conv_path(weights, "dafm.local_pw", x)
    parts = [_conv_path(weights, f"dafm.local_group_dw.{i}",
                        t[:, i * cg:(i + 1) * cg], ph=1, pw=1, groups=cg)
             for i in range(g)]
    t = shuffle_ref(np.concatenate(parts, axis=1), g)
    local = _dwsep_path(weights, "dafm.local_out", t, 3)
    # attention branch
    qkv = _conv_path(weights, "dafm.qkv_pw", x)
    qkv = _conv_path(weights, "dafm.qkv_dw", qkv, ph=1, pw=1, groups=3 * c)
    n, _, h, w = x.shape
    hw = h * w
    scale = abs(float(weights["dafm.attn_scale"].data[0]))
    attended = np.zeros((n, c, h, w))
    for ni in range(n):
        q = qkv[ni, :c].reshape(c, hw).T       # HW x C
        k = qkv[ni, c:2 * c].reshape(c, hw)    # C x HW
        v = qkv[ni, 2 * c:].reshape(c, hw).T   # HW x C
        scores = softmax_ref(k @ q / scale, axis=1)
        attended[ni] = (v @ scores).T.reshape(c, h, w)
    ctx = _dwsep_path(weights, "dafm.attn_out", attended, 3) + x
    return local + ctx


def oahead_gate_ref(x, channels, kernels, weights, prefix="oahead"):
    c = channels
    branches = [_conv_path(weights, f"{prefix}.dw_k{k}", x, ph=k // 2, pw=k // 2,
                           groups=c) + x for k in kernels]
    fused = _conv_path(weights, prefix + ".pw", np.concatenate(branches, axis=1))
    s = gap_ref(fused)
    hid = silu_ref(linear_ref(s, _w(weights, prefix + ".fc1.weight"),
                              _w(weights, prefix + ".fc1.bias")))
    return sigmoid_ref(linear_ref(hid, _w(weights, prefix + ".fc2.weight"),
                                  _w(weights, prefix + ".fc2.bias")))


def oahead_ref(x, channels, kernels, weights, prefix="oahead"):
    gate = oahead_gate_ref(x, channels, kernels, weights, prefix)
    return x * gate[:, :, None, None]


def dsconv_ref(x, channels, k, m, weights, prefix="dsconv"):
    c = channels
    branches = []
    for name, (kh, kw) in (("square", (k, k)), ("vertical", (m, 1)),
                           ("horizontal", (1, m))):
        t = _conv_path(weights, f"{prefix}.{name}.dw", x,
                       ph=kh // 2, pw=kw // 2, groups=c)
        branches.append(_conv_path(weights, f"{prefix}.{name}.pw", t))
    scores = linear_ref(gap_ref(x), _w(weights, prefix + ".fc_score.weight"),
                        _w(weights, prefix + ".fc_score.bias"))
    alphas = softmax_ref(scores, axis=1)
    out = np.zeros_like(branches[0])
    for i, br in enumerate(branches):
        out += alphas[:, i][:, None, None, None] * br
    return out
