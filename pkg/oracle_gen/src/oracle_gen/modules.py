"""Torch reference forwards for the three detector blocks.

Written directly from the documented block contracts: convolution weights
are (out, in/groups, kh, kw), padding keeps spatial size, the attention
map is channel-by-channel with row softmax, the occlusion gate multiplies
its input, and the dynamic-synthesis mix is a per-sample softmax simplex.
All arithmetic is float32 on CPU.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F

BLOCK_CONFIGS = {
    "dafm": {"channels": 16, "groups": 4, "batch": 2, "height": 6, "width": 6},
    "oahead": {"channels": 16, "kernels": [3, 5], "reduction": 4,
               "batch": 2, "height": 6, "width": 6},
    "dsconv": {"channels": 16, "square_k": 3, "strip_m": 5,
               "batch": 2, "height": 6, "width": 6},
}


def _rand(gen, *shape, lo=-0.5, hi=0.5):
    return (hi - lo) * torch.rand(*shape, generator=gen) + lo


def _conv_pair(gen, cin, cout, kh, kw, groups=1):
    fan = (cin // groups) * kh * kw
    s = fan ** -0.5
    return (_rand(gen, cout, cin // groups, kh, kw, lo=-s, hi=s),
            _rand(gen, cout, lo=-s, hi=s))


def _dwsep(gen, prefix, cin, cout, k):
    w, b = _conv_pair(gen, cin, cin, k, k, groups=cin)
    entries = [(f"{prefix}.dw.weight", w), (f"{prefix}.dw.bias", b)]
    w, b = _conv_pair(gen, cin, cout, 1, 1)
    entries += [(f"{prefix}.pw.weight", w), (f"{prefix}.pw.bias", b)]
    return entries


def dafm_weights(gen, cfg) -> list[tuple[str, torch.Tensor]]:
    c, g = cfg["channels"], cfg["groups"]
    cg = c // g
    entries = []
    w, b = _conv_pair(gen, c, c, 1, 1)
    entries += [("dafm.local_pw.weight", w), ("dafm.local_pw.bias", b)]
    for i in range(g):
        w, b = _conv_pair(gen, cg, cg, 3, 3, groups=cg)
        entries += [(f"dafm.local_group_dw.{i}.weight", w),
                    (f"dafm.local_group_dw.{i}.bias", b)]
    entries += _dwsep(gen, "dafm.local_out", c, c, 3)
    w, b = _conv_pair(gen, c, 3 * c, 1, 1)
    entries += [("dafm.qkv_pw.weight", w), ("dafm.qkv_pw.bias", b)]
    w, b = _conv_pair(gen, 3 * c, 3 * c, 3, 3, groups=3 * c)
    entries += [("dafm.qkv_dw.weight", w), ("dafm.qkv_dw.bias", b)]
    entries += _dwsep(gen, "dafm.attn_out", c, c, 3)
    entries.append(("dafm.attn_scale", _rand(gen, 1, lo=1.0, hi=3.0)))
    return entries


def dafm_forward(x, w, cfg):
    c, g = cfg["channels"], cfg["groups"]
    cg = c // g
    t = F.conv2d(x, w["dafm.local_pw.weight"], w["dafm.local_pw.bias"])
    parts = [F.conv2d(t[:, i * cg:(i + 1) * cg],
                      w[f"dafm.local_group_dw.{i}.weight"],
                      w[f"dafm.local_group_dw.{i}.bias"], padding=1, groups=cg)
             for i in range(g)]
    t = torch.cat(parts, dim=1)
    n, _, h, wd = t.shape
    t = t.reshape(n, g, cg, h, wd).transpose(1, 2).reshape(n, c, h, wd)
    t = F.conv2d(t, w["dafm.local_out.dw.weight"], w["dafm.local_out.dw.bias"],
                 padding=1, groups=c)
    local = F.conv2d(t, w["dafm.local_out.pw.weight"], w["dafm.local_out.pw.bias"])

    qkv = F.conv2d(x, w["dafm.qkv_pw.weight"], w["dafm.qkv_pw.bias"])
    qkv = F.conv2d(qkv, w["dafm.qkv_dw.weight"], w["dafm.qkv_dw.bias"],
                   padding=1, groups=3 * c)
    hw = h * wd
    q = qkv[:, :c].reshape(n, c, hw).transpose(1, 2)
    k = qkv[:, c:2 * c].reshape(n, c, hw)
    v = qkv[:, 2 * c:].reshape(n, c, hw).transpose(1, 2)
    scores = torch.softmax(k @ q / w["dafm.attn_scale"].abs(), dim=-1)
    att = (v @ scores).transpose(1, 2).reshape(n, c, h, wd)
    att = F.conv2d(att, w["dafm.attn_out.dw.weight"], w["dafm.attn_out.dw.bias"],
                   padding=1, groups=c)
    ctx = F.conv2d(att, w["dafm.attn_out.pw.weight"],
                   w["dafm.attn_out.pw.bias"]) + x
    return local + ctx


def oahead_weights(gen, cfg) -> list[tuple[str, torch.Tensor]]:
    c, kernels, r = cfg["channels"], cfg["kernels"], cfg["reduction"]
    entries = []
    for k in kernels:
        w, b = _conv_pair(gen, c, c, k, k, groups=c)
        entries += [(f"oahead.dw_k{k}.weight", w), (f"oahead.dw_k{k}.bias", b)]
    w, b = _conv_pair(gen, len(kernels) * c, c, 1, 1)
    entries += [("oahead.pw.weight", w), ("oahead.pw.bias", b)]
    hidden = c // r
    s = c ** -0.5
    entries += [("oahead.fc1.weight", _rand(gen, hidden, c, lo=-s, hi=s)),
                ("oahead.fc1.bias", _rand(gen, hidden, lo=-s, hi=s))]
    s = hidden ** -0.5
    entries += [("oahead.fc2.weight", _rand(gen, c, hidden, lo=-s, hi=s)),
                ("oahead.fc2.bias", _rand(gen, c, lo=-s, hi=s))]
    return entries


def oahead_forward(x, w, cfg):
    c, kernels = cfg["channels"], cfg["kernels"]
    branches = [F.conv2d(x, w[f"oahead.dw_k{k}.weight"], w[f"oahead.dw_k{k}.bias"],
                         padding=k // 2, groups=c) + x for k in kernels]
    fused = F.conv2d(torch.cat(branches, dim=1), w["oahead.pw.weight"],
                     w["oahead.pw.bias"])
    s = fused.mean(dim=(2, 3))
    hid = F.silu(F.linear(s, w["oahead.fc1.weight"], w["oahead.fc1.bias"]))
    gate = torch.sigmoid(F.linear(hid, w["oahead.fc2.weight"], w["oahead.fc2.bias"]))
    return x * gate[:, :, None, None]


def dsconv_weights(gen, cfg) -> list[tuple[str, torch.Tensor]]:
    c, k, m = cfg["channels"], cfg["square_k"], cfg["strip_m"]
    entries = []
    for name, (kh, kw) in (("square", (k, k)), ("vertical", (m, 1)),
                           ("horizontal", (1, m))):
        w, b = _conv_pair(gen, c, c, kh, kw, groups=c)
        entries += [(f"dsconv.{name}.dw.weight", w), (f"dsconv.{name}.dw.bias", b)]
        w, b = _conv_pair(gen, c, c, 1, 1)
        entries += [(f"dsconv.{name}.pw.weight", w), (f"dsconv.{name}.pw.bias", b)]
    s = c ** -0.5
    entries += [("dsconv.fc_score.weight", _rand(gen, 3, c, lo=-s, hi=s)),
                ("dsconv.fc_score.bias", _rand(gen, 3, lo=-s, hi=s))]
    return entries


def dsconv_branches(x, w, cfg):
    c, k, m = cfg["channels"], cfg["square_k"], cfg["strip_m"]
    outs = []
    for name, (ph, pw) in (("square", (k // 2, k // 2)), ("vertical", (m // 2, 0)),
                           ("horizontal", (0, m // 2))):
        t = F.conv2d(x, w[f"dsconv.{name}.dw.weight"], w[f"dsconv.{name}.dw.bias"],
                     padding=(ph, pw), groups=c)
        outs.append(F.conv2d(t, w[f"dsconv.{name}.pw.weight"],
                             w[f"dsconv.{name}.pw.bias"]))
    return outs


def dsconv_forward(x, w, cfg):
    branches = dsconv_branches(x, w, cfg)
    scores = F.linear(x.mean(dim=(2, 3)), w["dsconv.fc_score.weight"],
                      w["dsconv.fc_score.bias"])
    alphas = torch.softmax(scores, dim=1)
    out = torch.zeros_like(branches[0])
    for i, br in enumerate(branches):
        out = out + alphas[:, i][:, None, None, None] * br
    return out


BLOCKS = {
    "dafm": (dafm_weights, dafm_forward),
    "oahead": (oahead_weights, oahead_forward),
    "dsconv": (dsconv_weights, dsconv_forward),
}
