"""Command-line harness.

Exit codes: 0 = everything passed (or was skipped by contract),
1 = a check or comparison failed, 2 = unusable input (bad file, bad
arguments).  All commands are deterministic for a given --seed; --threads
is accepted for interface compatibility but execution is single-threaded,
which trivially satisfies the fixed-reduction-order contract.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .checks import run_checks
from .dafm import DafmConfig, dafm_forward, init_dafm
from .dsconv import DsconvConfig, dsconv_forward, init_dsconv
from .gradcheck import REL_TOL
from .gradsuite import GRADCHECK_MODULES, gradcheck_module
from .model import ModelConfig, ablation_grid, cost_report
from .oahead import OaheadConfig, init_oahead, oahead_forward
from .tensor import Rng
from .tnsio import (TnsFormatError, load_tensor, load_weightstore, save_tensor)

PARITY_TOL = 1e-4

_VARIANTS = ("baseline", "daonet", "dafm", "oahead", "dsconv",
             "dafm+oahead", "dafm+dsconv", "oahead+dsconv")


def _variant_config(name: str, imgsz: int) -> ModelConfig:
    if name == "baseline":
        return ModelConfig.baseline(input_size=imgsz)
    if name == "daonet":
        return ModelConfig.daonet(input_size=imgsz)
    parts = set(name.split("+"))
    unknown = parts - {"dafm", "oahead", "dsconv"}
    if unknown:
        raise ValueError(f"unknown variant '{name}'")
    return ModelConfig(dafm="dafm" in parts, oahead="oahead" in parts,
                       dsconv="dsconv" in parts, input_size=imgsz)


def cmd_check(args) -> int:
    results = run_checks(args.seed)
    for r in results:
        print(r.line())
    passed = sum(1 for r in results if r.status == "pass")
    print(f"checks passed: {passed}/{len(results)} (seed={args.seed})")
    return 0 if passed == len(results) else 1


def cmd_gradcheck(args) -> int:
    modules = GRADCHECK_MODULES if args.module == "all" else (args.module,)
    ok = True
    for module in modules:
        results = gradcheck_module(module, args.seed)
        worst = max((r.max_err for r in results), default=0.0)
        for r in results:
            mark = "ok" if r.ok else "FAIL"
            print(f"{module:12s} {mark:4s} {r.group:40s} "
                  f"max_rel_err={r.max_err:.3e} checked={r.checked}")
        status = "ok" if worst < REL_TOL else "FAIL"
        print(f"{module}: {status} (worst={worst:.3e}, tol={REL_TOL:.0e}, "
              f"groups={len(results)})")
        ok = ok and worst < REL_TOL
    return 0 if ok else 1


def cmd_count(args) -> int:
    try:
        cfg = _variant_config(args.variant, args.imgsz)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    if args.imgsz % 32:
        print(f"error: imgsz {args.imgsz} not divisible by 32", file=sys.stderr)
        return 2

    if args.ablation:
        rows = ablation_grid(cfg)
        if args.json:
            payload = [{"variant": c.variant_name,
                        "flags": {"dafm": c.dafm, "oahead": c.oahead,
                                  "dsconv": c.dsconv},
                        "params": r.total_params, "flops": r.total_flops,
                        "params_m": round(r.total_params / 1e6, 4),
                        "gflops": round(r.total_flops / 1e9, 4)}
                       for c, r in rows]
            print(json.dumps({"imgsz": args.imgsz, "rows": payload}, indent=2))
        else:
            print(f"{'dafm':>5s} {'oahead':>6s} {'dsconv':>6s} "
                  f"{'params (M)':>11s} {'GFLOPs':>8s}")
            for c, r in rows:
                marks = ["x" if f else " " for f in c.flags]
                print(f"{marks[0]:>5s} {marks[1]:>6s} {marks[2]:>6s} "
                      f"{r.total_params / 1e6:11.3f} {r.total_flops / 1e9:8.3f}")
        return 0

    rep = cost_report(cfg)
    if args.json:
        payload = {"variant": cfg.variant_name, "imgsz": args.imgsz,
                   "entries": [{"path": e.path, "params": e.params,
                                "flops": e.flops} for e in rep.entries],
                   "total_params": rep.total_params,
                   "total_flops": rep.total_flops,
                   "params_m": round(rep.total_params / 1e6, 4),
                   "gflops": round(rep.total_flops / 1e9, 4)}
        print(json.dumps(payload, indent=2))
    else:
        print(f"{'layer':52s} {'params':>10s} {'flops':>14s}")
        for e in rep.entries:
            print(f"{e.path:52s} {e.params:>10d} {e.flops:>14d}")
        print(f"{'total':52s} {rep.total_params:>10d} {rep.total_flops:>14d}")
        print(f"variant={cfg.variant_name} imgsz={args.imgsz} "
              f"params={rep.total_params / 1e6:.3f}M "
              f"flops={rep.total_flops / 1e9:.3f}GFLOPs")
    return 0


# ---------------------------------------------------------------------------
# single-module forward on files


def _infer_dafm(store):
    c = store.get("dafm.local_pw.weight").dims[0]
    groups = 0
    while f"dafm.local_group_dw.{groups}.weight" in store:
        groups += 1
    cfg = DafmConfig(c, groups)
    w = init_dafm(cfg, Rng(0))
    return cfg, w, lambda x, tape=None: dafm_forward(x, cfg, w, tape)


def _infer_oahead(store):
    c = store.get("oahead.pw.weight").dims[0]
    kernels = []
    for k in (1, 3, 5, 7, 9, 11):
        if f"oahead.dw_k{k}.weight" in store:
            kernels.append(k)
    hidden = store.get("oahead.fc1.weight").dims[0]
    cfg = OaheadConfig(c, tuple(kernels), c // hidden)
    w = init_oahead(cfg, Rng(0))
    return cfg, w, lambda x, tape=None: oahead_forward(x, cfg, w, tape)


def _infer_dsconv(store):
    c = store.get("dsconv.square.pw.weight").dims[0]
    k = store.get("dsconv.square.dw.weight").dims[2]
    m = store.get("dsconv.vertical.dw.weight").dims[2]
    cfg = DsconvConfig(c, k, m)
    w = init_dsconv(cfg, Rng(0))
    return cfg, w, lambda x, tape=None: dsconv_forward(x, cfg, w, tape)


_RUNNABLE = {"dafm": _infer_dafm, "oahead": _infer_oahead, "dsconv": _infer_dsconv}


def _load_module_forward(module: str, store):
    from .model import load_into
    if module not in _RUNNABLE:
        raise ValueError(f"module '{module}' is not runnable "
                         f"(choose from {', '.join(sorted(_RUNNABLE))})")
    cfg, w, forward = _RUNNABLE[module](store)
    load_into(w.entries(module), store)
    return forward


def cmd_run(args) -> int:
    try:
        store = load_weightstore(args.weights)
        x = load_tensor(args.input)
        forward = _load_module_forward(args.module, store)
        y = forward(x)
    except (TnsFormatError, ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    save_tensor(args.output, y)
    digest = hashlib.sha256(Path(args.output).read_bytes()).hexdigest()
    print(f"dims={'x'.join(map(str, y.dims))} sha256={digest}")
    return 0


def cmd_parity(args) -> int:
    golden = Path(args.golden)
    if not golden.is_dir():
        print(f"parity: skipped (no golden directory at {golden})")
        return 0
    metas = sorted(golden.glob("*/meta.json"))
    if not metas:
        print(f"parity: skipped (no golden triples under {golden})")
        return 0
    failures = 0
    for meta_path in metas:
        case = meta_path.parent
        try:
            meta = json.loads(meta_path.read_text())
            store = load_weightstore(case / meta["weights"])
            x = load_tensor(case / meta["input"])
            expected = load_tensor(case / meta["expected"])
            forward = _load_module_forward(meta["module"], store)
            y = forward(x)
        except (TnsFormatError, ValueError, OSError, KeyError,
                json.JSONDecodeError) as e:
            print(f"FAIL {case.name}: unreadable triple ({e})")
            failures += 1
            continue
        if y.dims != expected.dims:
            print(f"FAIL {case.name}: dims {y.dims} != expected {expected.dims}")
            failures += 1
            continue
        err = float(np.abs(y.data - expected.data).max())
        status = "pass" if err <= PARITY_TOL else "FAIL"
        print(f"{status.upper():4s} {case.name}: max_abs_err={err:.3e} "
              f"tol={PARITY_TOL:.0e}")
        failures += 0 if err <= PARITY_TOL else 1
    print(f"parity: {len(metas) - failures}/{len(metas)} triples passed")
    return 0 if failures == 0 else 1


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="daonet",
        description="Invariant, gradient, cost and parity harness for the "
                    "DAONet detector blocks.")
    parser.add_argument("--threads", type=int, default=1,
                        help="accepted for compatibility; execution is "
                             "single-threaded and results never depend on it")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("check", help="run the seeded invariant suite")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_check)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("--module", required=True,
                   choices=list(GRADCHECK_MODULES) + ["all"])
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_gradcheck)

    p = sub.add_parser("count", help="parameter and flop accounting")
    p.add_argument("--variant", default="baseline",
                   help=f"one of {', '.join(_VARIANTS)}")
    p.add_argument("--imgsz", type=int, default=640)
    p.add_argument("--json", action="store_true")
    p.add_argument("--ablation", action="store_true",
                   help="print all eight flag combinations")
    p.set_defaults(fn=cmd_count)

    p = sub.add_parser("run", help="forward one module on .tns files")
    p.add_argument("--module", required=True, choices=sorted(_RUNNABLE))
    p.add_argument("--weights", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("parity", help="compare against golden triples")
    p.add_argument("--golden", required=True)
    p.set_defaults(fn=cmd_parity)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
