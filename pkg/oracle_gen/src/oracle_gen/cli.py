"""CLI: emit one golden (weights, input, expected-output) triple per call."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import torch

from .modules import BLOCK_CONFIGS, BLOCKS
from .tnsfmt import write_tensor, write_weightstore


def generate(module: str, seed: int, out_dir: str | Path) -> Path:
    """Write weights.ws, input.tns, expected.tns and meta.json; returns the
    triple directory.  Identical (module, seed) always yields identical files."""
    if module not in BLOCKS:
        raise ValueError(f"unsupported module '{module}' "
                         f"(choose from {', '.join(sorted(BLOCKS))})")
    cfg = BLOCK_CONFIGS[module]
    make_weights, forward = BLOCKS[module]

    gen = torch.Generator().manual_seed(seed)
    entries = make_weights(gen, cfg)
    weights = {name: t for name, t in entries}
    x = 2.0 * torch.rand(cfg["batch"], cfg["channels"], cfg["height"],
                         cfg["width"], generator=gen) - 1.0
    with torch.no_grad():
        y = forward(x, weights, cfg)

    case = Path(out_dir) / f"{module}-seed{seed}"
    case.mkdir(parents=True, exist_ok=True)
    write_weightstore(case / "weights.ws",
                      [(name, t.numpy()) for name, t in entries])
    write_tensor(case / "input.tns", x.numpy())
    write_tensor(case / "expected.tns", y.numpy())
    (case / "meta.json").write_text(json.dumps(
        {"module": module, "seed": seed, "config": cfg,
         "weights": "weights.ws", "input": "input.tns",
         "expected": "expected.tns"}, indent=2) + "\n")
    return case


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="oracle-gen",
        description="Generate golden triples for `daonet parity`.")
    parser.add_argument("--module", required=True)
    parser.add_argument("--seed", type=int, required=True)
    parser.add_argument("--out", required=True)
    args = parser.parse_args(argv)
    try:
        case = generate(args.module, args.seed, args.out)
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(case)
    return 0


if __name__ == "__main__":
    sys.exit(main())
