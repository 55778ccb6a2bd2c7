"""Dense tensor value type, deterministic RNG and the reverse-mode tape.

Conventions fixed here and relied on everywhere else:

* A ``Tensor`` is an immutable rank<=4 dense float array.  Feature maps are
  laid out ``(N, C, H, W)``; convolution weights ``(O, I/groups, Kh, Kw)``.
  Data is stored C-contiguous, i.e. row-major with the last index fastest.
* Production arithmetic is float32.  Gradient checking promotes every
  tensor to float64 (see ``gradcheck.py``); ops preserve the input dtype.
* All reductions (convolution sums, matmul, pooling means) run through
  numpy's single-threaded fixed-order kernels (``einsum`` without
  optimization, ``sum``/``mean``).  For a given input shape the summation
  order is fixed, so every evaluation is bitwise reproducible and
  independent of thread counts.

RNG update rule (normative, bit-for-bit):

    GAMMA = 0x9E3779B97F4A7C15
    draw i (1-based since seeding):  s_i = (seed + i*GAMMA) mod 2^64
                                     z   = s_i
                                     z  ^= z >> 30;  z *= 0xBF58476D1CE4E5B9  (mod 2^64)
                                     z  ^= z >> 27;  z *= 0x94D049BB133111EB  (mod 2^64)
                                     z  ^= z >> 31
    uniform in [lo, hi):  u = float32(z >> 40) * float32(2^-24)
                          value = float32(lo) + float32(hi - lo) * u,
    clamped to the largest float32 below hi.  The state after n draws is
    ``(seed + n*GAMMA) mod 2^64``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = ["Tensor", "Rng", "Tape", "TapeNode", "rand_uniform", "backward"]

_MAX_RANK = 4

# op-id -> adjoint rule, populated by ops.py at import time
ADJOINTS: dict = {}


class Tensor:
    """Immutable dense float tensor of rank 1..4."""

    __slots__ = ("dims", "data")

    def __init__(self, data: np.ndarray, dims: tuple[int, ...] | None = None):
        arr = np.ascontiguousarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if dims is not None:
            arr = arr.reshape(dims)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        if arr.ndim > _MAX_RANK:
            raise ValueError(f"rank {arr.ndim} exceeds {_MAX_RANK}")
        if any(d < 1 for d in arr.shape):
            raise ValueError("empty tensor")
        self.dims = tuple(int(d) for d in arr.shape)
        self.data = arr

    @classmethod
    def zeros(cls, dims: tuple[int, ...], dtype=np.float32) -> "Tensor":
        return cls(np.zeros(dims, dtype=dtype))

    @classmethod
    def full(cls, dims: tuple[int, ...], value: float, dtype=np.float32) -> "Tensor":
        return cls(np.full(dims, value, dtype=dtype))

    @classmethod
    def scalar(cls, value: float, dtype=np.float32) -> "Tensor":
        return cls(np.asarray([value], dtype=dtype))

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def flat(self) -> np.ndarray:
        """Row-major flat view of the payload."""
        return self.data.reshape(-1)

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype))

    def item(self) -> float:
        if self.size != 1:
            raise ValueError("item() requires a scalar tensor")
        return float(self.flat[0])

    def __repr__(self) -> str:
        return f"Tensor(dims={self.dims}, dtype={self.data.dtype})"


# ---------------------------------------------------------------------------
# deterministic RNG


_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


class Rng:
    """Counter-based splitmix64 generator; see the module docstring for the
    normative update rule."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = int(seed) & 0xFFFFFFFFFFFFFFFF

    def _next_words(self, n: int) -> np.ndarray:
        idx = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + idx * _GAMMA
            z ^= z >> np.uint64(30)
            z *= _MIX1
            z ^= z >> np.uint64(27)
            z *= _MIX2
            z ^= z >> np.uint64(31)
        self.state = (self.state + n * 0x9E3779B97F4A7C15) & 0xFFFFFFFFFFFFFFFF
        return z

    def uniform(self, n: int, lo: float, hi: float) -> np.ndarray:
        """n float32 draws in [lo, hi)."""
        z = self._next_words(n)
        u = (z >> np.uint64(40)).astype(np.float32) * np.float32(2.0 ** -24)
        vals = np.float32(lo) + np.float32(hi - lo) * u
        # float32 rounding may touch hi for extreme ranges; keep [lo, hi)
        return np.minimum(vals, np.nextafter(np.float32(hi), np.float32(lo)))


def rand_uniform(rng: Rng, dims: tuple[int, ...] | list, lo: float, hi: float) -> Tensor:
    """Deterministic uniform tensor in [lo, hi); advances rng by product(dims)."""
    if not lo < hi:
        raise ValueError(f"require lo < hi, got {lo} >= {hi}")
    dims = tuple(int(d) for d in dims)
    if len(dims) == 0 or any(d < 1 for d in dims):
        raise ValueError("empty tensor")
    n = math.prod(dims)
    return Tensor(rng.uniform(n, lo, hi), dims)


# ---------------------------------------------------------------------------
# reverse-mode tape


@dataclass
class TapeNode:
    op: str
    input_ids: tuple[int, ...]
    output_id: int
    saved: dict = field(default_factory=dict)


class Tape:
    """Topologically ordered record of primitive evaluations.

    Ops append nodes in execution order, so every node's inputs already
    carry ids when the node is recorded; the backward pass walks the node
    list exactly once in reverse.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []
        self.gradients: dict[int, Tensor] = {}
        self._ids: dict[int, int] = {}  # id(obj) -> tensor id
        self._tensors: list[Tensor] = []
        self._outputs: set[int] = set()

    def watch(self, t: Tensor) -> int:
        key = id(t)
        tid = self._ids.get(key)
        if tid is None:
            tid = len(self._tensors)
            self._ids[key] = tid
            self._tensors.append(t)
        return tid

    def id_of(self, t: Tensor) -> int:
        tid = self._ids.get(id(t))
        if tid is None:
            raise ValueError("tensor not on tape")
        return tid

    def tensor(self, tid: int) -> Tensor:
        return self._tensors[tid]

    def record(self, op: str, inputs: tuple[Tensor, ...], output: Tensor, **saved) -> None:
        in_ids = tuple(self.watch(t) for t in inputs)
        out_id = self.watch(output)
        self.nodes.append(TapeNode(op, in_ids, out_id, saved))
        self._outputs.add(out_id)

    def leaf_ids(self) -> list[int]:
        """Ids of tensors that were consumed but never produced on this tape."""
        return [tid for tid in range(len(self._tensors)) if tid not in self._outputs]

    def grad(self, t: Tensor) -> Tensor | None:
        return self.gradients.get(self._ids.get(id(t), -1))


def backward(tape: Tape, loss: Tensor) -> dict[int, Tensor]:
    """Accumulate adjoints of ``loss`` for every tensor on the tape.

    Returns the tensor-id -> adjoint map (also stored on ``tape.gradients``);
    adjoint dims always equal the dims of the tensor they belong to.
    """
    loss_id = tape.id_of(loss)
    if loss.size != 1:
        raise ValueError("loss must be a scalar")
    if loss_id not in tape._outputs:
        raise ValueError("loss was not produced on the tape")

    grads: dict[int, np.ndarray] = {loss_id: np.ones_like(loss.data)}

    def accumulate(tid: int, g: np.ndarray) -> None:
        if tid in grads:
            grads[tid] = grads[tid] + g
        else:
            grads[tid] = g

    for node in reversed(tape.nodes):
        gout = grads.get(node.output_id)
        if gout is None:
            continue
        rule = ADJOINTS.get(node.op)
        if rule is None:
            raise KeyError(f"no adjoint registered for op '{node.op}'")
        input_grads = rule(node.saved, gout)
        for tid, g in zip(node.input_ids, input_grads):
            if g is not None:
                accumulate(tid, g)

    tape.gradients = {tid: Tensor(g) for tid, g in grads.items()}
    return tape.gradients
