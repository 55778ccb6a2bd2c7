"""Central-difference verification of tape adjoints.

Protocol: every participating tensor is promoted to float64 before any
evaluation, the analytic gradient comes from one taped run, then probe
coordinates are compared against (f(x+h) - f(x-h)) / 2h with h = 1e-3.
A coordinate passes when the symmetric relative error stays below the
threshold wherever |analytic| > 1e-6; below that floor the difference
itself must be below 1e-6.
"""

from __future__ import annotations

from typing import Callable, Iterable

import numpy as np

from .tensor import Tape, Tensor, backward

__all__ = ["GroupResult", "check_gradients", "promote_f64",
           "DEFAULT_H", "REL_TOL", "ABS_FLOOR"]

DEFAULT_H = 1e-3
REL_TOL = 1e-4
ABS_FLOOR = 1e-6


class GroupResult:
    def __init__(self, group: str, checked: int):
        self.group = group
        self.checked = checked
        self.max_err = 0.0
        self.max_abs_grad = 0.0

    @property
    def ok(self) -> bool:
        return self.max_err < REL_TOL

    def __repr__(self) -> str:
        return (f"GroupResult({self.group}: err={self.max_err:.3e}, "
                f"checked={self.checked})")


def promote_f64(entries: Iterable[tuple[str, Tensor]]) -> None:
    """Switch tensors to float64 payloads in place (gradcheck mode)."""
    for _, t in entries:
        t.data = np.ascontiguousarray(t.data.astype(np.float64))


def _coord_error(analytic: float, fd: float) -> float:
    diff = abs(analytic - fd)
    if abs(analytic) > ABS_FLOOR:
        return diff / max(abs(analytic), abs(fd))
    # tiny true gradient: scale the absolute criterion onto the relative one
    return 0.0 if diff <= ABS_FLOOR else diff / ABS_FLOOR * REL_TOL


def check_gradients(loss_fn: Callable[[Tape | None], Tensor],
                    tensors: dict[str, Tensor],
                    h: float = DEFAULT_H,
                    max_probes_per_group: int | None = None) -> list[GroupResult]:
    """Compare tape adjoints of ``loss_fn()`` against central differences.

    ``tensors`` maps group name -> leaf tensor; the caller promotes leaves
    to float64 first (``promote_f64``).  Probing perturbs the live arrays
    and restores them, so the same closure serves every evaluation.  With
    ``max_probes_per_group`` set, larger groups are probed only at their
    strongest-|gradient| coordinates: those carry the best ratio of signal
    to finite-difference roundoff, and any wrong adjoint rule corrupts
    them as much as the weak ones.  Otherwise every coordinate is probed.
    """
    tape = Tape()
    loss = loss_fn(tape)
    backward(tape, loss)

    results = []
    for name, t in tensors.items():
        g = tape.grad(t)
        ga = (g.data if g is not None else np.zeros_like(t.data)).reshape(-1)
        flat = t.data.reshape(-1)
        n = flat.size
        if max_probes_per_group is not None and n > max_probes_per_group:
            order = np.argsort(-np.abs(ga), kind="stable")
            idx = sorted(int(i) for i in order[:max_probes_per_group])
        else:
            idx = list(range(n))
        res = GroupResult(name, len(idx))
        res.max_abs_grad = float(np.max(np.abs(ga)))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            f_plus = loss_fn(None).item()
            flat[i] = orig - h
            f_minus = loss_fn(None).item()
            flat[i] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            err = _coord_error(float(ga[i]), fd)
            if err > res.max_err:
                res.max_err = err
        results.append(res)
    return results
