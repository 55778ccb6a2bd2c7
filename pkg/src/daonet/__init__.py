"""Composable differentiable operators for the DAONet detector blocks.

The package provides a small NCHW tensor core with a reverse-mode tape,
the three feature-enhancement blocks (dual-attention fusion, occlusion
gate head, dynamic-synthesis convolution), a toy-to-nominal scale detector
assembly with exact parameter/flop accounting, and the ``daonet`` CLI that
drives invariant, gradient, cost, determinism and parity checks.
"""

from . import ops as _ops  # registers adjoint rules on import  # noqa: F401
from .tensor import Rng, Tape, Tensor, backward, rand_uniform

__all__ = ["Rng", "Tape", "Tensor", "backward", "rand_uniform"]
__version__ = "0.1.0"
