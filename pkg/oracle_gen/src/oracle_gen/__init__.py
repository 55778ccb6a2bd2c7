"""Independent golden-triple generator for the daonet parity harness.

Re-implements the three detector blocks on torch, shares no code with the
primary package, and speaks only its documented interchange formats.
"""

__version__ = "0.1.0"
