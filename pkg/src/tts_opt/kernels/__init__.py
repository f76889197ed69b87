"""Fused simulation loops, each in a numba flavour and a numpy flavour."""
