"""Bayesian sparse linear estimation via approximate message-passing.

Finite-size AMP solvers with pluggable priors and sensing operators
(dense i.i.d Gaussian, randomized fast-Hadamard/Fourier blocks,
spatially-coupled composites), asymptotic state-evolution and
replica-potential analysis with phase-transition finders, and two
error-correction pipelines: sparse superposition codes over the AWGN
channel and robust coding of real-valued signals against gross errors.
"""

from . import operators, priors, amp, learning, state_evolution, potential, codes

__version__ = "0.1.0"

__all__ = [
    "operators",
    "priors",
    "amp",
    "learning",
    "state_evolution",
    "potential",
    "codes",
]
