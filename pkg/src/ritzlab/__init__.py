"""Variational PDE solving with neural-network parameterizations.

Subpackages cover scalar-tape automatic differentiation, feed-forward
architectures with boundary cutoffs, stochastic quadrature, memory-based
Monte Carlo accumulation, first-order optimizers, a 1D finite element
kernel with preconditioners and a dual-norm oracle, the mesh-free
training methods (generalized/double Ritz, weak adversarial networks,
adjoint Ritz), the dynamic FEM-mimicking architecture, closed-form
oracles, and the experiment CLI.
"""

from . import (
    autodiff,
    cli,
    deepfem,
    fem1d,
    memory,
    methods,
    network,
    optimizers,
    oracles,
    problems,
    quadrature,
    seeding,
)

__all__ = [
    "autodiff",
    "cli",
    "deepfem",
    "fem1d",
    "memory",
    "methods",
    "network",
    "optimizers",
    "oracles",
    "problems",
    "quadrature",
    "seeding",
]

__version__ = "0.1.0"
