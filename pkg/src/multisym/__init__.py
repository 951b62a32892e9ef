"""Lattice covariant phase space for first-order field theories in 1+1 dimensions.

Modules: ``affine`` and ``jets`` (coordinate algebra), ``ad`` (second-order
forward AD), ``models`` (Lagrangians, Legendre maps), ``lattice`` (grids and
stencils), ``dynamics`` (field equations, solvers, Jacobi operators),
``green`` (retarded/advanced/causal inverses), ``symplectic`` (currents and
slice forms), ``peierls`` (functionals and the covariant bracket), ``cli``.
"""

from .lattice import Grid, Region, Section
from .models import get_model

__all__ = ["Grid", "Region", "Section", "get_model"]
__version__ = "0.1.0"
