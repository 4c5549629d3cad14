"""Quadratic-form toolkit for learning and discovering O(p,q) equivariance.

Submodules: ``numerics`` (Jacobi eigen/SVD, matrix exponential), ``quadform``
(forms, pseudonorm, gauge), ``group`` (certified elements, reflections,
canonical alignment), ``autodiff`` (reverse-mode tape), ``model`` (the
phi_s / phi_n network), ``training``, ``tasks``, ``metrics``,
``experiment`` / ``cli`` (config-driven runs) and ``verify``.
"""

from .quadform import QuadraticForm, canonical_gauge, pseudonorm, symmetrize

__version__ = "0.1.0"

__all__ = ["QuadraticForm", "canonical_gauge", "pseudonorm", "symmetrize", "__version__"]
