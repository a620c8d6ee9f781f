"""Diffusion generative modeling on symmetric manifolds (torus, sphere, SO(n), U(n))."""

import os as _os

# single-threaded BLAS unless the user says otherwise: reductions change
# summation order across thread counts and break bitwise reproducibility
if "numpy" not in __import__("sys").modules:
    for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        _os.environ.setdefault(_var, "1")

from .errors import (
    ConfigError,
    ContractError,
    DegeneracyError,
    NumericalError,
    SingularityError,
)
from .manifolds import (
    Manifold,
    SpecialOrthogonal,
    Sphere,
    Torus,
    Unitary,
    make_manifold,
    manifold_from_json,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "ContractError",
    "DegeneracyError",
    "NumericalError",
    "SingularityError",
    "Manifold",
    "Torus",
    "Sphere",
    "SpecialOrthogonal",
    "Unitary",
    "make_manifold",
    "manifold_from_json",
    "__version__",
]
