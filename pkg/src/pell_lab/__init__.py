"""Desk-scale numerical checks for p-elliptic divergence-form operators.

Subpackages: :mod:`field` (grids and coefficient tuples), :mod:`pell`
(class algebra), :mod:`bellman` (the Bellman function and mollifier),
:mod:`hess` (generalized Hessian forms), :mod:`cutoff` (the tailored
truncation sequence), :mod:`semigroup` (discrete evolution experiments)
and :mod:`cli` (scenario runner).
"""

from .field import (
    CoefficientTuple,
    ComplexMatrix,
    GridDomain,
    SubcriticalityCert,
    ellipticity_constants,
    tuple_fields,
)
from .pell import (
    adjoint,
    check_class,
    check_perturbed_class,
    check_subcritical,
    delta_p,
    gamma_p,
    jp_apply,
    mu_p,
    perturb,
    rotate,
)
from .bellman import BellmanParams, MollifierParams, mollify, q_eval, q_grad, q_hess

__version__ = "0.1.0"
