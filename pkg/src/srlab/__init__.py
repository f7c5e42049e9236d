"""Numerical laboratory for weighted sub-Laplacians on step-two Metivier groups.

The package computes, at desk scale, everything checkable about the operator
family associated with the weights exp(-N^alpha): group calculus and the
homogeneous norm, the conjugated Schrodinger potential and its two-sided
bounds, quadrature experiments for the ground-state transform and for
central-translate quasi-modes, sparse eigenvalue studies of the truncated
operator, and Monte Carlo thinness measurements of potential sublevel sets.
"""

from .group import (ConditionEstimate, GroupPoint, MetivierStructure, dilate,
                    homogeneous_dimension, identity, inverse, make_heisenberg,
                    multiply, point, verify_metivier)
from .norms import (BallSpec, GammaEstimate, estimate_gamma, in_ball,
                    kaplan_norm, quasi_distance, weight)
from .potential import (PotentialConstants, admissibility_report,
                        check_sandwich, essential_inf_estimate, grad_norm_sq,
                        grad_weight, laplacian_weight, potential_bounds,
                        potential_value, sub_laplacian_norm)
from .forms import (QuadratureGrid, SmoothBump, TranslatedBump, WeylRecord,
                    apply_sub_laplacian, apply_xj, conjugation_residual,
                    dirichlet_form, weyl_residual, weyl_scan, weyl_sequence)
from .spectral import (Grid3, SparseSymmetricOperator, SpectrumResult,
                       assemble_derivative, assemble_operator,
                       box_convergence_study, eigen_count_below, lanczos_lowest)
from .sublevel import (ScalingFit, SublevelSpec, ThinnessEstimate,
                       ball_intersection_volume, cylinder_radius, in_sublevel,
                       scaling_fit, thinness_integral)

__version__ = "0.1.0"
