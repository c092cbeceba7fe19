"""Radius of the progeny generating function and largest components of
inhomogeneous random graphs on finite type spaces."""

from .kernel import (Kernel, TypeSpace, apply_T, build_kernel, check_conditions,
                     constant_kernel, hs_norm, kernel_from_config, operator_norm, psi,
                     tilt_measure, truncate_measure)
from .fixed_point import (IterationConfig, negative_solution, progeny_gf, r_kappa,
                          r_transformed, scalar_r_closed_form, survival_prob)

__version__ = "0.1.0"
