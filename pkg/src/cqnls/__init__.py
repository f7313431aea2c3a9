"""Numerical laboratory for small solitary waves of the 1D cubic-quintic NLS."""

from .grid import Grid, GridFn, diff, inner, integrate, norm, solve_shifted
from .profiles import E_correction, SolitonProfile, make_profile, xi_Q
from .spectral import (GoldenRulePair, InternalMode, bs_scalar,
                       build_internal_mode, direct_eigen_oracle, solve_A,
                       solve_alpha, solve_g, uniqueness_probe)
from .operators import (KOperator, OperatorBundle, build_K,
                        check_conjugation_first, check_conjugation_second,
                        k_spectrum_probe, repulsivity_integral,
                        simon_inequality_check, virial_identity_check)
from .golden_rule import (GammaReport, RatVec4, gamma0_exact, gamma0_numeric,
                          gamma_numeric, recursion_step, richardson_slope)
from .dynamics import (ModulationFrame, PhysicalGrid, SimConfig, conserved,
                       decompose, fit_modulation, run, step)

__version__ = "0.1.0"
