"""Low-regularity time integrators derived from decorated trees."""

from .engine import (RegularityDomain, Scheme, build_scheme, duhamel_residual,
                     dominant_decomposition, enumerate_trees, k_approx,
                     local_error_term, pi_approx, pi_exact, taylor_remainder,
                     upsilon_root)
from .equations import (EquationSpec, Monomial, Trig, get_equation,
                        gross_pitaevskii, nls, sine_gordon)
from .integrators import (StepperConfig, kg_to_u, make_stepper,
                          reference_solve, run_steps, step_gp1,
                          step_gp1_classical, step_gp2, step_gp2_stab,
                          step_sg1, step_sg1_classical, u_to_kg)
from .operators import (OperatorExpr, OperatorSet, abs_grad, d_x, delta,
                        i_delta, i_sqrt_shift, max_op, ominus, oplus, p_dom)
from .spectral import (Field, Grid, apply_operator, commutator, phi_filter,
                       pointwise_apply, rough_data, semigroup, sobolev_norm)
from .trees import (DecoratedTree, Forest, ZERO_TREE, decompose, deg, graft,
                    n_plus, node, project_Dr, symmetry_factor_root)

__version__ = "0.1.0"
