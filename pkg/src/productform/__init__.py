"""Product-form equilibrium distributions for multi-plane queueing processes."""
from .config import DEFAULT_TOL, Tolerances
from .errors import *  # noqa: F401,F403
from .model import (BoundarySpec, ProcessSpec, RatePlane, build_spec, check_ergodicity,
                    erlang2_hetero, generating_functions, hypo2_batch, load_model, load_model_file,
                    mxmc_breakdown, preset)
from .spectral import (ProductBasis, ProductForm, SignVector, aggregate, beta_i, build_basis,
                       roots_k1, roots_symmetric)
from .equilibrium import (EquilibriumSolution, assemble_boundary, evaluate_p, evaluate_p_aggregated,
                          solve_boundary, solve_equilibrium)
from .passage import evaluate_F, level_matrices, waiting_time_mixture

__version__ = "0.1.0"
