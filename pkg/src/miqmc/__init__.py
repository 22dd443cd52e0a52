"""Multi-index quasi-Monte Carlo for elliptic PDEs with lognormal coefficients."""
from .estimator import RunConfig, run, run_mimc, run_miqmc, run_single_level
from .field import FIELD_PRESETS, MaternParams, build_kl_basis, evaluate_field
from .mindex import IndexSetSpec, Problem, generate_index_set

__version__ = "0.1.0"
