"""Poisson image deblurring with second-order TGV regularization.

The package restores images corrupted by convolution blur and Poisson
noise by minimizing a Kullback-Leibler fidelity plus a second-order total
generalized variation penalty under a nonnegativity constraint.  A
three-block ADMM solves the model at a fixed fidelity weight; a balancing
fixed-point iteration selects the weight automatically.
"""

from .autoreg import AutoRegConfig, AutoRegReport, initial_lambda, update_lambda
from .harness import (
    DegradationSpec,
    TestProblem,
    degrade,
    disk_psf,
    load_problem,
    make_phantom,
    poisson_field,
    poisson_sample,
    relative_error,
    save_problem,
    snr_db,
    snr_scale,
)
from .linops import (
    BccbOperator,
    GradField,
    Image,
    SingularSystemError,
    SymField,
    build_psf_spectrum,
    dh_operator,
    dv_operator,
    grad,
    grad_adjoint,
    identity_operator,
    solve_spectral,
    sym_deriv,
    sym_deriv_adjoint,
)
from .model import (
    ModelParams,
    PoissonData,
    kl_divergence,
    kl_gradient,
    kl_weights,
    norm21_2n,
    norm21_4n,
    prox_group_norm,
    tgv2_value,
)
from .solvers import (
    AdmmConfig,
    AdmmSolver,
    AdmmState,
    AdmmTrace,
    DivergenceError,
    admm_solve,
)

__version__ = "0.1.0"

__all__ = [
    "AdmmConfig",
    "AdmmSolver",
    "AdmmState",
    "AdmmTrace",
    "AutoRegConfig",
    "AutoRegReport",
    "BccbOperator",
    "DegradationSpec",
    "DivergenceError",
    "GradField",
    "Image",
    "ModelParams",
    "PoissonData",
    "SingularSystemError",
    "SymField",
    "TestProblem",
    "admm_solve",
    "build_psf_spectrum",
    "degrade",
    "dh_operator",
    "disk_psf",
    "dv_operator",
    "grad",
    "grad_adjoint",
    "identity_operator",
    "initial_lambda",
    "kl_divergence",
    "kl_gradient",
    "kl_weights",
    "load_problem",
    "make_phantom",
    "norm21_2n",
    "norm21_4n",
    "poisson_field",
    "poisson_sample",
    "prox_group_norm",
    "relative_error",
    "save_problem",
    "snr_db",
    "snr_scale",
    "solve_spectral",
    "sym_deriv",
    "sym_deriv_adjoint",
    "tgv2_value",
    "update_lambda",
]
