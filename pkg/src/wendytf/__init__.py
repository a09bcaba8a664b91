"""Weak-form ODE parameter estimation with data-driven test-function radius selection."""

from .changepoint import ChangepointResult, detect_changepoint
from .grid import (
    NoiseConvention,
    NoiseSpec,
    TimeGrid,
    Trajectory,
    add_noise,
    e2_metric,
    make_grid,
)
from .integration_error import (
    ErrorCurve,
    EulerMaclaurinConfig,
    build_I_vector,
    choose_truncation_order,
    ehat_curve,
    estimate_eint,
    residual_decomposition,
    true_eint_curve,
)
from .regression import (
    EstimationResult,
    IrlsConfig,
    WeakSystem,
    assemble_weak_system,
    build_covariance_factor,
    estimate,
    wendy_irls,
    wendy_ols,
)
from .selection import MgSelection, SlSelection, mg_ehat_rms, mg_select, sl_select
from .systems import OdeSystem, builtin_system, load_system, simulate
from .testfunctions import (
    ReferenceFunction,
    TestFunctionBasis,
    build_basis,
    eval_reference,
    psi_hat_closed_form,
)

__version__ = "0.1.0"
