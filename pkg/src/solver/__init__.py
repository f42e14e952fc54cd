from src.solver.path import (
    PathEntry,
    RegularizationPath,
    fit_path,
    intercept_only_model,
    lambda_max,
    lambda_schedule,
    sparsify,
    zero_solution_gradient,
)
from src.solver.prox import ProxSpec, prox_elementwise, prox_group, prox_group_gated
from src.solver.saga import SagaSolver, SagaState, auto_step_size, elastic_objective, saga_fit

__all__ = [
    "PathEntry",
    "ProxSpec",
    "RegularizationPath",
    "SagaSolver",
    "SagaState",
    "auto_step_size",
    "elastic_objective",
    "fit_path",
    "intercept_only_model",
    "lambda_max",
    "lambda_schedule",
    "prox_elementwise",
    "prox_group",
    "prox_group_gated",
    "saga_fit",
    "sparsify",
    "zero_solution_gradient",
]
