"""Fast Smoluchowski coagulation solver on mosaic-skeleton kernel approximations."""

__version__ = "0.1.0"

from .aca import BlockGenerator, LowRankFactor, RankCapExceeded, aca_approximate
from .integrate import IntegratorConfig, State, integrate, step_rk4, step_rkf45
from .kernels import KernelSpec, get_kernel, kernel_eval, registry_list
from .metrics import MomentReport, m1_error, m2_relative_error, moments
from .mosaic import (
    MosaicKernel,
    Partition,
    Strategy,
    build_mosaic,
    build_partition,
    load_mosaic,
    mosaic_rank,
    save_mosaic,
)
from .operators import apply_f1, apply_f2, apply_rhs
from .oracles import analytic_constant_solution, direct_f1, direct_f2, svd_block_error

__all__ = [
    "BlockGenerator",
    "IntegratorConfig",
    "KernelSpec",
    "LowRankFactor",
    "MomentReport",
    "MosaicKernel",
    "Partition",
    "RankCapExceeded",
    "State",
    "Strategy",
    "aca_approximate",
    "analytic_constant_solution",
    "apply_f1",
    "apply_f2",
    "apply_rhs",
    "build_mosaic",
    "build_partition",
    "direct_f1",
    "direct_f2",
    "get_kernel",
    "integrate",
    "kernel_eval",
    "load_mosaic",
    "m1_error",
    "m2_relative_error",
    "moments",
    "mosaic_rank",
    "registry_list",
    "save_mosaic",
    "step_rk4",
    "step_rkf45",
    "svd_block_error",
]
