from .params import SgmParams, SgmParamError
from .pipeline import (
    AGGREGATE_BACKEND,
    aggregate_paths,
    census_transform,
    compute_disparity,
    lr_check,
    matching_cost,
    select_disparity,
    speckle_filter,
)

__all__ = [
    "SgmParams",
    "SgmParamError",
    "AGGREGATE_BACKEND",
    "aggregate_paths",
    "census_transform",
    "compute_disparity",
    "lr_check",
    "matching_cost",
    "select_disparity",
    "speckle_filter",
]
