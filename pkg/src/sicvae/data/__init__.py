from .cubes import (
    EPOCH_YEAR,
    EmptySplitError,
    HindcastCube,
    ObsCube,
    Split,
    SplitSpec,
    ensemble_mean,
    month_index,
    month_label,
    pairs_from_months,
    pairs_to_months,
    temporal_split,
)
from .io import (
    CubeFormatError,
    MalformedHeaderError,
    TruncatedPayloadError,
    VersionMismatchError,
    read_cube,
    write_cube,
)
from .synthetic import SyntheticConfig, SyntheticTruth, injected_bias, squash, synthetic_generate

__all__ = [
    "EPOCH_YEAR",
    "CubeFormatError",
    "EmptySplitError",
    "HindcastCube",
    "MalformedHeaderError",
    "ObsCube",
    "Split",
    "SplitSpec",
    "SyntheticConfig",
    "SyntheticTruth",
    "TruncatedPayloadError",
    "VersionMismatchError",
    "ensemble_mean",
    "injected_bias",
    "month_index",
    "month_label",
    "pairs_from_months",
    "pairs_to_months",
    "read_cube",
    "squash",
    "synthetic_generate",
    "temporal_split",
    "write_cube",
]
