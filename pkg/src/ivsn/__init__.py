"""Invariant visual search: attention maps, fixation simulation, scanpath metrics."""

__version__ = "0.1.0"

from .tensor import (
    AttentionMap,
    FeatureMap,
    MapExhausted,
    PixelWindow,
    argmax_pixel,
    normalize01,
    read_tensor,
    suppress_window,
    write_tensor,
    xcorr2d_multichannel,
)
from .features import (
    GrayImage,
    PrecomputedBackend,
    RandomConvBackend,
    tile_image,
)
from .attention import (
    MemoryFunction,
    ModulationConfig,
    SizeConstraint,
    apply_memory,
    apply_size_constraint,
    compute_attention,
)
from .saliency import ittikoch_saliency
from .policies import (
    ExperimentConfig,
    Scanpath,
    SearchPolicy,
    Trial,
    oracle_check,
    recognition_check,
    run_trial,
    sliding_window_path,
)
from .metrics import (
    cumulative_performance,
    expected_random_distance,
    fixation_count_correlation,
    meanshift_cluster,
    saccade_size_stats,
    scanpath_score,
)

__all__ = [name for name in dir() if not name.startswith("_")]
