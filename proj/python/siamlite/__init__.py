from ._core import (
    BBox,
    Error,
    FormatError,
    InvalidArgument,
    Model,
    Sequence,
    ShapeError,
    TrackerConfig,
    TrainConfig,
    center_error,
    conv2d,
    cross_correlate,
    depthwise_conv2d,
    evaluate,
    iou,
    load_sequences,
    prune,
    quantize,
    run_cli,
    save_sequence,
    synth_sequence,
    train,
)

__all__ = [
    "BBox",
    "Error",
    "FormatError",
    "InvalidArgument",
    "Model",
    "Sequence",
    "ShapeError",
    "TrackerConfig",
    "TrainConfig",
    "center_error",
    "conv2d",
    "cross_correlate",
    "depthwise_conv2d",
    "evaluate",
    "iou",
    "load_sequences",
    "prune",
    "quantize",
    "run_cli",
    "save_sequence",
    "synth_sequence",
    "train",
]
