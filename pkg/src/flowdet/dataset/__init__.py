from .schema import (
    BoxAnnotation, Category, FrameImage, SchemaError, SplitSpec, ValidationError,
    VideoAnnotationSet, VideoInfo, standard_categories, STANDARD_CATEGORIES,
)
from .stats import compute_stats, stats_to_csv
from .tools import (
    TileResult, TileSpec, augment_clip, densify_tracks, interpolate_keyframes,
    merge_movement_intervals, round_half_up, sample_clip_transform, tile_and_downsample,
    transform_boxes, warp_frame,
)
from .synth import SceneSpec, SynthResult, load_frames, synthesize, write_dataset

__all__ = [
    "BoxAnnotation", "Category", "FrameImage", "SchemaError", "SplitSpec", "ValidationError",
    "VideoAnnotationSet", "VideoInfo", "standard_categories", "STANDARD_CATEGORIES",
    "compute_stats", "stats_to_csv", "TileResult", "TileSpec", "augment_clip",
    "densify_tracks", "interpolate_keyframes", "merge_movement_intervals", "round_half_up",
    "sample_clip_transform", "tile_and_downsample", "transform_boxes", "warp_frame",
    "SceneSpec", "SynthResult", "load_frames", "synthesize", "write_dataset",
]
