"""Point-learning pose decoding with a desk-scale mimicking harness."""

from .decode import (
    DecodeConfig,
    HeatmapBundle,
    PersonPose,
    PoseKeypoint,
    decode_boxes,
    decode_keypoints,
    decode_poses,
    group_keypoints_geometric,
    multi_scale_fuse,
)
from .grid import (
    Box,
    Grid,
    Point,
    bilinear_resize,
    collapse_channels,
    read_grid,
    render_gaussian,
    write_grid,
)
from .pointops import (
    PoolKind,
    cascade_corner_pool,
    center_pool,
    local_peaks,
    top_n_points,
)

__all__ = [
    "Box",
    "DecodeConfig",
    "Grid",
    "HeatmapBundle",
    "PersonPose",
    "Point",
    "PoolKind",
    "PoseKeypoint",
    "bilinear_resize",
    "cascade_corner_pool",
    "center_pool",
    "collapse_channels",
    "decode_boxes",
    "decode_keypoints",
    "decode_poses",
    "group_keypoints_geometric",
    "local_peaks",
    "multi_scale_fuse",
    "read_grid",
    "render_gaussian",
    "top_n_points",
    "write_grid",
]
