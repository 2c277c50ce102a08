"""Heatmap bundles to boxes and per-person poses.

Boxes come from N^2 corner pairing with a central-region center check: every
(top-left, bottom-right) peak pair with valid orientation forms a proposal,
and a proposal survives only if some center peak lies strictly inside the
proposal's central region (the box scaled by ``central_fraction`` about its
center). A surviving box is scored by the mean of its three point scores.

Keypoints are per-channel local peaks with an optional quarter-cell shift
toward the larger axis neighbor. Grouping assigns, per box and channel, the
best-scoring keypoint inside the box.

All coordinates here are heatmap cells; the CLI converts to input pixels.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .grid import Box, Grid, Point, bilinear_resize
from .pointops import local_peaks, threshold_points, top_n_points


@dataclass
class HeatmapBundle:
    """Pose (K channels) plus center / top-left / bottom-right heatmaps."""

    pose: Grid
    center: Grid
    top_left: Grid
    bottom_right: Grid
    stride: int = 4

    def __post_init__(self):
        shapes = {
            (g.height, g.width)
            for g in (self.pose, self.center, self.top_left, self.bottom_right)
        }
        if len(shapes) != 1:
            raise ValueError(f"bundle grids disagree on resolution: {shapes}")
        if self.stride < 1:
            raise ValueError(f"stride must be >= 1, got {self.stride}")

    @property
    def height(self) -> int:
        return self.pose.height

    @property
    def width(self) -> int:
        return self.pose.width

    @property
    def num_joints(self) -> int:
        return self.pose.channels


@dataclass(frozen=True)
class DecodeConfig:
    phi_det: float = 0.1
    phi_pose: float = 0.2
    top_n: int = 32
    central_fraction: float = 1.0 / 3.0
    max_boxes: int = 32
    subpixel: bool = True
    # 3x3 local-max suppression before top-N selection
    suppress_non_peaks: bool = True

    def __post_init__(self):
        if not (0.0 <= self.phi_det <= 1.0 and 0.0 <= self.phi_pose <= 1.0):
            raise ValueError("thresholds must be in [0,1]")
        if not 0.0 < self.central_fraction <= 1.0:
            raise ValueError("central_fraction must be in (0,1]")
        if self.top_n < 0 or self.max_boxes < 0:
            raise ValueError("top_n and max_boxes must be >= 0")


@dataclass(frozen=True)
class PoseKeypoint:
    x: float
    y: float
    score: float
    present: bool


@dataclass
class PersonPose:
    box: Box
    keypoints: list[PoseKeypoint] = field(default_factory=list)


def _det_peaks(grid: Grid, cfg: DecodeConfig) -> list[Point]:
    extract = local_peaks if cfg.suppress_non_peaks else threshold_points
    return top_n_points(extract(grid, cfg.phi_det), cfg.top_n)


def decode_boxes(b: HeatmapBundle, cfg: DecodeConfig) -> list[Box]:
    """Corner pairing with the central-region center filter."""
    tl_peaks = _det_peaks(b.top_left, cfg)
    br_peaks = _det_peaks(b.bottom_right, cfg)
    center_peaks = _det_peaks(b.center, cfg)

    boxes: dict[tuple[float, float, float, float], Box] = {}
    for tl in tl_peaks:
        for br in br_peaks:
            if not (tl.x < br.x and tl.y < br.y):
                continue
            cx = (tl.x + br.x) / 2.0
            cy = (tl.y + br.y) / 2.0
            half_w = (br.x - tl.x) * cfg.central_fraction / 2.0
            half_h = (br.y - tl.y) * cfg.central_fraction / 2.0
            best_center = None
            for c in center_peaks:
                if abs(c.x - cx) < half_w and abs(c.y - cy) < half_h:
                    if best_center is None or c.score > best_center.score:
                        best_center = c
            if best_center is None:
                continue
            score = (tl.score + br.score + best_center.score) / 3.0
            key = (tl.x, tl.y, br.x, br.y)
            if key not in boxes or score > boxes[key].score:
                boxes[key] = Box(tl.x, tl.y, br.x, br.y, score)

    ordered = sorted(
        boxes.values(), key=lambda bx: (-bx.score, bx.x1, bx.y1, bx.x2, bx.y2)
    )
    return ordered[: cfg.max_boxes]


def _subpixel_shift(plane: np.ndarray, ix: int, iy: int) -> tuple[float, float]:
    """Quarter-cell shift toward the larger axis neighbor, interior cells only."""
    h, w = plane.shape
    x, y = float(ix), float(iy)
    if 0 < ix < w - 1:
        right, left = plane[iy, ix + 1], plane[iy, ix - 1]
        if right > left:
            x += 0.25
        elif left > right:
            x -= 0.25
    if 0 < iy < h - 1:
        down, up = plane[iy + 1, ix], plane[iy - 1, ix]
        if down > up:
            y += 0.25
        elif up > down:
            y -= 0.25
    return x, y


def decode_keypoints(pose: Grid, cfg: DecodeConfig) -> list[Point]:
    """Per-channel local peaks above phi_pose, optionally subpixel-refined."""
    peaks = local_peaks(pose, cfg.phi_pose)
    if not cfg.subpixel:
        return peaks
    refined = []
    for p in peaks:
        plane = pose.data[:, :, p.channel]
        x, y = _subpixel_shift(plane, int(p.x), int(p.y))
        refined.append(Point(x=x, y=y, score=p.score, channel=p.channel))
    return refined


def group_keypoints_geometric(
    points: list[Point], boxes: list[Box], num_channels: int
) -> list[PersonPose]:
    """Per box and channel, keep the best-scoring point inside the box.

    Containment is boundary-inclusive and non-exclusive: overlapping boxes
    may claim the same point.
    """
    poses = []
    for box in boxes:
        keypoints = []
        for ch in range(num_channels):
            best = None
            for p in points:
                if p.channel != ch or not box.contains(p.x, p.y):
                    continue
                if best is None or p.sort_key() < best.sort_key():
                    best = p
            if best is None:
                keypoints.append(PoseKeypoint(0.0, 0.0, 0.0, False))
            else:
                keypoints.append(PoseKeypoint(best.x, best.y, best.score, True))
        poses.append(PersonPose(box=box, keypoints=keypoints))
    return poses


def decode_poses(b: HeatmapBundle, cfg: DecodeConfig) -> list[PersonPose]:
    """Full decode: boxes, keypoints, then geometric grouping."""
    boxes = decode_boxes(b, cfg)
    points = decode_keypoints(b.pose, cfg)
    return group_keypoints_geometric(points, boxes, b.num_joints)


def multi_scale_fuse(bundles: list[tuple[HeatmapBundle, float]]) -> HeatmapBundle:
    """Resize every bundle to the scale-1.0 resolution and average per grid kind."""
    if not bundles:
        raise ValueError("no bundles to fuse")
    ref = next((b for b, s in bundles if s == 1.0), None)
    if ref is None:
        raise ValueError("multi-scale fusion requires a scale-1.0 bundle")

    def fuse(pick) -> Grid:
        acc = np.zeros(
            (ref.height, ref.width, pick(ref).channels), dtype=np.float64
        )
        for bundle, _scale in bundles:
            g = pick(bundle)
            if g.channels != pick(ref).channels:
                raise ValueError("bundle channel counts disagree")
            acc += bilinear_resize(g, ref.height, ref.width).data
        return Grid((acc / len(bundles)).astype(np.float32))

    return HeatmapBundle(
        pose=fuse(lambda b: b.pose),
        center=fuse(lambda b: b.center),
        top_left=fuse(lambda b: b.top_left),
        bottom_right=fuse(lambda b: b.bottom_right),
        stride=ref.stride,
    )


def pose_to_image_coords(pose: PersonPose, stride: int) -> PersonPose:
    """Scale a decoded pose from heatmap cells to input pixels."""
    box = Box(
        pose.box.x1 * stride,
        pose.box.y1 * stride,
        pose.box.x2 * stride,
        pose.box.y2 * stride,
        pose.box.score,
    )
    kps = [
        replace(kp, x=kp.x * stride, y=kp.y * stride) for kp in pose.keypoints
    ]
    return PersonPose(box=box, keypoints=kps)
