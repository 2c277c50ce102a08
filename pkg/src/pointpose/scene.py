"""Synthetic scenes: the stand-in for a real backbone.

A scene is a set of person boxes with jittered stick-figure keypoints in
input-pixel coordinates. Rendering divides coordinates by the stride and
max-composes unit Gaussians into a heatmap bundle; optional uniform noise
in [-amplitude, +amplitude] is added and the result clamped to [0, 1].
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .decode import HeatmapBundle
from .grid import Box, Grid, render_gaussian

# 17-joint template in normalized box coordinates (u across, v down),
# COCO joint order: nose, eyes, ears, shoulders, elbows, wrists, hips,
# knees, ankles.
FIGURE_TEMPLATE = np.array(
    [
        (0.50, 0.08),
        (0.44, 0.06), (0.56, 0.06),
        (0.38, 0.09), (0.62, 0.09),
        (0.30, 0.22), (0.70, 0.22),
        (0.22, 0.40), (0.78, 0.40),
        (0.18, 0.56), (0.82, 0.56),
        (0.36, 0.55), (0.64, 0.55),
        (0.34, 0.74), (0.66, 0.74),
        (0.33, 0.93), (0.67, 0.93),
    ],
    dtype=np.float64,
)

DEFAULT_JOINTS = 17
MAX_PLACEMENT_TRIES = 10000


@dataclass(frozen=True)
class SceneKeypoint:
    x: float
    y: float
    visible: bool = True


@dataclass
class ScenePerson:
    box: Box
    keypoints: list[SceneKeypoint]


@dataclass
class Scene:
    width: int
    height: int
    persons: list[ScenePerson] = field(default_factory=list)
    num_joints: int = DEFAULT_JOINTS
    seed: int = 0


def box_iou(a: Box, b: Box) -> float:
    ix = max(0.0, min(a.x2, b.x2) - max(a.x1, b.x1))
    iy = max(0.0, min(a.y2, b.y2) - max(a.y1, b.y1))
    inter = ix * iy
    if inter == 0.0:
        return 0.0
    union = a.width * a.height + b.width * b.height - inter
    return inter / union


def _template_points(k: int) -> np.ndarray:
    if k == len(FIGURE_TEMPLATE):
        return FIGURE_TEMPLATE
    # other joint counts: spread points down the body axis
    us = 0.35 + 0.3 * ((np.arange(k) % 3) / 2.0)
    vs = 0.08 + 0.85 * (np.arange(k) / max(1, k - 1))
    return np.stack([us, vs], axis=1)


# figure span inside the box: keypoints shrink toward the box center so the
# box carries a margin around the figure
FIGURE_SPAN = 0.85
# clearance (px) between a keypoint and any other person's box, so that
# stride-quantized decoded boxes cannot capture a neighbor's keypoints
KEYPOINT_CLEARANCE = 4.0


def gen_scene(
    n_persons: int,
    overlap_level: float = 0.0,
    size: int = 256,
    k: int = DEFAULT_JOINTS,
    seed: int = 0,
) -> Scene:
    """Sample a scene with at most ``overlap_level`` pairwise box IoU.

    Boxes are rejection-sampled; keypoints are a jittered stick-figure
    template placed inside each box. Placements where one person's
    keypoints would fall inside another person's box are rejected, so
    every keypoint belongs to exactly one box (box overlap itself is
    allowed up to the IoU cap). Deterministic per seed.
    """
    if n_persons < 0:
        raise ValueError(f"n_persons must be >= 0, got {n_persons}")
    rng = np.random.default_rng(seed)
    persons: list[ScenePerson] = []
    template = _template_points(k)
    tries = 0
    while len(persons) < n_persons:
        tries += 1
        if tries > MAX_PLACEMENT_TRIES:
            raise RuntimeError(
                f"could not place {n_persons} boxes at overlap {overlap_level} "
                f"after {MAX_PLACEMENT_TRIES} tries"
            )
        w = rng.uniform(0.16, 0.30) * size
        h = w * rng.uniform(1.3, 1.8)
        h = min(h, 0.55 * size)
        x1 = rng.uniform(2.0, size - w - 2.0)
        y1 = rng.uniform(2.0, size - h - 2.0)
        box = Box(x1, y1, x1 + w, y1 + h)
        if any(box_iou(box, p.box) > overlap_level for p in persons):
            continue
        jitter = rng.uniform(-0.03, 0.03, size=template.shape)
        uv = np.clip(0.5 + (template + jitter - 0.5) * FIGURE_SPAN, 0.04, 0.96)
        keypoints = [
            SceneKeypoint(x=box.x1 + u * box.width, y=box.y1 + v * box.height)
            for u, v in uv
        ]
        def near(b: Box, kp: SceneKeypoint) -> bool:
            m = KEYPOINT_CLEARANCE
            return (
                b.x1 - m <= kp.x <= b.x2 + m and b.y1 - m <= kp.y <= b.y2 + m
            )

        if any(
            near(box, kp) for p in persons for kp in p.keypoints
        ) or any(
            near(p.box, kp) for p in persons for kp in keypoints
        ):
            continue
        persons.append(ScenePerson(box=box, keypoints=keypoints))
    return Scene(width=size, height=size, persons=persons, num_joints=k, seed=seed)


def render_scene(
    scene: Scene,
    stride: int = 4,
    sigma: float = 2.0,
    noise: float = 0.0,
    noise_seed: int | None = None,
) -> HeatmapBundle:
    """Render ground-truth heatmaps for a scene at the given stride.

    Pose channels get one Gaussian per visible keypoint; the center,
    top-left, and bottom-right maps get one Gaussian per person box. With
    ``noise`` > 0, seeded uniform noise is added and values re-clamped to
    [0, 1]; the seed defaults to the scene's own.
    """
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    gh = -(-scene.height // stride)
    gw = -(-scene.width // stride)
    pose = Grid.zeros(gh, gw, scene.num_joints)
    center = Grid.zeros(gh, gw, 1)
    top_left = Grid.zeros(gh, gw, 1)
    bottom_right = Grid.zeros(gh, gw, 1)

    for person in scene.persons:
        b = person.box
        cx, cy = b.center
        center = render_gaussian(center, 0, cx / stride, cy / stride, sigma)
        top_left = render_gaussian(top_left, 0, b.x1 / stride, b.y1 / stride, sigma)
        bottom_right = render_gaussian(
            bottom_right, 0, b.x2 / stride, b.y2 / stride, sigma
        )
        for ch, kp in enumerate(person.keypoints):
            if kp.visible:
                pose = render_gaussian(pose, ch, kp.x / stride, kp.y / stride, sigma)

    if noise > 0.0:
        rng = np.random.default_rng(
            scene.seed if noise_seed is None else noise_seed
        )
        pose, center, top_left, bottom_right = (
            _add_noise(g, rng, noise) for g in (pose, center, top_left, bottom_right)
        )
    return HeatmapBundle(
        pose=pose, center=center, top_left=top_left, bottom_right=bottom_right,
        stride=stride,
    )


def _add_noise(g: Grid, rng: np.random.Generator, amplitude: float) -> Grid:
    noise = rng.uniform(-amplitude, amplitude, size=g.data.shape)
    return Grid(np.clip(g.data + noise, 0.0, 1.0).astype(np.float32))


def scene_to_dict(scene: Scene) -> dict:
    return {
        "width": scene.width,
        "height": scene.height,
        "num_joints": scene.num_joints,
        "seed": scene.seed,
        "persons": [
            {
                "bbox": [p.box.x1, p.box.y1, p.box.x2, p.box.y2],
                "keypoints": [
                    {"x": kp.x, "y": kp.y, "visible": kp.visible}
                    for kp in p.keypoints
                ],
            }
            for p in scene.persons
        ],
    }


def scene_from_dict(data: dict) -> Scene:
    persons = []
    for p in data["persons"]:
        x1, y1, x2, y2 = p["bbox"]
        keypoints = [
            SceneKeypoint(x=kp["x"], y=kp["y"], visible=bool(kp["visible"]))
            for kp in p["keypoints"]
        ]
        persons.append(ScenePerson(box=Box(x1, y1, x2, y2), keypoints=keypoints))
    return Scene(
        width=data["width"],
        height=data["height"],
        persons=persons,
        num_joints=data["num_joints"],
        seed=data.get("seed", 0),
    )


def scene_to_json(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), separators=(",", ":"))


def scene_from_json(text: str) -> Scene:
    return scene_from_dict(json.loads(text))
