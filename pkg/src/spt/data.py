"""Desk-scale data: synthetic stick figures, heatmap targets, annotation IO.

The generator draws a 16-joint articulated figure: a template pose scaled
into the image, per-joint uniform jitter, limbs rendered as dim segments
and joints as Gaussian blobs whose peak brightness encodes the joint index
(so joints are visually distinguishable at toy resolutions).  Every sample
is a pure function of (seed, index) through the SplitMix64 stream, making
golden tests portable.  Joint coordinates in annotations are exact floats,
not pixel-quantized.

Annotation files are a JSON array of
``{image, joints, visible, head_size}`` where ``image`` is either a path
or ``{"seed": s, "index": i}`` for regenerable synthetic frames.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AnnotationError, ConfigError
from .rng import sample_stream

# Template pose in normalized [0, 1]^2 figure coordinates, MPII joint order.
# The head segment (head-top to upper-neck) is deliberately long so PCKh
# thresholds stay meaningful at small image sizes.
TEMPLATE_POSE = np.array([
    (0.36, 0.96),  # r-ankle
    (0.38, 0.74),  # r-knee
    (0.40, 0.54),  # r-hip
    (0.60, 0.54),  # l-hip
    (0.62, 0.74),  # l-knee
    (0.64, 0.96),  # l-ankle
    (0.50, 0.53),  # pelvis
    (0.50, 0.28),  # thorax
    (0.50, 0.22),  # upper-neck
    (0.50, 0.02),  # head-top
    (0.20, 0.58),  # r-wrist
    (0.26, 0.44),  # r-elbow
    (0.34, 0.30),  # r-shoulder
    (0.66, 0.30),  # l-shoulder
    (0.74, 0.44),  # l-elbow
    (0.80, 0.58),  # l-wrist
], dtype=np.float64)

_HEAD_TOP, _UPPER_NECK = 9, 8
_LIMB_LEVEL = 0.35

# Limb segments drawn between template joints (MPII kinematic chain).
_LIMBS = (
    (0, 1), (1, 2), (2, 6), (5, 4), (4, 3), (3, 6),
    (6, 7), (7, 8), (8, 9),
    (10, 11), (11, 12), (12, 7), (15, 14), (14, 13), (13, 7),
)


@dataclass
class Annotation:
    """Ground truth for one sample: joint coordinates, visibility, PCKh scale."""

    joints: np.ndarray       # (J, 2) float (x, y) pixel coordinates
    visibility: np.ndarray   # (J,) bool
    head_size: float         # PCKh normalization length, > 0
    image_ref: object        # path string or (seed, index) tuple

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64).reshape(-1, 2)
        self.visibility = np.asarray(self.visibility, dtype=bool).reshape(-1)

    @property
    def joint_count(self) -> int:
        return self.joints.shape[0]


@dataclass
class SyntheticSceneConfig:
    seed: int = 0
    joint_count: int = 16
    limb_thickness: float = 1.25
    blob_sigma: float = 1.6
    image_h: int = 64
    image_w: int = 64
    jitter: float = 6.0  # per-joint uniform jitter amplitude, pixels

    def validate(self):
        if self.joint_count != TEMPLATE_POSE.shape[0]:
            raise ConfigError(
                f"synthetic scenes use the default {TEMPLATE_POSE.shape[0]}-joint "
                f"skeleton, got joint_count={self.joint_count}"
            )
        if self.image_h < 8 or self.image_w < 8:
            raise ConfigError("synthetic images need at least 8x8 pixels")
        if self.blob_sigma <= 0 or self.limb_thickness <= 0 or self.jitter < 0:
            raise ConfigError("blob_sigma/limb_thickness must be > 0 and jitter >= 0")


def _template_in_pixels(h: int, w: int) -> np.ndarray:
    margin_x, margin_y = 0.10 * (w - 1), 0.02 * (h - 1)
    out = np.empty_like(TEMPLATE_POSE)
    out[:, 0] = margin_x + TEMPLATE_POSE[:, 0] * ((w - 1) - 2 * margin_x)
    out[:, 1] = margin_y + TEMPLATE_POSE[:, 1] * ((h - 1) - 2 * margin_y)
    return out


def render_joint_blob(canvas: np.ndarray, x: float, y: float, sigma: float,
                      peak: float = 1.0) -> None:
    """Max-compose an unnormalized Gaussian blob centered at (x, y)."""
    h, w = canvas.shape
    yy, xx = np.mgrid[0:h, 0:w]
    blob = peak * np.exp(-((xx - x) ** 2 + (yy - y) ** 2) / (2.0 * sigma * sigma))
    np.maximum(canvas, blob, out=canvas)


def _render_segment(canvas: np.ndarray, a: np.ndarray, b: np.ndarray,
                    thickness: float, level: float) -> None:
    h, w = canvas.shape
    yy, xx = np.mgrid[0:h, 0:w]
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        dist2 = (xx - a[0]) ** 2 + (yy - a[1]) ** 2
    else:
        t = np.clip(((xx - a[0]) * ab[0] + (yy - a[1]) * ab[1]) / denom, 0.0, 1.0)
        dist2 = (xx - (a[0] + t * ab[0])) ** 2 + (yy - (a[1] + t * ab[1])) ** 2
    np.maximum(canvas, np.where(dist2 <= thickness * thickness, level, 0.0), out=canvas)


def render_scene(joints: np.ndarray, config: SyntheticSceneConfig) -> np.ndarray:
    """Rasterize one figure (single channel, values in [0, 1])."""
    canvas = np.zeros((config.image_h, config.image_w), dtype=np.float64)
    for a, b in _LIMBS:
        _render_segment(canvas, joints[a], joints[b], config.limb_thickness, _LIMB_LEVEL)
    j = joints.shape[0]
    for idx in range(j):
        peak = 0.55 + 0.45 * (idx + 1) / j
        render_joint_blob(canvas, joints[idx, 0], joints[idx, 1], config.blob_sigma, peak)
    return canvas


def generate_sample(config: SyntheticSceneConfig, index: int):
    """One deterministic (image, Annotation) pair for (config.seed, index)."""
    config.validate()
    template = _template_in_pixels(config.image_h, config.image_w)
    rng = sample_stream(config.seed, index)
    # Draw order is part of the format: joint 0 dx, dy, joint 1 dx, dy, ...
    jitter = rng.uniform_array((config.joint_count, 2), -config.jitter, config.jitter)
    joints = template + jitter
    joints[:, 0] = np.clip(joints[:, 0], 1.0, config.image_w - 2.0)
    joints[:, 1] = np.clip(joints[:, 1], 1.0, config.image_h - 2.0)
    head_size = max(float(np.linalg.norm(joints[_HEAD_TOP] - joints[_UPPER_NECK])), 1.0)
    image = render_scene(joints, config)
    ann = Annotation(
        joints=joints,
        visibility=np.ones(config.joint_count, dtype=bool),
        head_size=head_size,
        image_ref=(config.seed, index),
    )
    return image, ann


def generate_synthetic(config: SyntheticSceneConfig, count: int):
    """Deterministic (image, Annotation) pairs; sample i depends only on (seed, i)."""
    return [generate_sample(config, index) for index in range(count)]


def render_target_heatmaps(ann: Annotation, heatmap_h: int, heatmap_w: int,
                           sigma: float, image_h: int, image_w: int) -> np.ndarray:
    """Per-joint Gaussian targets, peak 1, in heatmap resolution.

    Joint coordinates are scaled by (heatmap extent / image extent);
    invisible joints yield all-zero maps.
    """
    if sigma <= 0:
        raise ConfigError(f"target sigma must be > 0, got {sigma}")
    j = ann.joint_count
    out = np.zeros((j, heatmap_h, heatmap_w), dtype=np.float64)
    yy, xx = np.mgrid[0:heatmap_h, 0:heatmap_w]
    sx, sy = heatmap_w / image_w, heatmap_h / image_h
    for idx in range(j):
        if not ann.visibility[idx]:
            continue
        cx, cy = ann.joints[idx, 0] * sx, ann.joints[idx, 1] * sy
        out[idx] = np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2.0 * sigma * sigma))
    return out


# ---------------------------------------------------------------------------
# Annotation files
# ---------------------------------------------------------------------------


def save_annotations(annotations, path) -> None:
    records = []
    for ann in annotations:
        if isinstance(ann.image_ref, tuple):
            image = {"seed": int(ann.image_ref[0]), "index": int(ann.image_ref[1])}
        else:
            image = str(ann.image_ref)
        records.append({
            "image": image,
            "joints": [[float(x), float(y)] for x, y in ann.joints],
            "visible": [bool(v) for v in ann.visibility],
            "head_size": float(ann.head_size),
        })
    Path(path).write_text(json.dumps(records, indent=2) + "\n")


def load_annotations(path, image_h: int | None = None, image_w: int | None = None):
    """Parse and validate an annotation file.

    Bounds checking of visible joints needs image extents; pass them when
    known (the file format does not embed extents).
    """
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"{path}: line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(doc, list):
        raise AnnotationError(f"{path}: top level must be an array")
    annotations = []
    for index, rec in enumerate(doc):
        try:
            image = rec["image"]
            joints = np.asarray(rec["joints"], dtype=np.float64)
            visible = np.asarray(rec["visible"], dtype=bool)
            head_size = float(rec["head_size"])
        except (KeyError, TypeError, ValueError) as exc:
            raise AnnotationError(f"malformed record: {exc!r}", index=index) from exc
        if joints.ndim != 2 or joints.shape[1] != 2:
            raise AnnotationError(f"joints must be (J, 2), got {joints.shape}", index=index)
        if visible.shape[0] != joints.shape[0]:
            raise AnnotationError(
                f"{visible.shape[0]} visibility flags for {joints.shape[0]} joints",
                index=index,
            )
        if not head_size > 0:
            raise AnnotationError(f"head_size must be > 0, got {head_size}", index=index)
        if not np.isfinite(joints).all():
            raise AnnotationError("joint coordinates must be finite", index=index)
        if image_h is not None and image_w is not None:
            vis = joints[visible]
            inside = ((vis[:, 0] >= 0) & (vis[:, 0] <= image_w - 1)
                      & (vis[:, 1] >= 0) & (vis[:, 1] <= image_h - 1))
            if not inside.all():
                raise AnnotationError("visible joint outside image bounds", index=index)
        if isinstance(image, dict):
            ref = (int(image["seed"]), int(image["index"]))
        else:
            ref = str(image)
        annotations.append(Annotation(joints, visible, head_size, ref))
    return annotations


def head_segment_length(config: SyntheticSceneConfig) -> float:
    """Template head-segment length in pixels (before jitter)."""
    template = _template_in_pixels(config.image_h, config.image_w)
    return float(np.linalg.norm(template[_HEAD_TOP] - template[_UPPER_NECK]))
