"""Probabilistic six-transform augmentation pipeline and corpus expansion.

Each op carries a firing probability and magnitude ranges; an applied op
resamples back into the original frame so shape and [0, 1] range are
preserved no matter what fires. Randomness comes exclusively from
:class:`~lesionpipe.imagecore.SeededRng` streams derived per (record,
copy, op), so corpus expansion is a pure function of its arguments and
identical seeds give byte-identical corpora.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .dataset import Manifest, ManifestEntry
from .imagecore import SeededRng, bilinear_sample, load_image, save_image, validate_image

__all__ = [
    "ROTATION",
    "RANDOM_ZOOM",
    "FLIP_HORIZONTAL",
    "FLIP_VERTICAL",
    "RANDOM_DISTORTION",
    "LIGHTING_VARIANCE",
    "AugmentOp",
    "AugmentPipeline",
    "default_pipeline",
    "apply_op",
    "run_pipeline",
    "augment_corpus",
]

ROTATION = "rotation"
RANDOM_ZOOM = "random_zoom"
FLIP_HORIZONTAL = "flip_horizontal"
FLIP_VERTICAL = "flip_vertical"
RANDOM_DISTORTION = "random_distortion"
LIGHTING_VARIANCE = "lighting_variance"

KINDS = (
    ROTATION,
    RANDOM_ZOOM,
    FLIP_HORIZONTAL,
    FLIP_VERTICAL,
    RANDOM_DISTORTION,
    LIGHTING_VARIANCE,
)


@dataclass(frozen=True)
class AugmentOp:
    """One probabilistic transform. Magnitude fields are read per kind."""

    kind: str
    probability: float
    max_degrees: float = 45.0
    zoom_min: float = 1.0
    zoom_max: float = 1.3
    grid_rows: int = 4
    grid_cols: int = 4
    max_displacement: float = 8.0
    gain_min: float = 0.7
    gain_max: float = 1.3
    gamma_min: float = 0.8
    gamma_max: float = 1.25

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown augmentation kind {self.kind!r}")
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must lie in [0, 1]")
        if self.max_degrees < 0:
            raise ValueError("max_degrees must be non-negative")
        if not 0.0 < self.zoom_min <= self.zoom_max:
            raise ValueError("zoom range must satisfy 0 < min <= max")
        if self.grid_rows < 2 or self.grid_cols < 2:
            raise ValueError("distortion grid needs at least 2x2 control nodes")
        if self.max_displacement < 0:
            raise ValueError("max_displacement must be non-negative")
        if not 0.0 < self.gain_min <= self.gain_max:
            raise ValueError("gain range must be positive and ordered")
        if not 0.0 < self.gamma_min <= self.gamma_max:
            raise ValueError("gamma range must be positive and ordered")


@dataclass(frozen=True)
class AugmentPipeline:
    """Ordered transforms; an empty pipeline is the identity."""

    ops: tuple[AugmentOp, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        object.__setattr__(self, "ops", tuple(self.ops))


def default_pipeline() -> AugmentPipeline:
    """The six-op pipeline with stock probabilities and default magnitudes."""
    return AugmentPipeline(
        (
            AugmentOp(ROTATION, 0.5),
            AugmentOp(RANDOM_ZOOM, 0.4),
            AugmentOp(FLIP_HORIZONTAL, 0.7),
            AugmentOp(FLIP_VERTICAL, 0.5),
            AugmentOp(RANDOM_DISTORTION, 0.8),
            AugmentOp(LIGHTING_VARIANCE, 0.5),
        )
    )


def _pixel_grid(h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    return np.meshgrid(
        np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij"
    )


def _rotate(img: np.ndarray, degrees: float) -> np.ndarray:
    h, w = img.shape[:2]
    theta = np.deg2rad(degrees)
    cos, sin = np.cos(theta), np.sin(theta)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = _pixel_grid(h, w)
    dy, dx = rows - cy, cols - cx
    # Inverse rotation: where does each output pixel come from.
    src_r = cy + cos * dy - sin * dx
    src_c = cx + sin * dy + cos * dx
    return bilinear_sample(img, src_r, src_c, border="reflect")


def _zoom(img: np.ndarray, scale: float) -> np.ndarray:
    h, w = img.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    rows, cols = _pixel_grid(h, w)
    src_r = cy + (rows - cy) / scale
    src_c = cx + (cols - cx) / scale
    return bilinear_sample(img, src_r, src_c, border="clamp")


def _distort(img: np.ndarray, displacement: np.ndarray) -> np.ndarray:
    """Warp by a dense field bilinearly interpolated from control-grid offsets."""
    h, w = img.shape[:2]
    grid_rows, grid_cols = displacement.shape[:2]
    rows, cols = _pixel_grid(h, w)
    # Control nodes span the image corners; map pixels into node space.
    node_r = rows * ((grid_rows - 1) / max(h - 1, 1))
    node_c = cols * ((grid_cols - 1) / max(w - 1, 1))
    field_at_pixels = bilinear_sample(displacement, node_r, node_c, border="clamp")
    src_r = rows + field_at_pixels[:, :, 0]
    src_c = cols + field_at_pixels[:, :, 1]
    return bilinear_sample(img, src_r, src_c, border="reflect")


def apply_op(op: AugmentOp, img: np.ndarray, rng: SeededRng) -> np.ndarray:
    """Apply ``op`` with its firing probability; magnitudes drawn from ``rng``.

    Output always matches the input shape and stays inside [0, 1].
    """
    validate_image(img)
    gen = rng.generator()
    if gen.uniform() >= op.probability:
        return img.copy()

    if op.kind == ROTATION:
        degrees = gen.uniform(-op.max_degrees, op.max_degrees)
        out = _rotate(img, degrees)
    elif op.kind == RANDOM_ZOOM:
        out = _zoom(img, gen.uniform(op.zoom_min, op.zoom_max))
    elif op.kind == FLIP_HORIZONTAL:
        out = img[:, ::-1, :].copy()
    elif op.kind == FLIP_VERTICAL:
        out = img[::-1, :, :].copy()
    elif op.kind == RANDOM_DISTORTION:
        displacement = gen.uniform(
            -op.max_displacement, op.max_displacement, size=(op.grid_rows, op.grid_cols, 2)
        )
        out = _distort(img, displacement)
    elif op.kind == LIGHTING_VARIANCE:
        gain = gen.uniform(op.gain_min, op.gain_max)
        gamma = gen.uniform(op.gamma_min, op.gamma_max)
        out = gain * np.power(img, gamma)
    else:  # pragma: no cover - guarded by AugmentOp validation
        raise ValueError(f"unknown augmentation kind {op.kind!r}")
    return np.clip(out, 0.0, 1.0)


def run_pipeline(pipeline: AugmentPipeline, img: np.ndarray, rng: SeededRng) -> np.ndarray:
    """Run ops in order, each on its own child stream keyed by op index."""
    out = img
    for op_index, op in enumerate(pipeline.ops):
        out = apply_op(op, out, rng.child(op_index))
    return out if out is not img else img.copy()


def _augment_one(
    entry: ManifestEntry,
    record_index: int,
    factor: int,
    pipeline: AugmentPipeline,
    rng: SeededRng,
) -> list[ManifestEntry]:
    try:
        img = load_image(entry.path)
    except Exception as exc:
        raise RuntimeError(f"cannot augment unreadable source image {entry.path}") from exc
    parent_path = Path(entry.path)
    children = []
    for k in range(1, factor + 1):
        out = run_pipeline(pipeline, img, rng.child(record_index, k))
        child_path = parent_path.with_name(f"{parent_path.stem}_aug{k}.png")
        save_image(out, child_path)
        children.append(
            replace(
                entry,
                path=str(child_path),
                origin="augmented",
                parent=entry.path,
            )
        )
    return children


def augment_corpus(
    manifest: Manifest,
    split: str,
    factor: int,
    pipeline: AugmentPipeline,
    seed: int,
    workers: int = 1,
) -> Manifest:
    """Give every original entry of ``split`` exactly ``factor`` augmented children.

    Children are written as PNGs beside their parents, inherit the parent
    label and split, and carry a parent reference. Originals are retained,
    so a class of n originals ends at (factor + 1) * n entries. The result
    is independent of ``workers``.
    """
    if factor < 0:
        raise ValueError("factor must be non-negative")
    stamp = f"augment split={split} factor={factor} seed={seed}"
    if factor == 0:
        return replace(manifest, provenance=manifest.provenance + (stamp + " (no-op)",))

    rng = SeededRng(seed)
    jobs = [
        (index, entry)
        for index, entry in enumerate(manifest.entries)
        if entry.split == split and entry.origin == "original"
    ]
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [
                pool.submit(_augment_one, entry, index, factor, pipeline, rng)
                for index, entry in jobs
            ]
            child_groups = [f.result() for f in futures]
    else:
        child_groups = [_augment_one(entry, index, factor, pipeline, rng) for index, entry in jobs]

    children = [child for group in child_groups for child in group]
    return replace(
        manifest,
        entries=manifest.entries + tuple(children),
        provenance=manifest.provenance + (stamp,),
    )
