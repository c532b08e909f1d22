"""Image tensors, PNG/JPEG codecs, bilinear resizing and seeded randomness.

An image is a plain ``numpy`` array of shape ``(height, width, channels)``
with float intensities in ``[0, 1]``. Channels is 1 (grayscale) or 3 (RGB).
Quantization to 8-bit happens only when encoding to disk, so chained
transforms never accumulate rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

__all__ = [
    "CorruptImageError",
    "UnsupportedFormatError",
    "SeededRng",
    "NormalizationSpec",
    "validate_image",
    "load_image",
    "save_image",
    "bilinear_sample",
    "resize_bilinear",
    "normalize",
    "denormalize",
]

_MASK64 = (1 << 64) - 1
_SUPPORTED_FORMATS = {"PNG", "JPEG"}
_SUFFIX_FORMAT = {".png": "PNG", ".jpg": "JPEG", ".jpeg": "JPEG"}


class UnsupportedFormatError(ValueError):
    """Raster format other than 8-bit PNG or JPEG."""


class CorruptImageError(RuntimeError):
    """File claims a supported format but its stream does not decode."""


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class SeededRng:
    """Counter-based random stream addressed by (seed, stream id).

    Built on Philox, so equal (seed, stream) pairs give identical draw
    sequences on every platform, and child streams derived from distinct
    indices are statistically independent. Deriving a child never consumes
    draws from the parent, which makes fan-out over records order-free.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        key = np.array([self.seed & _MASK64, self.stream & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))

    def child(self, *indices: int) -> "SeededRng":
        stream = self.stream
        for index in indices:
            stream = _splitmix64((stream ^ _splitmix64(index & _MASK64)) & _MASK64)
        return SeededRng(self.seed, stream)


@dataclass(frozen=True)
class NormalizationSpec:
    """Per-channel affine map applied before feeding images to a network."""

    mean: tuple[float, ...]
    scale: tuple[float, ...]

    def __post_init__(self) -> None:
        if len(self.mean) != len(self.scale):
            raise ValueError("mean and scale must have equal channel counts")
        if any(s <= 0 for s in self.scale):
            raise ValueError("scale must be strictly positive per channel")

    @classmethod
    def uniform(cls, channels: int, mean: float = 0.5, scale: float = 0.5) -> "NormalizationSpec":
        return cls((mean,) * channels, (scale,) * channels)


def validate_image(img: np.ndarray) -> None:
    """Raise ValueError unless ``img`` is a well-formed [0, 1] image tensor."""
    if not isinstance(img, np.ndarray) or img.ndim != 3:
        raise ValueError("image must be an ndarray of shape (height, width, channels)")
    if img.shape[2] not in (1, 3):
        raise ValueError(f"channels must be 1 or 3, got {img.shape[2]}")
    if not np.issubdtype(img.dtype, np.floating):
        raise ValueError("image must hold floating intensities")
    if not np.all(np.isfinite(img)):
        raise ValueError("image intensities must be finite")
    if img.size and (img.min() < 0.0 or img.max() > 1.0):
        raise ValueError("image intensities must lie in [0, 1]")


def load_image(path: str | Path, channels: int | None = None) -> np.ndarray:
    """Decode a PNG or JPEG file into a float image in [0, 1].

    ``channels=3`` promotes grayscale input to three identical channels;
    ``channels=1`` is only valid for grayscale sources.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        with Image.open(path) as raw:
            if raw.format not in _SUPPORTED_FORMATS:
                raise UnsupportedFormatError(f"{path}: format {raw.format!r} is not PNG or JPEG")
            try:
                if raw.mode not in ("L", "RGB"):
                    raw = raw.convert("RGB")
                data = np.asarray(raw, dtype=np.uint8)
            except (OSError, SyntaxError) as exc:
                raise CorruptImageError(f"{path}: {exc}") from exc
    except UnidentifiedImageError as exc:
        if path.suffix.lower() in _SUFFIX_FORMAT:
            raise CorruptImageError(f"{path}: unreadable {path.suffix} stream") from exc
        raise UnsupportedFormatError(f"{path}: not a recognized raster file") from exc

    if data.ndim == 2:
        data = data[:, :, None]
    img = data.astype(np.float64) / 255.0
    if channels == 3 and img.shape[2] == 1:
        img = np.repeat(img, 3, axis=2)
    elif channels is not None and channels != img.shape[2]:
        raise ValueError(f"{path}: cannot deliver {channels} channels from {img.shape[2]}-channel image")
    return img


def save_image(img: np.ndarray, path: str | Path) -> None:
    """Quantize to 8 bits and encode. Format follows the file suffix."""
    validate_image(img)
    path = Path(path)
    fmt = _SUFFIX_FORMAT.get(path.suffix.lower())
    if fmt is None:
        raise UnsupportedFormatError(f"{path}: suffix does not map to PNG or JPEG")
    quantized = np.rint(img * 255.0).astype(np.uint8)
    if quantized.shape[2] == 1:
        pil = Image.fromarray(quantized[:, :, 0], mode="L")
    else:
        pil = Image.fromarray(quantized, mode="RGB")
    pil.save(path, format=fmt)


def _reflect_coords(coords: np.ndarray, size: int) -> np.ndarray:
    # Mirror without repeating the border sample, period 2*(size-1).
    if size == 1:
        return np.zeros_like(coords)
    period = 2.0 * (size - 1)
    coords = np.abs(coords) % period
    return np.where(coords > size - 1, period - coords, coords)


def bilinear_sample(img: np.ndarray, rows: np.ndarray, cols: np.ndarray, border: str = "clamp") -> np.ndarray:
    """Sample ``img`` at fractional (row, col) positions with bilinear weights.

    ``rows`` and ``cols`` share a common shape; the result has that shape plus
    the channel axis. Out-of-range coordinates are clamped to the edge or
    mirror-reflected, per ``border``.
    """
    h, w = img.shape[:2]
    if border == "clamp":
        rows = np.clip(rows, 0.0, h - 1.0)
        cols = np.clip(cols, 0.0, w - 1.0)
    elif border == "reflect":
        rows = _reflect_coords(rows, h)
        cols = _reflect_coords(cols, w)
    else:
        raise ValueError(f"unknown border mode {border!r}")

    r0 = np.floor(rows).astype(np.intp)
    c0 = np.floor(cols).astype(np.intp)
    r0 = np.minimum(r0, h - 1)
    c0 = np.minimum(c0, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (rows - r0)[..., None]
    fc = (cols - c0)[..., None]

    top = img[r0, c0] * (1.0 - fc) + img[r0, c1] * fc
    bottom = img[r1, c0] * (1.0 - fc) + img[r1, c1] * fc
    return top * (1.0 - fr) + bottom * fr


def resize_bilinear(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize with the align-corners-false convention, clamped to [0, 1]."""
    validate_image(img)
    if out_h < 1 or out_w < 1:
        raise ValueError("output dimensions must be at least 1 pixel")
    h, w = img.shape[:2]
    if (out_h, out_w) == (h, w):
        return img.copy()
    rows = (np.arange(out_h, dtype=np.float64) + 0.5) * (h / out_h) - 0.5
    cols = (np.arange(out_w, dtype=np.float64) + 0.5) * (w / out_w) - 0.5
    grid_r, grid_c = np.meshgrid(rows, cols, indexing="ij")
    out = bilinear_sample(img, grid_r, grid_c, border="clamp")
    return np.clip(out, 0.0, 1.0)


def normalize(img: np.ndarray, spec: NormalizationSpec | None = None) -> np.ndarray:
    """Map intensities to (value - mean) / scale per channel."""
    if spec is None:
        spec = NormalizationSpec.uniform(img.shape[2])
    if len(spec.mean) != img.shape[2]:
        raise ValueError(f"spec covers {len(spec.mean)} channels, image has {img.shape[2]}")
    mean = np.asarray(spec.mean, dtype=np.float64)
    scale = np.asarray(spec.scale, dtype=np.float64)
    return (img - mean) / scale


def denormalize(img: np.ndarray, spec: NormalizationSpec | None = None) -> np.ndarray:
    """Inverse of :func:`normalize`."""
    if spec is None:
        spec = NormalizationSpec.uniform(img.shape[2])
    if len(spec.mean) != img.shape[2]:
        raise ValueError(f"spec covers {len(spec.mean)} channels, image has {img.shape[2]}")
    mean = np.asarray(spec.mean, dtype=np.float64)
    scale = np.asarray(spec.scale, dtype=np.float64)
    return img * scale + mean
