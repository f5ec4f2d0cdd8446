"""Image buffers, file I/O and the PSNR metric.

Images are plain 2-D ``float64`` numpy arrays of shape ``(height, width)``
on the 0-255 intensity scale.  Values may leave that range while a solver
is iterating; they are only clamped when written to disk.
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

PEAK = 255.0

# ITU-R BT.601 luma weights
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class ImageIOError(OSError):
    """Raised for unreadable, malformed or unsupported image files."""


def as_image(data, name: str = "image") -> np.ndarray:
    """Validate ``data`` as an image buffer and return it as float64."""
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be a non-empty 2-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite values")
    return arr


def luminance_of(r, g, b):
    """BT.601 luminance of RGB intensities (scalars or arrays)."""
    wr, wg, wb = LUMA_WEIGHTS
    return wr * np.asarray(r, dtype=np.float64) + wg * np.asarray(g, dtype=np.float64) \
        + wb * np.asarray(b, dtype=np.float64)


def load_image(path) -> np.ndarray:
    """Read an 8-bit PGM (P2/P5) or an 8-bit gray / 24-bit RGB PNG.

    RGB files are reduced to their luminance.  Anything else (16-bit,
    palette, alpha channels, other formats) raises :class:`ImageIOError`.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            fmt = im.format
            mode = im.mode
            im.load()
            arr = np.asarray(im)
    except FileNotFoundError as exc:
        raise ImageIOError(f"{path}: no such file") from exc
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise ImageIOError(f"{path}: cannot read image ({exc})") from exc

    if fmt not in ("PPM", "PNG"):
        raise ImageIOError(f"{path}: unsupported format {fmt!r} (need PGM or PNG)")
    if fmt == "PPM" and mode != "L":
        raise ImageIOError(f"{path}: only 8-bit grayscale PGM is supported (mode {mode!r})")
    if mode == "L":
        return arr.astype(np.float64)
    if mode == "RGB" and arr.dtype == np.uint8:
        return luminance_of(arr[..., 0], arr[..., 1], arr[..., 2])
    raise ImageIOError(f"{path}: unsupported bit depth / mode {mode!r}")


def to_bytes(img) -> np.ndarray:
    """Clamp to [0, 255] and round half-up to uint8."""
    arr = np.clip(np.asarray(img, dtype=np.float64), 0.0, PEAK)
    return np.floor(arr + 0.5).astype(np.uint8)


def save_image(img, path) -> None:
    """Write ``img`` as binary PGM (``.pgm``) or PNG (``.png``)."""
    path = Path(path)
    ext = path.suffix.lower()
    if ext not in (".pgm", ".png"):
        raise ImageIOError(f"{path}: output extension must be .pgm or .png")
    pil = Image.fromarray(to_bytes(as_image(img)))
    try:
        pil.save(path, format="PPM" if ext == ".pgm" else "PNG")
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot write image ({exc})") from exc


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB for peak 255; ``inf`` when identical."""
    err = mse(a, b)
    if err == 0.0:
        return float("inf")
    return float(10.0 * np.log10(PEAK**2 / err))
