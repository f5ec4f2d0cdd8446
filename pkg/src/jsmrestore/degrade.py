"""Degradation operators, synthetic noise and impulse detection.

Masks are boolean arrays (``True`` = observed pixel).  Blur kernels are
small square float arrays with odd side and unit mass; they act on images
by circular convolution.
"""
from __future__ import annotations

import enum

import numpy as np

from .image import as_image

MASK_THRESHOLD = 128.0
AMF_MAX_WINDOW = 39


class KernelKind(str, enum.Enum):
    UNIFORM9 = "uniform9"
    UNIFORM19 = "uniform19"
    GAUSSIAN25 = "gaussian25"
    MOTION20 = "motion20"


def rng_for(seed: int) -> np.random.Generator:
    """The single PRNG construction used everywhere (PCG64, 64-bit seed)."""
    return np.random.Generator(np.random.PCG64(np.uint64(seed)))


def spawn_seeds(seed: int, n: int) -> list[int]:
    """Derive ``n`` independent 64-bit seeds from ``seed``."""
    children = np.random.SeedSequence(int(seed)).spawn(n)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


# ---------------------------------------------------------------- masks

def _check_mask(mask, shape=None) -> np.ndarray:
    m = np.asarray(mask)
    if m.dtype != bool or m.ndim != 2:
        raise ValueError("mask must be a 2-D boolean array")
    if shape is not None and m.shape != tuple(shape):
        raise ValueError(f"dimension mismatch: mask {m.shape} vs image {tuple(shape)}")
    return m


def make_random_mask(height: int, width: int, ratio: float, seed: int) -> np.ndarray:
    """Keep exactly ``round(ratio * N)`` pixels chosen by a seeded shuffle."""
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"ratio must lie in (0, 1], got {ratio}")
    n = height * width
    count = int(round(ratio * n))
    if count == 0:
        raise ValueError(f"ratio {ratio} keeps no pixel of a {height}x{width} image")
    order = rng_for(seed).permutation(n)
    keep = np.zeros(n, dtype=bool)
    keep[order[:count]] = True
    return keep.reshape(height, width)


def mask_from_image(img, threshold: float = MASK_THRESHOLD) -> np.ndarray:
    """Pixels at or above ``threshold`` are observed; darker ones are missing."""
    keep = as_image(img, "mask image") >= threshold
    if not keep.any():
        raise ValueError("mask image has no observed pixel")
    return keep


def apply_mask(img, mask) -> np.ndarray:
    img = as_image(img)
    mask = _check_mask(mask, img.shape)
    return np.where(mask, img, 0.0)


# ---------------------------------------------------------------- kernels

def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    ax = np.arange(size) - half
    xx, yy = np.meshgrid(ax, ax)
    k = np.exp(-(xx**2 + yy**2) / (2.0 * sigma**2))
    return k / k.sum()


def _motion_kernel(length: float, theta: float) -> np.ndarray:
    # Line segment with per-cell coverage weights, following the usual
    # MATLAB fspecial('motion') construction.
    eps = np.sqrt(np.finfo(float).eps)
    length = max(1.0, float(length))
    half = (length - 1) / 2.0
    phi = np.mod(theta, 180.0) / 180.0 * np.pi
    cosphi, sinphi = np.cos(phi), np.sin(phi)
    xsign = int(np.sign(cosphi)) or 1
    linewdt = 1.0

    sx = int(np.fix(half * cosphi + linewdt * xsign - length * eps))
    sy = int(np.fix(half * sinphi + linewdt - length * eps))
    xs = np.arange(0, sx + xsign, xsign) if sx * xsign >= 0 else np.array([0])
    ys = np.arange(0, sy + 1)
    x, y = np.meshgrid(xs, ys)

    dist2line = y * cosphi - x * sinphi
    rad = np.sqrt(x**2 + y**2)
    last = (rad >= half) & (np.abs(dist2line) <= linewdt)
    x2last = half - np.abs((x[last] + dist2line[last] * sinphi) / cosphi)
    dist2line[last] = np.sqrt(dist2line[last] ** 2 + x2last**2)
    dist2line = linewdt + eps - np.abs(dist2line)
    dist2line[dist2line < 0] = 0.0

    h = np.rot90(dist2line, 2)
    rows, cols = h.shape
    full = np.zeros((2 * rows - 1, 2 * cols - 1))
    full[:rows, :cols] = h
    full[rows - 1:, cols - 1:] = dist2line
    full /= full.sum() + eps * length * length
    if cosphi > 0:
        full = np.flipud(full)
    # remove the tiny eps mass deficit so the kernel preserves DC exactly
    return full / full.sum()


def make_kernel(kind) -> np.ndarray:
    """One of the four benchmark PSFs, normalized to unit mass."""
    kind = KernelKind(kind)
    if kind is KernelKind.UNIFORM9:
        return np.full((9, 9), 1.0 / 81.0)
    if kind is KernelKind.UNIFORM19:
        return np.full((19, 19), 1.0 / 361.0)
    if kind is KernelKind.GAUSSIAN25:
        return _gaussian_kernel(25, 1.6)
    return _motion_kernel(20, 45)


def kernel_spectrum(kernel, shape) -> np.ndarray:
    """2-D DFT of ``kernel`` zero-padded to ``shape`` with its center at (0, 0)."""
    kernel = np.asarray(kernel, dtype=np.float64)
    kh, kw = kernel.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ValueError("kernel sides must be odd")
    if kh > shape[0] or kw > shape[1]:
        raise ValueError(f"kernel {kernel.shape} does not fit image {tuple(shape)}")
    padded = np.zeros(shape)
    padded[:kh, :kw] = kernel
    padded = np.roll(padded, (-(kh // 2), -(kw // 2)), axis=(0, 1))
    return np.fft.fft2(padded)


def circular_convolve(img, kernel) -> np.ndarray:
    """Periodic convolution computed in the frequency domain."""
    img = as_image(img)
    spec = kernel_spectrum(kernel, img.shape)
    return np.real(np.fft.ifft2(np.fft.fft2(img) * spec))


# ---------------------------------------------------------------- noise

def add_gaussian_noise(img, sigma: float, seed: int) -> np.ndarray:
    img = as_image(img)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return img.copy()
    return img + sigma * rng_for(seed).standard_normal(img.shape)


def salt_pepper_positions(shape, r: float, seed: int):
    """Flat indices and values (0 or 255) that :func:`add_salt_pepper` writes."""
    if not 0.0 <= r < 1.0:
        raise ValueError(f"impulse density must lie in [0, 1), got {r}")
    n = int(np.prod(shape))
    count = int(round(r * n))
    rng = rng_for(seed)
    idx = rng.permutation(n)[:count]
    values = np.where(rng.random(count) < 0.5, 0.0, 255.0)
    return idx, values


def add_salt_pepper(img, r: float, seed: int) -> np.ndarray:
    img = as_image(img)
    idx, values = salt_pepper_positions(img.shape, r, seed)
    out = img.copy().ravel()
    out[idx] = values
    return out.reshape(img.shape)


# ---------------------------------------------------------------- impulse detection

def _window_stats(padded: np.ndarray, rows, cols, w: int, chunk_elems: int = 1 << 22):
    """min/median/max over clipped w x w windows (``padded`` is NaN-padded)."""
    h = w // 2
    offs = np.arange(-h, h + 1)
    n = len(rows)
    lo, med, hi = np.empty(n), np.empty(n), np.empty(n)
    step = max(1, chunk_elems // (w * w))
    for s in range(0, n, step):
        sl = slice(s, s + step)
        rr = rows[sl, None, None] + offs[None, :, None]
        cc = cols[sl, None, None] + offs[None, None, :]
        win = padded[rr, cc].reshape(len(rr), -1)
        lo[sl] = np.nanmin(win, axis=1)
        med[sl] = np.nanmedian(win, axis=1)
        hi[sl] = np.nanmax(win, axis=1)
    return lo, med, hi


def adaptive_median_detect(img, max_window: int = AMF_MAX_WINDOW) -> np.ndarray:
    """Impulse detector of the adaptive median filter.

    Returns a keep-mask: ``False`` where the pixel is judged to be an
    impulse.  Windows are clipped at the image border.
    """
    img = as_image(img)
    if max_window < 3 or max_window % 2 == 0:
        raise ValueError("max_window must be an odd integer >= 3")
    H, W = img.shape
    half = max_window // 2
    padded = np.pad(img, half, mode="constant", constant_values=np.nan)

    keep = np.zeros(img.shape, dtype=bool)
    rows, cols = np.indices(img.shape)
    rows = rows.ravel() + half
    cols = cols.ravel() + half
    values = img.ravel()
    pending = np.arange(img.size)

    for w in range(3, max_window + 1, 2):
        if pending.size == 0:
            break
        lo, med, hi = _window_stats(padded, rows[pending], cols[pending], w)
        settled = (lo < med) & (med < hi)
        v = values[pending[settled]]
        ok = (lo[settled] < v) & (v < hi[settled])
        keep.ravel()[pending[settled]] = ok
        pending = pending[~settled]
    # pixels still pending exceeded the largest window: flagged
    return keep
