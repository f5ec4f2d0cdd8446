"""Nonlocal statistics: block grouping, the 3-D group transform and its prox.

An image is covered by overlapping reference blocks.  Each reference is
grouped with its best-matching blocks from a local search window, every
group is mapped by an orthonormal 3-D transform (2-D DCT on the blocks,
Haar butterflies along the group axis) and the concatenated coefficients
are the representation whose l1 norm is penalized.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numba
import numpy as np
from scipy.fft import dctn, idctn

from .image import as_image

SQRT_HALF = np.sqrt(0.5)


@dataclass(frozen=True)
class NlsmParams:
    block: int = 8
    stride: int = 4
    window: int = 40
    group_size: int = 10
    threshold_rule: str = "sqrt"  # "sqrt": sqrt(2*rho); "exact": rho

    def __post_init__(self):
        if min(self.block, self.stride, self.window, self.group_size) < 1:
            raise ValueError("NLSM parameters must be positive")
        if self.stride > self.block:
            raise ValueError("stride must not exceed block size")
        if self.window < self.block:
            raise ValueError("search window must be at least one block wide")
        if self.threshold_rule not in ("sqrt", "exact"):
            raise ValueError("threshold_rule must be 'sqrt' or 'exact'")

    @property
    def search_offsets(self) -> tuple[int, int]:
        """Inclusive range of candidate top-left offsets relative to the reference."""
        lo = self.block // 2 - self.window // 2
        return lo, lo + self.window - self.block


# ------------------------------------------------------------------ grouping

def _axis_positions(size: int, block: int, stride: int) -> list[int]:
    if size < block:
        raise ValueError(f"image side {size} is smaller than block {block}")
    pos = list(range(0, size - block + 1, stride))
    if pos[-1] != size - block:
        pos.append(size - block)
    return pos


def reference_positions(height: int, width: int, p: NlsmParams) -> list[tuple[int, int]]:
    """Top-left corners of the reference blocks in raster order."""
    rows = _axis_positions(height, p.block, p.stride)
    cols = _axis_positions(width, p.block, p.stride)
    return [(r, c) for r in rows for c in cols]


def _candidate_range(ref: int, size: int, p: NlsmParams) -> tuple[int, int]:
    lo, hi = p.search_offsets
    return max(0, ref + lo), min(size - p.block, ref + hi)


@dataclass(frozen=True)
class GroupIndex:
    ref_pos: tuple[int, int]
    members: tuple[tuple[int, int], ...]


def match_blocks(img, ref: tuple[int, int], p: NlsmParams) -> GroupIndex:
    """Group the ``group_size`` blocks closest (squared l2) to the block at ``ref``.

    The reference always comes first; remaining ties are broken by raster
    order of the candidate position.
    """
    img = as_image(img)
    H, W = img.shape
    r0, c0 = ref
    b = p.block
    if not (0 <= r0 <= H - b and 0 <= c0 <= W - b):
        raise ValueError(f"reference {ref} is not a valid block position")
    rlo, rhi = _candidate_range(r0, H, p)
    clo, chi = _candidate_range(c0, W, p)
    refblk = img[r0:r0 + b, c0:c0 + b]
    scored = []
    for r in range(rlo, rhi + 1):
        for c in range(clo, chi + 1):
            if (r, c) == (r0, c0):
                continue
            d = float(np.sum((img[r:r + b, c:c + b] - refblk) ** 2))
            scored.append((d, r, c))
    if len(scored) + 1 < p.group_size:
        raise ValueError(
            f"search window around {ref} has {len(scored) + 1} candidates, "
            f"need {p.group_size}")
    scored.sort()
    members = [(r0, c0)] + [(r, c) for _, r, c in scored[:p.group_size - 1]]
    return GroupIndex(ref_pos=(r0, c0), members=tuple(members))


@numba.njit(cache=True)
def _match_all(img, refs, block, off_lo, off_hi, group_size):  # pragma: no cover - jitted
    H, W = img.shape
    n = refs.shape[0]
    out = np.empty((n, group_size, 2), dtype=np.int64)
    best_d = np.empty(group_size)
    best_r = np.empty(group_size, dtype=np.int64)
    best_c = np.empty(group_size, dtype=np.int64)
    for g in range(n):
        r0 = refs[g, 0]
        c0 = refs[g, 1]
        best_d[0] = -1.0
        best_r[0] = r0
        best_c[0] = c0
        filled = 1
        rlo = max(0, r0 + off_lo)
        rhi = min(H - block, r0 + off_hi)
        clo = max(0, c0 + off_lo)
        chi = min(W - block, c0 + off_hi)
        for r in range(rlo, rhi + 1):
            for c in range(clo, chi + 1):
                if r == r0 and c == c0:
                    continue
                full = filled == group_size
                bound = best_d[group_size - 1]
                d = 0.0
                stop = False
                for a in range(block):
                    for bb in range(block):
                        diff = img[r + a, c + bb] - img[r0 + a, c0 + bb]
                        d += diff * diff
                    # candidates arrive in raster order, so equality loses the tie
                    if full and d >= bound:
                        stop = True
                        break
                if stop:
                    continue
                # insertion keeps (distance, arrival) order
                k = filled if not full else group_size - 1
                while k > 1 and best_d[k - 1] > d:
                    if k < group_size:
                        best_d[k] = best_d[k - 1]
                        best_r[k] = best_r[k - 1]
                        best_c[k] = best_c[k - 1]
                    k -= 1
                best_d[k] = d
                best_r[k] = r
                best_c[k] = c
                if not full:
                    filled += 1
        if filled < group_size:
            out[0, 0, 0] = -1
            out[0, 0, 1] = g
            return out
        for k in range(group_size):
            out[g, k, 0] = best_r[k]
            out[g, k, 1] = best_c[k]
    return out


@dataclass
class GroupingPlan:
    """Block groups for one image, in canonical raster order of references."""

    shape: tuple[int, int]
    params: NlsmParams
    members: np.ndarray  # (n_groups, group_size, 2) top-left corners
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def n_groups(self) -> int:
        return self.members.shape[0]

    @property
    def n_coeffs(self) -> int:
        """K, the length of the concatenated coefficient vector."""
        return self.n_groups * self.params.group_size * self.params.block**2

    @property
    def n_pixels(self) -> int:
        return self.shape[0] * self.shape[1]

    @property
    def groups(self) -> list[GroupIndex]:
        out = []
        for m in self.members:
            pos = tuple((int(r), int(c)) for r, c in m)
            out.append(GroupIndex(ref_pos=pos[0], members=pos))
        return out

    @cached_property
    def flat_index(self) -> np.ndarray:
        """Flat pixel index of every group entry, shape (n, C, b, b)."""
        b = self.params.block
        W = self.shape[1]
        off = np.arange(b)
        rows = self.members[:, :, 0, None, None] + off[None, None, :, None]
        cols = self.members[:, :, 1, None, None] + off[None, None, None, :]
        return (rows * W + cols).astype(np.intp)

    @cached_property
    def counts(self) -> np.ndarray:
        """How many group entries cover each pixel."""
        c = np.bincount(self.flat_index.ravel(), minlength=self.n_pixels)
        return c.reshape(self.shape).astype(np.float64)

    def extract(self, img) -> np.ndarray:
        """Stack the grouped blocks of ``img``: shape (n, C, b, b)."""
        return np.asarray(img, dtype=np.float64).ravel()[self.flat_index]

    def aggregate(self, blocks) -> np.ndarray:
        """Scatter block estimates back and average by coverage count."""
        sums = np.bincount(self.flat_index.ravel(), weights=np.ravel(blocks),
                           minlength=self.n_pixels).reshape(self.shape)
        counts = self.counts
        out = np.zeros(self.shape)
        covered = counts > 0
        out[covered] = sums[covered] / counts[covered]
        return out


def build_plan(img, p: NlsmParams) -> GroupingPlan:
    """Match every reference block of ``img``; equivalent to looping :func:`match_blocks`."""
    img = as_image(img)
    H, W = img.shape
    refs = np.array(reference_positions(H, W, p), dtype=np.int64)
    lo, hi = p.search_offsets
    members = _match_all(np.ascontiguousarray(img), refs, p.block, lo, hi, p.group_size)
    if members[0, 0, 0] < 0:
        ref = tuple(int(v) for v in refs[members[0, 0, 1]])
        raise ValueError(f"search window around {ref} has fewer than "
                         f"{p.group_size} candidate blocks")
    plan = GroupingPlan(shape=(H, W), params=p, members=members)
    if np.any(plan.counts == 0):  # pragma: no cover - guaranteed by the reference grid
        raise RuntimeError("grouping plan leaves pixels uncovered")
    return plan


# ------------------------------------------------------------------ transform

def _haar_forward(x: np.ndarray, axis: int) -> np.ndarray:
    x = np.moveaxis(x, axis, 0).copy()
    n = x.shape[0]
    while n > 1 and n % 2 == 0:
        a = x[0:n:2].copy()
        d = x[1:n:2].copy()
        half = n // 2
        x[:half] = (a + d) * SQRT_HALF
        x[half:n] = (a - d) * SQRT_HALF
        n = half
    return np.moveaxis(x, 0, axis)


def _haar_inverse(x: np.ndarray, axis: int) -> np.ndarray:
    x = np.moveaxis(x, axis, 0).copy()
    total = x.shape[0]
    lengths = []
    n = total
    while n > 1 and n % 2 == 0:
        lengths.append(n)
        n //= 2
    for n in reversed(lengths):
        half = n // 2
        s = x[:half].copy()
        d = x[half:n].copy()
        x[0:n:2] = (s + d) * SQRT_HALF
        x[1:n:2] = (s - d) * SQRT_HALF
    return np.moveaxis(x, 0, axis)


def forward_3d(group) -> np.ndarray:
    """Orthonormal 3-D transform of group(s) shaped ``(..., C, b, b)``.

    Each block gets an orthonormal 2-D DCT-II; then Haar butterflies run
    along the group axis, recursing on the approximation band while its
    length is even (C = 10 gives a single level, 10 -> 5 + 5).
    """
    g = np.asarray(group, dtype=np.float64)
    coeffs = dctn(g, type=2, norm="ortho", axes=(-2, -1))
    return _haar_forward(coeffs, axis=-3)


def inverse_3d(coeffs) -> np.ndarray:
    c = _haar_inverse(np.asarray(coeffs, dtype=np.float64), axis=-3)
    return idctn(c, type=2, norm="ortho", axes=(-2, -1))


# ------------------------------------------------------------------ regularizer and prox

def analyze(img, p: NlsmParams, plan: GroupingPlan | None = None):
    """Grouping plan and concatenated 3-D coefficients of ``img``.

    If ``plan`` is given it is reused instead of matching on ``img``.
    """
    img = as_image(img)
    if plan is None:
        plan = build_plan(img, p)
    coeffs = forward_3d(plan.extract(img))
    return plan, coeffs.ravel()


def synthesize(plan: GroupingPlan, coeffs) -> np.ndarray:
    """Inverse of the group transforms followed by uniform averaging."""
    b = plan.params.block
    blocks = inverse_3d(np.reshape(coeffs, (plan.n_groups, plan.params.group_size, b, b)))
    return plan.aggregate(blocks)


def psi_nlsm(img, p: NlsmParams, plan: GroupingPlan | None = None) -> float:
    _, theta = analyze(img, p, plan)
    return float(np.abs(theta).sum())


def soft(v, t: float):
    if t < 0:
        raise ValueError("threshold must be non-negative")
    v = np.asarray(v, dtype=np.float64)
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def nlsm_threshold(alpha: float, plan: GroupingPlan) -> float:
    """Shrinkage level for weight ``alpha``: sqrt(2*rho) with rho = K*alpha/N."""
    rho = plan.n_coeffs * alpha / plan.n_pixels
    if plan.params.threshold_rule == "exact":
        return rho
    return float(np.sqrt(2.0 * rho))


def prox_nlsm(r, alpha: float, p: NlsmParams, return_plan: bool = False):
    """Group on ``r``, soft-threshold its coefficients, synthesize the estimate."""
    r = as_image(r, "prox input")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    plan, theta = analyze(r, p)
    x = synthesize(plan, soft(theta, nlsm_threshold(alpha, plan)))
    if return_plan:
        return x, plan
    return x


def variance_diagnostic(x, r, p: NlsmParams, plan: GroupingPlan | None = None):
    """(||x - r||^2 / N, ||Theta_x - Theta_r||^2 / K) with the plan built on ``r``."""
    x = as_image(x)
    r = as_image(r)
    if x.shape != r.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {r.shape}")
    if plan is None:
        plan = build_plan(r, p)
    e = x - r
    var_e = float(np.sum(e**2) / e.size)
    # the transform is linear, so Theta_x - Theta_r = Theta_(x - r)
    _, theta_e = analyze(e, p, plan)
    var_theta = float(np.sum(theta_e**2) / plan.n_coeffs)
    return var_e, var_theta
