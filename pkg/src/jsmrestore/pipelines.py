"""End-to-end restoration experiments: degrade a clean image, restore it, score it."""
from __future__ import annotations

import enum
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, ImageDraw, ImageFont

from . import degrade as dg
from .image import as_image, load_image, psnr, save_image
from .nlsm import NlsmParams
from .solver import (Observation, SolverParams, default_params, run, without_nlsm,
                     write_telemetry_csv)

# iteration counts per retained-sample ratio for random inpainting
INPAINT_ITERS = {0.2: 400, 0.3: 350, 0.5: 250, 0.8: 100}
DEFAULT_ITERS = 300


class Task(str, enum.Enum):
    INPAINT = "inpaint"
    TEXT = "text"
    DEBLUR = "deblur"
    MIXED = "mixed"


@dataclass
class ExperimentSpec:
    task: Task
    input: str
    seed: int = 0
    mu_tilde: float = 1e-2
    max_iters: int = DEFAULT_ITERS
    ratio: float | None = None
    mask_path: str | None = None
    kernel: str | None = None
    sigma: float | None = None
    bsnr: float | None = None
    impulse_r: float | None = None
    amf_window: int = dg.AMF_MAX_WINDOW
    lsm_inner_iters: int = 10
    nlsm: NlsmParams = field(default_factory=NlsmParams)
    tol: float | None = None

    def __post_init__(self):
        self.task = Task(self.task)
        need = {
            Task.INPAINT: ("ratio",),
            Task.TEXT: ("mask_path",),
            Task.DEBLUR: ("kernel",),
            Task.MIXED: ("sigma", "impulse_r"),
        }[self.task]
        missing = [n for n in need if getattr(self, n) is None]
        if self.task is Task.DEBLUR and self.sigma is None and self.bsnr is None:
            missing.append("sigma")
        if missing:
            raise ValueError(f"{self.task.value} experiment needs: {', '.join(missing)}")

    def solver_params(self, lam_off: bool = False) -> SolverParams:
        params = default_params(self.mu_tilde, self.max_iters, self.nlsm,
                                lsm_inner_iters=self.lsm_inner_iters, tol=self.tol)
        if lam_off:
            params = without_nlsm(params)
        return params

    def describe(self) -> dict:
        d = asdict(self)
        d["task"] = self.task.value
        return d


@dataclass
class Degradation:
    """What the restorer gets to see, plus the degraded image used for scoring."""

    observation: Observation
    degraded: np.ndarray
    mask: np.ndarray | None = None
    corrupted: np.ndarray | None = None  # flat indices hit by impulse noise


def bsnr_to_sigma(blurred, bsnr_db: float) -> float:
    """Noise level giving ``10*log10(var(blurred) / sigma^2) = bsnr_db``."""
    blurred = as_image(blurred)
    if not np.isfinite(bsnr_db):
        if bsnr_db > 0:
            return 0.0
        raise ValueError("bsnr must be finite")
    var = float(np.var(blurred))
    return float(np.sqrt(var / 10.0 ** (bsnr_db / 10.0)))


def make_text_mask(shape, font_size: int | None = None) -> np.ndarray:
    """Deterministic text overlay mask: ``False`` under the glyphs."""
    H, W = shape
    font_size = font_size or max(10, H // 16)
    font = ImageFont.load_default(size=font_size)
    canvas = Image.new("L", (W, H), 255)
    draw = ImageDraw.Draw(canvas)
    words = ("image restoration joint statistical modeling split bregman "
             "nonlocal self similarity local smoothness inpainting text removal").split()
    line_h = int(font_size * 1.6)
    y, i = font_size // 3, 0
    while y + font_size < H:
        line = []
        while True:
            cand = " ".join(line + [words[i % len(words)]])
            if draw.textlength(cand, font=font) > W - 8 and line:
                break
            line.append(words[i % len(words)])
            i += 1
        draw.text((4, y), " ".join(line), fill=0, font=font)
        y += line_h
    return np.asarray(canvas) >= dg.MASK_THRESHOLD


def degrade_clean(spec: ExperimentSpec, clean) -> Degradation:
    clean = as_image(clean)
    if spec.task is Task.INPAINT:
        mask = dg.make_random_mask(*clean.shape, spec.ratio, spec.seed)
        y = dg.apply_mask(clean, mask)
        return Degradation(Observation(y, mask=mask), y, mask=mask)
    if spec.task is Task.TEXT:
        mask = dg.mask_from_image(load_image(spec.mask_path))
        y = dg.apply_mask(clean, mask)
        return Degradation(Observation(y, mask=mask), y, mask=mask)
    if spec.task is Task.DEBLUR:
        kernel = dg.make_kernel(spec.kernel)
        blurred = dg.circular_convolve(clean, kernel)
        sigma = spec.sigma if spec.bsnr is None else bsnr_to_sigma(blurred, spec.bsnr)
        y = dg.add_gaussian_noise(blurred, sigma, spec.seed)
        return Degradation(Observation(y, kernel=kernel), y)
    gauss_seed, impulse_seed = dg.spawn_seeds(spec.seed, 2)
    noisy = dg.add_gaussian_noise(clean, spec.sigma, gauss_seed)
    idx, values = dg.salt_pepper_positions(clean.shape, spec.impulse_r, impulse_seed)
    y = noisy.ravel().copy()
    y[idx] = values
    y = y.reshape(clean.shape)
    mask = dg.adaptive_median_detect(y, spec.amf_window)
    return Degradation(Observation(y, mask=mask), y, mask=mask, corrupted=idx)


def _run(spec: ExperimentSpec, expected: Task, lam_off: bool = False, init=None):
    if spec.task is not expected:
        raise ValueError(f"expected a {expected.value} spec, got {spec.task.value}")
    clean = load_image(spec.input)
    deg = degrade_clean(spec, clean)
    restored, telemetry = run(deg.observation, spec.solver_params(lam_off), truth=clean,
                              init=init)
    return deg.degraded, restored, telemetry


def run_inpaint(spec: ExperimentSpec, **kw):
    return _run(spec, Task.INPAINT, **kw)


def run_text_removal(spec: ExperimentSpec, **kw):
    return _run(spec, Task.TEXT, **kw)


def run_deblur(spec: ExperimentSpec, **kw):
    return _run(spec, Task.DEBLUR, **kw)


def run_mixed_noise(spec: ExperimentSpec, **kw):
    return _run(spec, Task.MIXED, **kw)


RUNNERS = {
    Task.INPAINT: run_inpaint,
    Task.TEXT: run_text_removal,
    Task.DEBLUR: run_deblur,
    Task.MIXED: run_mixed_noise,
}


def run_experiment(spec: ExperimentSpec, **kw):
    return RUNNERS[spec.task](spec, **kw)


def json_float(v):
    if v is None:
        return None
    if np.isinf(v):
        return "inf" if v > 0 else "-inf"
    return round(float(v), 4)


def summary_record(task: str, image: str, params: dict, psnr_degraded, psnr_restored,
                   wall_seconds: float) -> dict:
    return {
        "task": task,
        "image": image,
        "params": params,
        "psnr_degraded": json_float(psnr_degraded),
        "psnr_restored": json_float(psnr_restored),
        "wall_seconds": round(wall_seconds, 3),
    }


def run_and_write(spec: ExperimentSpec, out_dir, stem: str | None = None) -> dict:
    """Run ``spec`` and write degraded/restored images, telemetry CSV and JSON summary."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = stem or f"{Path(spec.input).stem}_{spec.task.value}"
    t0 = time.perf_counter()
    degraded, restored, telemetry = run_experiment(spec)
    wall = time.perf_counter() - t0
    clean = load_image(spec.input)
    save_image(degraded, out_dir / f"{stem}_degraded.png")
    save_image(restored, out_dir / f"{stem}_restored.png")
    write_telemetry_csv(telemetry, out_dir / f"{stem}_telemetry.csv")
    summary = summary_record(spec.task.value, Path(spec.input).name, spec.describe(),
                             psnr(degraded, clean), psnr(restored, clean), wall)
    (out_dir / f"{stem}_summary.json").write_text(json.dumps(summary, default=str) + "\n")
    return summary
