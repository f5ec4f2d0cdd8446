"""Split Bregman iteration for  0.5||Hu - y||^2 + tau*TV(u) + lambda*||Theta_u||_1.

Each outer iteration solves the quadratic u-problem in closed form (pixel
wise for masks, in the Fourier domain for circular blur), applies the TV
prox to ``u - b`` and the nonlocal prox to ``u - c``, then updates the
Bregman variables ``b`` and ``c``.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np

from . import lsm, nlsm
from .degrade import kernel_spectrum
from .image import as_image, psnr

log = logging.getLogger(__name__)

MU1_SHARE = 0.14
MU2_SHARE = 0.86
REG_OVER_MU = 10.0  # tau = 10*mu1, lambda = 10*mu2

TELEMETRY_FIELDS = ("iter", "psnr_db", "var_e", "var_theta", "residual_uw", "residual_ux")


class NumericalError(RuntimeError):
    """A solver buffer became non-finite."""

    def __init__(self, iteration: int, buffer: str):
        super().__init__(f"non-finite values in {buffer!r} at iteration {iteration}")
        self.iteration = iteration
        self.buffer = buffer


@dataclass(frozen=True)
class SolverParams:
    mu1: float
    mu2: float
    tau: float
    lam: float
    max_iters: int = 100
    lsm_inner_iters: int = lsm.DEFAULT_INNER_ITERS
    nlsm: nlsm.NlsmParams = field(default_factory=nlsm.NlsmParams)
    tol: float | None = None

    def __post_init__(self):
        if self.mu1 <= 0 or self.mu2 <= 0:
            raise ValueError("mu1 and mu2 must be positive")
        if self.tau <= 0 or self.lam < 0:
            raise ValueError("tau must be positive and lambda non-negative")
        if self.max_iters < 0 or self.lsm_inner_iters < 1:
            raise ValueError("invalid iteration counts")

    @property
    def mu_tilde(self) -> float:
        return self.mu1 + self.mu2

    @property
    def gamma(self) -> float:
        return self.tau / self.mu1

    @property
    def alpha(self) -> float:
        return self.lam / self.mu2


def default_params(mu_tilde: float, max_iters: int = 100,
                   nlsm_params: nlsm.NlsmParams | None = None, **overrides) -> SolverParams:
    """Single-knob schedule: mu1/mu2 split 0.14/0.86, tau = 10*mu1, lambda = 10*mu2."""
    if mu_tilde <= 0:
        raise ValueError("mu_tilde must be positive")
    mu1 = MU1_SHARE * mu_tilde
    mu2 = mu_tilde - mu1
    return SolverParams(mu1=mu1, mu2=mu2, tau=REG_OVER_MU * mu1, lam=REG_OVER_MU * mu2,
                        max_iters=max_iters,
                        nlsm=nlsm_params if nlsm_params is not None else nlsm.NlsmParams(),
                        **overrides)


@dataclass
class Observation:
    """Degraded data ``y`` with its operator: a keep-mask, a blur kernel, or identity."""

    y: np.ndarray
    mask: np.ndarray | None = None
    kernel: np.ndarray | None = None

    def __post_init__(self):
        self.y = as_image(self.y, "observation")
        if self.mask is not None and self.kernel is not None:
            raise ValueError("an observation has either a mask or a kernel, not both")
        if self.mask is not None:
            self.mask = np.asarray(self.mask)
            if self.mask.dtype != bool or self.mask.shape != self.y.shape:
                raise ValueError("mask must be boolean with the observation's shape")

    @property
    def kind(self) -> str:
        if self.mask is not None:
            return "mask"
        if self.kernel is not None:
            return "blur"
        return "identity"

    @cached_property
    def spectrum(self) -> np.ndarray:
        return kernel_spectrum(self.kernel, self.y.shape)

    def adjoint_y(self) -> np.ndarray:
        """H^T y."""
        if self.mask is not None:
            return np.where(self.mask, self.y, 0.0)
        if self.kernel is not None:
            return np.real(np.fft.ifft2(np.conj(self.spectrum) * np.fft.fft2(self.y)))
        return self.y.copy()


@dataclass
class IterationRecord:
    iter: int
    psnr_db: float | None
    var_e: float
    var_theta: float
    residual_uw: float
    residual_ux: float


@dataclass
class SolverState:
    u: np.ndarray
    w: np.ndarray
    x: np.ndarray
    b: np.ndarray
    c: np.ndarray
    k: int = 0
    telemetry: list[IterationRecord] = field(default_factory=list)
    tv_dual: lsm.GradientField | None = None

    @classmethod
    def initial(cls, obs: Observation, init=None) -> "SolverState":
        u0 = obs.y.copy() if init is None else as_image(init, "initial guess").copy()
        if u0.shape != obs.y.shape:
            raise ValueError("initial guess must match the observation shape")
        zero = np.zeros_like(u0)
        return cls(u=u0, w=zero.copy(), x=zero.copy(), b=zero.copy(), c=zero.copy())


# ------------------------------------------------------------------ u-subproblem

def _q(obs: Observation, w, x, b, c, params: SolverParams) -> np.ndarray:
    return obs.adjoint_y() + params.mu1 * (w + b) + params.mu2 * (x + c)


def u_step_inpaint(obs: Observation, w, x, b, c, params: SolverParams) -> np.ndarray:
    """Closed form of (H^T H + mu I)^-1 q for a sampling mask."""
    if obs.mask is None:
        raise ValueError("u_step_inpaint needs a mask observation")
    mu = params.mu_tilde
    q = _q(obs, w, x, b, c, params)
    return (q - np.where(obs.mask, q, 0.0) / (1.0 + mu)) / mu


def u_step_deblur(obs: Observation, w, x, b, c, params: SolverParams) -> np.ndarray:
    """(H^T H + mu I)^-1 q for circular blur, diagonal in the 2-D DFT basis."""
    if obs.kernel is None:
        raise ValueError("u_step_deblur needs a blur observation")
    mu = params.mu_tilde
    D = obs.spectrum
    rhs = np.conj(D) * np.fft.fft2(obs.y) + np.fft.fft2(params.mu1 * (w + b) + params.mu2 * (x + c))
    u = np.fft.ifft2(rhs / (np.abs(D) ** 2 + mu))
    resid = float(np.max(np.abs(u.imag)))
    if resid > 1e-8 * max(1.0, float(np.max(np.abs(u.real)))):
        raise NumericalError(-1, f"u (imaginary residue {resid:.3g})")
    return u.real


def u_step(obs: Observation, w, x, b, c, params: SolverParams) -> np.ndarray:
    if obs.kind == "mask":
        return u_step_inpaint(obs, w, x, b, c, params)
    if obs.kind == "blur":
        return u_step_deblur(obs, w, x, b, c, params)
    return _q(obs, w, x, b, c, params) / (1.0 + params.mu_tilde)


# ------------------------------------------------------------------ outer loop

def _check_finite(k: int, **buffers):
    for name, buf in buffers.items():
        if not np.all(np.isfinite(buf)):
            raise NumericalError(k, name)


def sbi_step(state: SolverState, obs: Observation, params: SolverParams, truth=None) -> SolverState:
    """One split Bregman iteration; returns a new state (the input is not modified)."""
    k = state.k + 1
    with np.errstate(invalid="ignore", over="ignore"):
        u = u_step(obs, state.w, state.x, state.b, state.c, params)
    _check_finite(k, u=u)

    p = u - state.b
    with np.errstate(invalid="ignore", over="ignore"):
        w, tv_dual = lsm.prox_lsm(p, params.gamma, params.lsm_inner_iters,
                                  dual=state.tv_dual, return_dual=True)
    _check_finite(k, w=w)

    r = u - state.c
    if params.lam > 0:
        with np.errstate(invalid="ignore", over="ignore"):
            x, plan = nlsm.prox_nlsm(r, params.alpha, params.nlsm, return_plan=True)
        _check_finite(k, x=x)
        var_e, var_theta = nlsm.variance_diagnostic(x, r, params.nlsm, plan)
    else:
        x = r.copy()
        var_e = var_theta = 0.0

    b = state.b - (u - w)
    c = state.c - (u - x)
    _check_finite(k, b=b, c=c)

    record = IterationRecord(
        iter=k,
        psnr_db=psnr(u, truth) if truth is not None else None,
        var_e=var_e,
        var_theta=var_theta,
        residual_uw=float(np.linalg.norm(u - w)),
        residual_ux=float(np.linalg.norm(u - x)),
    )
    return SolverState(u=u, w=w, x=x, b=b, c=c, k=k,
                       telemetry=state.telemetry + [record], tv_dual=tv_dual)


def run(obs: Observation, params: SolverParams, truth=None, init=None, callback=None):
    """Iterate :func:`sbi_step` ``max_iters`` times (or until the relative
    change of ``u`` drops below ``params.tol``).

    Returns ``(restored, telemetry)`` with the restored image clamped to
    [0, 255].
    """
    if truth is not None:
        truth = as_image(truth, "truth")
    state = SolverState.initial(obs, init)
    for _ in range(params.max_iters):
        prev = state.u
        state = sbi_step(state, obs, params, truth)
        rec = state.telemetry[-1]
        log.debug("iter %d psnr=%s var_e=%.4g var_theta=%.4g", rec.iter, rec.psnr_db,
                  rec.var_e, rec.var_theta)
        if callback is not None:
            callback(state)
        if params.tol is not None:
            change = np.linalg.norm(state.u - prev) / max(np.linalg.norm(prev), 1e-12)
            if change < params.tol:
                break
    return np.clip(state.u, 0.0, 255.0), state.telemetry


def without_nlsm(params: SolverParams) -> SolverParams:
    """Same schedule with the nonlocal term switched off (TV only)."""
    return replace(params, lam=0.0)


def _fmt_psnr(value) -> str:
    if value is None:
        return ""
    return "inf" if math.isinf(value) else f"{value:.6f}"


def write_telemetry_csv(telemetry, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TELEMETRY_FIELDS)
        for rec in telemetry:
            writer.writerow([
                rec.iter, _fmt_psnr(rec.psnr_db),
                f"{rec.var_e:.6f}", f"{rec.var_theta:.6f}",
                f"{rec.residual_uw:.6f}", f"{rec.residual_ux:.6f}",
            ])


def read_telemetry_csv(path) -> list[IterationRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out.append(IterationRecord(
                iter=int(row["iter"]),
                psnr_db=float(row["psnr_db"]) if row["psnr_db"] else None,
                var_e=float(row["var_e"]), var_theta=float(row["var_theta"]),
                residual_uw=float(row["residual_uw"]), residual_ux=float(row["residual_ux"]),
            ))
    return out
