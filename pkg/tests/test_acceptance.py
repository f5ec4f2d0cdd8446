"""Acceptance suite: one test per criterion, each reporting PASS/FAIL.

The full-size runs take minutes each; they share session fixtures so that
every restoration is computed once.  Verdict lines are printed at the end of
the pytest run under "acceptance criteria".
"""
import os
from pathlib import Path

import numpy as np
import pytest
from scipy.optimize import lsq_linear

from jsmrestore.cli import BENCH_MU_TILDE
from jsmrestore.degrade import KernelKind, make_kernel
from jsmrestore.image import psnr, save_image
from jsmrestore.lsm import divergence, gradient, prox_lsm
from jsmrestore.nlsm import (NlsmParams, build_plan, forward_3d, inverse_3d, match_blocks,
                             prox_nlsm, reference_positions)
from jsmrestore.pipelines import DEFAULT_ITERS, INPAINT_ITERS, ExperimentSpec, run_experiment
from jsmrestore.solver import Observation, default_params, u_step_deblur, u_step_inpaint

from conftest import IMAGES
from test_lsm import exact_tv_prox
from test_nlsm import dense_3d, exhaustive_group
from test_solver import blur_matrix, dense_solve

slow = pytest.mark.slow

HOUSE_ENV = "JSMRESTORE_HOUSE"


def house_path():
    candidates = [os.environ.get(HOUSE_ENV), IMAGES / "house.png", IMAGES / "house.pgm"]
    for c in candidates:
        if c and Path(c).is_file():
            return Path(c)
    return None


def final_psnr(telemetry):
    return telemetry[-1].psnr_db


# ---------------------------------------------------------------- shared runs

@pytest.fixture(scope="session")
def house_inpaint_run():
    path = house_path()
    if path is None:
        return None
    spec = ExperimentSpec(task="inpaint", input=str(path), ratio=0.2, seed=0,
                          mu_tilde=BENCH_MU_TILDE["inpaint"], max_iters=INPAINT_ITERS[0.2])
    return run_experiment(spec)


@pytest.fixture(scope="session")
def butterfly_deblur_runs():
    spec = ExperimentSpec(task="deblur", input=str(IMAGES / "butterfly.png"), kernel="uniform9",
                          sigma=0.5, seed=0, mu_tilde=BENCH_MU_TILDE["deblur"],
                          max_iters=DEFAULT_ITERS)
    return run_experiment(spec), run_experiment(spec, lam_off=True)


# ---------------------------------------------------------------- quantitative

@slow
def test_criterion_01_house_inpaint_20pct(acceptance_report, house_inpaint_run):
    if house_inpaint_run is None:
        acceptance_report(1, False, "House image not available (put it in data/images/house.png "
                          f"or set {HOUSE_ENV}); target >= 33.5 dB not evaluated")
        pytest.fail("House test image is not bundled")
    _, restored, telemetry = house_inpaint_run
    value = final_psnr(telemetry)
    ok = acceptance_report(1, value >= 33.5, f"House 20% inpaint: {value:.2f} dB (need >= 33.5)")
    assert ok


@slow
def test_criterion_02_barbara_inpaint_50pct(acceptance_report):
    spec = ExperimentSpec(task="inpaint", input=str(IMAGES / "barbara.png"), ratio=0.5, seed=0,
                          mu_tilde=BENCH_MU_TILDE["inpaint"], max_iters=INPAINT_ITERS[0.5])
    _, _, telemetry = run_experiment(spec)
    value = final_psnr(telemetry)
    ok = acceptance_report(2, value >= 35.0, f"Barbara 50% inpaint: {value:.2f} dB (need >= 35.0)")
    assert ok


@slow
def test_criterion_03_butterfly_deblur(acceptance_report, butterfly_deblur_runs):
    (_, _, jsm), (_, _, tv) = butterfly_deblur_runs
    a, b = final_psnr(jsm), final_psnr(tv)
    ok = acceptance_report(3, a >= 30.0 and a - b >= 1.0,
                           f"Butterfly uniform9 deblur: {a:.2f} dB (need >= 30.0), "
                           f"TV-only {b:.2f} dB, margin {a - b:.2f} dB (need >= 1.0)")
    assert ok


@slow
def test_criterion_04_barbara_mixed_noise(acceptance_report):
    spec = ExperimentSpec(task="mixed", input=str(IMAGES / "barbara.png"), sigma=10.0,
                          impulse_r=0.5, seed=0, mu_tilde=BENCH_MU_TILDE["mixed"],
                          max_iters=DEFAULT_ITERS)
    _, _, telemetry = run_experiment(spec)
    value = final_psnr(telemetry)
    ok = acceptance_report(4, value >= 29.5,
                           f"Barbara sigma=10 r=50% mixed noise: {value:.2f} dB (need >= 29.5)")
    assert ok


@slow
def test_criterion_05_variance_diagnostic(acceptance_report, butterfly_deblur_runs):
    (_, _, telemetry), _ = butterfly_deblur_runs
    ratios = [abs(r.var_e - r.var_theta) / r.var_e for r in telemetry if r.iter >= 4]
    worst = max(ratios)
    k4 = telemetry[3]
    ok = acceptance_report(5, worst < 0.10,
                           f"max |var_e - var_theta| / var_e over k >= 4: {worst:.4f} (need < 0.10); "
                           f"k=4: {k4.var_e:.2f} vs {k4.var_theta:.2f}")
    assert ok


@slow
def test_criterion_06_mu_tilde_sensitivity(acceptance_report):
    values = {}
    for mu in (5e-4, 2e-3, 3e-2):
        spec = ExperimentSpec(task="deblur", input=str(IMAGES / "cameraman.png"),
                              kernel="motion20", sigma=0.5, seed=0, mu_tilde=mu,
                              max_iters=DEFAULT_ITERS)
        values[mu] = final_psnr(run_experiment(spec)[2])
    lo, mid, hi = values[5e-4], values[2e-3], values[3e-2]
    ok = mid - lo >= 1.0 and mid - hi >= 1.0
    acceptance_report(6, ok, f"Cameraman motion20 sigma=0.5: mu 5e-4 {lo:.2f}, 2e-3 {mid:.2f}, "
                      f"3e-2 {hi:.2f} dB (need middle >= both ends + 1.0)")
    assert ok


# ---------------------------------------------------------------- property based

def test_criterion_07_transform(acceptance_report):
    worst = 0.0
    for b in (2, 4, 8):
        for C in (2, 4, 8, 10):
            rng = np.random.default_rng(10 * b + C)
            g = rng.normal(0, 50, (5, C, b, b))
            theta = forward_3d(g)
            worst = max(worst, np.abs(inverse_3d(theta) - g).max())
            norms = np.sum(theta**2, axis=(1, 2, 3)) - np.sum(g**2, axis=(1, 2, 3))
            worst = max(worst, np.abs(norms).max() / np.sum(g**2, axis=(1, 2, 3)).max())
            n = C * b * b
            M = forward_3d(np.eye(n).reshape(n, C, b, b)).reshape(n, n).T
            worst = max(worst, np.abs(M.T @ M - np.eye(n)).max(),
                        np.abs(M - dense_3d(C, b)).max())
    ok = acceptance_report(7, worst <= 1e-10,
                           f"round-trip / Parseval / orthogonality worst error {worst:.2e} (need <= 1e-10)")
    assert ok


def test_criterion_08_u_step_solves(acceptance_report):
    worst_smw = 0.0
    for i in range(100):
        rng = np.random.default_rng(1000 + i)
        mask = rng.random((6, 6)) < rng.uniform(0.1, 0.9)
        y = np.where(mask, rng.uniform(0, 255, (6, 6)), 0.0)
        H = np.diag(mask.ravel().astype(float))[mask.ravel()]
        params = default_params(10.0 ** rng.uniform(-4, 0))
        w, x, b, c = (rng.normal(0, 20, (6, 6)) for _ in range(4))
        got = u_step_inpaint(Observation(y, mask=mask), w, x, b, c, params)
        want = dense_solve(H, y[mask], w, x, b, c, params)
        worst_smw = max(worst_smw, np.abs(got - want).max() / max(1.0, np.abs(want).max()))
    worst_fft = 0.0
    for kind in KernelKind:
        kernel = make_kernel(kind)
        side = max(16, kernel.shape[0])
        rng = np.random.default_rng(7)
        H = blur_matrix(kernel, (side, side))
        params = default_params(2e-3)
        y = rng.uniform(0, 255, (side, side))
        w, x, b, c = (rng.normal(0, 20, (side, side)) for _ in range(4))
        got = u_step_deblur(Observation(y, kernel=kernel), w, x, b, c, params)
        want = dense_solve(H, y, w, x, b, c, params)
        worst_fft = max(worst_fft, np.abs(got - want).max() / max(1.0, np.abs(want).max()))
    ok = worst_smw <= 1e-10 and worst_fft <= 1e-8
    acceptance_report(8, ok, f"masked closed form vs dense: {worst_smw:.2e} (need <= 1e-10); "
                      f"Fourier solve vs dense, 4 kernels: {worst_fft:.2e} (need <= 1e-8)")
    assert ok


def test_criterion_09_tv_prox_and_adjoint(acceptance_report):
    worst = 0.0
    for i in range(25):
        rng = np.random.default_rng(2000 + i)
        shape = (1, 4) if i % 2 == 0 else (4, 4)
        p = rng.uniform(0, 20, shape)
        gamma = rng.uniform(0.5, 3.0)
        worst = max(worst, np.abs(prox_lsm(p, gamma, 500) - exact_tv_prox(p, gamma)).max())
    worst_adj = 0.0
    for i in range(20):
        rng = np.random.default_rng(3000 + i)
        u = rng.normal(size=(9, 7))
        g = (rng.normal(size=(9, 7)), rng.normal(size=(9, 7)))
        du = gradient(u)
        lhs = np.sum(du.dv * g[0]) + np.sum(du.dh * g[1])
        worst_adj = max(worst_adj, abs(lhs + np.sum(u * divergence(g))))
    ok = worst <= 1e-4 and worst_adj <= 1e-10
    acceptance_report(9, ok, f"prox vs bounded least-squares dual oracle: {worst:.2e} (need <= 1e-4); "
                      f"adjoint identity: {worst_adj:.2e} (need <= 1e-10)")
    assert ok


def test_criterion_10_nlsm_identity_and_matching(acceptance_report):
    rng = np.random.default_rng(4000)
    r = rng.uniform(0, 255, (64, 64))
    err = np.abs(prox_nlsm(r, 1e-12, NlsmParams()) - r).max()
    mismatches = 0
    p = NlsmParams()
    for i in range(20):
        img = np.random.default_rng(5000 + i).uniform(0, 255, (24, 24))
        plan = build_plan(img, p)
        for ref, group in zip(reference_positions(24, 24, p), plan.groups):
            expect = exhaustive_group(img, ref, p)
            mismatches += match_blocks(img, ref, p).members != expect
            mismatches += group.members != expect
    ok = err <= 1e-8 and mismatches == 0
    acceptance_report(10, ok, f"prox_nlsm(alpha=1e-12) max deviation {err:.2e} (need <= 1e-8); "
                      f"block-matching mismatches vs exhaustive sort on 20 images: {mismatches}")
    assert ok


@slow
def test_criterion_11_determinism_and_monotone_telemetry(acceptance_report, house_inpaint_run,
                                                         tmp_path_factory):
    work = tmp_path_factory.mktemp("determinism")
    crop = work / "crop.png"
    from jsmrestore.image import load_image
    save_image(load_image(IMAGES / "cameraman.png")[64:160, 64:160], crop)
    mask = work / "mask.png"
    rows = np.zeros((96, 96), bool)
    rows[::7] = True
    save_image(np.where(rows, 0, 255), mask)
    specs = [
        ExperimentSpec(task="inpaint", input=str(crop), ratio=0.3, seed=3, max_iters=5),
        ExperimentSpec(task="text", input=str(crop), mask_path=str(mask), max_iters=5),
        ExperimentSpec(task="deblur", input=str(crop), kernel="gaussian25", sigma=1.0, seed=3,
                       mu_tilde=5e-4, max_iters=5),
        ExperimentSpec(task="mixed", input=str(crop), sigma=10.0, impulse_r=0.4, seed=3,
                       mu_tilde=0.3, max_iters=5),
    ]
    identical = True
    for spec in specs:
        d1, r1, t1 = run_experiment(spec)
        d2, r2, t2 = run_experiment(spec)
        identical &= np.array_equal(d1, d2) and np.array_equal(r1, r2)
        identical &= [vars(a) for a in t1] == [vars(b) for b in t2]

    if house_inpaint_run is not None:
        label, telemetry = "House 20%", house_inpaint_run[2]
    else:
        spec = ExperimentSpec(task="inpaint", input=str(IMAGES / "cameraman.png"), ratio=0.2,
                              seed=0, mu_tilde=BENCH_MU_TILDE["inpaint"],
                              max_iters=INPAINT_ITERS[0.2])
        label, telemetry = "Cameraman 20% (House not bundled)", run_experiment(spec)[2]
    ps = np.array([r.psnr_db for r in telemetry])
    tail = ps[9:]
    worst_dip = float(np.max(np.maximum.accumulate(tail) - tail))
    ok = identical and worst_dip <= 0.1
    acceptance_report(11, ok, f"re-runs bit-identical: {identical}; {label} telemetry worst dip "
                      f"after iteration 10: {worst_dip:.3f} dB (need <= 0.1)")
    assert ok
