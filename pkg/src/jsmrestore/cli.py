"""Command-line front end: ``jsmrestore {degrade,restore,bench,metrics}``.

Exit codes: 0 success, 1 I/O failure, 2 usage error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import degrade as dg
from .image import ImageIOError, load_image, psnr, save_image
from .nlsm import NlsmParams
from .pipelines import (DEFAULT_ITERS, INPAINT_ITERS, ExperimentSpec, Task, degrade_clean,
                        make_text_mask, run_experiment, summary_record)
from .solver import NumericalError, Observation, default_params, run, write_telemetry_csv

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3

# Per-suite mu_tilde defaults, picked from one-off PSNR-vs-mu_tilde sweeps
# on the bundled images (derived values, see README "Bench defaults").
BENCH_MU_TILDE = {
    "inpaint": 1e-2,
    "text": 1e-2,
    "deblur": 5e-4,
    "mixed": 0.3,
}
BENCH_RATIOS = (0.2, 0.3, 0.5, 0.8)
BENCH_KERNELS = (dg.KernelKind.UNIFORM9, dg.KernelKind.GAUSSIAN25, dg.KernelKind.MOTION20)
BENCH_DEBLUR_SIGMA = 0.5
BENCH_MIXED = ((0.4, 10.0), (0.5, 10.0))
IMAGE_SUFFIXES = (".png", ".pgm")

log = logging.getLogger("jsmrestore")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags already; keep that but route through main."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ------------------------------------------------------------------ flag helpers

def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` file; ``#`` starts a comment.  Keys use flag spelling."""
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ImageIOError(f"{path}: cannot read config ({exc})") from exc
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("_", "-")] = value
    return out


def _config_argv(argv: list[str]) -> list[str]:
    """Expand ``--config FILE`` into flags placed before the explicit ones,
    so explicit flags win."""
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return argv
    rest, files = [], []
    it = iter(argv)
    for a in it:
        if a == "--config":
            try:
                files.append(next(it))
            except StopIteration:
                raise UsageError("--config needs a path") from None
        elif a.startswith("--config="):
            files.append(a.split("=", 1)[1])
        else:
            rest.append(a)
    if not rest:
        raise UsageError("missing subcommand")
    extra = []
    for f in files:
        for key, value in read_config(f).items():
            extra += [f"--{key}", value]
    return rest[:1] + extra + rest[1:]


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _nonneg_int(text):
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _add_solver_flags(p):
    p.add_argument("--mu-tilde", type=float, default=None)
    p.add_argument("--iters", type=_nonneg_int, default=None)
    p.add_argument("--block", type=_positive_int, default=8)
    p.add_argument("--stride", type=_positive_int, default=4)
    p.add_argument("--window", type=_positive_int, default=40)
    p.add_argument("--group-size", type=_positive_int, default=10)
    p.add_argument("--threshold-rule", choices=("sqrt", "exact"), default="sqrt")
    p.add_argument("--lsm-iters", type=_positive_int, default=10)
    p.add_argument("--tol", type=float, default=None)


def _nlsm_params(args) -> NlsmParams:
    try:
        return NlsmParams(block=args.block, stride=args.stride, window=args.window,
                          group_size=args.group_size, threshold_rule=args.threshold_rule)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="jsmrestore", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    d = sub.add_parser("degrade", help="simulate a degradation")
    d.add_argument("--in", dest="input", required=True)
    d.add_argument("--out", required=True, help="degraded image (.png or .pgm)")
    d.add_argument("--task", required=True, choices=[t.value for t in Task])
    d.add_argument("--ratio", type=float)
    d.add_argument("--mask")
    d.add_argument("--kernel", choices=[k.value for k in dg.KernelKind])
    d.add_argument("--sigma", type=float)
    d.add_argument("--bsnr", type=float)
    d.add_argument("--impulse-r", type=float)
    d.add_argument("--amf-window", type=_positive_int, default=dg.AMF_MAX_WINDOW)
    d.add_argument("--seed", type=int, default=0)
    d.add_argument("--mask-out", help="where to write the mask (inpaint/mixed); "
                   "default: <out stem>_mask.png")

    r = sub.add_parser("restore", help="restore a degraded image")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--out", required=True, help="restored image; telemetry and summary "
                   "are written next to it")
    r.add_argument("--mask")
    r.add_argument("--kernel", choices=[k.value for k in dg.KernelKind])
    r.add_argument("--sigma", type=float, help="noise level (recorded in the summary)")
    r.add_argument("--truth", help="clean image for PSNR telemetry")
    r.add_argument("--sweep", help="mu_tilde=a,b,c: one run per value")
    _add_solver_flags(r)

    b = sub.add_parser("bench", help="run a benchmark suite and tabulate PSNR")
    b.add_argument("--suite", required=True, choices=[t.value for t in Task])
    b.add_argument("--images", required=True)
    b.add_argument("--out", required=True)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--save-images", action="store_true")
    _add_solver_flags(b)

    m = sub.add_parser("metrics", help="PSNR between two images")
    m.add_argument("--a", required=True)
    m.add_argument("--b", required=True)
    parser.subcommand_parsers = {"degrade": d, "restore": r, "bench": b, "metrics": m}
    return parser


# ------------------------------------------------------------------ subcommands

def _mask_image(mask) -> np.ndarray:
    return np.where(mask, 255.0, 0.0)


def _spec_from_degrade_args(args) -> ExperimentSpec:
    try:
        return ExperimentSpec(task=args.task, input=args.input, seed=args.seed,
                              ratio=args.ratio, mask_path=args.mask, kernel=args.kernel,
                              sigma=args.sigma, bsnr=args.bsnr, impulse_r=args.impulse_r,
                              amf_window=args.amf_window)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_degrade(args) -> int:
    spec = _spec_from_degrade_args(args)
    clean = load_image(spec.input)
    try:
        deg = degrade_clean(spec, clean)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    out = Path(args.out)
    save_image(deg.degraded, out)
    if spec.task in (Task.INPAINT, Task.MIXED):
        mask_out = Path(args.mask_out) if args.mask_out else out.with_name(out.stem + "_mask.png")
        save_image(_mask_image(deg.mask), mask_out)
    print(f"degraded PSNR: {_fmt_db(psnr(deg.degraded, clean))}")
    return EXIT_OK


def _fmt_db(v: float) -> str:
    return "inf" if np.isinf(v) else f"{v:.2f}"


def _parse_sweep(text: str) -> list[float]:
    key, _, values = text.partition("=")
    if key.strip().replace("-", "_") != "mu_tilde" or not values:
        raise UsageError("--sweep expects mu_tilde=a,b,c")
    try:
        return [float(v) for v in values.split(",")]
    except ValueError as exc:
        raise UsageError(f"--sweep: {exc}") from exc


def cmd_restore(args) -> int:
    if (args.mask is None) == (args.kernel is None):
        raise UsageError("restore needs exactly one of --mask or --kernel")
    y = load_image(args.input)
    truth = load_image(args.truth) if args.truth else None
    if truth is not None and truth.shape != y.shape:
        raise UsageError("--truth does not match the input size")
    if args.mask is not None:
        mask = dg.mask_from_image(load_image(args.mask))
        if mask.shape != y.shape:
            raise UsageError("--mask does not match the input size")
        obs = Observation(y, mask=mask)
    else:
        obs = Observation(y, kernel=dg.make_kernel(args.kernel))

    mus = _parse_sweep(args.sweep) if args.sweep else [args.mu_tilde or 1e-2]
    iters = DEFAULT_ITERS if args.iters is None else args.iters
    nl = _nlsm_params(args)
    out = Path(args.out)
    for mu in mus:
        try:
            params = default_params(mu, iters, nl, lsm_inner_iters=args.lsm_iters, tol=args.tol)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        target = out if len(mus) == 1 else out.with_name(f"{out.stem}_mu{mu:g}{out.suffix}")
        t0 = time.perf_counter()
        restored, telemetry = run(obs, params, truth=truth)
        wall = time.perf_counter() - t0
        save_image(restored, target)
        write_telemetry_csv(telemetry, target.with_name(target.stem + "_telemetry.csv"))
        described = {"mu_tilde": mu, "iters": iters, "iterations_run": len(telemetry),
                     "mask": args.mask, "kernel": args.kernel, "sigma": args.sigma,
                     "nlsm": vars(nl), "lsm_iters": args.lsm_iters, "tol": args.tol}
        task = "restore-mask" if args.mask else "restore-blur"
        summary = summary_record(task, Path(args.input).name, described,
                                 psnr(y, truth) if truth is not None else None,
                                 psnr(restored, truth) if truth is not None else None, wall)
        target.with_name(target.stem + "_summary.json").write_text(json.dumps(summary) + "\n")
        if truth is not None:
            print(f"mu_tilde={mu:g} restored PSNR: {_fmt_db(psnr(restored, truth))}")
    return EXIT_OK


def bench_specs(suite: str, images: list[Path], args, work: Path) -> list[tuple[str, str, ExperimentSpec]]:
    """(image name, setting label, spec) for every row of a suite."""
    mu = args.mu_tilde or BENCH_MU_TILDE[suite]
    common = dict(seed=args.seed, mu_tilde=mu, lsm_inner_iters=args.lsm_iters,
                  nlsm=_nlsm_params(args), tol=args.tol)
    rows = []
    for img in images:
        if suite == "inpaint":
            for ratio in BENCH_RATIOS:
                iters = args.iters if args.iters is not None else INPAINT_ITERS[ratio]
                rows.append((img.name, f"{round(ratio * 100)}%", ExperimentSpec(
                    task=Task.INPAINT, input=str(img), ratio=ratio, max_iters=iters, **common)))
        elif suite == "text":
            shape = load_image(img).shape
            mask_path = work / f"text_mask_{shape[0]}x{shape[1]}.png"
            if not mask_path.exists():
                save_image(_mask_image(make_text_mask(shape)), mask_path)
            rows.append((img.name, "text", ExperimentSpec(
                task=Task.TEXT, input=str(img), mask_path=str(mask_path),
                max_iters=args.iters if args.iters is not None else DEFAULT_ITERS, **common)))
        elif suite == "deblur":
            for kernel in BENCH_KERNELS:
                rows.append((img.name, f"{kernel.value}, sigma={BENCH_DEBLUR_SIGMA:g}",
                             ExperimentSpec(task=Task.DEBLUR, input=str(img), kernel=kernel.value,
                                            sigma=BENCH_DEBLUR_SIGMA,
                                            max_iters=args.iters if args.iters is not None
                                            else DEFAULT_ITERS, **common)))
        else:
            for r, sigma in BENCH_MIXED:
                rows.append((img.name, f"r={round(r * 100)}%, sigma={sigma:g}", ExperimentSpec(
                    task=Task.MIXED, input=str(img), sigma=sigma, impulse_r=r,
                    max_iters=args.iters if args.iters is not None else DEFAULT_ITERS, **common)))
    return rows


def _markdown_table(header, rows) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
    lines += ["| " + " | ".join(row) + " |" for row in rows]
    return "\n".join(lines) + "\n"


def cmd_bench(args) -> int:
    img_dir = Path(args.images)
    if not img_dir.is_dir():
        raise UsageError(f"--images {img_dir} is not a directory")
    images = sorted(p for p in img_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
    if not images:
        raise UsageError(f"no .png/.pgm images in {img_dir}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    results = []
    for name, setting, spec in bench_specs(args.suite, images, args, out):
        log.info("bench %s %s %s", args.suite, name, setting)
        clean = load_image(spec.input)
        degraded, restored, telemetry = run_experiment(spec)
        if args.save_images:
            stem = f"{Path(name).stem}_{setting.replace('%', 'pct').replace(', ', '_')}"
            save_image(degraded, out / f"{stem}_degraded.png")
            save_image(restored, out / f"{stem}_restored.png")
            write_telemetry_csv(telemetry, out / f"{stem}_telemetry.csv")
        results.append((name, setting, psnr(degraded, clean), psnr(restored, clean)))

    results.sort(key=lambda r: (r[0], r[1]))
    header = ("Image", "Setting", "Degraded PSNR", "Restored PSNR")
    table = [(n, s, _fmt_db(d), _fmt_db(r)) for n, s, d, r in results]
    (out / f"bench_{args.suite}.md").write_text(_markdown_table(header, table))
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(table)
    (out / f"bench_{args.suite}.csv").write_text(buf.getvalue())
    sys.stdout.write(_markdown_table(header, table))
    return EXIT_OK


def cmd_metrics(args) -> int:
    a = load_image(args.a)
    b = load_image(args.b)
    if a.shape != b.shape:
        raise UsageError(f"dimension mismatch: {a.shape} vs {b.shape}")
    print(_fmt_db(psnr(a, b)))
    return EXIT_OK


COMMANDS = {"degrade": cmd_degrade, "restore": cmd_restore, "bench": cmd_bench,
            "metrics": cmd_metrics}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = None
    try:
        args = parser.parse_args(_config_argv(argv))
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        if args is not None:  # argparse already printed usage for its own errors
            parser.subcommand_parsers[args.command].print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ImageIOError, OSError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        if args is not None:
            parser.subcommand_parsers[args.command].print_usage(sys.stderr)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
