"""Command-line entry point.

Subcommands: inpaint, metrics, maskgen, register, bench, weights.
Flags come first; every subcommand also accepts ``--config FILE`` with
plain ``key = value`` lines (keys are the long flag names), and explicit
flags override file values. Exit codes: 0 success, 1 runtime failure,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import coarse, core, featnet, inversion, maskgen, metrics, patchswap
from . import register2d


class UsageError(Exception):
    pass


# Per-subcommand registry of (dest -> (converter, hard default)). All flags
# parse with default=None so config-file values can fill the gaps before the
# hard default applies.
_REGISTRY: dict[str, dict[str, tuple] ] = {}


def _bool_str(s: str) -> bool:
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _opt(sub, cmd: str, name: str, *, conv=str, default=None, flag=False,
         help: str = ""):
    dest = name.replace("-", "_")
    reg = _REGISTRY.setdefault(cmd, {})
    if flag:
        sub.add_argument(f"--{name}", dest=dest, action="store_const",
                         const=True, default=None, help=help)
        reg[dest] = (_bool_str, False if default is None else default)
    else:
        sub.add_argument(f"--{name}", dest=dest, type=conv, default=None,
                         help=help)
        reg[dest] = (conv, default)


def _load_config_file(path: str) -> dict[str, str]:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {path}")
    values = {}
    for lineno, raw in enumerate(p.read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, val = line.split("=", 1)
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def _resolve(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from the config file, then from hard defaults."""
    reg = _REGISTRY.get(args.command, {})
    fileval = _load_config_file(args.config) if args.config else {}
    unknown = set(fileval) - set(reg)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(sorted(unknown))}")
    for dest, (conv, default) in reg.items():
        if getattr(args, dest, None) is not None:
            continue
        if dest in fileval:
            try:
                setattr(args, dest, conv(fileval[dest]))
            except ValueError as e:
                raise UsageError(f"config key {dest}: {e}")
        else:
            setattr(args, dest, default)
    return args


def _need_file(path, what: str) -> Path:
    if path is None:
        raise UsageError(f"{what} not specified")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _out_dir(path) -> Path:
    if path is None:
        raise UsageError("output dir not specified")
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _append_csv(path: Path, header: list[str], row: list[str]) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(header)
        w.writerow(row)


# ---------------------------------------------------------------------------
# inpaint
# ---------------------------------------------------------------------------

def cmd_inpaint(args) -> int:
    img_path = _need_file(args.input, "input image")
    mask_path = _need_file(args.mask, "mask")
    weights = _need_file(args.weights, "weights") if not args.skip_refine else None
    out = _out_dir(args.output_dir)

    img = core.read_image_any(img_path)
    mask = core.read_mask_any(mask_path)
    core.check_mask_matches(mask, img)

    cparams = coarse.CoarseFillParams(max_iters=args.coarse_iters,
                                      tolerance=args.coarse_tol)
    coarse_img = coarse.diffusion_fill(img, mask, cparams)
    core.write_png_gray(out / "coarse.png", coarse_img, bitdepth=args.bitdepth)

    energy_csv = out / "energy.csv"
    if args.skip_refine:
        core.write_png_gray(out / "inpainted.png", coarse_img,
                            bitdepth=args.bitdepth)
        with open(energy_csv, "w", newline="") as fh:
            csv.writer(fh).writerow(["iter", "total", "perceptual", "sym"])
        print(f"coarse-only inpaint written to {out}")
        return 0

    net = featnet.load_network(weights)
    feat, _ = featnet.forward(net, coarse_img)
    fh_, fw_ = feat.shape[1:]
    fm = patchswap.downsample_mask(mask, fh_, fw_)
    sparams = patchswap.SwapParams(patch_size=args.patch_size)
    swapped = patchswap.swap_fast(feat, fm, sparams)
    if args.dump_features:
        core.write_tensor(out / "f1.sft1", feat)
        core.write_tensor(out / "f1_swapped.sft1", swapped)

    cfg = inversion.InversionConfig(
        lambda_perceptual=args.lambda_perceptual,
        lambda_sym=args.lambda_sym,
        step_size=args.step_size,
        max_iters=args.max_iters,
        stop_tol=args.stop_tol,
    )
    final, report = inversion.invert(coarse_img, swapped, mask, net, cfg)
    core.write_png_gray(out / "inpainted.png", final, bitdepth=args.bitdepth)
    with open(energy_csv, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iter", "total", "perceptual", "sym"])
        for i, (t, p, s) in enumerate(
                zip(report.total, report.perceptual, report.sym)):
            w.writerow([i, f"{t:.9g}", f"{p:.9g}", f"{s:.9g}"])
    print(f"inpainted image and energy trace written to {out}")
    return 0


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def cmd_metrics(args) -> int:
    a = core.read_image_any(_need_file(args.image_a, "image-a"))
    b = core.read_image_any(_need_file(args.image_b, "image-b"))
    mask = None
    if args.mask:
        mask = core.read_mask_any(_need_file(args.mask, "mask"))
    net = None
    if args.weights:
        net = featnet.load_network(_need_file(args.weights, "weights"))

    report = metrics.compute_report(a, b, mask=mask, net=net, bins=args.bins)
    label = args.label or Path(args.image_a).stem
    cells = report.to_row()
    for name, cell in zip(metrics.REPORT_FIELDS, cells):
        print(f"{name}: {cell if cell else 'n/a'}")
    if args.csv:
        _append_csv(Path(args.csv), ["image", "method", *metrics.REPORT_FIELDS],
                    [label, args.method, *cells])
        print(f"row appended to {args.csv}")
    return 0


# ---------------------------------------------------------------------------
# maskgen
# ---------------------------------------------------------------------------

def cmd_maskgen(args) -> int:
    params = maskgen.MaskGenParams(
        seed=args.seed, coverage=args.coverage, walkers=args.walkers,
        brush_radius_range=(args.brush_min, args.brush_max))
    mask = maskgen.random_irregular_mask(args.height, args.width, params)
    if args.out is None and args.out_sft1 is None:
        raise UsageError("no output specified (--out and/or --out-sft1)")
    if args.out:
        core.write_mask_png(args.out, mask)
    if args.out_sft1:
        core.write_tensor(args.out_sft1, mask.astype(np.float32))
    frac = float(mask.mean())
    print(f"mask {args.height}x{args.width} hole fraction {frac:.4f} "
          f"(target {args.coverage})")
    return 0


# ---------------------------------------------------------------------------
# register
# ---------------------------------------------------------------------------

def cmd_register(args) -> int:
    atlas = core.read_image_any(_need_file(args.atlas, "atlas"))
    patient = core.read_image_any(_need_file(args.patient, "patient"))
    params = register2d.DemonsParams(
        iterations=args.iterations,
        field_smoothing_sigma=args.sigma,
        update_scale=args.update_scale,
        pyramid_levels=args.levels,
    )

    if args.inpainted:
        inp = core.read_image_any(_need_file(args.inpainted, "inpainted"))
        if args.tumor_mask:
            tumor = core.read_mask_any(_need_file(args.tumor_mask, "tumor-mask"))
        else:
            tumor = np.zeros(patient.shape, dtype=bool)
        rep = register2d.compare_registration(atlas, patient, inp, tumor, params)
        print(f"mi_direct: {rep.mi_direct:.6f}")
        print(f"mi_inpainted: {rep.mi_inpainted:.6f}")
        print(f"improvement: {rep.improvement:+.6f}")
        if args.out_csv:
            _append_csv(Path(args.out_csv),
                        ["case", "mi_direct", "mi_inpainted", "improvement"],
                        [args.label or "case",
                         f"{rep.mi_direct:.9g}", f"{rep.mi_inpainted:.9g}",
                         f"{rep.improvement:.9g}"])
        return 0

    field = register2d.demons_register(atlas, patient, params)
    warped = register2d.warp(patient, field)
    mi_before = metrics.mutual_information(atlas, patient, bins=args.bins)
    mi_after = metrics.mutual_information(atlas, warped, bins=args.bins)
    print(f"mi before: {mi_before:.6f}  after: {mi_after:.6f}")
    if args.out_field:
        core.write_tensor(args.out_field, field)
    if args.out_csv:
        _append_csv(Path(args.out_csv),
                    ["case", "mi_before", "mi_after"],
                    [args.label or "case", f"{mi_before:.9g}", f"{mi_after:.9g}"])
    return 0


# ---------------------------------------------------------------------------
# bench
# ---------------------------------------------------------------------------

def cmd_bench(args) -> int:
    rng = np.random.default_rng(args.seed)
    c, h, w = args.channels, args.height, args.width
    feat = rng.standard_normal((c, h, w)).astype(np.float32)
    fm = rng.uniform(size=(h, w)) < args.hole_frac
    fm[0, 0] = False  # keep at least one candidate cell

    rows = []
    t0 = time.perf_counter()
    fast = patchswap.swap_fast(feat, fm)
    t_fast = time.perf_counter() - t0
    rows.append(("swap_fast", t_fast))

    t0 = time.perf_counter()
    naive = patchswap.swap_naive(feat, fm)
    t_naive = time.perf_counter() - t0
    rows.append(("swap_naive", t_naive))

    match = bool(np.array_equal(fast, naive))
    speedup = t_naive / t_fast if t_fast > 0 else float("inf")
    rows.append(("swap_speedup", speedup))

    for name, val in rows:
        print(f"{name}: {val:.4f}")
    print(f"outputs identical: {match}")
    if args.out_csv:
        with open(args.out_csv, "w", newline="") as fh:
            wcsv = csv.writer(fh)
            wcsv.writerow(["stage", "value"])
            for name, val in rows:
                wcsv.writerow([name, f"{val:.6f}"])
            wcsv.writerow(["outputs_identical", str(match).lower()])
    if not match:
        raise RuntimeError("swap_fast disagreed with swap_naive")
    return 0


# ---------------------------------------------------------------------------
# weights inspect
# ---------------------------------------------------------------------------

def cmd_weights(args) -> int:
    if args.weights_cmd != "inspect":
        raise UsageError(f"unknown weights subcommand {args.weights_cmd!r}")
    net = featnet.load_network(_need_file(args.file, "weights"))
    total = 0
    print(f"{'idx':>3}  {'kind':8} {'shape':24} {'params':>10}  tap")
    for i, layer in enumerate(net.layers):
        tap = "*" if i == net.tap_index else ""
        if isinstance(layer, featnet.ConvLayer):
            n = layer.weights.size + layer.bias.size
            shape = f"{layer.out_c}x{layer.in_c}x{layer.kh}x{layer.kw}"
            desc = ("conv", shape, n)
        elif isinstance(layer, featnet.ReluLayer):
            desc = ("relu", "-", 0)
        else:
            desc = ("maxpool", f"window {layer.window}", 0)
        total += desc[2]
        print(f"{i:>3}  {desc[0]:8} {desc[1]:24} {desc[2]:>10}  {tap}")
    print(f"total parameters: {total}")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symfill",
        description="Symmetry-constrained inpainting and evaluation tools.")
    subs = parser.add_subparsers(dest="command", required=True)

    def common(sub, cmd):
        sub.add_argument("--config", default=None,
                         help="key = value file; flags override")
        _opt(sub, cmd, "threads", conv=int, default=0,
             help="cap BLAS threads (0 = leave unchanged)")
        sub.set_defaults(command=cmd)

    s = subs.add_parser("inpaint", help="run the full inpainting pipeline")
    common(s, "inpaint")
    _opt(s, "inpaint", "input", help="input image (PNG or SFT1)")
    _opt(s, "inpaint", "mask", help="hole mask (PNG nonzero=hole, or SFT1)")
    _opt(s, "inpaint", "weights", help="feature network (SFW1)")
    _opt(s, "inpaint", "output-dir", help="directory for artifacts")
    _opt(s, "inpaint", "coarse-iters", conv=int, default=10000)
    _opt(s, "inpaint", "coarse-tol", conv=float, default=1e-6)
    _opt(s, "inpaint", "patch-size", conv=int, default=1)
    _opt(s, "inpaint", "lambda-perceptual", conv=float, default=10.0)
    _opt(s, "inpaint", "lambda-sym", conv=float, default=1.0)
    _opt(s, "inpaint", "step-size", conv=float, default=0.05)
    _opt(s, "inpaint", "max-iters", conv=int, default=400)
    _opt(s, "inpaint", "stop-tol", conv=float, default=1e-5)
    _opt(s, "inpaint", "bitdepth", conv=int, default=16)
    _opt(s, "inpaint", "skip-refine", flag=True,
         help="stop after the coarse diffusion fill")
    _opt(s, "inpaint", "dump-features", flag=True,
         help="also write f1.sft1 / f1_swapped.sft1")
    s.set_defaults(func=cmd_inpaint)

    s = subs.add_parser("metrics", help="compare two images")
    common(s, "metrics")
    _opt(s, "metrics", "image-a", help="reference image")
    _opt(s, "metrics", "image-b", help="candidate image")
    _opt(s, "metrics", "mask", help="optional hole mask for the L1 column")
    _opt(s, "metrics", "weights", help="optional SFW1 net for the perceptual column")
    _opt(s, "metrics", "bins", conv=int, default=32)
    _opt(s, "metrics", "csv", help="append a row to this CSV")
    _opt(s, "metrics", "label", help="image label for the CSV row")
    _opt(s, "metrics", "method", default="pair", help="method label for the CSV row")
    s.set_defaults(func=cmd_metrics)

    s = subs.add_parser("maskgen", help="generate an irregular hole mask")
    common(s, "maskgen")
    _opt(s, "maskgen", "height", conv=int, default=240)
    _opt(s, "maskgen", "width", conv=int, default=240)
    _opt(s, "maskgen", "coverage", conv=float, default=0.25)
    _opt(s, "maskgen", "seed", conv=int, default=0)
    _opt(s, "maskgen", "walkers", conv=int, default=4)
    _opt(s, "maskgen", "brush-min", conv=int, default=2)
    _opt(s, "maskgen", "brush-max", conv=int, default=6)
    _opt(s, "maskgen", "out", help="output mask PNG")
    _opt(s, "maskgen", "out-sft1", help="output mask SFT1")
    s.set_defaults(func=cmd_maskgen)

    s = subs.add_parser("register", help="demons registration and MI report")
    common(s, "register")
    _opt(s, "register", "atlas", help="fixed image")
    _opt(s, "register", "patient", help="moving image")
    _opt(s, "register", "inpainted", help="inpainted patient (enables comparison)")
    _opt(s, "register", "tumor-mask", help="exclusion mask for MI")
    _opt(s, "register", "iterations", conv=int, default=200)
    _opt(s, "register", "sigma", conv=float, default=2.0)
    _opt(s, "register", "update-scale", conv=float, default=1.0)
    _opt(s, "register", "levels", conv=int, default=3)
    _opt(s, "register", "bins", conv=int, default=32)
    _opt(s, "register", "label", help="case label for the CSV row")
    _opt(s, "register", "out-field", help="write the displacement field (SFT1)")
    _opt(s, "register", "out-csv", help="append the MI row to this CSV")
    s.set_defaults(func=cmd_register)

    s = subs.add_parser("bench", help="time the patch-swap paths")
    common(s, "bench")
    _opt(s, "bench", "channels", conv=int, default=256)
    _opt(s, "bench", "height", conv=int, default=60)
    _opt(s, "bench", "width", conv=int, default=60)
    _opt(s, "bench", "hole-frac", conv=float, default=0.3)
    _opt(s, "bench", "seed", conv=int, default=0)
    _opt(s, "bench", "out-csv", help="write per-stage wall times")
    s.set_defaults(func=cmd_bench)

    s = subs.add_parser("weights", help="weight file utilities")
    common(s, "weights")
    s.add_argument("weights_cmd", choices=["inspect"])
    s.add_argument("file", help="SFW1 file")
    s.set_defaults(func=cmd_weights)

    return parser


def _apply_threads(args) -> None:
    n = getattr(args, "threads", 0) or 0
    if n > 0:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS"):
            os.environ[var] = str(n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _resolve(args)
        _apply_threads(args)
        return args.func(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (core.FormatError, ValueError, RuntimeError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
