"""Command-line entry point.

Exit status is 0 on success, 1 when inputs or options fail validation and 2
when a computation fails (diverged training, a singular estimate). Every
subcommand computes all of its results before writing any file.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import metrics
from .net import Network, init_network, load_weights, save_weights, surgery_expand
from .patch import PatchSet, extract_patches, patch_grid
from .phantom import PhantomSpec, default_spec, generate_phantom
from .pipeline import (
    UPSAMPLERS,
    StageError,
    apply_record,
    read_pairs_csv,
    run_cohort1,
    run_cohort2,
    score,
    super_resolve,
    write_json,
)
from .quant import estimate_t2
from .resample import degrade_slices, tricubic_upsample
from .train import TrainConfig, train
from .volume import (
    ScanParams,
    _atomic_write,
    load_scan_params,
    load_volume,
    normalize,
    save_scan_params,
    save_volume,
    sidecar_path,
)

log = logging.getLogger("mrsr")

EXIT_OK, EXIT_INVALID, EXIT_COMPUTE = 0, 1, 2


class SingularEstimate(ArithmeticError):
    pass


class _Parser(argparse.ArgumentParser):
    """Reports usage errors with the validation exit status."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def _range(text: str) -> tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected LO:HI, got {text!r}") from None
    if not lo < hi:
        raise argparse.ArgumentTypeError("range must satisfy LO < HI")
    return lo, hi


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return value


def _distinct(*paths) -> None:
    resolved = [Path(p).resolve() for p in paths if p is not None]
    if len(set(resolved)) != len(resolved):
        raise ValueError("input and output paths must all be distinct")


def _scan_for(vol_path, scan_path):
    path = Path(scan_path) if scan_path else sidecar_path(vol_path)
    if not path.is_file():
        raise FileNotFoundError(f"missing scan parameters {path}")
    return load_scan_params(path)


# -- subcommands ---------------------------------------------------------------


def cmd_phantom(args):
    _distinct(args.spec, args.scan, args.out, args.truth)
    if args.spec:
        with open(args.spec) as fh:
            spec = PhantomSpec.from_json(json.load(fh))
    else:
        spec = default_spec()
    params = load_scan_params(args.scan) if args.scan else ScanParams.dess_default()
    vol, truth = generate_phantom(spec, params)
    t2, _ = truth.to_volumes()
    save_volume(vol, args.out)
    save_scan_params(params, sidecar_path(args.out))
    if args.truth:
        save_volume(t2, args.truth)


def cmd_degrade(args):
    _distinct(args.input, args.out)
    save_volume(degrade_slices(load_volume(args.input), args.factor), args.out)


def cmd_upsample(args):
    _distinct(args.input, args.out)
    save_volume(UPSAMPLERS[args.method](load_volume(args.input), args.factor), args.out)


def _training_sets(lr_paths, hr_paths, patch, stride):
    if len(lr_paths) != len(hr_paths):
        raise ValueError("--lr-vol and --hr-vol must be given the same number of times")
    xs, ys, origins = [], [], []
    for lr_path, hr_path in zip(lr_paths, hr_paths):
        lo, hi = load_volume(lr_path), load_volume(hr_path)
        if lo.dims[:2] != hi.dims[:2] or hi.dims[2] % lo.dims[2]:
            raise ValueError(f"{lr_path} does not tile onto the grid of {hr_path}")
        factor = hi.dims[2] // lo.dims[2]
        if factor > 1:
            lo = tricubic_upsample(lo, factor)
        inp, rec = normalize(lo, "per-echo")
        tgt = apply_record(hi, rec)
        grid = patch_grid(inp.dims, patch, stride)
        xs.append(extract_patches(inp, grid).blocks.astype(np.float32))
        ys.append(extract_patches(tgt, grid).blocks.astype(np.float32))
        origins.append(grid.origins)
    pooled = type(grid)(np.concatenate(origins), patch, stride, grid.dims)
    return PatchSet(pooled, np.concatenate(xs)), PatchSet(pooled, np.concatenate(ys))


def cmd_train(args):
    _distinct(*args.lr_vol, *args.hr_vol, args.out, args.history, args.init)
    cfg = TrainConfig(lr=args.lr, batch=args.batch, epochs=args.epochs, seed=args.seed)
    x, y = _training_sets(args.lr_vol, args.hr_vol, args.patch, args.stride)
    echoes = x.blocks.shape[1]
    if args.init:
        net = load_weights(args.init)
    else:
        net = init_network(args.layers, args.features, echoes, echoes, seed=args.seed)
    trained, history = train(net, x, y, cfg, threads=args.threads)
    meta = dict(trained.meta)
    meta["train"] = {"lr": cfg.lr, "batch": cfg.batch, "epochs": cfg.epochs, "seed": cfg.seed, "n_patches": len(x.blocks)}
    trained = Network(trained.layers, meta)
    save_weights(trained, args.out)
    if args.history:
        _atomic_write(Path(args.history), history.to_csv().encode())


def cmd_transfer_init(args):
    _distinct(args.input, args.out)
    save_weights(surgery_expand(load_weights(args.input)), args.out)


def cmd_infer(args):
    _distinct(args.input, args.weights, args.out)
    net = load_weights(args.weights)
    vol = load_volume(args.input)
    if net.in_channels != vol.echoes:
        raise ValueError(f"network expects {net.in_channels} echoes, volume has {vol.echoes}")
    save_volume(super_resolve(net, vol, args.factor, args.patch, args.stride), args.out)


def cmd_t2map(args):
    mask_out = args.mask or Path(args.out).with_name(Path(args.out).stem + ".mask.mrsv")
    _distinct(args.input, args.out, mask_out)
    vol = load_volume(args.input)
    params = _scan_for(args.input, args.scan)
    t2map = estimate_t2(vol, params, args.range, k=args.k)
    if not t2map.valid.any():
        raise SingularEstimate("no voxel yields a valid T2 estimate")
    t2, mask = t2map.to_volumes()
    save_volume(t2, args.out)
    save_volume(mask, mask_out)


def cmd_evaluate(args):
    _distinct(args.truth, args.test, args.report)
    wanted = [m.strip() for m in args.metrics.split(",") if m.strip()]
    unknown = set(wanted) - {"ssim", "psnr", "rmse"}
    if unknown or not wanted:
        raise ValueError(f"unknown metrics {sorted(unknown)}; choose from ssim,psnr,rmse")
    reports = score(load_volume(args.truth), load_volume(args.test), per_slice=args.per_slice)
    out = {}
    for rep in reports:
        full = rep.to_json()
        entry = {k: full[k] for k in wanted}
        if "rmse" in wanted:
            entry["rmse_e3"] = full["rmse_e3"]
        out[rep.echo] = entry
    write_json(Path(args.report), out)


def cmd_agree(args):
    _distinct(args.pairs, args.report)
    subjects, pairs = read_pairs_csv(args.pairs)
    report = metrics.agreement_report(pairs, subjects, mode=args.u_mode)
    write_json(Path(args.report), report.to_json())


def cmd_cohort1(args):
    _distinct(args.gt, args.weights, args.out_dir)
    run_cohort1(args.gt, args.weights, args.out_dir, args.factor, per_slice=args.per_slice)


def cmd_cohort2(args):
    _distinct(args.manifest, args.scan, args.report)
    run_cohort2(args.manifest, args.scan, args.report, args.range)


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    def global_flags(default):
        # Subcommands accept the flags too; SUPPRESS keeps them from
        # overwriting a value given before the subcommand name.
        flags = _Parser(add_help=False)
        flags.add_argument("--seed", type=int, default=default(0), help="random seed (default 0)")
        flags.add_argument("--threads", type=_positive_int, default=default(1), help="worker cap; 1 is bitwise reproducible")
        flags.add_argument("--verbose", "-v", action="store_true", default=default(False))
        return flags

    common = global_flags(lambda _: argparse.SUPPRESS)
    parser = _Parser(prog="mrsr", description=__doc__.splitlines()[0], parents=[global_flags(lambda v: v)])
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text, parents=[common])
        p.set_defaults(func=func)
        return p

    p = add("phantom", cmd_phantom, "rasterize a synthetic dual-echo phantom")
    p.add_argument("--spec", help="phantom JSON (default: the built-in layered phantom)")
    p.add_argument("--scan", help="scan parameters JSON (default: DESS TR 23 ms, TE 7/39 ms)")
    p.add_argument("--out", required=True)
    p.add_argument("--truth")

    p = add("degrade", cmd_degrade, "low-pass filter and decimate along z")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--factor", type=_positive_int, default=2)

    p = add("upsample", cmd_upsample, "tricubic or Fourier upsampling along z")
    p.add_argument("--method", choices=sorted(UPSAMPLERS), required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--factor", type=_positive_int, default=2)

    p = add("train", cmd_train, "train the residual network on LR/HR volume pairs")
    p.add_argument("--lr-vol", action="append", required=True, help="thick or pre-interpolated input (repeatable)")
    p.add_argument("--hr-vol", action="append", required=True, help="matching high-resolution target (repeatable)")
    p.add_argument("--epochs", type=_positive_int, default=10)
    p.add_argument("--batch", type=_positive_int, default=50)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--layers", type=int, default=20)
    p.add_argument("--features", type=_positive_int, default=64)
    p.add_argument("--patch", type=_positive_int, default=32)
    p.add_argument("--stride", type=_positive_int, default=16)
    p.add_argument("--init", help="start from existing weights instead of a fresh network")
    p.add_argument("--out", required=True)
    p.add_argument("--history")

    p = add("transfer-init", cmd_transfer_init, "expand single-echo weights to dual-echo")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)

    p = add("infer", cmd_infer, "super-resolve a thick-slice volume")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--factor", type=_positive_int, default=2)
    p.add_argument("--patch", type=_positive_int, default=32)
    p.add_argument("--stride", type=_positive_int, default=16)

    p = add("t2map", cmd_t2map, "analytic T2 map from the two echoes")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--scan", help="scan parameters (default: the input's sidecar)")
    p.add_argument("--out", required=True)
    p.add_argument("--mask", help="validity mask output (default: <out>.mask.mrsv)")
    p.add_argument("--range", type=_range, default=(0.0, 100.0), help="valid T2 range in ms, LO:HI")
    p.add_argument("--k", type=float, default=1.0, help="echo-ratio correction factor")

    p = add("evaluate", cmd_evaluate, "image-quality metrics against a reference")
    p.add_argument("--truth", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--metrics", default="ssim,psnr,rmse")
    p.add_argument("--per-slice", action="store_true")
    p.add_argument("--report", required=True)

    p = add("agree", cmd_agree, "agreement statistics from paired T2 values")
    p.add_argument("--pairs", required=True)
    p.add_argument("--u-mode", choices=("auto", "exact", "normal"), default="auto")
    p.add_argument("--report", required=True)

    p = add("cohort1", cmd_cohort1, "degrade, upsample three ways and score")
    p.add_argument("--gt", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--factor", type=_positive_int, default=2)
    p.add_argument("--per-slice", action="store_true")

    p = add("cohort2", cmd_cohort2, "ROI T2 agreement across subjects and methods")
    p.add_argument("--manifest", required=True)
    p.add_argument("--scan", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--range", type=_range, default=(0.0, 100.0))
    return parser


def _is_computational(exc: BaseException) -> bool:
    if isinstance(exc, StageError):
        return _is_computational(exc.cause)
    return isinstance(exc, ArithmeticError)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        with threadpool_limits(limits=args.threads):
            args.func(args)
    except Exception as exc:
        if _is_computational(exc):
            print(f"mrsr {args.command}: computation failed: {exc}", file=sys.stderr)
            return EXIT_COMPUTE
        if isinstance(exc, (ValueError, OSError, KeyError, json.JSONDecodeError)):
            print(f"mrsr {args.command}: {exc}", file=sys.stderr)
            return EXIT_INVALID
        raise
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
