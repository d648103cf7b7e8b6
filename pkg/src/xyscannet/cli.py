"""Command-line interface: ``xyscan <command> [flags]``.

Exit codes: 0 success, 1 validation or usage error, 2 runtime failure.
``XYSCAN_THREADS`` caps the BLAS/OpenMP worker count; it is applied before
NumPy is imported, so it only takes effect when the CLI starts the process.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

COMMANDS = ("make-data", "train", "infer", "eval", "gradcheck", "bench-scan", "count")
THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")
SNAPSHOT = "effective-config.txt"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _size(text: str) -> tuple:
    try:
        h, w = text.lower().split("x")
        h, w = int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError(f"size must be positive, got {text!r}")
    return h, w


def _seed(text: str) -> int:
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="flat key=value config file")
    common.add_argument("--set", metavar="KEY=VALUE", action="append", default=[], dest="overrides",
                        help="override a config key (repeatable)")
    common.add_argument("--seed", type=_seed, help="run seed (overrides the config's seed)")
    common.add_argument("--out", metavar="DIR", help="output directory (default ./xyscan-out)")

    p = _Parser(prog="xyscan", description="Slice-and-scan state space deblurring on NumPy.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("make-data", parents=[common], help="write synthetic blurred/sharp PNG pairs")
    s.add_argument("--size", type=_size, help="image size HxW (default data.size square)")

    s = sub.add_parser("train", parents=[common], help="train on synthetic or PNG pairs")
    s.add_argument("--steps", type=int, help="optimizer steps (overrides train.steps)")
    s.add_argument("--data", metavar="DIR", help="paired directory with blurred/ and sharp/ (default: synthesize)")

    s = sub.add_parser("infer", parents=[common], help="restore blurred PNGs with a checkpoint")
    s.add_argument("--ckpt", metavar="PATH", required=True)
    s.add_argument("inputs", metavar="INPUT", help="PNG file or directory of PNGs")

    s = sub.add_parser("eval", parents=[common], help="PSNR/SSIM CSV over two paired directories")
    s.add_argument("pred", metavar="PRED_DIR")
    s.add_argument("ref", metavar="REF_DIR")

    s = sub.add_parser("gradcheck", parents=[common], help="run the gradient verification suite")
    s.add_argument("--only", metavar="SUBSTR", help="run checks whose name contains SUBSTR")

    s = sub.add_parser("bench-scan", parents=[common], help="scan strategy cost and timing comparison")
    s.add_argument("--size", type=_size, default=(64, 64), help="input size HxW (default 64x64)")
    s.add_argument("--repeats", type=int, default=3)
    s.add_argument("--channels", type=int, default=16)
    s.add_argument("--state-dim", type=int, default=16)

    s = sub.add_parser("count", parents=[common], help="parameter and MAC counts for a config")
    s.add_argument("--size", type=_size, default=(256, 256), help="input size HxW (default 256x256)")
    return p


def _apply_threads() -> None:
    n = os.environ.get("XYSCAN_THREADS")
    if n is None:
        return
    if not n.isdigit() or int(n) < 1:
        raise UsageError(f"XYSCAN_THREADS must be a positive integer, got {n!r}")
    for var in THREAD_VARS:
        os.environ[var] = n


def _write_snapshot(out: Path, args, cfg) -> None:
    from . import config as config_mod

    out.mkdir(parents=True, exist_ok=True)
    argv = " ".join(getattr(args, "_argv", []))
    header = f"# xyscan {args.command}\n# argv: {argv}\n"
    (out / SNAPSHOT).write_text(header + config_mod.dump_text(cfg))


def _pngs(path: Path) -> list:
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise FileNotFoundError(f"no such file or directory: {path}")
    return sorted(p for p in path.iterdir() if p.suffix.lower() == ".png")


def _pairs_from_dir(root: Path, dtype) -> list:
    from .io import png_read

    bdir, sdir = root / "blurred", root / "sharp"
    if not bdir.is_dir() or not sdir.is_dir():
        raise FileNotFoundError(f"{root} must contain blurred/ and sharp/")
    names = sorted(p.name for p in _pngs(bdir))
    return [(png_read(bdir / n, dtype), png_read(sdir / n, dtype)) for n in names]


# ------------------------------------------------------------ commands


def cmd_make_data(args, cfg, out: Path) -> int:
    from .data import make_pairs
    from .io import png_write

    size = args.size or cfg.data.size
    pairs = make_pairs(cfg.seed, cfg.data.pairs, size,
                       kernel_len_range=(cfg.data.kernel_min, cfg.data.kernel_max),
                       noise_sigma=(0.0, cfg.data.noise_max))
    for sub in ("blurred", "sharp"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    for i, (b, s) in enumerate(pairs):
        png_write(out / "blurred" / f"{i:04d}.png", b)
        png_write(out / "sharp" / f"{i:04d}.png", s)
    print(f"wrote {len(pairs)} pairs to {out}")
    return 0


def cmd_train(args, cfg, out: Path) -> int:
    from .train import train_loop

    dtype = cfg.model.np_dtype
    if args.data:
        pairs = _pairs_from_dir(Path(args.data), dtype)
    else:
        pairs = cfg.data.make(cfg.seed)

    def report(row):
        if row["psnr_holdout"] != "":
            print(f"step {row['step']:>6}  loss {row['loss']:.6f}  holdout PSNR {float(row['psnr_holdout']):.3f} dB",
                  flush=True)

    res = train_loop(cfg.model, pairs, cfg.train.steps, cfg.seed, cfg.train, cfg.loss, out_dir=out, on_step=report)
    print(f"checkpoint: {res.checkpoint}")
    print(f"metrics:    {out / 'metrics.csv'}")
    return 0


def cmd_infer(args, cfg, out: Path) -> int:
    from .io import checkpoint_load, png_read, png_write
    from .network import restore

    weights, mcfg = checkpoint_load(args.ckpt)
    files = _pngs(Path(args.inputs))
    if not files:
        raise FileNotFoundError(f"no PNG files in {args.inputs}")
    for f in files:
        img = png_read(f, mcfg.np_dtype)
        png_write(out / f.name, restore(weights, mcfg, img))
    print(f"restored {len(files)} images into {out}")
    return 0


def cmd_eval(args, cfg, out: Path) -> int:
    import csv

    import numpy as np

    from .io import png_read
    from .metrics import psnr, ssim

    pred_dir, ref_dir = Path(args.pred), Path(args.ref)
    names = [p.name for p in _pngs(pred_dir)]
    missing = [n for n in names if not (ref_dir / n).is_file()]
    if missing:
        raise UsageError(f"{len(missing)} prediction(s) have no reference in {ref_dir}: {missing[:5]}")
    if not names:
        raise UsageError(f"no PNG files in {pred_dir}")
    rows = []
    for n in names:
        a, b = png_read(pred_dir / n, np.float64), png_read(ref_dir / n, np.float64)
        rows.append((n, psnr(a, b), ssim(a, b)))
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["image", "psnr", "ssim"])
    for n, p, s in rows:
        w.writerow([n, f"{p:.4f}", f"{s:.6f}"])
    w.writerow(["mean", f"{np.mean([r[1] for r in rows]):.4f}", f"{np.mean([r[2] for r in rows]):.6f}"])
    with open(out / "eval.csv", "w", newline="") as fh:
        cw = csv.writer(fh, lineterminator="\n")
        cw.writerow(["image", "psnr", "ssim"])
        cw.writerows(rows)
    return 0


def cmd_gradcheck(args, cfg, out: Path) -> int:
    from .verify import gradient_suite

    results = gradient_suite(cfg.seed, args.only)
    if not results:
        raise UsageError(f"no gradient check matches {args.only!r}")
    width = max(len(n) for n, _ in results)
    for name, rep in results:
        print(f"{name:<{width}}  {rep}")
    failed = [n for n, r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    return 2 if failed else 0


def cmd_bench_scan(args, cfg, out: Path) -> int:
    from .analysis import bench_compare

    if args.repeats < 1 or args.channels < 2 or args.channels % 2 or args.state_dim < 1:
        raise UsageError("--repeats >= 1, --channels even >= 2 and --state-dim >= 1 required")
    rep = bench_compare(input_size=args.size, repeats=args.repeats, channels=args.channels,
                        state_dim=args.state_dim, seed=cfg.seed)
    print(rep.to_table())
    (out / "bench.csv").write_text(rep.to_csv())
    return 0


def cmd_count(args, cfg, out: Path) -> int:
    from . import costs
    from .network import build_model, count_params

    H, W = args.size
    m = cfg.model
    weights, arch = build_model(m)
    print(f"params           {count_params(weights)}")
    print(f"MACs @ {H}x{W}     {costs.count_flops(m, H, W)}")
    for k, v in costs.flop_breakdown(m, H, W).items():
        print(f"  {k:<14} {v}")
    dgff_p, aff_p = costs.fusion_params(m, "dgff"), costs.fusion_params(m, "aff")
    dgff_f, aff_f = costs.fusion_macs(m, H, W, "dgff"), costs.fusion_macs(m, H, W, "aff")
    print(f"fusion params    dgff {dgff_p}  aff {aff_p}  ratio {dgff_p / aff_p:.4f}" if aff_p else "fusion params    none")
    print(f"fusion MACs      dgff {dgff_f}  aff {aff_f}  ratio {dgff_f / aff_f:.4f}" if aff_f else "fusion MACs      none")
    (out / "architecture.txt").write_text(arch.dump() + "\n")
    return 0


HANDLERS = {
    "make-data": cmd_make_data,
    "train": cmd_train,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
    "bench-scan": cmd_bench_scan,
    "count": cmd_count,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        _apply_threads()
        args = build_parser().parse_args(argv)
        args._argv = argv
        from . import config as config_mod
        from .errors import CheckpointError, ConfigError, ContractError, ImageError, ShapeError

        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"seed={args.seed}")
        if getattr(args, "steps", None) is not None:
            overrides.append(f"train.steps={args.steps}")
        cfg = config_mod.load(args.config, overrides)
        out = Path(args.out or "xyscan-out")
        _write_snapshot(out, args, cfg)
    except UsageError as e:
        print(e, file=sys.stderr)
        return 1
    except ValueError as e:  # ConfigError and friends
        print(f"xyscan: invalid configuration: {e}", file=sys.stderr)
        return 1

    try:
        return HANDLERS[args.command](args, cfg, out)
    except UsageError as e:
        print(f"xyscan {args.command}: {e}", file=sys.stderr)
        return 1
    except (ConfigError, ShapeError, ContractError, ImageError, CheckpointError, FileNotFoundError) as e:
        print(f"xyscan {args.command}: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001
        print(f"xyscan {args.command}: runtime error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
