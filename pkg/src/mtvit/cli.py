"""Command line entry point: ``mtvit <command> [--config PATH] [--seed N] [--out DIR]``.

Exit status is 0 on success, 1 for configuration or usage errors and 2 for
runtime failures (I/O, non-finite losses, incompatible checkpoints).
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import flops
from .config import RunConfig
from .data import gen_data
from .tails import ConfigError
from .train import (
    Datasets,
    MetricsLog,
    backbone_spec,
    curve,
    curve_trend_ok,
    evaluate,
    finetune,
    load_model,
    pretrain,
)

log = logging.getLogger("mtvit")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError as e:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from e


def _config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = cfg.replace(seed=args.seed)
    return cfg


def _out(args, default: str) -> Path:
    out = Path(args.out or default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> None:
    cfg = _config(args)
    out = args.out or cfg.data_dir
    paths = gen_data(cfg.seed, args.count, out, test_count=args.test_count)
    for split, stem in paths.items():
        print(f"{split}: {stem}.mtds {stem}.mtlb")


def cmd_pretrain(args) -> None:
    cfg = _config(args)
    out = _out(args, "runs/pretrain")
    cfg.save(out / "config.txt")
    _, rows = pretrain(cfg, Datasets.load(cfg.data_dir), out)
    for r in rows[-len(cfg.tail_patches):]:
        print(f"{r.phase}: accuracy {r.accuracy:.4f}")
    print(f"checkpoint: {out / 'pretrain.mtvt'}")


def cmd_finetune(args) -> None:
    cfg = _config(args)
    out = _out(args, "runs/finetune")
    cfg.save(out / "config.txt")
    model = load_model(cfg, args.checkpoint)
    _, rows = finetune(cfg, model, Datasets.load(cfg.data_dir), out)
    last = rows[-1]
    print(f"finetune: accuracy {last.accuracy:.4f} usage {last.usage} overall FLOPs {last.overall_flops:.0f}")
    print(f"checkpoint: {out / 'finetune.mtvt'}")


def cmd_eval(args) -> None:
    cfg = _config(args)
    model = load_model(cfg, args.checkpoint)
    if args.force_tail is not None and not 0 <= args.force_tail < model.k:
        raise ConfigError(f"--force-tail must lie in [0, {model.k})")
    row = evaluate(cfg, model, Datasets.load(cfg.data_dir), args.split, args.force_tail)
    if args.out:
        MetricsLog(_out(args, "") / "metrics_eval.csv").append(row)
    print(f"accuracy {row.accuracy:.4f} usage {row.usage} overall FLOPs {row.overall_flops:.0f}")


def cmd_flops(args) -> None:
    if args.preset:
        spec = flops.PRESETS[args.preset]
    else:
        spec = backbone_spec(_config(args))
    print(flops.table_text(spec))
    csv_text = flops.table_csv(spec)
    print()
    print(csv_text, end="")
    if args.out:
        path = _out(args, "") / f"flops_{args.preset or 'run'}.csv"
        path.write_text(csv_text)


def cmd_curve(args) -> None:
    cfg = _config(args)
    out = _out(args, "runs/curve")
    rows = curve(cfg, args.checkpoint, _floats(args.lams), _floats(args.alphas), out_csv=out / "curve.csv")
    for r in rows:
        print(f"lam {r['lam']:g} alpha {r['alpha']:g}: accuracy {r['accuracy']:.4f} overall FLOPs {r['overall_flops']:.0f}")
    if args.check_trend:
        ok = curve_trend_ok(rows)
        print(f"trend: {'non-increasing FLOPs in lambda' if ok else 'VIOLATED'}")
        if not ok:
            raise RuntimeError("overall FLOPs increase with lambda for some alpha")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value run configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")

    p = _Parser(prog="mtvit", description="Multi-tailed vision transformer at desk scale.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], help="write the synthetic dataset")
    g.add_argument("--count", type=int, default=3000, help="training images")
    g.add_argument("--test-count", type=int, default=1000, help="held-out images")
    g.set_defaults(func=cmd_gen_data)

    sub.add_parser("pretrain", parents=[common], help="train encoder and all tails").set_defaults(func=cmd_pretrain)

    f = sub.add_parser("finetune", parents=[common], help="jointly train backbone and tail predictor")
    f.add_argument("--checkpoint", required=True, help="pretrained .mtvt file")
    f.set_defaults(func=cmd_finetune)

    e = sub.add_parser("eval", parents=[common], help="evaluate with argmax routing")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--split", choices=("train", "test"), default="test")
    e.add_argument("--force-tail", type=int, help="bypass the predictor and use this tail")
    e.set_defaults(func=cmd_eval)

    fl = sub.add_parser("flops", parents=[common], help="print the analytic FLOPs table")
    fl.add_argument("--preset", choices=sorted(flops.PRESETS), help="named backbone instead of the run config")
    fl.set_defaults(func=cmd_flops)

    c = sub.add_parser("curve", parents=[common], help="finetune and evaluate over a lambda/alpha grid")
    c.add_argument("--checkpoint", required=True, help="pretrained .mtvt file")
    c.add_argument("--lams", default="0,0.5,2")
    c.add_argument("--alphas", default="0.25")
    c.add_argument("--check-trend", action="store_true", help="fail unless FLOPs are non-increasing in lambda")
    c.set_defaults(func=cmd_curve)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # noqa: BLE001 - surfaced as exit status 2
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
