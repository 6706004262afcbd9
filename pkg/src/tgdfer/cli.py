"""Command-line surface: synthetic data generation, training, evaluation,
influence export and gradient checking."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import gradcheck
from .bagfile import load_manifest
from .model import DatasetInfo, load_checkpoint
from .synthetic import SyntheticSpec, generate
from .training import TrainConfig, evaluate, influence_report, train


def _cmd_gen_synthetic(args) -> int:
    spec = SyntheticSpec.from_json(args.spec) if args.spec else SyntheticSpec()
    manifest = generate(spec, seed=args.seed, out_dir=args.out)
    print(f"wrote {manifest}")
    return 0


def _cmd_train(args) -> int:
    manifest = load_manifest(args.manifest)
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.epochs is not None:
        cfg.epochs = args.epochs
        cfg.milestones = tuple(m for m in cfg.milestones if m < cfg.epochs)
    result = train(manifest, cfg, out_dir=args.out, log=print)
    print(f"final loss {result.final_loss:.4f}; checkpoint {result.checkpoint_path}")
    return 0


def _cmd_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    model, _ = load_checkpoint(args.checkpoint, DatasetInfo.from_manifest(manifest))
    report = evaluate(model, manifest, split=args.split, out_dir=args.out)
    print(json.dumps(report.to_json_dict(), indent=2, sort_keys=True))
    return 0


def _cmd_influence(args) -> int:
    manifest = load_manifest(args.manifest)
    model, _ = load_checkpoint(args.checkpoint, DatasetInfo.from_manifest(manifest))
    out_dir = args.out or Path(args.checkpoint).parent
    _, score = influence_report(model, manifest, split=args.split,
                                out_dir=out_dir, localize=args.localize)
    print(f"influence CSV written to {out_dir}")
    if score is not None:
        print(f"localization score {score:.4f}")
    return 0


def _cmd_gradcheck(args) -> int:
    if args.full_pipeline:
        errors = gradcheck.check_full_pipeline()
        tol = 1e-4
    else:
        errors = gradcheck.check_small_graph()
        tol = 1e-5
    for name, err in sorted(errors.items()):
        print(f"{name:40s} rel_err {err:.3e}")
    worst = max(errors.values())
    ok = worst < tol
    print(f"worst rel_err {worst:.3e} ({'PASS' if ok else 'FAIL'} at {tol:g})")
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tgdfer")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synthetic", help="generate the planted-salient-frame benchmark")
    p.add_argument("--spec", help="JSON spec file (defaults to desk-scale settings)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_synthetic)

    p = sub.add_parser("train", help="train on a manifest's train split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--config", help="JSON training config")
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("influence", help="export per-frame influence profiles")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", default="test", choices=["train", "test"])
    p.add_argument("--out")
    p.add_argument("--localize", action="store_true",
                   help="score salient-frame localization against the manifest masks")
    p.set_defaults(func=_cmd_influence)

    p = sub.add_parser("gradcheck", help="verify gradients against finite differences")
    p.add_argument("--full-pipeline", action="store_true")
    p.set_defaults(func=_cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # CLI boundary: report and signal failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
