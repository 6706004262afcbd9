"""tgdfer-export: turn clips and descriptors into TGFB/TGTE feature files."""

from __future__ import annotations

import argparse
import sys

from .encoder import build_encoder
from .jobs import ExportJob, export_bags, export_text


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tgdfer-export")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (("bags", "export per-clip frame features"),
                            ("text", "export per-class descriptor embeddings")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--in", dest="input_dir", required=(name == "bags"),
                       help="input root: <class>/<clip dir or video>")
        p.add_argument("--out", dest="output_dir", required=True)
        p.add_argument("--classes", required=True,
                       help="JSON job config with a classes[{name,descriptor}] list")
        p.add_argument("--frames", type=int, default=16)
        p.add_argument("--resize", type=int, default=224)
        p.add_argument("--offset", type=int, default=0, help="sampling grid offset")
        p.add_argument("--split", default="train", choices=["train", "test"])
        p.add_argument("--encoder", default="clip", choices=["clip", "stub"],
                       help="stub runs the pipeline without CLIP weights (testing only)")
        p.add_argument("--weights", help="local CLIP ViT-B/32 checkout (required for --encoder clip)")
        p.add_argument("--stub-seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        encoder = build_encoder(args.encoder, weights=args.weights, seed=args.stub_seed)
        job = ExportJob.from_config(
            args.classes,
            input_dir=args.input_dir or ".",
            output_dir=args.output_dir,
            split=args.split,
        )
        job.frames = args.frames
        job.resize = args.resize
        job.offset = args.offset
        if args.command == "bags":
            summary = export_bags(job, encoder)
            print(f"wrote {len(summary.written)} bags, skipped {len(summary.skipped)}")
            return 0 if summary.ok else 1
        out = export_text(job, encoder)
        print(f"wrote {out}")
        return 0
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
