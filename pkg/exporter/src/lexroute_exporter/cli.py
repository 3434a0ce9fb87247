"""Command-line wrapper: read one text per line, write lexroute embeddings."""

from __future__ import annotations

import argparse
import json
import sys

from .exporter import ExportConfig, ExportError, export_corpus


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lexroute-export",
        description="Export transformer token embeddings for the lexroute engine",
    )
    parser.add_argument("--model", required=True, help="model id or local path")
    parser.add_argument("--texts", required=True, help="input file, one text per line")
    parser.add_argument("--out", required=True)
    parser.add_argument("--format", choices=["jsonl", "binary"], default="jsonl")
    parser.add_argument("--max-length", type=int, default=128)
    parser.add_argument("--batch-size", type=int, default=8)
    parser.add_argument("--device", default="cpu")
    parser.add_argument("--router-out", help="also export MLM-head router parameters")
    parser.add_argument("--manifest-out")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        with open(args.texts, encoding="utf-8") as f:
            texts = [line.rstrip("\n") for line in f]
        config = ExportConfig(
            model=args.model,
            output_path=args.out,
            max_length=args.max_length,
            format=args.format,
            device=args.device,
            batch_size=args.batch_size,
            emit_router_params=args.router_out is not None,
            router_params_path=args.router_out,
            manifest_path=args.manifest_out,
        )
        manifest = export_corpus(texts, config)
    except (ExportError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    print(json.dumps(manifest, indent=2))
    return 0


if __name__ == "__main__":
    sys.exit(main())
