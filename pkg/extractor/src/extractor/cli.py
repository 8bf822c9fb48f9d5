"""Command line front end for trajectory extraction.

Two subcommands: ``extract`` runs a model over a prompt list and writes
a trajectory dataset; ``dump-embeddings`` writes the model's input
embedding table into a dataset root. Flags mirror ExtractionConfig.
Status lines go to stderr. Exit codes: 0 on success, 1 on data or
contract errors, 2 on environment errors (missing files, model paths).
"""

from __future__ import annotations

import argparse
import sys

from .extraction import ExtractionConfig, dump_embeddings, extract


def _parse_layers(text: str):
    if text == "all":
        return "all"
    try:
        return tuple(int(part) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"layers must be 'all' or a comma-separated index list, got '{text}'"
        )


def _config(args: argparse.Namespace) -> ExtractionConfig:
    return ExtractionConfig(
        model_id=args.model_id,
        output_root=args.output_root,
        prompts_path=getattr(args, "prompts", ""),
        temperature=getattr(args, "temperature", 0.7),
        max_new_tokens=getattr(args, "max_new_tokens", 128),
        layers=getattr(args, "layers", "all"),
        seed=getattr(args, "seed", 0),
        include_embedding_layer=getattr(args, "include_embedding_layer", False),
    )


def cmd_extract(args: argparse.Namespace) -> int:
    result = extract(_config(args), with_embeddings=args.with_embeddings)
    used = result.num_prompts - len(result.skipped)
    line = (
        f"{args.model_id}: wrote {result.num_records} records "
        f"from {used}/{result.num_prompts} prompts to {result.root}"
    )
    if result.skipped:
        line += f" (skipped: {', '.join(result.skipped)})"
    print(line, file=sys.stderr)
    return 0


def cmd_dump_embeddings(args: argparse.Namespace) -> int:
    destination = dump_embeddings(_config(args))
    print(f"{args.model_id}: wrote embedding table to {destination}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="trajectory-extract",
        description="Record per-layer hidden-state trajectories from a causal language model.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    ex = sub.add_parser("extract", help="generate from prompts and write a trajectory dataset")
    ex.add_argument("--model-id", required=True, help="model hub id or local model directory")
    ex.add_argument("--prompts", required=True, help="prompt file, one per line, optional tab-separated group label")
    ex.add_argument("--output-root", required=True, help="dataset directory to create or fill")
    ex.add_argument("--temperature", type=float, default=0.7, help="sampling temperature; 0 means greedy")
    ex.add_argument("--max-new-tokens", type=int, default=128)
    ex.add_argument("--layers", type=_parse_layers, default="all", help="'all' or comma-separated layer indices")
    ex.add_argument("--seed", type=int, default=0)
    ex.add_argument("--include-embedding-layer", action="store_true",
                    help="record the embedding output as layer 0, shifting block indices up")
    ex.add_argument("--with-embeddings", action="store_true",
                    help="also dump the input embedding table (must be untied)")
    ex.set_defaults(func=cmd_extract)

    de = sub.add_parser("dump-embeddings", help="write the input embedding table into a dataset root")
    de.add_argument("--model-id", required=True)
    de.add_argument("--output-root", required=True)
    de.set_defaults(func=cmd_dump_embeddings)

    return parser


def main(argv: list[str] | None = None) -> int:
    try:
        from transformers.utils import logging as hf_logging

        hf_logging.disable_progress_bar()
        hf_logging.set_verbosity_error()
    except Exception:
        pass
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
