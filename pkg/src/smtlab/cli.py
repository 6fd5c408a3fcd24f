"""Command-line entry point.

Subcommands: make-dataset, train, transcribe, validate-kern, evaluate.
Exit codes are a stable scripting contract:

    0  success
    2  refusal (e.g. output directory already populated, no --force)
    3  split leakage between train and validation manifests
    4  configuration problem (bad config file, bad flag, missing input)
    5  artifact mismatch (unreadable checkpoint, vocabulary hash mismatch)
    1  any other failure

`validate-kern` instead exits with the number of invalid files (capped at
125). The env var SMT_LAB_CACHE provides a default root for outputs when
--out is omitted.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import torch

from .config import read_kv_file
from .corpus import CorpusConfig, make_corpus, read_manifest, load_image_png
from .errors import (
    CheckpointError,
    ConfigError,
    KernStructureError,
    RefusalError,
    SmtlabError,
    SplitLeakage,
    VocabularyMismatch,
)
from .evaluate import evaluate_set, transcribe_array
from .kern import validate_structure
from .model import ensure_vocab_match, load_checkpoint, model_from_checkpoint
from .tokens import Vocabulary
from .trainer import TrainConfig, fit

CACHE_ENV = "SMT_LAB_CACHE"


def _apply_determinism(args) -> None:
    if getattr(args, "deterministic", False):
        torch.use_deterministic_algorithms(True)
        torch.set_num_threads(1)


def _default_out(kind: str) -> Path:
    cache = os.environ.get(CACHE_ENV)
    if cache is None:
        raise ConfigError(f"--out is required (or set ${CACHE_ENV} for a default cache root)")
    return Path(cache) / kind


def _require_file(path: Path, what: str) -> Path:
    if not path.is_file():
        raise ConfigError(f"{what} not found: {path}")
    return path


def cmd_make_dataset(args) -> int:
    out = Path(args.out) if args.out else _default_out("dataset")
    if out.exists() and any(out.iterdir()) and not args.force:
        raise RefusalError(f"{out} is not empty; pass --force to write into it")
    mapping = read_kv_file(args.config) if args.config else {}
    cfg = CorpusConfig.from_mapping(
        mapping,
        n_pieces=args.n_pieces,
        excerpts_per_piece=args.excerpts_per_piece,
        style=args.style,
        bars_per_excerpt=args.bars_per_excerpt,
        image_height=args.image_height,
        degrade=args.degrade,
        seed=args.seed,
    )
    rows = make_corpus(out, cfg)
    counts = {split: 0 for split in ("train", "validation", "test")}
    valid = 0
    for row in rows:
        counts[row.split] += 1
        ok, _ = validate_structure((out / row.kern_path).read_text(encoding="utf-8"))
        valid += ok
    print(f"corpus written to {out}")
    print(
        f"samples: {len(rows)} (train={counts['train']} validation={counts['validation']} "
        f"test={counts['test']}) structurally valid: {100.0 * valid / len(rows):.1f}%"
    )
    return 0


def cmd_train(args) -> int:
    manifest = _require_file(Path(args.manifest), "manifest")
    out = Path(args.out) if args.out else _default_out("train")
    mapping = read_kv_file(args.config) if args.config else {}
    cfg = TrainConfig.from_mapping(
        mapping, seed=args.seed, backbone=args.backbone, max_steps=args.max_steps
    )
    rows = read_manifest(manifest)
    train_rows = [r for r in rows if r.split == "train"]
    val_rows = [r for r in rows if r.split == "validation"]
    vocab_path = _require_file(manifest.parent / "vocab.tsv", "vocabulary file")
    vocab = Vocabulary.load(vocab_path)
    result = fit(
        train_rows,
        val_rows,
        cfg,
        root=manifest.parent,
        out_dir=out,
        vocab=vocab,
        preset=args.preset,
        resume=args.resume,
    )
    last = result.history[-1] if result.history else None
    print(f"training complete: {out}")
    if last is not None:
        print(
            f"final step {last.step}: loss={last.loss:.4f} cer={last.cer:.2f}% "
            f"ser={last.ser:.2f}% ler={last.ler:.2f}% (best ser {result.best_ser:.2f}%)"
        )
    return 0


def cmd_transcribe(args) -> int:
    image_path = _require_file(Path(args.image), "image")
    payload = load_checkpoint(args.checkpoint)
    vocab_path = Path(args.vocab) if args.vocab else Path(args.checkpoint).parent / "vocab.tsv"
    if not vocab_path.is_file():
        raise CheckpointError(f"vocabulary file not found: {vocab_path}")
    vocab = Vocabulary.load(vocab_path)
    ensure_vocab_match(payload, vocab)
    model = model_from_checkpoint(payload)
    text = transcribe_array(model, vocab, load_image_png(image_path))
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    if args.validate:
        ok, _ = validate_structure(text)
        print(f"structure: {'VALID' if ok else 'INVALID'}", file=sys.stderr)
    return 0


def cmd_validate_kern(args) -> int:
    invalid = 0
    for raw in args.paths:
        path = Path(raw)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError:
            print(f"{path}\tINVALID\tIO")
            invalid += 1
            continue
        ok, violations = validate_structure(text)
        first = "" if ok else str(violations[0])
        print(f"{path}\t{'VALID' if ok else 'INVALID'}\t{first}")
        invalid += not ok
    return min(invalid, 125)


def cmd_evaluate(args) -> int:
    manifest = _require_file(Path(args.manifest), "manifest")
    out = Path(args.out) if args.out else _default_out("eval")
    if not args.oracle and args.checkpoint is None:
        raise ConfigError("--checkpoint is required unless --oracle is set")
    report = evaluate_set(
        manifest,
        args.split,
        checkpoint_path=args.checkpoint,
        oracle=args.oracle,
        out_dir=out,
    )
    print(report.summary_line())
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smtlab", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed for all randomness")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded, bitwise-reproducible execution")

    p = sub.add_parser("make-dataset", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--out", help="output corpus directory")
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--style", choices=["grandstaff", "quartet"], default=None)
    p.add_argument("--n-pieces", type=int, default=None)
    p.add_argument("--excerpts-per-piece", type=int, default=None)
    p.add_argument("--bars-per-excerpt", type=int, default=None)
    p.add_argument("--image-height", type=int, default=None)
    p.add_argument("--degrade", choices=["none", "photocopy", "oldprint"], default=None)
    p.add_argument("--force", action="store_true", help="write into a non-empty directory")
    p.set_defaults(func=cmd_make_dataset)

    p = sub.add_parser("train", parents=[common], help="train on a corpus manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", help="artifacts directory (checkpoints, history)")
    p.add_argument("--config", help="key=value train config file")
    p.add_argument("--preset", choices=["paper", "micro"], default="paper")
    p.add_argument("--backbone", choices=["cnn", "swin", "convnext"], default=None)
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--resume", action="store_true", help="continue from <out>/last.ckpt")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transcribe", parents=[common], help="transcribe one image to kern")
    p.add_argument("image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", help="vocabulary file (default: next to the checkpoint)")
    p.add_argument("--out", help="write kern here instead of stdout")
    p.add_argument("--validate", action="store_true",
                   help="report structural validity on stderr")
    p.set_defaults(func=cmd_transcribe)

    p = sub.add_parser("validate-kern", parents=[common],
                       help="check kern files; exit code = number invalid (max 125)")
    p.add_argument("paths", nargs="+")
    p.set_defaults(func=cmd_validate_kern)

    p = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=["train", "validation", "test"], default="test")
    p.add_argument("--checkpoint")
    p.add_argument("--out", help="directory for results.tsv / per_sample.tsv / diffs.txt")
    p.add_argument("--oracle", action="store_true",
                   help="score references against themselves (pipeline check)")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "seed", None) is None:
        args.seed = None  # fall back to config-file / dataclass defaults
    try:
        _apply_determinism(args)
        return args.func(args)
    except RefusalError as err:
        print(f"refused: {err}", file=sys.stderr)
        return 2
    except SplitLeakage as err:
        print(f"split leakage: {err}", file=sys.stderr)
        return 3
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 4
    except (VocabularyMismatch, CheckpointError) as err:
        print(f"artifact mismatch: {err}", file=sys.stderr)
        return 5
    except (SmtlabError, KernStructureError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
