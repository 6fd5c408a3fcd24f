"""Evaluation over manifest splits: greedy decode, score, report.

Writes the results table, the per-sample detail file, and a plain-text diff
for every imperfect sample.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import ManifestRow, load_image_png, read_manifest
from .errors import ConfigError
from .metrics import (
    MetricReport,
    SampleResult,
    build_report,
    score_pair,
    text_diff,
    write_detail,
    write_results_table,
)
from .model import SMT, ensure_vocab_match, load_checkpoint, model_from_checkpoint
from .tokens import Granularity, Vocabulary, detokenize, strip_control_tokens


def transcribe_array(model: SMT, vocab: Vocabulary, pixels: np.ndarray) -> str:
    """Greedy transcription of an image to kern text.

    Control tokens are stripped before detokenizing so partially trained
    models still yield scoreable text.
    """
    tokens = strip_control_tokens(vocab.decode(model.greedy_ids(pixels)))
    return detokenize(tokens, Granularity.CHARACTER)


@dataclass
class EvalSample:
    sample_id: str
    pixels: np.ndarray
    ref_text: str


def load_eval_samples(rows: Sequence[ManifestRow], root: Path) -> list[EvalSample]:
    return [
        EvalSample(
            sample_id=Path(row.image_path).stem,
            pixels=load_image_png(root / row.image_path),
            ref_text=(root / row.kern_path).read_text(encoding="utf-8"),
        )
        for row in rows
    ]


def evaluate_samples(
    samples: Sequence[EvalSample],
    *,
    dataset: str,
    model_name: str,
    model: SMT | None = None,
    vocab: Vocabulary | None = None,
) -> tuple[MetricReport, dict[str, str]]:
    """Score all samples; with no model, references are scored against
    themselves (oracle mode). Returns the report and the hypothesis texts."""
    hyps: dict[str, str] = {}
    results = []
    for sample in samples:
        if model is None:
            hyp = sample.ref_text
        else:
            hyp = transcribe_array(model, vocab, sample.pixels)
        hyps[sample.sample_id] = hyp
        results.append(SampleResult(sample.sample_id, score_pair(hyp, sample.ref_text)))
    return build_report(dataset, model_name, results), hyps


def write_report_files(
    report: MetricReport,
    hyps: dict[str, str],
    samples: Sequence[EvalSample],
    out_dir: Path,
) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    write_results_table(report, out_dir / "results.tsv")
    write_detail(report, out_dir / "per_sample.tsv")
    diffs = []
    by_id = {s.sample_id: s for s in samples}
    for result in report.per_sample:
        if result.scores.cer > 0 or not result.scores.structurally_valid:
            diffs.append(text_diff(hyps[result.sample_id], by_id[result.sample_id].ref_text,
                                   result.sample_id))
    (out_dir / "diffs.txt").write_text("".join(diffs), encoding="utf-8")


def evaluate_set(
    manifest_path: str | Path,
    split: str,
    checkpoint_path: str | Path | None = None,
    *,
    oracle: bool = False,
    out_dir: str | Path | None = None,
    model: SMT | None = None,
    vocab: Vocabulary | None = None,
) -> MetricReport:
    """Evaluate one manifest split with a checkpoint (or in oracle mode)."""
    manifest_path = Path(manifest_path)
    root = manifest_path.parent
    rows = [r for r in read_manifest(manifest_path) if r.split == split]
    if not rows:
        raise ConfigError(f"manifest has no rows for split {split!r}")
    samples = load_eval_samples(rows, root)
    dataset = f"{root.name}/{split}"

    if oracle:
        model, model_name = None, "oracle"
    elif model is not None:
        model_name = model.build_spec.get("backbone", "custom")
        if vocab is None:
            raise ValueError("vocab required when passing a model directly")
    else:
        payload = load_checkpoint(checkpoint_path)
        vocab = Vocabulary.load(root / "vocab.tsv")
        ensure_vocab_match(payload, vocab)
        model = model_from_checkpoint(payload)
        spec = payload["build_spec"]
        model_name = f"{spec['backbone']}-{spec['preset']}"

    report, hyps = evaluate_samples(
        samples, dataset=dataset, model_name=model_name, model=model, vocab=vocab
    )
    if out_dir is not None:
        write_report_files(report, hyps, samples, Path(out_dir))
    return report
