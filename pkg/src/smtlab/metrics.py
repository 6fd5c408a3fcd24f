"""Edit-distance error rates (CER/SER/LER) and structural render rate.

Every rate is ``edit_distance / reference_length`` at the corresponding
granularity, normalized by the reference; rates can exceed 1 for grossly
long hypotheses and are reported unclipped. ``render %`` is the fraction of
hypotheses whose kern structure validates.
"""

from __future__ import annotations

import difflib
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .errors import EmptyReference
from .kern import validate_structure
from .tokens import Granularity, tokenize_text


def edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    """Levenshtein distance with unit insert/delete/substitute costs."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, tok_a in enumerate(a, start=1):
        cur = [i]
        for j, tok_b in enumerate(b, start=1):
            if tok_a == tok_b:
                cur.append(prev[j - 1])
            else:
                cur.append(1 + min(prev[j - 1], prev[j], cur[-1]))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class PairScores:
    """Per-sample rates as fractions (0.03 = 3%)."""

    cer: float
    ser: float
    ler: float
    structurally_valid: bool


def score_pair(hyp: str, ref: str) -> PairScores:
    """Score one hypothesis against one reference kern text.

    The hypothesis is tokenized leniently (tab/newline splitting only) so a
    rate exists for every model output; its structural validity is recorded
    separately. The reference must have tokens at every granularity.
    """
    rates = {}
    for granularity in Granularity:
        ref_tokens = tokenize_text(ref, granularity).tokens
        if not ref_tokens:
            raise EmptyReference(f"reference has no tokens at {granularity.value} granularity")
        hyp_tokens = tokenize_text(hyp, granularity).tokens
        rates[granularity] = edit_distance(hyp_tokens, ref_tokens) / len(ref_tokens)
    valid, _ = validate_structure(hyp)
    return PairScores(
        cer=rates[Granularity.CHARACTER],
        ser=rates[Granularity.SYMBOL],
        ler=rates[Granularity.LINE],
        structurally_valid=valid,
    )


@dataclass(frozen=True)
class SampleResult:
    sample_id: str
    scores: PairScores


@dataclass
class MetricReport:
    """Aggregated metrics over an evaluation set (percent units)."""

    dataset: str
    model: str
    per_sample: list[SampleResult]

    @property
    def count(self) -> int:
        return len(self.per_sample)

    def _mean_pct(self, attr: str) -> float:
        return 100.0 * sum(getattr(r.scores, attr) for r in self.per_sample) / self.count

    @property
    def cer_pct(self) -> float:
        return self._mean_pct("cer")

    @property
    def ser_pct(self) -> float:
        return self._mean_pct("ser")

    @property
    def ler_pct(self) -> float:
        return self._mean_pct("ler")

    @property
    def render_pct(self) -> float:
        return 100.0 * sum(r.scores.structurally_valid for r in self.per_sample) / self.count

    def summary_line(self) -> str:
        return (
            f"{self.dataset} {self.model}: n={self.count} "
            f"cer={self.cer_pct:.4f}% ser={self.ser_pct:.4f}% "
            f"ler={self.ler_pct:.4f}% render={self.render_pct:.4f}%"
        )


def build_report(dataset: str, model: str, results: Sequence[SampleResult]) -> MetricReport:
    if not results:
        raise EmptyReference("cannot aggregate an empty evaluation set")
    return MetricReport(dataset=dataset, model=model, per_sample=list(results))


RESULTS_HEADER = "dataset\tmodel\tcer\tser\tler\trender_pct"
DETAIL_HEADER = "sample_id\tcer\tser\tler\tvalid"


def write_results_table(report: MetricReport, path: str | Path) -> None:
    line = (
        f"{report.dataset}\t{report.model}\t{report.cer_pct:.4f}\t{report.ser_pct:.4f}"
        f"\t{report.ler_pct:.4f}\t{report.render_pct:.4f}"
    )
    Path(path).write_text(RESULTS_HEADER + "\n" + line + "\n", encoding="utf-8")


def write_detail(report: MetricReport, path: str | Path) -> None:
    rows = [DETAIL_HEADER]
    for r in report.per_sample:
        s = r.scores
        rows.append(
            f"{r.sample_id}\t{s.cer:.6f}\t{s.ser:.6f}\t{s.ler:.6f}"
            f"\t{'VALID' if s.structurally_valid else 'INVALID'}"
        )
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def text_diff(hyp: str, ref: str, sample_id: str) -> str:
    """Plain-text unified diff of a prediction against its reference."""
    return "".join(
        difflib.unified_diff(
            ref.splitlines(keepends=True),
            hyp.splitlines(keepends=True),
            fromfile=f"{sample_id}/reference",
            tofile=f"{sample_id}/prediction",
        )
    )
