import random

import pytest
from hypothesis import given, settings, strategies as st

from smtlab.errors import EmptyReference
from smtlab.metrics import (
    MetricReport,
    SampleResult,
    build_report,
    edit_distance,
    score_pair,
    text_diff,
)


# --- independent oracle: bounded search over edit scripts ------------------


def _within_budget(a, b, i, j, budget):
    while i < len(a) and j < len(b) and a[i] == b[j]:
        i += 1
        j += 1
    if i == len(a) and j == len(b):
        return True
    if budget == 0 or abs((len(a) - i) - (len(b) - j)) > budget:
        return False
    if i < len(a) and j < len(b) and _within_budget(a, b, i + 1, j + 1, budget - 1):
        return True  # substitute
    if i < len(a) and _within_budget(a, b, i + 1, j, budget - 1):
        return True  # delete from a
    return j < len(b) and _within_budget(a, b, i, j + 1, budget - 1)  # insert


def oracle_distance(a, b):
    """Smallest edit budget for which some edit script transforms a into b."""
    k = 0
    while not _within_budget(a, b, 0, 0, k):
        k += 1
    return k


def random_pairs(count, max_len=12, alphabet=5, seed=0):
    rng = random.Random(seed)
    symbols = [chr(ord("a") + i) for i in range(alphabet)]
    for _ in range(count):
        a = [rng.choice(symbols) for _ in range(rng.randint(0, max_len))]
        b = [rng.choice(symbols) for _ in range(rng.randint(0, max_len))]
        yield a, b


class TestEditDistance:
    def test_identity(self):
        assert edit_distance(["4", "c"], ["4", "c"]) == 0

    def test_single_substitution(self):
        assert edit_distance(["4", "c"], ["4", "d"]) == 1

    def test_empty_sides(self):
        assert edit_distance([], ["a", "b"]) == 2
        assert edit_distance(["a"], []) == 1
        assert edit_distance([], []) == 0

    def test_against_oracle(self):
        for a, b in random_pairs(300, seed=11):
            assert edit_distance(a, b) == oracle_distance(a, b)

    @settings(max_examples=150, deadline=None)
    @given(
        a=st.lists(st.sampled_from("abcde"), max_size=10),
        b=st.lists(st.sampled_from("abcde"), max_size=10),
        c=st.lists(st.sampled_from("abcde"), max_size=10),
    )
    def test_metric_axioms(self, a, b, c):
        assert (edit_distance(a, b) == 0) == (a == b)
        assert edit_distance(a, b) == edit_distance(b, a)
        assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)


# --- score_pair: hand-counted fixture --------------------------------------

REF = "**kern\t**kern\n4c\t4d\n4e\t4f\n*-\t*-\n"
# reference lengths: 4 lines, 12 symbol tokens (cells + one <b> per record),
# 32 character tokens (cell chars + <t> within and <b> after each record)


class TestScorePair:
    def test_identical(self):
        scores = score_pair(REF, REF)
        assert (scores.cer, scores.ser, scores.ler) == (0.0, 0.0, 0.0)
        assert scores.structurally_valid

    def test_deleted_record(self):
        hyp = "**kern\t**kern\n4c\t4d\n*-\t*-\n"
        scores = score_pair(hyp, REF)
        assert scores.ler == pytest.approx(1 / 4)
        assert scores.ser == pytest.approx(3 / 12)
        assert scores.cer == pytest.approx(6 / 32)

    def test_one_pitch_changed(self):
        hyp = "**kern\t**kern\n4c\t4d\n4e\t4g\n*-\t*-\n"
        scores = score_pair(hyp, REF)
        assert scores.ler == pytest.approx(1 / 4)
        assert scores.ser == pytest.approx(1 / 12)
        assert scores.cer == pytest.approx(1 / 32)
        assert scores.structurally_valid

    def test_empty_hypothesis_is_total_deletion(self):
        scores = score_pair("", REF)
        assert (scores.cer, scores.ser, scores.ler) == (1.0, 1.0, 1.0)
        assert not scores.structurally_valid

    def test_rates_can_exceed_one(self):
        hyp = REF + "4c\t4d\n" * 20
        assert score_pair(hyp, REF).ler > 1.0

    def test_empty_reference_rejected(self):
        with pytest.raises(EmptyReference):
            score_pair("whatever", "")

    def test_invalid_hypothesis_still_scored(self):
        scores = score_pair("not kern", REF)
        assert not scores.structurally_valid
        assert scores.cer > 0

    def test_comments_excluded_from_rates(self):
        hyp = "!!a comment\n" + REF
        scores = score_pair(hyp, REF)
        assert (scores.cer, scores.ser, scores.ler) == (0.0, 0.0, 0.0)


class TestReport:
    def _report(self, flags):
        results = [
            SampleResult(f"s{i}", score_pair(REF if ok else "", REF))
            for i, ok in enumerate(flags)
        ]
        return build_report("d", "m", results)

    def test_render_pct_matches_validator_fraction(self):
        report = self._report([True, True, False, True])
        assert report.render_pct == pytest.approx(75.0)

    def test_aggregate_is_mean(self):
        report = self._report([True, False, False, True])
        mean_cer = 100.0 * sum(r.scores.cer for r in report.per_sample) / 4
        assert abs(report.cer_pct - mean_cer) < 1e-9

    def test_empty_set_rejected(self):
        with pytest.raises(EmptyReference):
            build_report("d", "m", [])

    def test_table_files(self, tmp_path):
        from smtlab.metrics import write_detail, write_results_table

        report = self._report([True, False])
        write_results_table(report, tmp_path / "results.tsv")
        write_detail(report, tmp_path / "per_sample.tsv")
        header, row = (tmp_path / "results.tsv").read_text().splitlines()
        assert header == "dataset\tmodel\tcer\tser\tler\trender_pct"
        assert row.split("\t")[:2] == ["d", "m"]
        detail = (tmp_path / "per_sample.tsv").read_text().splitlines()
        assert detail[0] == "sample_id\tcer\tser\tler\tvalid"
        assert detail[1].startswith("s0\t") and detail[1].endswith("VALID")
        assert detail[2].endswith("INVALID")

    def test_diff_names_sample(self):
        diff = text_diff("**kern\n4c\n*-\n", "**kern\n4d\n*-\n", "s9")
        assert "s9/reference" in diff and "-4d" in diff and "+4c" in diff
