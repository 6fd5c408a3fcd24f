import pytest

from smtlab.errors import (
    MalformedRecord,
    MissingExclusiveInterpretation,
    UnterminatedSpine,
)
from smtlab.kern import KernDocument, parse_kern, validate_structure

PIANO_EXCERPT = (
    "**kern\t**kern\n"
    "*clefF4\t*clefG2\n"
    "*M4/4\t*M4/4\n"
    "4C\t4cc\n"
    "4D\t4b\n"
    "=1\t=1\n"
    "*-\t*-\n"
)


class TestParse:
    def test_two_spine_excerpt(self):
        doc = parse_kern(PIANO_EXCERPT)
        assert doc.spine_count == 2
        assert len(doc.records) == 7
        assert doc.records[3] == ["4C", "4cc"]

    def test_minimal_document(self):
        doc = parse_kern("**kern\n*-\n")
        assert doc.spine_count == 1
        assert doc.records == [["**kern"], ["*-"]]

    def test_cell_count_mismatch(self):
        with pytest.raises(MalformedRecord) as err:
            parse_kern("**kern\n4c\t4d\n*-\n")
        assert err.value.line == 2

    def test_empty_text(self):
        with pytest.raises(MissingExclusiveInterpretation):
            parse_kern("")

    def test_non_exclusive_opening(self):
        with pytest.raises(MissingExclusiveInterpretation) as err:
            parse_kern("4c\n")
        assert err.value.line == 1

    def test_mixed_opening_rejected(self):
        with pytest.raises(MissingExclusiveInterpretation):
            parse_kern("**kern\t*clefG2\n*-\t*-\n")

    def test_unterminated(self):
        with pytest.raises(UnterminatedSpine):
            parse_kern("**kern\n4c\n")

    def test_content_after_termination(self):
        with pytest.raises(MalformedRecord) as err:
            parse_kern("**kern\n*-\n4c\n")
        assert err.value.line == 3

    def test_exclusive_after_opening(self):
        with pytest.raises(MalformedRecord):
            parse_kern("**kern\n**kern\n*-\n")

    def test_comments_preserved_verbatim(self):
        text = "!!title: x\n**kern\n4c\n!!mid\n*-\n!!end\n"
        doc = parse_kern(text)
        assert doc.comments == [(0, "!!title: x"), (2, "!!mid"), (3, "!!end")]
        assert doc.to_text() == text
        assert doc.body_text() == "**kern\n4c\n*-\n"

    def test_no_trailing_newline(self):
        doc = parse_kern("**kern\n*-")
        assert doc.records == [["**kern"], ["*-"]]


class TestSpineArithmetic:
    def test_split_increases_count(self):
        doc = parse_kern("**kern\n*^\n4c\t4d\n*v\t*v\n*-\n")
        assert doc.records[2] == ["4c", "4d"]

    def test_split_missing_cells_rejected(self):
        with pytest.raises(MalformedRecord) as err:
            parse_kern("**kern\n*^\n4c\n*-\n")
        assert err.value.line == 3

    def test_merge_run_of_three(self):
        text = "**kern\t**kern\t**kern\n*v\t*v\t*v\n4c\n*-\n"
        assert parse_kern(text).spine_count == 3

    def test_lone_merge_rejected(self):
        with pytest.raises(MalformedRecord):
            parse_kern("**kern\t**kern\n*v\t*\n4c\t4d\n*-\t*-\n")

    def test_nonadjacent_merge_rejected(self):
        with pytest.raises(MalformedRecord):
            parse_kern(
                "**kern\t**kern\t**kern\n*v\t*\t*v\n4c\t4d\t4e\n*-\t*-\t*-\n"
            )

    def test_partial_termination(self):
        doc = parse_kern("**kern\t**kern\n*-\t*\n4c\n*-\n")
        assert doc.records[2] == ["4c"]

    def test_balanced_split_and_merge(self):
        text = (
            "**kern\t**kern\t**kern\n"
            "*^\t*v\t*v\n"
            "4c\t4d\t4e\n"
            "*-\t*-\t*-\n"
        )
        assert parse_kern(text).spine_count == 3

    def test_interpretation_rows_are_content(self):
        doc = parse_kern("**kern\n*clefG2\n*M4/4\n*k[f#]\n*-\n")
        assert len(doc.records) == 5


class TestValidateStructure:
    def test_fixture_corpus_all_valid(self, fixture_docs):
        verdicts = [validate_structure(doc)[0] for doc in fixture_docs]
        assert all(verdicts)

    def test_missing_terminator_flagged(self, fixture_docs):
        doc = fixture_docs[0]
        broken = "".join(
            "\t".join(cells) + "\n" for cells in doc.records[:-1]
        )
        ok, violations = validate_structure(broken)
        assert not ok
        assert violations[0].kind == "UnterminatedSpine"

    def test_deleted_tab_flagged(self, fixture_docs):
        text = fixture_docs[0].body_text()
        idx = text.index("\t", text.index("\n"))  # a tab after the opening record
        ok, violations = validate_structure(text[:idx] + text[idx + 1 :])
        assert not ok
        assert violations[0].kind == "MalformedRecord"

    def test_verdict_on_document_object(self, fixture_docs):
        assert validate_structure(fixture_docs[0]) == (True, [])

    def test_evil_cell_with_delimiter(self):
        doc = KernDocument(records=[["**kern"], ["4c\t4d"], ["*-"]])
        ok, violations = validate_structure(doc)
        assert not ok and violations[0].kind == "MalformedRecord"

    def test_violations_are_data_not_errors(self):
        ok, violations = validate_structure("not kern at all")
        assert not ok
        assert violations[0].kind == "MissingExclusiveInterpretation"


def _delimiter_positions(text: str):
    """Offsets inside structural delimiters: tabs, `*-` cells, `**kern` cells."""
    positions = []
    offset = 0
    for line in text.split("\n"):
        col = offset
        for cell in line.split("\t"):
            if cell in ("*-", "**kern"):
                positions.extend(range(col, col + len(cell)))
            col += len(cell) + 1
        for i, ch in enumerate(line):
            if ch == "\t":
                positions.append(offset + i)
        offset += len(line) + 1
    return positions


class TestMutationSoundness:
    def test_single_delimiter_deletions_detected(self, fixture_docs):
        for doc in fixture_docs[:12]:
            text = doc.body_text()
            original = parse_kern(text).records
            for pos in _delimiter_positions(text):
                mutated = text[:pos] + text[pos + 1 :]
                ok, _ = validate_structure(mutated)
                if ok:
                    assert parse_kern(mutated).records != original, (
                        f"silent acceptance after deleting byte {pos}"
                    )
