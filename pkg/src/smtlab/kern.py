"""Humdrum **kern structural codec: parsing and spine-arithmetic validation.

A kern source is a grid of text: records (lines) by spines (tab-separated
cells). Structure is governed entirely by spine arithmetic:

* the first non-comment record opens the document and must contain only
  exclusive interpretations (cells starting ``**``);
* ``*^`` splits a spine in two, a run of two or more adjacent ``*v`` merges
  that many spines into one, ``*-`` terminates a spine;
* every opened spine must be terminated before the end of the document.

All other interpretation rows (clefs, key signatures, meters) are ordinary
content cells: they occupy one cell per spine and do not alter the count.
Global comments (``!!`` lines) are kept verbatim but live outside the record
grid.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import (
    KernStructureError,
    MalformedRecord,
    MissingExclusiveInterpretation,
    UnterminatedSpine,
)

SPINE_SPLIT = "*^"
SPINE_MERGE = "*v"
SPINE_TERMINATE = "*-"
_MANIPULATORS = (SPINE_SPLIT, SPINE_MERGE, SPINE_TERMINATE)


@dataclass
class KernDocument:
    """Structured kern content: records of spine cells plus global comments.

    ``comments`` holds ``(record_index, line)`` pairs; the comment line sits
    immediately before the record at ``record_index`` (an index equal to
    ``len(records)`` means a trailing comment).
    """

    records: list[list[str]]
    comments: list[tuple[int, str]] = field(default_factory=list)

    @property
    def spine_count(self) -> int:
        """Spines opened by the exclusive-interpretation record."""
        return len(self.records[0]) if self.records else 0

    def body_text(self) -> str:
        """Record grid as text, comments omitted. One line per record."""
        return "".join("\t".join(cells) + "\n" for cells in self.records)

    def to_text(self) -> str:
        """Full source text with comment lines interleaved at their positions."""
        ahead: dict[int, list[str]] = {}
        for idx, line in self.comments:
            ahead.setdefault(idx, []).append(line)
        lines: list[str] = []
        for i, cells in enumerate(self.records):
            lines.extend(ahead.get(i, ()))
            lines.append("\t".join(cells))
        lines.extend(ahead.get(len(self.records), ()))
        return "".join(line + "\n" for line in lines)


@dataclass(frozen=True)
class Violation:
    kind: str
    line: int
    message: str

    def __str__(self) -> str:
        return f"{self.kind}@{self.line}: {self.message}"


def _merge_aware_cell_delta(cells: list[str], lineno: int) -> int:
    """Spine count after a manipulator record, given `cells` active spines."""
    count = 0
    i = 0
    while i < len(cells):
        cell = cells[i]
        if cell == SPINE_SPLIT:
            count += 2
            i += 1
        elif cell == SPINE_MERGE:
            run = 1
            while i + run < len(cells) and cells[i + run] == SPINE_MERGE:
                run += 1
            if run < 2:
                raise MalformedRecord(lineno, "spine merge *v needs at least two adjacent spines")
            count += 1
            i += run
        elif cell == SPINE_TERMINATE:
            i += 1
        else:
            if cell.startswith("**"):
                raise MalformedRecord(lineno, "exclusive interpretation after the opening record")
            count += 1
            i += 1
    return count


def parse_kern(text: str) -> KernDocument:
    """Parse kern source into a KernDocument, enforcing spine structure.

    Raises MissingExclusiveInterpretation, MalformedRecord, or
    UnterminatedSpine; each carries the offending 1-based line number.
    """
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()

    records: list[list[str]] = []
    comments: list[tuple[int, str]] = []
    opened = False
    active = 0

    lineno = 0
    for lineno, line in enumerate(lines, start=1):
        if line.startswith("!!"):
            comments.append((len(records), line))
            continue
        cells = line.split("\t")
        if not opened:
            if not all(cell.startswith("**") and len(cell) > 2 for cell in cells):
                raise MissingExclusiveInterpretation(
                    lineno, "first non-comment record must contain only **-interpretations"
                )
            opened = True
            active = len(cells)
            records.append(cells)
            continue
        if active == 0:
            raise MalformedRecord(lineno, "content after all spines were terminated")
        if len(cells) != active:
            raise MalformedRecord(lineno, f"expected {active} cells, found {len(cells)}")
        if any(cell in _MANIPULATORS for cell in cells):
            active = _merge_aware_cell_delta(cells, lineno)
        elif any(cell.startswith("**") for cell in cells):
            raise MalformedRecord(lineno, "exclusive interpretation after the opening record")
        records.append(cells)

    if not opened:
        raise MissingExclusiveInterpretation(
            max(lineno, 1), "document contains no exclusive-interpretation record"
        )
    if active != 0:
        raise UnterminatedSpine(
            max(lineno, 1), f"{active} spine(s) not terminated with *- before end of document"
        )
    return KernDocument(records=records, comments=comments)


def validate_structure(source: str | KernDocument) -> tuple[bool, list[Violation]]:
    """Structural verdict for kern text or an in-memory document.

    Never raises: violations are returned as data. An in-memory document is
    validated through its own serialization so that programmatically built
    documents obey the same rules as parsed ones.
    """
    if isinstance(source, KernDocument):
        for i, cells in enumerate(source.records):
            for cell in cells:
                if "\t" in cell or "\n" in cell:
                    return False, [
                        Violation("MalformedRecord", i + 1, "cell contains a structural delimiter")
                    ]
        source = source.body_text()
    try:
        parse_kern(source)
    except KernStructureError as err:
        return False, [Violation(type(err).__name__, err.line, err.reason)]
    return True, []
