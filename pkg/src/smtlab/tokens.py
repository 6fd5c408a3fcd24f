"""Token streams over kern documents at three granularities, plus the
model vocabulary.

Granularities:

* ``character`` — every character inside a cell, with ``<t>`` between cells
  and ``<b>`` closing each record. This is the model-facing encoding.
* ``symbol`` — whole cells, with ``<b>`` closing each record. Cell boundaries
  are implicit between consecutive symbols, so no ``<t>`` is emitted.
* ``line`` — each record is a single token (its cells tab-joined).

A metric-facing stream never contains ``<sot>``/``<eot>``/``<pad>``; those
control ids are added by the trainer / stripped by the decoder.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

from .errors import IllegalControlToken, UnknownSymbol
from .kern import KernDocument

SOT = "<sot>"
EOT = "<eot>"
PAD = "<pad>"
CELL_SEP = "<t>"
RECORD_SEP = "<b>"

#: Reserved tokens in fixed id order (ids 0..4).
RESERVED_TOKENS = (SOT, EOT, PAD, CELL_SEP, RECORD_SEP)
#: Tokens that must never appear in detokenizable content.
CONTROL_TOKENS = frozenset((SOT, EOT, PAD))


class Granularity(str, Enum):
    CHARACTER = "character"
    SYMBOL = "symbol"
    LINE = "line"


@dataclass
class TokenSequence:
    tokens: list[str]
    granularity: Granularity
    ids: list[int] | None = None

    def __len__(self) -> int:
        return len(self.tokens)


def record_tokens(cells: Sequence[str], granularity: Granularity) -> list[str]:
    """Token emission for a single record."""
    if granularity is Granularity.LINE:
        return ["\t".join(cells)]
    if granularity is Granularity.SYMBOL:
        return [*cells, RECORD_SEP]
    out: list[str] = []
    for i, cell in enumerate(cells):
        if i > 0:
            out.append(CELL_SEP)
        out.extend(cell)
    out.append(RECORD_SEP)
    return out


def tokenize(
    doc: KernDocument,
    granularity: Granularity | str,
    vocabulary: "Vocabulary | None" = None,
) -> TokenSequence:
    """Token stream for a document. Comments are never tokenized.

    With a frozen ``vocabulary``, ids are filled in and UnknownSymbol is
    raised for out-of-vocabulary tokens.
    """
    granularity = Granularity(granularity)
    tokens: list[str] = []
    for cells in doc.records:
        tokens.extend(record_tokens(cells, granularity))
    ids = vocabulary.encode(tokens) if vocabulary is not None else None
    return TokenSequence(tokens=tokens, granularity=granularity, ids=ids)


def tokenize_text(text: str, granularity: Granularity | str) -> TokenSequence:
    """Lenient token stream for raw text (e.g. model output).

    Splits on newlines and tabs only; no structural validity is required.
    ``!!`` comment lines are skipped, matching the document path.
    """
    granularity = Granularity(granularity)
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    tokens: list[str] = []
    for line in lines:
        if line.startswith("!!"):
            continue
        tokens.extend(record_tokens(line.split("\t"), granularity))
    return TokenSequence(tokens=tokens, granularity=granularity)


def detokenize(seq: TokenSequence | Sequence[str], granularity: Granularity | str | None = None) -> str:
    """Inverse of tokenize: token stream back to kern source text.

    Accepts any content stream, valid or not — structural quality is
    validate_structure's concern. Raises IllegalControlToken if the stream
    contains ``<sot>``/``<eot>``/``<pad>``.
    """
    if isinstance(seq, TokenSequence):
        tokens = seq.tokens
        granularity = seq.granularity
    else:
        tokens = list(seq)
        if granularity is None:
            raise ValueError("granularity required when passing a bare token list")
        granularity = Granularity(granularity)

    for tok in tokens:
        if tok in CONTROL_TOKENS:
            raise IllegalControlToken(f"control token {tok} in detokenize input")

    if granularity is Granularity.LINE:
        return "".join(tok + "\n" for tok in tokens)

    parts: list[str] = []
    if granularity is Granularity.SYMBOL:
        cells: list[str] = []
        for tok in tokens:
            if tok == RECORD_SEP:
                parts.append("\t".join(cells))
                parts.append("\n")
                cells = []
            else:
                cells.append(tok)
        if cells:
            parts.append("\t".join(cells))
        return "".join(parts)

    for tok in tokens:
        if tok == RECORD_SEP:
            parts.append("\n")
        elif tok == CELL_SEP:
            parts.append("\t")
        else:
            parts.append(tok)
    return "".join(parts)


def strip_control_tokens(tokens: Iterable[str]) -> list[str]:
    """Drop <sot>/<eot>/<pad> from a raw model output stream."""
    return [tok for tok in tokens if tok not in CONTROL_TOKENS]


class Vocabulary:
    """Dense, deterministic symbol-to-id map with fixed reserved ids.

    Ids 0..4 are the reserved tokens; corpus symbols follow in lexicographic
    order, so two builds over the same corpus yield identical maps.
    """

    def __init__(self, symbols: Sequence[str]):
        if tuple(symbols[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise ValueError("vocabulary must start with the reserved tokens")
        self._symbols = list(symbols)
        self._ids = {sym: i for i, sym in enumerate(self._symbols)}
        if len(self._ids) != len(self._symbols):
            raise ValueError("vocabulary symbols must be unique")

    @classmethod
    def build(cls, token_streams: Iterable[Iterable[str]]) -> "Vocabulary":
        seen: set[str] = set()
        for stream in token_streams:
            seen.update(stream)
        seen.difference_update(RESERVED_TOKENS)
        return cls(list(RESERVED_TOKENS) + sorted(seen))

    def __len__(self) -> int:
        return len(self._symbols)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and other._symbols == self._symbols

    def __contains__(self, symbol: str) -> bool:
        return symbol in self._ids

    @property
    def symbols(self) -> tuple[str, ...]:
        return tuple(self._symbols)

    @property
    def sot_id(self) -> int:
        return self._ids[SOT]

    @property
    def eot_id(self) -> int:
        return self._ids[EOT]

    @property
    def pad_id(self) -> int:
        return self._ids[PAD]

    def id_of(self, symbol: str) -> int:
        try:
            return self._ids[symbol]
        except KeyError:
            raise UnknownSymbol(f"symbol {symbol!r} not in vocabulary") from None

    def symbol_of(self, token_id: int) -> str:
        return self._symbols[token_id]

    def encode(self, tokens: Sequence[str], wrap: bool = False) -> list[int]:
        ids = [self.id_of(tok) for tok in tokens]
        if wrap:
            return [self.sot_id, *ids, self.eot_id]
        return ids

    def decode(self, ids: Sequence[int], drop_control: bool = False) -> list[str]:
        tokens = [self._symbols[i] for i in ids]
        if drop_control:
            tokens = strip_control_tokens(tokens)
        return tokens

    # --- serialization: line-delimited `id<TAB>symbol`, reserved first ---

    def canonical_bytes(self) -> bytes:
        for sym in self._symbols:
            if "\t" in sym or "\n" in sym:
                raise ValueError(f"symbol {sym!r} not serializable in id<TAB>symbol format")
        return "".join(f"{i}\t{sym}\n" for i, sym in enumerate(self._symbols)).encode("utf-8")

    @property
    def hash_hex(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.canonical_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        symbols: list[str] = []
        for raw in Path(path).read_text(encoding="utf-8").splitlines():
            ident, _, symbol = raw.partition("\t")
            if int(ident) != len(symbols):
                raise ValueError(f"non-dense vocabulary file at id {ident}")
            symbols.append(symbol)
        return cls(symbols)
