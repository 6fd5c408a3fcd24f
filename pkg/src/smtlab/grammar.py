"""Stochastic kern grammar for desk-scale corpora.

A "piece" is a long run of bars sampled once; excerpts are consecutive bar
windows cut from it, so all excerpts of a piece share meter, clefs, and the
pitch random walks — the piece is the unit that must never leak across
splits. Everything is driven by a seeded Generator, so a (seed, piece index)
pair fully determines the output.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kern import KernDocument, validate_structure

STYLE_SPINES = {"grandstaff": 2, "quartet": 4}

# Spine 0 is the lowest staff (kern reads bottom staff first).
STYLE_CLEFS = {
    "grandstaff": ("*clefF4", "*clefG2"),
    "quartet": ("*clefF4", "*clefC3", "*clefG2", "*clefG2"),
}

# Pitch pools low to high, kern octave spelling (C=C3, c=C4, cc=C5).
_BASS = ["C", "D", "E", "F", "G", "A", "B", "c", "d", "e"]
_ALTO = ["G", "A", "B", "c", "d", "e", "f", "g", "a"]
_TREBLE = ["c", "d", "e", "f", "g", "a", "b", "cc", "dd", "ee"]
_TREBLE_HIGH = ["e", "f", "g", "a", "b", "cc", "dd", "ee", "ff", "gg"]

STYLE_REGISTERS = {
    "grandstaff": (_BASS, _TREBLE),
    "quartet": (_BASS, _ALTO, _TREBLE, _TREBLE_HIGH),
}


@dataclass(frozen=True)
class GrammarConfig:
    style: str = "grandstaff"
    bars_per_excerpt: int = 2
    excerpts_per_piece: int = 4
    subdivision_prob: float = 0.25
    accidental_prob: float = 0.12
    rest_prob: float = 0.08

    def __post_init__(self):
        if self.style not in STYLE_SPINES:
            raise ValueError(f"unknown style {self.style!r}")
        if self.bars_per_excerpt < 1 or self.excerpts_per_piece < 1:
            raise ValueError("bars_per_excerpt and excerpts_per_piece must be >= 1")


def _note_cell(rng: np.random.Generator, duration: str, pool: list[str],
               state: list[int], cfg: GrammarConfig) -> str:
    if rng.random() < cfg.rest_prob:
        return f"{duration}r"
    state[0] = int(np.clip(state[0] + rng.integers(-2, 3), 0, len(pool) - 1))
    pitch = pool[state[0]]
    accidental = ""
    if rng.random() < cfg.accidental_prob:
        accidental = "#" if rng.random() < 0.5 else "-"
    return f"{duration}{pitch}{accidental}"


def _bar_records(rng: np.random.Generator, beats: int, pools, states, cfg: GrammarConfig) -> list[list[str]]:
    spines = len(pools)
    records: list[list[str]] = []
    for _ in range(beats):
        subdivide = [rng.random() < cfg.subdivision_prob for _ in range(spines)]
        if any(subdivide):
            first = [
                _note_cell(rng, "8" if subdivide[s] else "4", pools[s], states[s], cfg)
                for s in range(spines)
            ]
            second = [
                _note_cell(rng, "8", pools[s], states[s], cfg) if subdivide[s] else "."
                for s in range(spines)
            ]
            records.extend([first, second])
        else:
            records.append(
                [_note_cell(rng, "4", pools[s], states[s], cfg) for s in range(spines)]
            )
    return records


def generate_piece(piece_index: int, cfg: GrammarConfig, seed: int) -> list[KernDocument]:
    """Excerpt documents for one piece, every one structurally valid."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, piece_index]))
    spines = STYLE_SPINES[cfg.style]
    pools = STYLE_REGISTERS[cfg.style]
    beats = int(rng.choice([3, 4]))
    meter = f"*M{beats}/4"
    states = [[int(rng.integers(0, len(pool)))] for pool in pools]

    total_bars = cfg.bars_per_excerpt * cfg.excerpts_per_piece
    bars = []
    for bar_no in range(1, total_bars + 1):
        events = _bar_records(rng, beats, pools, states, cfg)
        bars.append((bar_no, events))

    docs = []
    for k in range(cfg.excerpts_per_piece):
        window = bars[k * cfg.bars_per_excerpt : (k + 1) * cfg.bars_per_excerpt]
        records: list[list[str]] = [["**kern"] * spines]
        records.append(list(STYLE_CLEFS[cfg.style]))
        records.append([meter] * spines)
        for bar_no, events in window:
            records.extend(events)
            # the piece-final double bar survives the cut; interior bars keep numbers
            barline = "==" if bar_no == total_bars else f"={bar_no}"
            records.append([barline] * spines)
        records.append(["*-"] * spines)
        comment = f"!! piece{piece_index:04d} excerpt {k} bars {window[0][0]}-{window[-1][0]}"
        doc = KernDocument(records=records, comments=[(0, comment)])
        ok, violations = validate_structure(doc)
        if not ok:  # grammar bug guard; generated scores must always validate
            raise AssertionError(f"grammar produced invalid kern: {violations[0]}")
        docs.append(doc)
    return docs
