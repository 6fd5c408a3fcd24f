"""Corpus assembly: generate, render, degrade, split, and persist.

Disk layout of a corpus directory:

    images/<piece>_x<k>.png   8-bit grayscale PNG
    kern/<piece>_x<k>.krn     UTF-8 kern source (comments included)
    manifest.tsv              image_path<TAB>kern_path<TAB>piece_id<TAB>split
    vocab.tsv                 id<TAB>symbol, built from the train split

Paths inside the manifest are relative to the manifest's directory. Every
per-sample random stream is derived from (seed, piece_id, excerpt index), so
generation order — serial or parallel — cannot change the corpus.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from PIL import Image

from . import config as cfgmod
from .degrade import DegradationConfig, degrade, preset as degrade_preset
from .errors import ConfigError, InsufficientPieces
from .grammar import GrammarConfig, STYLE_SPINES, generate_piece
from .render import ImageSample, pseudo_render
from .tokens import Granularity, Vocabulary, tokenize

SPLITS = ("train", "validation", "test")


def derive_seed(*parts: object) -> int:
    """Stable 63-bit stream seed from arbitrary labeled parts."""
    text = "|".join(str(p) for p in parts)
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "big") >> 1


@dataclass(frozen=True)
class ManifestRow:
    image_path: str
    kern_path: str
    piece_id: str
    split: str


def write_manifest(rows: Sequence[ManifestRow], path: str | Path) -> None:
    lines = [f"{r.image_path}\t{r.kern_path}\t{r.piece_id}\t{r.split}" for r in rows]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_manifest(path: str | Path) -> list[ManifestRow]:
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        parts = line.split("\t")
        if len(parts) != 4:
            raise ConfigError(f"{path}:{lineno}: manifest rows need 4 tab-separated fields")
        rows.append(ManifestRow(*parts))
    return rows


def save_image_png(pixels: np.ndarray, path: str | Path) -> None:
    quantized = np.round(np.clip(pixels, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="L").save(Path(path), format="PNG")


def load_image_png(path: str | Path) -> np.ndarray:
    with Image.open(Path(path)) as im:
        arr = np.asarray(im.convert("L"), dtype=np.float32)
    return arr / 255.0


def resize_to_height(pixels: np.ndarray, height: int) -> np.ndarray:
    """Nearest-neighbor resize to a fixed height, width scaled proportionally."""
    h, w = pixels.shape
    if h == height:
        return pixels
    new_w = max(1, round(w * height / h))
    rows = (np.arange(height) * h / height).astype(np.int64)
    cols = (np.arange(new_w) * h / height).astype(np.int64)
    return pixels[rows.clip(max=h - 1)][:, cols.clip(max=w - 1)]


def split_by_piece(
    samples: Sequence[ImageSample],
    ratios: tuple[float, float, float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> dict[str, str]:
    """Assign each piece_id to a split; every excerpt follows its piece.

    Piece counts are apportioned by largest remainder against the ratios,
    then clamped so every split holds at least one piece. Returns the
    piece_id -> split mapping and stamps `split` on the samples.
    """
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {ratios}")
    pieces = sorted({s.piece_id for s in samples})
    if len(pieces) < 3:
        raise InsufficientPieces(f"need >= 3 distinct pieces, got {len(pieces)}")

    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, 0x5B711]))
    order = [pieces[i] for i in rng.permutation(len(pieces))]

    n = len(pieces)
    raw = [r * n for r in ratios]
    counts = [int(x) for x in raw]
    remainders = sorted(range(3), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in remainders[: n - sum(counts)]:
        counts[i] += 1
    for i in range(3):  # every split gets at least one piece
        while counts[i] == 0:
            donor = max(range(3), key=lambda j: counts[j])
            counts[donor] -= 1
            counts[i] += 1

    assignment: dict[str, str] = {}
    start = 0
    for split, count in zip(SPLITS, counts):
        for piece in order[start : start + count]:
            assignment[piece] = split
        start += count
    for sample in samples:
        sample.split = assignment[sample.piece_id]
    return assignment


@dataclass(frozen=True)
class CorpusConfig:
    n_pieces: int = 16
    excerpts_per_piece: int = 4
    style: str = "grandstaff"
    bars_per_excerpt: int = 2
    image_height: int = 128
    degrade: str = "none"
    seed: int = 0
    train_ratio: float = 0.70
    val_ratio: float = 0.15
    test_ratio: float = 0.15
    degrade_overrides: Mapping[str, float] = field(default_factory=dict)

    KEYS = {
        "n_pieces", "excerpts_per_piece", "style", "bars_per_excerpt", "image_height",
        "degrade", "seed", "train_ratio", "val_ratio", "test_ratio",
        "blur_lo", "blur_hi", "contrast_lo", "contrast_hi", "noise_lo", "noise_hi",
        "rotation_lo", "rotation_hi", "ink_bleed_prob", "texture_weight",
    }

    def __post_init__(self):
        if self.n_pieces < 3:
            raise ConfigError("n_pieces must be >= 3 (split needs three pieces)")
        if self.excerpts_per_piece < 1 or self.bars_per_excerpt < 1:
            raise ConfigError("excerpts_per_piece and bars_per_excerpt must be >= 1")
        if self.style not in STYLE_SPINES:
            raise ConfigError(f"unknown style {self.style!r}")
        if abs(self.train_ratio + self.val_ratio + self.test_ratio - 1.0) > 1e-9:
            raise ConfigError("split ratios must sum to 1")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str], **overrides) -> "CorpusConfig":
        cfgmod.reject_unknown(mapping, cls.KEYS, "corpus")
        deg: dict[str, float] = {}
        for key in ("blur_lo", "blur_hi", "contrast_lo", "contrast_hi", "noise_lo",
                    "noise_hi", "rotation_lo", "rotation_hi", "ink_bleed_prob", "texture_weight"):
            if key in mapping:
                deg[key] = cfgmod.get_float(mapping, key, 0.0)
        cfg = cls(
            n_pieces=cfgmod.get_int(mapping, "n_pieces", cls.n_pieces),
            excerpts_per_piece=cfgmod.get_int(mapping, "excerpts_per_piece", cls.excerpts_per_piece),
            style=cfgmod.get_str(mapping, "style", cls.style),
            bars_per_excerpt=cfgmod.get_int(mapping, "bars_per_excerpt", cls.bars_per_excerpt),
            image_height=cfgmod.get_int(mapping, "image_height", cls.image_height),
            degrade=cfgmod.get_str(mapping, "degrade", cls.degrade),
            seed=cfgmod.get_int(mapping, "seed", cls.seed),
            train_ratio=cfgmod.get_float(mapping, "train_ratio", cls.train_ratio),
            val_ratio=cfgmod.get_float(mapping, "val_ratio", cls.val_ratio),
            test_ratio=cfgmod.get_float(mapping, "test_ratio", cls.test_ratio),
            degrade_overrides=deg,
        )
        if overrides:
            cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
        return cfg

    def degradation_for(self, piece_id: str, excerpt: int) -> DegradationConfig | None:
        if self.degrade == "none" and not self.degrade_overrides:
            return None
        base = degrade_preset(self.degrade)
        o = self.degrade_overrides
        def rng_pair(lo_key, hi_key, current):
            return (o.get(lo_key, current[0]), o.get(hi_key, current[1]))
        cfg = DegradationConfig(
            blur_radius=rng_pair("blur_lo", "blur_hi", base.blur_radius),
            contrast=rng_pair("contrast_lo", "contrast_hi", base.contrast),
            noise_sigma=rng_pair("noise_lo", "noise_hi", base.noise_sigma),
            rotation_deg=rng_pair("rotation_lo", "rotation_hi", base.rotation_deg),
            ink_bleed_prob=o.get("ink_bleed_prob", base.ink_bleed_prob),
            texture_weight=o.get("texture_weight", base.texture_weight),
            seed=derive_seed(self.seed, piece_id, excerpt, "degrade"),
        )
        return cfg


def make_corpus(out_dir: str | Path, cfg: CorpusConfig) -> list[ManifestRow]:
    """Generate a full corpus on disk and return its manifest rows."""
    out = Path(out_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "kern").mkdir(parents=True, exist_ok=True)

    grammar_cfg = GrammarConfig(
        style=cfg.style,
        bars_per_excerpt=cfg.bars_per_excerpt,
        excerpts_per_piece=cfg.excerpts_per_piece,
    )

    samples: list[tuple[ImageSample, int]] = []
    for p in range(cfg.n_pieces):
        piece_id = f"piece{p:04d}"
        for k, doc in enumerate(generate_piece(p, grammar_cfg, cfg.seed)):
            sample = pseudo_render(doc, cfg.style, height=cfg.image_height, piece_id=piece_id)
            samples.append((sample, k))

    split_by_piece(
        [s for s, _ in samples],
        ratios=(cfg.train_ratio, cfg.val_ratio, cfg.test_ratio),
        seed=derive_seed(cfg.seed, "split"),
    )

    rows: list[ManifestRow] = []
    train_docs = []
    for sample, k in samples:
        dcfg = cfg.degradation_for(sample.piece_id, k)
        final = degrade(sample, dcfg) if dcfg is not None else sample
        stem = f"{sample.piece_id}_x{k:02d}"
        image_rel = f"images/{stem}.png"
        kern_rel = f"kern/{stem}.krn"
        save_image_png(final.pixels, out / image_rel)
        (out / kern_rel).write_text(final.kern.to_text(), encoding="utf-8")
        rows.append(ManifestRow(image_rel, kern_rel, final.piece_id, final.split))
        if final.split == "train":
            train_docs.append(final.kern)

    vocab = Vocabulary.build(tokenize(doc, Granularity.CHARACTER).tokens for doc in train_docs)
    vocab.save(out / "vocab.tsv")
    write_manifest(rows, out / "manifest.tsv")
    return rows
