"""Teacher-forced training with validation-driven model selection.

Batches are bucketed by image width (images padded with white, sequences
with <pad>); the loss is mean next-token cross-entropy over non-pad
positions. Batch order is a pure function of (seed, epoch), so a resumed run
walks the same schedule as an uninterrupted one. Checkpoints are written
atomically; `best.ckpt` always holds the lowest validation SER seen.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from . import config as cfgmod
from .corpus import ManifestRow, derive_seed, load_image_png
from .errors import ConfigError, SequenceExceedsMaxLength, SplitLeakage
from .metrics import score_pair
from .model import SMT, save_checkpoint, load_checkpoint, model_from_checkpoint, _tree_to_torch
from .tokens import Granularity, Vocabulary, tokenize_text

HISTORY_HEADER = "step\tloss\tcer\tser\tler"


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 8
    learning_rate: float = 1e-4
    warmup_steps: int = 500
    grad_clip_norm: float = 1.0
    max_steps: int = 5000
    validation_interval: int = 500
    seed: int = 0
    backbone: str = "cnn"
    label_smoothing: float = 0.0

    KEYS = {
        "batch_size", "learning_rate", "warmup_steps", "grad_clip_norm",
        "max_steps", "validation_interval", "seed", "backbone", "label_smoothing",
    }

    def __post_init__(self):
        if min(self.batch_size, self.warmup_steps, self.max_steps, self.validation_interval) < 1:
            raise ConfigError("batch_size, warmup_steps, max_steps, validation_interval must be >= 1")
        if self.learning_rate <= 0 or self.grad_clip_norm <= 0:
            raise ConfigError("learning_rate and grad_clip_norm must be positive")
        if self.validation_interval > self.max_steps:
            raise ConfigError("validation_interval must not exceed max_steps")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError("label_smoothing must be in [0, 1)")

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, str], **overrides) -> "TrainConfig":
        cfgmod.reject_unknown(mapping, cls.KEYS, "train")
        cfg = cls(
            batch_size=cfgmod.get_int(mapping, "batch_size", cls.batch_size),
            learning_rate=cfgmod.get_float(mapping, "learning_rate", cls.learning_rate),
            warmup_steps=cfgmod.get_int(mapping, "warmup_steps", cls.warmup_steps),
            grad_clip_norm=cfgmod.get_float(mapping, "grad_clip_norm", cls.grad_clip_norm),
            max_steps=cfgmod.get_int(mapping, "max_steps", cls.max_steps),
            validation_interval=cfgmod.get_int(mapping, "validation_interval", cls.validation_interval),
            seed=cfgmod.get_int(mapping, "seed", cls.seed),
            backbone=cfgmod.get_str(mapping, "backbone", cls.backbone),
            label_smoothing=cfgmod.get_float(mapping, "label_smoothing", cls.label_smoothing),
        )
        if overrides:
            cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
        return cfg


@dataclass
class TrainItem:
    sample_id: str
    pixels: np.ndarray
    ref_text: str
    ref_ids: list[int]


@dataclass(frozen=True)
class HistoryEntry:
    step: int
    loss: float
    cer: float  # percent
    ser: float
    ler: float

    def line(self) -> str:
        return f"{self.step}\t{self.loss:.6f}\t{self.cer:.6f}\t{self.ser:.6f}\t{self.ler:.6f}"


@dataclass
class FitResult:
    history: list[HistoryEntry]
    best_path: Path
    last_path: Path
    best_ser: float


def check_disjoint_pieces(train_rows: Sequence[ManifestRow], val_rows: Sequence[ManifestRow]) -> None:
    shared = {r.piece_id for r in train_rows} & {r.piece_id for r in val_rows}
    if shared:
        raise SplitLeakage(shared)


def load_items(rows: Sequence[ManifestRow], root: Path, vocab: Vocabulary) -> list[TrainItem]:
    items = []
    for row in rows:
        pixels = load_image_png(root / row.image_path)
        ref_text = (root / row.kern_path).read_text(encoding="utf-8")
        tokens = tokenize_text(ref_text, Granularity.CHARACTER).tokens
        items.append(
            TrainItem(
                sample_id=Path(row.image_path).stem,
                pixels=pixels,
                ref_text=ref_text,
                ref_ids=vocab.encode(tokens),
            )
        )
    return items


def _batch_tensors(batch: Sequence[TrainItem], model: SMT, pad_id: int):
    max_len = model.decoder_cfg.max_decode_len
    for item in batch:
        if len(item.ref_ids) + 1 > max_len:  # generated tokens incl. <eot>
            raise SequenceExceedsMaxLength(
                f"{item.sample_id}: {len(item.ref_ids) + 1} tokens exceeds decode cap {max_len}"
            )
    dtype = next(model.parameters()).dtype
    h = max(item.pixels.shape[0] for item in batch)
    w = max(item.pixels.shape[1] for item in batch)
    images = torch.full((len(batch), 1, h, w), 1.0, dtype=dtype)
    t = max(len(item.ref_ids) for item in batch) + 1
    inputs = torch.full((len(batch), t), pad_id, dtype=torch.long)
    targets = torch.full((len(batch), t), pad_id, dtype=torch.long)
    for i, item in enumerate(batch):
        ih, iw = item.pixels.shape
        images[i, 0, :ih, :iw] = torch.from_numpy(item.pixels).to(dtype)
        seq = item.ref_ids
        inputs[i, : len(seq) + 1] = torch.tensor([model.sot_id, *seq], dtype=torch.long)
        targets[i, : len(seq) + 1] = torch.tensor([*seq, model.eot_id], dtype=torch.long)
    return images, inputs, targets


def training_step(
    model: SMT,
    optimizer: torch.optim.Optimizer,
    batch: Sequence[TrainItem],
    cfg: TrainConfig,
    step: int,
    pad_id: int,
) -> float:
    """One optimization step; returns the batch loss."""
    model.train()
    images, inputs, targets = _batch_tensors(batch, model, pad_id)
    logits = model.forward_logits(images, inputs)
    loss = F.cross_entropy(
        logits.reshape(-1, logits.shape[-1]),
        targets.reshape(-1),
        ignore_index=pad_id,
        label_smoothing=cfg.label_smoothing,
    )
    optimizer.zero_grad()
    loss.backward()
    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
    lr = cfg.learning_rate * min(1.0, step / cfg.warmup_steps)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()
    return float(loss.detach())


def evaluation_loss(model: SMT, batch: Sequence[TrainItem], pad_id: int) -> float:
    """Teacher-forced loss without updating parameters."""
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            images, inputs, targets = _batch_tensors(batch, model, pad_id)
            logits = model.forward_logits(images, inputs)
            return float(
                F.cross_entropy(
                    logits.reshape(-1, logits.shape[-1]),
                    targets.reshape(-1),
                    ignore_index=pad_id,
                )
            )
    finally:
        model.train(was_training)


def _make_batches(items: Sequence[TrainItem], batch_size: int) -> list[list[TrainItem]]:
    ordered = sorted(items, key=lambda it: (it.pixels.shape[1], it.sample_id))
    return [list(ordered[i : i + batch_size]) for i in range(0, len(ordered), batch_size)]


def _epoch_order(num_batches: int, seed: int, epoch: int) -> np.ndarray:
    rng = np.random.default_rng(np.random.SeedSequence([seed & 0xFFFFFFFF, epoch, 0xB47C4]))
    return rng.permutation(num_batches)


def _validate_greedy(model: SMT, vocab: Vocabulary, items: Sequence[TrainItem]):
    from .evaluate import transcribe_array  # local import; evaluate builds on trainer-side pieces

    scores = [score_pair(transcribe_array(model, vocab, it.pixels), it.ref_text) for it in items]
    n = len(scores)
    return (
        100.0 * sum(s.cer for s in scores) / n,
        100.0 * sum(s.ser for s in scores) / n,
        100.0 * sum(s.ler for s in scores) / n,
    )


def fit(
    train_rows: Sequence[ManifestRow],
    val_rows: Sequence[ManifestRow],
    cfg: TrainConfig,
    *,
    root: Path,
    out_dir: Path,
    vocab: Vocabulary,
    preset: str = "micro",
    model: SMT | None = None,
    resume: bool = False,
) -> FitResult:
    """Train to cfg.max_steps, validating every cfg.validation_interval steps.

    Raises SplitLeakage if the manifests share a piece id. Writes
    `history.tsv`, `best.ckpt` (lowest validation SER), `last.ckpt`, and a
    copy of the vocabulary next to them.
    """
    check_disjoint_pieces(train_rows, val_rows)
    if not train_rows or not val_rows:
        raise ConfigError("train and validation manifests must be non-empty")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    torch.manual_seed(derive_seed(cfg.seed, "init"))
    start_step = 0
    best_ser = float("inf")
    optimizer_state = None
    if resume:
        payload = load_checkpoint(out_dir / "last.ckpt")
        model = model_from_checkpoint(payload)
        start_step = payload["step"]
        best_ser = payload["best_val_ser"] if payload["best_val_ser"] is not None else float("inf")
        optimizer_state = payload["optimizer"]
        torch.set_rng_state(torch.from_numpy(payload["torch_rng"]))
    elif model is None:
        model = SMT.build(vocab_size=len(vocab), backbone=cfg.backbone, preset=preset)

    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    if optimizer_state is not None:
        optimizer.load_state_dict(_tree_to_torch(optimizer_state))

    train_items = load_items(train_rows, root, vocab)
    val_items = load_items(val_rows, root, vocab)
    batches = _make_batches(train_items, cfg.batch_size)

    vocab.save(out_dir / "vocab.tsv")
    history_path = out_dir / "history.tsv"
    if not resume or not history_path.exists():
        history_path.write_text(HISTORY_HEADER + "\n", encoding="utf-8")

    history: list[HistoryEntry] = []
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    running: list[float] = []

    for step in range(start_step + 1, cfg.max_steps + 1):
        epoch, offset = divmod(step - 1, len(batches))
        order = _epoch_order(len(batches), cfg.seed, epoch)
        batch = batches[order[offset]]
        running.append(training_step(model, optimizer, batch, cfg, step, vocab.pad_id))

        if step % cfg.validation_interval == 0 or step == cfg.max_steps:
            cer, ser, ler = _validate_greedy(model, vocab, val_items)
            entry = HistoryEntry(step, float(np.mean(running)), cer, ser, ler)
            running.clear()
            history.append(entry)
            with history_path.open("a", encoding="utf-8") as fh:
                fh.write(entry.line() + "\n")
            if ser < best_ser:
                best_ser = ser
                save_checkpoint(
                    best_path, model, vocab_hash=vocab.hash_hex, step=step,
                    optimizer=optimizer, best_val_ser=best_ser,
                )
            save_checkpoint(
                last_path, model, vocab_hash=vocab.hash_hex, step=step,
                optimizer=optimizer, best_val_ser=best_ser,
            )

    return FitResult(history=history, best_path=best_path, last_path=last_path, best_ser=best_ser)
