"""Embedding datasets, missing-modality plans and batching.

A dataset holds precomputed text embeddings (one d-vector per sample) and
video-frame embeddings (n×d per sample). Whichever frozen encoder produced
them writes the newline-delimited format read by :func:`load_dataset`.
"""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence

import numpy as np

from .errors import ConfigError, DataError
from .numkernel import Rng

SPLITS = ("train", "valid", "test")
TASKS = ("regression", "classification")
SETTINGS = ("A", "B")
VICTIMS = ("text", "visual")

MODE_C = "c"
MODE_MV = "mv"  # visual missing
MODE_MT = "mt"  # text missing

HEADER_RE = re.compile(r"^#trml-embeddings v1 (.*)$")


@dataclass
class SampleRecord:
    id: str
    split: str
    label: float
    text: np.ndarray  # (d,)
    frames: np.ndarray  # (n, d)
    frame_mask: Optional[np.ndarray] = None  # (n,) of 0/1

    @property
    def present_frames(self) -> int:
        if self.frame_mask is None:
            return self.frames.shape[0]
        return int(np.sum(self.frame_mask))

    def __eq__(self, other):
        if not isinstance(other, SampleRecord):
            return NotImplemented
        masks_equal = (self.frame_mask is None and other.frame_mask is None) or (
            self.frame_mask is not None
            and other.frame_mask is not None
            and np.array_equal(self.frame_mask, other.frame_mask)
        )
        return (
            self.id == other.id
            and self.split == other.split
            and self.label == other.label
            and np.array_equal(self.text, other.text)
            and np.array_equal(self.frames, other.frames)
            and masks_equal
        )


@dataclass
class EmbeddingDataset:
    records: List[SampleRecord]
    d: int
    task: str = "regression"
    class_count: int = 0

    def __post_init__(self):
        self._index = {r.id: i for i, r in enumerate(self.records)}

    def split_indices(self, split: str) -> List[int]:
        return [i for i, r in enumerate(self.records) if r.split == split]

    def split_size(self, split: str) -> int:
        return sum(1 for r in self.records if r.split == split)

    @property
    def n1(self) -> int:
        return self.split_size("train")

    @property
    def n2(self) -> int:
        return self.split_size("test")

    def index_of(self, sample_id: str) -> int:
        try:
            return self._index[sample_id]
        except KeyError:
            raise DataError(f"unknown sample id {sample_id!r}") from None

    def __eq__(self, other):
        if not isinstance(other, EmbeddingDataset):
            return NotImplemented
        return (
            self.d == other.d
            and self.task == other.task
            and self.class_count == other.class_count
            and self.records == other.records
        )


def validate_dataset(ds: EmbeddingDataset) -> EmbeddingDataset:
    if ds.task not in TASKS:
        raise DataError(f"unknown task {ds.task!r}")
    seen = set()
    for r in ds.records:
        if r.id in seen:
            raise DataError(f"duplicate id {r.id!r}")
        seen.add(r.id)
        if r.split not in SPLITS:
            raise DataError(f"record {r.id!r}: unknown split {r.split!r}")
        if r.text.shape != (ds.d,):
            raise DataError(f"record {r.id!r}: text has length {r.text.size}, expected d={ds.d}")
        if r.frames.ndim != 2 or r.frames.shape[0] < 1 or r.frames.shape[1] != ds.d:
            raise DataError(f"record {r.id!r}: frames must be n×{ds.d} with n >= 1, got {r.frames.shape}")
        if r.frame_mask is not None:
            if r.frame_mask.shape != (r.frames.shape[0],):
                raise DataError(f"record {r.id!r}: frame_mask length does not match frame count")
            if not np.all((r.frame_mask == 0) | (r.frame_mask == 1)):
                raise DataError(f"record {r.id!r}: frame_mask entries must be 0 or 1")
        if not (np.all(np.isfinite(r.text)) and np.all(np.isfinite(r.frames)) and math.isfinite(r.label)):
            raise DataError(f"record {r.id!r}: non-finite value")
        if ds.task == "classification":
            if r.label != int(r.label) or not 0 <= r.label < ds.class_count:
                raise DataError(f"record {r.id!r}: label {r.label} outside classes 0..{ds.class_count - 1}")
    for split in ("train", "test"):
        if ds.split_size(split) == 0:
            raise DataError(f"split {split!r} is empty")
    return ds


# -- file format ---------------------------------------------------------


def _parse_header(line: str) -> Dict[str, str]:
    m = HEADER_RE.match(line.strip())
    if not m:
        raise DataError("missing '#trml-embeddings v1 d=<d> task=<task>' header")
    fields = dict(kv.split("=", 1) for kv in m.group(1).split() if "=" in kv)
    if "d" not in fields or "task" not in fields:
        raise DataError("header must define d and task")
    return fields


def load_dataset(path) -> EmbeddingDataset:
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with path.open() as fh:
        header = _parse_header(fh.readline())
        try:
            d = int(header["d"])
        except ValueError:
            raise DataError(f"bad header d={header['d']!r}") from None
        task = header["task"]
        records = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                obj = json.loads(line)
                rid = str(obj["id"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise DataError(f"line {lineno}: malformed record ({exc})") from None
            try:
                text = np.asarray(obj["text"], dtype=np.float64)
                frames = np.asarray(obj["frames"], dtype=np.float64)
                mask = obj.get("frame_mask")
                mask = None if mask is None else np.asarray(mask, dtype=np.int64)
                label = float(obj["label"])
                split = obj["split"]
            except (KeyError, ValueError, TypeError) as exc:
                raise DataError(f"record {rid!r}: malformed field ({exc})") from None
            if text.shape != (d,):
                raise DataError(f"record {rid!r}: text has length {text.size}, expected d={d}")
            records.append(SampleRecord(rid, split, label, text, frames, mask))
    if "classes" in header:
        class_count = int(header["classes"])
    elif task == "classification":
        class_count = int(max(r.label for r in records)) + 1 if records else 0
    else:
        class_count = 0
    return validate_dataset(EmbeddingDataset(records, d, task, class_count))


def _num(x: float) -> str:
    # repr round-trips float64 exactly
    return repr(float(x))


def save_dataset(ds: EmbeddingDataset, path) -> None:
    header = f"#trml-embeddings v1 d={ds.d} task={ds.task}"
    if ds.task == "classification":
        header += f" classes={ds.class_count}"
    lines = [header]
    for r in ds.records:
        label = int(r.label) if ds.task == "classification" else r.label
        parts = [
            f'"id": {json.dumps(r.id)}',
            f'"split": {json.dumps(r.split)}',
            f'"label": {label if isinstance(label, int) else _num(label)}',
            '"text": [' + ", ".join(map(_num, r.text)) + "]",
            '"frames": [' + ", ".join("[" + ", ".join(map(_num, f)) + "]" for f in r.frames) + "]",
        ]
        if r.frame_mask is not None:
            parts.append('"frame_mask": [' + ", ".join(str(int(m)) for m in r.frame_mask) + "]")
        lines.append("{" + ", ".join(parts) + "}")
    Path(path).write_text("\n".join(lines) + "\n")


# -- synthetic benchmark -------------------------------------------------


@dataclass
class SyntheticConfig:
    d: int = 16
    latent_k: int = 4
    n_frames: int = 4
    n_train: int = 2000
    n_valid: int = 200
    n_test: int = 500
    text_noise: float = 0.1
    frame_noise: float = 0.1
    modality_gap: float = 0.5
    task: str = "regression"
    seed: int = 0


def _normalize_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def generate_synthetic(cfg: SyntheticConfig) -> EmbeddingDataset:
    """Paired text/frame embeddings driven by a shared Gaussian latent.

    text = normalize(A z + text_noise·ε), frame_i = normalize(B z + frame_noise·η_i);
    the regression label is w·z clipped to [-3, 3], the classification label its sign.
    B = A + modality_gap·G puts both modalities in one roughly aligned space,
    as a contrastively pre-trained encoder pair would.
    """
    if not cfg.d >= cfg.latent_k >= 1:
        raise ConfigError(f"need d >= latent_k >= 1, got d={cfg.d}, latent_k={cfg.latent_k}")
    if min(cfg.n_frames, cfg.n_train, cfg.n_valid, cfg.n_test) < 1:
        raise ConfigError("frame count and split sizes must be >= 1")
    if cfg.text_noise < 0 or cfg.frame_noise < 0 or cfg.modality_gap < 0:
        raise ConfigError("noise levels and modality gap must be >= 0")
    if cfg.task not in TASKS:
        raise ConfigError(f"unknown task {cfg.task!r}")

    rng = Rng(cfg.seed)
    k, d = cfg.latent_k, cfg.d
    A = rng.child(0).normal((d, k))
    B = A + cfg.modality_gap * rng.child(1).normal((d, k))
    w = rng.child(2).normal(k)
    w *= 1.5 / np.linalg.norm(w)

    records = []
    sizes = {"train": cfg.n_train, "valid": cfg.n_valid, "test": cfg.n_test}
    for s, split in enumerate(SPLITS):
        n = sizes[split]
        srng = rng.child(10 + s)
        z = srng.normal((n, k))
        eps = srng.normal((n, d))
        eta = srng.normal((n, cfg.n_frames, d))
        text = _normalize_rows(z @ A.T + cfg.text_noise * eps)
        frames = _normalize_rows((z @ B.T)[:, None, :] + cfg.frame_noise * eta)
        score = z @ w
        for i in range(n):
            if cfg.task == "regression":
                label = float(np.clip(score[i], -3.0, 3.0))
            else:
                label = float(score[i] >= 0)
            records.append(SampleRecord(f"{split}-{i:05d}", split, label, text[i], frames[i]))
    class_count = 2 if cfg.task == "classification" else 0
    return validate_dataset(EmbeddingDataset(records, d, cfg.task, class_count))


# -- missingness ---------------------------------------------------------


def present_count(p: float, n: int) -> int:
    """round(p·n) with halves rounded up."""
    return int(math.floor(p * n + 0.5))


@dataclass(frozen=True)
class MissingnessPlan:
    setting: str
    victim: str
    p: float
    seed: int
    present: Dict[str, bool] = field(repr=False)

    @property
    def removed(self) -> float:
        return 1.0 - self.p

    def is_present(self, sample_id: str) -> bool:
        return self.present[sample_id]

    def present_in(self, ds: EmbeddingDataset, split: str) -> int:
        return sum(self.present[ds.records[i].id] for i in ds.split_indices(split))


def build_missingness_plan(ds: EmbeddingDataset, setting: str, victim: str, p: float, seed: int) -> MissingnessPlan:
    """Choose which samples keep the victim modality.

    Per split, ids are shuffled by the seed and the first round(p·|split|)
    keep the victim modality. Setting A removes it from every valid/test
    sample; Setting B applies p to all splits.
    """
    if setting not in SETTINGS:
        raise ConfigError(f"unknown setting {setting!r}")
    if victim not in VICTIMS:
        raise ConfigError(f"unknown victim modality {victim!r}")
    if not 0.0 <= p <= 1.0:
        raise ConfigError(f"p must be in [0, 1], got {p}")
    rng = Rng(seed)
    present: Dict[str, bool] = {}
    for s, split in enumerate(SPLITS):
        idx = ds.split_indices(split)
        if setting == "A" and split != "train":
            keep = 0
        else:
            keep = present_count(p, len(idx))
        order = rng.child(s).permutation(len(idx))
        chosen = set(order[:keep].tolist())
        for j, i in enumerate(idx):
            present[ds.records[i].id] = j in chosen
    if victim == "text":
        for r in ds.records:
            if not present[r.id] and r.present_frames == 0:
                raise DataError(f"record {r.id!r} would lose text while having no present frames")
    return MissingnessPlan(setting, victim, float(p), int(seed), present)


def sample_mode(record: SampleRecord, plan: MissingnessPlan) -> str:
    if record.present_frames == 0:
        return MODE_MV
    if plan.is_present(record.id):
        return MODE_C
    return MODE_MV if plan.victim == "visual" else MODE_MT


# -- batching ------------------------------------------------------------


@dataclass
class Batch:
    indices: np.ndarray
    ids: List[str]
    text: np.ndarray  # (N, d)
    frames: List[np.ndarray]  # each (n_i, d)
    masks: List[Optional[np.ndarray]]
    labels: np.ndarray  # (N,)
    modes: List[str]

    def __len__(self) -> int:
        return len(self.indices)


def make_batch(ds: EmbeddingDataset, indices: Sequence[int], plan: MissingnessPlan) -> Batch:
    recs = [ds.records[i] for i in indices]
    return Batch(
        indices=np.asarray(indices, dtype=np.int64),
        ids=[r.id for r in recs],
        text=np.stack([r.text for r in recs]),
        frames=[r.frames for r in recs],
        masks=[r.frame_mask for r in recs],
        labels=np.array([r.label for r in recs], dtype=np.float64),
        modes=[sample_mode(r, plan) for r in recs],
    )


def iterate_batches(
    ds: EmbeddingDataset,
    plan: MissingnessPlan,
    batch_size: int,
    epoch_seed: int,
    split: str = "train",
) -> Iterator[Batch]:
    """Batches over one split; the train split is reshuffled by ``epoch_seed``."""
    if batch_size < 2:
        raise ConfigError(f"batch_size must be >= 2, got {batch_size}")
    idx = np.asarray(ds.split_indices(split), dtype=np.int64)
    if split == "train":
        idx = idx[Rng(epoch_seed).permutation(len(idx))]
    for start in range(0, len(idx), batch_size):
        yield make_batch(ds, idx[start:start + batch_size].tolist(), plan)
