"""Training loop, ablation variants, checkpoints and temperature sweeps."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .dataset import (
    EmbeddingDataset,
    MissingnessPlan,
    SyntheticConfig,
    build_missingness_plan,
    generate_synthetic,
    iterate_batches,
    load_dataset,
)
from .errors import ConfigError, DataError, DivergenceError, NonFiniteError
from .model import ABLATIONS, TASK_LOSSES, TAU_MAX, TAU_MIN, Hyper, ModelParams, init_params
from .numkernel import ParamStore, adam_step, evaluate_with_gradients
from .objective import LossBreakdown, apply_ablation, make_objective  # noqa: F401  (apply_ablation re-exported)

log = logging.getLogger(__name__)

DIVERGENCE_LIMIT = 1e6
CHECKPOINT_HEADER = "#trml-checkpoint v1"


@dataclass
class TrainConfig:
    data: Optional[str] = None  # dataset file; synthetic data when None
    synthetic: SyntheticConfig = field(default_factory=SyntheticConfig)
    setting: str = "A"
    victim: str = "text"
    p: float = 0.1
    batch_size: int = 16
    epochs: int = 50
    lr: float = 5e-5
    lam: float = 0.1
    alpha: float = 0.5
    tau: float = 0.1
    tau_learnable: bool = True
    seed: int = 0
    ablation: str = "none"
    task_loss: str = "l1"

    def validate(self) -> "TrainConfig":
        if self.setting not in ("A", "B"):
            raise ConfigError(f"setting must be A or B, got {self.setting!r}")
        if self.victim not in ("text", "visual"):
            raise ConfigError(f"victim must be text or visual, got {self.victim!r}")
        if not 0.0 <= self.p <= 1.0:
            raise ConfigError(f"p must be in [0, 1], got {self.p}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if not self.lr > 0:
            raise ConfigError("lr must be > 0")
        if not 0.0 < self.lam < 1.0:
            raise ConfigError("lam must be in (0, 1)")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if not TAU_MIN <= self.tau <= TAU_MAX:
            raise ConfigError(f"tau must be in [{TAU_MIN}, {TAU_MAX}]")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}")
        if self.task_loss not in TASK_LOSSES:
            raise ConfigError(f"unknown task_loss {self.task_loss!r}")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        syn = d.pop("synthetic", None)
        cfg = cls(**d)
        if syn is not None:
            syn_known = {f.name for f in fields(SyntheticConfig)}
            if set(syn) - syn_known:
                raise ConfigError(f"unknown synthetic keys: {sorted(set(syn) - syn_known)}")
            cfg.synthetic = SyntheticConfig(**syn)
        return cfg


@dataclass
class EpochRecord:
    epoch: int
    task_loss: float
    sml_text: float
    sml_visual: float
    sml: float
    total: float
    val_metric: float
    tau: float
    seconds: float


@dataclass
class TrainLog:
    epochs: List[EpochRecord] = field(default_factory=list)
    best_epoch: Optional[int] = None
    val_metric_name: str = "mae"

    CSV_FIELDS = ("epoch", "task_loss", "sml_text", "sml_visual", "sml", "total", "val_metric", "tau")

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_FIELDS)
        for e in self.epochs:
            w.writerow([e.epoch] + [repr(float(getattr(e, k))) for k in self.CSV_FIELDS[1:]])
        return buf.getvalue()


def load_data(config: TrainConfig) -> EmbeddingDataset:
    if config.data:
        return load_dataset(config.data)
    return generate_synthetic(config.synthetic)


def hyper_for(config: TrainConfig, ds: EmbeddingDataset) -> Hyper:
    out_dim = ds.class_count if ds.task == "classification" else 1
    return Hyper(
        d=ds.d, task=ds.task, out_dim=out_dim, lam=config.lam, alpha=config.alpha,
        tau_learnable=config.tau_learnable, task_loss=config.task_loss, ablation=config.ablation,
    )


def train(config: TrainConfig, dataset: Optional[EmbeddingDataset] = None,
          plan: Optional[MissingnessPlan] = None):
    """Train per ``config``; returns (best-epoch params, log).

    The missingness plan is fixed for the whole run and seeded by
    ``config.seed``, as are the initialization and per-epoch shuffles.
    """
    from .evaluation import evaluate, selection_metric  # evaluation imports trainer

    config.validate()
    ds = dataset if dataset is not None else load_data(config)
    if plan is None:
        plan = build_missingness_plan(ds, config.setting, config.victim, config.p, config.seed)
    params = init_params(hyper_for(config, ds), config.seed, config.tau)
    has_valid = ds.split_size("valid") > 0
    val_split = "valid" if has_valid else "train"

    tlog = TrainLog(val_metric_name="mae" if ds.task == "regression" else "acc")
    best: Optional[ModelParams] = None
    best_score = math.inf
    for epoch in range(config.epochs):
        t0 = time.perf_counter()
        sums = np.zeros(5)
        count = 0
        for batch in iterate_batches(ds, plan, config.batch_size, epoch_seed=config.seed * 1_000_003 + epoch):
            last_good = params.copy()
            obj = make_objective(batch, params)
            try:
                loss = evaluate_with_gradients(obj, params.store)
            except NonFiniteError as exc:
                raise DivergenceError(f"epoch {epoch}: {exc}", last_good, tlog) from exc
            if abs(loss) > DIVERGENCE_LIMIT:
                raise DivergenceError(f"epoch {epoch}: loss {loss:.3g} exceeds {DIVERGENCE_LIMIT:g}", last_good, tlog)
            adam_step(params.store, config.lr)
            bd = obj.last_breakdown
            n = len(batch)
            sums += n * np.array([bd.task, bd.sml_text, bd.sml_visual, bd.sml, bd.total])
            count += n
        means = sums / max(count, 1)
        report = evaluate(params, ds, plan, val_split)
        score = selection_metric(report, ds.task)
        rec = EpochRecord(epoch, *means.tolist(), report.primary(ds.task), params.tau, time.perf_counter() - t0)
        tlog.epochs.append(rec)
        if score < best_score:
            best_score = score
            best = params.copy()
            tlog.best_epoch = epoch
        log.debug("epoch %d total %.5f val %.5f tau %.4f", epoch, rec.total, rec.val_metric, rec.tau)
    return (best if best is not None else params), tlog


def sweep_tau(config: TrainConfig, values: Sequence[float], split: str = "test",
              dataset: Optional[EmbeddingDataset] = None) -> List[dict]:
    """One fixed-τ training run per value, same seed; returns rows of test metrics."""
    from .evaluation import evaluate

    values = list(values)
    if not values:
        raise ConfigError("tau sweep needs at least one value")
    for v in values:
        if not TAU_MIN <= v <= TAU_MAX:
            raise ConfigError(f"tau value {v} outside [{TAU_MIN}, {TAU_MAX}]")
    ds = dataset if dataset is not None else load_data(config)
    plan = build_missingness_plan(ds, config.setting, config.victim, config.p, config.seed)
    rows = []
    for v in values:
        cfg = TrainConfig.from_dict({**config.to_dict(), "tau": float(v), "tau_learnable": False})
        params, _ = train(cfg, ds, plan)
        rep = evaluate(params, ds, plan, split)
        rows.append({"tau": float(v), "mae": rep.mae, "acc2": rep.acc2, "acc": rep.acc, "n": rep.n})
    return rows


# -- checkpoint file -----------------------------------------------------


def save_checkpoint(params: ModelParams, path, config: Optional[dict] = None) -> None:
    lines = [CHECKPOINT_HEADER]
    for name, p in params.store:
        r, c = p.value.shape
        vals = " ".join(f"{x:.17g}" for x in p.value.ravel())
        lines.append(f"{name} {r} {c} {vals}")
    lines.append(f"#hyper {json.dumps(asdict(params.hyper), sort_keys=True)}")
    lines.append(f"#step_count {params.store.step_count}")
    for k, v in sorted((config or {}).items()):
        lines.append(f"#config {k} = {json.dumps(v, sort_keys=True)}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path) -> ModelParams:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    text = path.read_text().splitlines()
    if not text or text[0].strip() != CHECKPOINT_HEADER:
        raise DataError(f"{path}: missing '{CHECKPOINT_HEADER}' header")
    store = ParamStore()
    hyper = None
    for line in text[1:]:
        if line.startswith("#hyper "):
            hyper = Hyper(**json.loads(line[len("#hyper "):]))
        elif line.startswith("#step_count "):
            store.step_count = int(line.split()[1])
        elif line.startswith("#") or not line.strip():
            continue
        else:
            parts = line.split()
            name, r, c = parts[0], int(parts[1]), int(parts[2])
            vals = np.array([float(x) for x in parts[3:]])
            if vals.size != r * c:
                raise DataError(f"{path}: parameter {name} has {vals.size} values, expected {r * c}")
            store.add(name, vals.reshape(r, c))
    if hyper is None:
        raise DataError(f"{path}: missing #hyper line")
    return ModelParams(store, hyper)
