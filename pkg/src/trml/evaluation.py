"""Test-time metrics, paired t-tests and CSV exports for inspection plots."""
from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .dataset import EmbeddingDataset, MissingnessPlan, make_batch
from .errors import DataError
from .model import ModelParams, forward_batch, generate_virtual_text, generate_virtual_visual, temporal_encode
from .objective import cosine_similarity_matrix

EXPORT_HEADER = "#trml-export v1"
EVAL_CHUNK = 256


@dataclass
class MetricsReport:
    mae: Optional[float]
    acc2: Optional[float]
    acc: Optional[float]
    ids: List[str]
    predictions: np.ndarray  # regression: scores; classification: predicted class
    labels: np.ndarray
    split: str = "test"

    @property
    def n(self) -> int:
        return len(self.ids)

    def primary(self, task: str) -> float:
        return self.mae if task == "regression" else self.acc

    def summary(self) -> str:
        parts = [f"split={self.split}", f"n={self.n}"]
        for k in ("mae", "acc2", "acc"):
            v = getattr(self, k)
            if v is not None:
                parts.append(f"{k}={v:.6f}")
        return " ".join(parts)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["split", "n", "mae", "acc2", "acc"])
        w.writerow([self.split, self.n] + ["" if v is None else repr(float(v)) for v in (self.mae, self.acc2, self.acc)])
        return buf.getvalue()

    def predictions_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["id", "label", "prediction", "abs_error"])
        for i, y, p in zip(self.ids, self.labels, self.predictions):
            w.writerow([i, repr(float(y)), repr(float(p)), repr(float(abs(p - y)))])
        return buf.getvalue()


def mean_absolute_error(pred, labels) -> float:
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    return float(math.fsum(np.abs(pred - labels)) / len(pred))


def binary_accuracy(pred, labels) -> float:
    """Sign agreement over samples whose true label is non-zero (nan if none)."""
    pred = np.asarray(pred, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    keep = labels != 0
    if not np.any(keep):
        return float("nan")
    return float(np.mean(np.sign(pred[keep]) == np.sign(labels[keep])))


def selection_metric(report: MetricsReport, task: str) -> float:
    """Lower is better."""
    return report.mae if task == "regression" else -report.acc


def evaluate(params: ModelParams, ds: EmbeddingDataset, plan: MissingnessPlan, split: str = "test") -> MetricsReport:
    if ds.d != params.hyper.d:
        raise DataError(f"dataset dimension {ds.d} does not match checkpoint dimension {params.hyper.d}")
    idx = ds.split_indices(split)
    if not idx:
        raise DataError(f"split {split!r} is empty")
    outs = []
    for start in range(0, len(idx), EVAL_CHUNK):
        batch = make_batch(ds, idx[start:start + EVAL_CHUNK], plan)
        outs.append(forward_batch(batch, params).outputs)
    out = np.concatenate(outs, axis=0)
    ids = [ds.records[i].id for i in idx]
    labels = np.array([ds.records[i].label for i in idx])
    if params.hyper.task == "regression":
        pred = out[:, 0]
        return MetricsReport(mean_absolute_error(pred, labels), binary_accuracy(pred, labels), None,
                             ids, pred, labels, split)
    pred = np.argmax(out, axis=1).astype(np.float64)
    return MetricsReport(None, None, float(np.mean(pred == labels)), ids, pred, labels, split)


# -- paired t-test -------------------------------------------------------


def _betacf(a: float, b: float, x: float, max_iter: int = 300, eps: float = 3e-16) -> float:
    """Continued fraction for the incomplete beta function (modified Lentz)."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    d = tiny if abs(d) < tiny else d
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        d = tiny if abs(d) < tiny else d
        c = 1.0 + aa / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError("incomplete beta continued fraction did not converge")


def regularized_incomplete_beta(x: float, a: float, b: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"x must be in [0, 1], got {x}")
    if x == 0.0 or x == 1.0:
        return x
    log_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                 + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(log_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


@dataclass
class TTestResult:
    t: float
    df: int
    p_two_tailed: float
    mean_diff: float


def student_t_two_tailed(t: float, df: int) -> float:
    if math.isinf(t):
        return 0.0
    p = regularized_incomplete_beta(df / (df + t * t), 0.5 * df, 0.5)
    return min(max(p, 0.0), 1.0)


def paired_ttest(a: Sequence[float], b: Sequence[float]) -> TTestResult:
    """Two-tailed paired Student t-test on a - b."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired t-test needs two equal-length series")
    n = a.size
    if n < 2:
        raise ValueError("paired t-test needs n >= 2")
    diff = a - b
    mean = math.fsum(diff) / n
    if np.all(diff == 0):
        return TTestResult(0.0, n - 1, 1.0, 0.0)
    var = math.fsum((diff - mean) ** 2) / (n - 1)
    if var == 0.0:
        t = math.copysign(math.inf, mean)
    else:
        t = mean / math.sqrt(var / n)
    return TTestResult(t, n - 1, student_t_two_tailed(t, n - 1), mean)


# -- exports -------------------------------------------------------------


def full_representations(params: ModelParams, ds: EmbeddingDataset, ids: Sequence[str]) -> Dict[str, np.ndarray]:
    """x_t, x_v and both virtual vectors for each sample, ignoring any plan."""
    xt, xv = [], []
    for sid in ids:
        r = ds.records[ds.index_of(sid)]
        if r.present_frames == 0:
            raise DataError(f"sample {sid!r} has no present frames")
        xt.append(r.text)
        xv.append(temporal_encode(params, r.frames, r.frame_mask))
    xt = np.array(xt)
    xv = np.array(xv)
    return {
        "text": xt,
        "visual": xv,
        "virtual_text": np.atleast_2d(generate_virtual_text(params, xv)),
        "virtual_visual": np.atleast_2d(generate_virtual_visual(params, xt)),
    }


HEATMAP_PAIRS = {
    "text_virtual": ("text", "virtual_text"),
    "visual_virtual": ("visual", "virtual_visual"),
    "cross": ("text", "visual"),
    "text_self": ("text", "text"),
    "visual_self": ("visual", "visual"),
}


def _matrix_csv(kind: str, ids: Sequence[str], M: np.ndarray) -> str:
    buf = io.StringIO()
    buf.write(f"{EXPORT_HEADER} kind=heatmap pair={kind}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", *ids])
    for sid, row in zip(ids, M):
        w.writerow([sid, *(repr(float(x)) for x in row)])
    return buf.getvalue()


def similarity_heatmaps(params: ModelParams, ds: EmbeddingDataset, sample_ids: Sequence[str]) -> Dict[str, np.ndarray]:
    if len(sample_ids) < 2:
        raise DataError("heatmap export needs at least 2 sample ids")
    reps = full_representations(params, ds, sample_ids)
    return {k: cosine_similarity_matrix(reps[a], reps[b]) for k, (a, b) in HEATMAP_PAIRS.items()}


def export_similarity_heatmap(params: ModelParams, ds: EmbeddingDataset, sample_ids: Sequence[str], out_dir) -> Dict[str, Path]:
    """Write one cosine-similarity CSV per representation pair; returns their paths."""
    mats = similarity_heatmaps(params, ds, sample_ids)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for kind, M in mats.items():
        p = out_dir / f"heatmap_{kind}.csv"
        p.write_text(_matrix_csv(kind, sample_ids, M))
        paths[kind] = p
    return paths


def project_2d(X, rank_tol: float = 1e-12):
    """Center X and project onto its top two principal directions.

    Each component's sign is chosen so its largest-magnitude coordinate is
    positive. Returns (coords (n, 2), rank_deficient flag).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] < 3:
        raise DataError("projection needs at least 3 points")
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (X.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    top = max(evals[0], 0.0)
    coords = np.zeros((X.shape[0], 2))
    deficient = False
    for k in range(2):
        if k >= len(evals) or evals[k] <= rank_tol * max(top, 1.0):
            deficient = True
            continue
        c = Xc @ evecs[:, k]
        coords[:, k] = -c if c[np.argmax(np.abs(c))] < 0 else c
    return coords, deficient


def export_projection_2d(params: ModelParams, ds: EmbeddingDataset, split: str, path) -> np.ndarray:
    """Write (id, modality, x, y) rows for original and virtual representations."""
    ids = [ds.records[i].id for i in ds.split_indices(split) if ds.records[i].present_frames > 0]
    reps = full_representations(params, ds, ids)
    tags = ("text", "virtual_text", "visual", "virtual_visual")
    X = np.concatenate([reps[t] for t in tags], axis=0)
    coords, deficient = project_2d(X)
    if deficient:
        warnings.warn("representations have rank < 2; second coordinate set to 0")
    buf = io.StringIO()
    buf.write(f"{EXPORT_HEADER} kind=projection rank_deficient={int(deficient)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "modality", "x", "y"])
    n = len(ids)
    for t, tag in enumerate(tags):
        for i, sid in enumerate(ids):
            x, y = coords[t * n + i]
            w.writerow([sid, tag, repr(float(x)), repr(float(y))])
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(buf.getvalue())
    return coords

