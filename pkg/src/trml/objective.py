"""Semantic-matching contrastive loss, task losses and the total objective.

Within a mini-batch, each original embedding should be most similar to its
own virtual counterpart. Similarities are cosines scaled by 1/τ, softmaxed
along rows and along columns, and scored by cross-entropy against the
identity; the two directions are averaged.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from .dataset import Batch
from .errors import ConfigError, DataError
from .model import ABLATIONS, TAU_MAX, TAU_MIN, ForwardResult, ModelParams, backward_batch, forward_batch
from .numkernel import ParamStore

NORM_FLOOR = 1e-12


@dataclass
class NormalizedSimilarities:
    y_row: np.ndarray
    y_col: np.ndarray


@dataclass
class LossBreakdown:
    task: float
    sml_text: float
    sml_visual: float
    sml: float
    total: float
    complete_count: int


def _unit_rows(A: np.ndarray, name: str):
    norms = np.linalg.norm(A, axis=1, keepdims=True)
    bad = np.flatnonzero(norms[:, 0] < NORM_FLOOR)
    if len(bad):
        raise DataError(f"{name} row {bad[0]} has zero norm")
    return A / norms, norms


def cosine_similarity_matrix(A, B) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=np.float64))
    B = np.atleast_2d(np.asarray(B, dtype=np.float64))
    Au, _ = _unit_rows(A, "A")
    Bu, _ = _unit_rows(B, "B")
    return np.clip(Au @ Bu.T, -1.0, 1.0)


def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def normalize_similarity(S, tau: float) -> NormalizedSimilarities:
    S = np.asarray(S, dtype=np.float64)
    if S.shape[0] < 2:
        raise ValueError("contrastive normalization needs N >= 2")
    if not TAU_MIN <= tau <= TAU_MAX:
        raise ConfigError(f"tau must be in [{TAU_MIN}, {TAU_MAX}], got {tau}")
    return NormalizedSimilarities(_softmax(S / tau, axis=1), _softmax(S / tau, axis=0))


def sml_pair_with_grad(original, virtual, tau: float) -> Tuple[float, np.ndarray, np.ndarray, float]:
    """Symmetric matching loss and its partials w.r.t. both inputs and τ."""
    original = np.asarray(original, dtype=np.float64)
    virtual = np.asarray(virtual, dtype=np.float64)
    N = original.shape[0]
    if N < 2:
        raise ValueError("semantic matching loss needs N >= 2")
    Ou, on = _unit_rows(original, "original")
    Vu, vn = _unit_rows(virtual, "virtual")
    # unclipped here: the clip in cosine_similarity_matrix only guards rounding
    S = Ou @ Vu.T
    y = normalize_similarity(S, tau)
    diag = np.arange(N)
    loss = 0.5 * (np.mean(-np.log(y.y_row[diag, diag])) + np.mean(-np.log(y.y_col[diag, diag])))

    eye = np.eye(N)
    d_logits = 0.5 * ((y.y_row - eye) + (y.y_col - eye)) / N
    dS = d_logits / tau
    d_tau = -float(np.sum(d_logits * S)) / (tau * tau)
    dOu = dS @ Vu
    dVu = dS.T @ Ou
    d_orig = (dOu - Ou * np.sum(dOu * Ou, axis=1, keepdims=True)) / on
    d_virt = (dVu - Vu * np.sum(dVu * Vu, axis=1, keepdims=True)) / vn
    return float(loss), d_orig, d_virt, d_tau


def semantic_matching_loss_pair(original, virtual, tau: float) -> float:
    return sml_pair_with_grad(original, virtual, tau)[0]


def combine_sml(L_t: float, L_v: float, lam: float) -> float:
    if not 0.0 < lam < 1.0:
        raise ConfigError(f"lambda must be in (0, 1), got {lam}")
    return lam * L_t + (1.0 - lam) * L_v


def apply_ablation(variant: str, lam: float, alpha: float) -> Tuple[float, float, float]:
    """Return (text weight, visual weight, alpha) for an ablation variant.

    Dropping one matching term keeps the other term's coefficient as is.
    """
    if variant not in ABLATIONS:
        raise ConfigError(f"unknown ablation variant {variant!r}")
    if not 0.0 < lam < 1.0:
        raise ConfigError(f"lambda must be in (0, 1), got {lam}")
    w_t, w_v = lam, 1.0 - lam
    if variant == "no_sml_text":
        w_t = 0.0
    elif variant == "no_sml_visual":
        w_v = 0.0
    elif variant == "no_sml":
        alpha = 0.0
    return w_t, w_v, alpha


def task_loss_with_grad(outputs, labels, task: str, variant: str = "l1") -> Tuple[float, np.ndarray]:
    outputs = np.atleast_2d(np.asarray(outputs, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.float64)
    N = outputs.shape[0]
    if labels.shape != (N,):
        raise ValueError(f"labels shape {labels.shape} does not match {N} predictions")
    if task == "regression":
        r = outputs[:, 0] - labels
        if variant == "l1":
            loss, g = np.mean(np.abs(r)), np.sign(r) / N
        elif variant == "mse":
            loss, g = np.mean(r * r), 2.0 * r / N
        else:
            raise ConfigError(f"unknown task loss {variant!r}")
        return float(loss), g[:, None]
    if task == "classification":
        C = outputs.shape[1]
        cls = labels.astype(np.int64)
        if np.any(cls != labels) or np.any(cls < 0) or np.any(cls >= C):
            raise DataError(f"class label outside 0..{C - 1}")
        z = outputs - outputs.max(axis=1, keepdims=True)
        logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
        loss = -np.mean(logp[np.arange(N), cls])
        g = np.exp(logp)
        g[np.arange(N), cls] -= 1.0
        return float(loss), g / N
    raise ConfigError(f"unknown task {task!r}")


def task_loss(predictions, labels, task: str, variant: str = "l1") -> float:
    return task_loss_with_grad(predictions, labels, task, variant)[0]


def _tau_chain(params: ModelParams) -> float:
    """d tau / d log_tau, zero when clamped or frozen."""
    if not params.hyper.tau_learnable:
        return 0.0
    raw = math.exp(float(params.store["log_tau"][0, 0]))
    return raw if TAU_MIN < raw < TAU_MAX else 0.0


def objective_with_grads(result: ForwardResult, labels, params: ModelParams,
                         need_grads: bool = True) -> Tuple[LossBreakdown, Dict[str, np.ndarray]]:
    """Task loss over all samples plus α·SML over the complete (mode c) ones."""
    hp = params.hyper
    task, d_out = task_loss_with_grad(result.outputs, labels, hp.task, hp.task_loss)
    w_t, w_v, alpha = apply_ablation(hp.ablation, hp.lam, hp.alpha)

    rows = result.complete_rows
    N, d = result.fused.shape
    L_t = L_v = sml = 0.0
    d_xv = np.zeros((N, d))
    d_vt = np.zeros((N, d))
    d_vv = np.zeros((N, d))
    d_log_tau = 0.0
    if len(rows) >= 2:
        tau = params.tau
        L_t, _, g_vt, dtau_t = sml_pair_with_grad(result.x_t[rows], result.virtual_t[rows], tau)
        L_v, g_xv, g_vv, dtau_v = sml_pair_with_grad(result.x_v[rows], result.virtual_v[rows], tau)
        sml = w_t * L_t + w_v * L_v
        d_vt[rows] = alpha * w_t * g_vt
        d_xv[rows] = alpha * w_v * g_xv
        d_vv[rows] = alpha * w_v * g_vv
        d_log_tau = alpha * (w_t * dtau_t + w_v * dtau_v) * _tau_chain(params)
    total = task + alpha * sml
    breakdown = LossBreakdown(task, L_t, L_v, sml, total, int(len(rows)))
    if not need_grads:
        return breakdown, {}
    grads = backward_batch(result, params, d_out, d_xv, d_vt, d_vv)
    grads["log_tau"] = np.array([[d_log_tau]])
    return breakdown, grads


def total_objective(result: ForwardResult, labels, params: ModelParams) -> LossBreakdown:
    return objective_with_grads(result, labels, params, need_grads=False)[0]


def make_objective(batch: Batch, params: ModelParams):
    """Closure for :func:`trml.numkernel.evaluate_with_gradients` / ``grad_check``."""
    hyper = params.hyper

    def objective(store: ParamStore):
        p = ModelParams(store, hyper)
        res = forward_batch(batch, p)
        bd, grads = objective_with_grads(res, batch.labels, p)
        objective.last_breakdown = bd
        return bd.total, grads

    objective.last_breakdown = None
    return objective
