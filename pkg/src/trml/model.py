"""Forward and backward passes of the robust multimodal model.

Per sample the model builds a text vector x_t (given), a visual vector x_v
(Elman RNN over frames), and virtual stand-ins produced from the other
modality: virtual text from x_v, virtual visual from x_t. Fusion adds the
text-side and visual-side vectors, substituting a virtual one for whichever
modality is missing, and a two-layer head makes the prediction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .dataset import MODE_C, MODE_MT, MODE_MV, Batch
from .errors import ConfigError, DataError
from .numkernel import ParamStore, Rng, check_finite, uniform_init

TAU_MIN = 0.01
TAU_MAX = 1.0
ABLATIONS = ("none", "no_sml_text", "no_sml_visual", "no_sml")
TASK_LOSSES = ("l1", "mse")


@dataclass
class Hyper:
    d: int
    task: str = "regression"
    out_dim: int = 1
    h_head: Optional[int] = None
    lam: float = 0.1
    alpha: float = 0.5
    tau_learnable: bool = True
    task_loss: str = "l1"
    ablation: str = "none"

    def __post_init__(self):
        if self.h_head is None:
            self.h_head = math.ceil(self.d / 2)
        if self.task not in ("regression", "classification"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.task == "regression" and self.out_dim != 1:
            raise ConfigError("regression head must have out_dim 1")
        if not 0.0 < self.lam < 1.0:
            raise ConfigError(f"lambda must be in (0, 1), got {self.lam}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.task_loss not in TASK_LOSSES:
            raise ConfigError(f"unknown task loss {self.task_loss!r}")
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation variant {self.ablation!r}")


@dataclass
class ModelParams:
    store: ParamStore
    hyper: Hyper

    @property
    def tau(self) -> float:
        return clamp_tau(float(self.store["log_tau"][0, 0]))

    def copy(self) -> "ModelParams":
        return ModelParams(self.store.copy(), Hyper(**vars(self.hyper)))


def clamp_tau(log_tau: float) -> float:
    return min(max(math.exp(log_tau), TAU_MIN), TAU_MAX)


def init_params(hyper: Hyper, seed: int, tau: float = 0.1) -> ModelParams:
    """Uniform ±1/sqrt(fan_in) weights, zero biases."""
    if not TAU_MIN <= tau <= TAU_MAX:
        raise ConfigError(f"tau must be in [{TAU_MIN}, {TAU_MAX}], got {tau}")
    d, h, o = hyper.d, hyper.h_head, hyper.out_dim
    shapes = {
        "rnn.W_in": (d, d), "rnn.W_hh": (d, d),
        "v2t.W1": (d, d), "v2t.W2": (d, d),
        "t2v.W1": (d, d), "t2v.W2": (d, d),
        "head.H1": (d, h), "head.H2": (h, o),
    }
    biases = {
        "rnn.b": d, "v2t.b1": d, "v2t.b2": d, "t2v.b1": d, "t2v.b2": d,
        "head.b1": h, "head.b2": o,
    }
    rng = Rng(seed)
    store = ParamStore()
    for k, name in enumerate(sorted(shapes)):
        rows, cols = shapes[name]
        store.add(name, uniform_init(rng.child(k), rows, rows, cols))
    for name, n in biases.items():
        store.add(name, np.zeros((1, n)))
    store.add("log_tau", [[math.log(tau)]])
    return ModelParams(store, hyper)


# -- temporal encoder ----------------------------------------------------


def pad_frames(frames: Sequence[np.ndarray], masks: Sequence[Optional[np.ndarray]]):
    n = len(frames)
    T = max(f.shape[0] for f in frames)
    d = frames[0].shape[1]
    X = np.zeros((n, T, d))
    M = np.zeros((n, T), dtype=bool)
    for i, (f, m) in enumerate(zip(frames, masks)):
        X[i, :f.shape[0]] = f
        M[i, :f.shape[0]] = True if m is None else np.asarray(m, dtype=bool)
    return X, M


def elman_forward(X, M, W_in, W_hh, b):
    """Run h <- tanh(x W_in + h W_hh + b) over present frames; masked frames leave h unchanged."""
    n, T, d = X.shape
    h = np.zeros((n, W_hh.shape[0]))
    steps = []
    for k in range(T):
        a = X[:, k] @ W_in + h @ W_hh + b
        hn = np.tanh(a)
        m = M[:, k:k + 1]
        steps.append((h, hn, m))
        h = np.where(m, hn, h)
    return h, steps


def elman_backward(dh, X, steps, W_hh):
    dW_in = np.zeros((X.shape[2], W_hh.shape[0]))
    dW_hh = np.zeros_like(W_hh)
    db = np.zeros((1, W_hh.shape[0]))
    for k in range(len(steps) - 1, -1, -1):
        h_prev, hn, m = steps[k]
        da = np.where(m, dh, 0.0) * (1.0 - hn * hn)
        dW_in += X[:, k].T @ da
        dW_hh += h_prev.T @ da
        db += da.sum(axis=0, keepdims=True)
        dh = np.where(m, 0.0, dh) + da @ W_hh.T
    return dW_in, dW_hh, db


def temporal_encode(params: ModelParams, frames, frame_mask=None) -> np.ndarray:
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frame_mask is not None and not np.any(frame_mask):
        raise DataError("temporal_encode needs at least one present frame")
    X, M = pad_frames([frames], [frame_mask])
    s = params.store
    h, _ = elman_forward(X, M, s["rnn.W_in"], s["rnn.W_hh"], s["rnn.b"])
    return h[0]


# -- generators and head -------------------------------------------------


def mlp_forward(x, W1, b1, W2, b2):
    a = x @ W1 + b1
    r = np.maximum(a, 0.0)
    return r @ W2 + b2, (x, a, r)


def mlp_backward(dy, cache, W1, W2):
    x, a, r = cache
    dW2 = r.T @ dy
    db2 = dy.sum(axis=0, keepdims=True)
    da = (dy @ W2.T) * (a > 0)
    dW1 = x.T @ da
    db1 = da.sum(axis=0, keepdims=True)
    dx = da @ W1.T
    return dx, dW1, db1, dW2, db2


def _gen(params: ModelParams, prefix: str, x):
    s = params.store
    return mlp_forward(np.atleast_2d(x), s[prefix + ".W1"], s[prefix + ".b1"], s[prefix + ".W2"], s[prefix + ".b2"])


def generate_virtual_text(params: ModelParams, x_v) -> np.ndarray:
    """Virtual text vector prompted by the visual vector."""
    y, _ = _gen(params, "v2t", x_v)
    return y[0] if np.ndim(x_v) == 1 else y


def generate_virtual_visual(params: ModelParams, x_t) -> np.ndarray:
    y, _ = _gen(params, "t2v", x_t)
    return y[0] if np.ndim(x_t) == 1 else y


def predict(params: ModelParams, x) -> np.ndarray:
    """Head output: scalar per sample for regression, class logits otherwise."""
    s = params.store
    y, _ = mlp_forward(np.atleast_2d(x), s["head.H1"], s["head.b1"], s["head.H2"], s["head.b2"])
    return y[0] if np.ndim(x) == 1 else y


# -- fusion --------------------------------------------------------------


@dataclass
class ModalityBundle:
    mode: str
    x_t: Optional[np.ndarray] = None
    x_v: Optional[np.ndarray] = None
    virtual_t: Optional[np.ndarray] = None
    virtual_v: Optional[np.ndarray] = None


_FUSION_FIELDS = {
    MODE_C: ("x_t", "x_v"),
    MODE_MV: ("x_t", "virtual_v"),
    MODE_MT: ("virtual_t", "x_v"),
}


def fuse(bundle: ModalityBundle) -> np.ndarray:
    try:
        left, right = _FUSION_FIELDS[bundle.mode]
    except KeyError:
        raise ValueError(f"unknown fusion mode {bundle.mode!r}") from None
    a, b = getattr(bundle, left), getattr(bundle, right)
    if a is None or b is None:
        raise ValueError(f"mode {bundle.mode} needs {left} and {right}")
    return np.asarray(a) + np.asarray(b)


# -- batch forward/backward ----------------------------------------------


@dataclass
class ForwardResult:
    modes: List[str]
    x_t: np.ndarray  # (N, d), all rows
    x_v: np.ndarray  # rows in v_rows valid, zeros elsewhere
    virtual_t: np.ndarray  # rows in v_rows valid
    virtual_v: np.ndarray  # rows in vbar_rows valid
    fused: np.ndarray
    outputs: np.ndarray  # (N, out_dim)
    v_rows: np.ndarray
    vbar_rows: np.ndarray
    cache: dict = field(repr=False, default_factory=dict)

    @property
    def complete_rows(self) -> np.ndarray:
        return np.flatnonzero(np.array([m == MODE_C for m in self.modes], dtype=bool))

    def bundles(self) -> List[ModalityBundle]:
        v, vb = set(self.v_rows.tolist()), set(self.vbar_rows.tolist())
        out = []
        for i, mode in enumerate(self.modes):
            out.append(ModalityBundle(
                mode,
                x_t=self.x_t[i] if mode != MODE_MT else None,
                x_v=self.x_v[i] if i in v else None,
                virtual_t=self.virtual_t[i] if i in v else None,
                virtual_v=self.virtual_v[i] if i in vb else None,
            ))
        return out


def forward_batch(batch: Batch, params: ModelParams) -> ForwardResult:
    s = params.store
    modes = list(batch.modes)
    N, d = batch.text.shape
    if d != params.hyper.d:
        raise DataError(f"embedding dimension {d} does not match model dimension {params.hyper.d}")
    mode_arr = np.array(modes)
    v_rows = np.flatnonzero(mode_arr != MODE_MV)
    vbar_rows = np.flatnonzero(mode_arr != MODE_MT)
    mt_rows = np.flatnonzero(mode_arr == MODE_MT)

    x_t = np.where((mode_arr == MODE_MT)[:, None], 0.0, batch.text)
    x_v = np.zeros((N, d))
    virtual_t = np.zeros((N, d))
    virtual_v = np.zeros((N, d))
    cache = {}

    if len(v_rows):
        X, M = pad_frames([batch.frames[i] for i in v_rows], [batch.masks[i] for i in v_rows])
        if not np.all(M.any(axis=1)):
            raise DataError("a sample routed to the visual branch has no present frames")
        h, steps = elman_forward(X, M, s["rnn.W_in"], s["rnn.W_hh"], s["rnn.b"])
        check_finite("x_v", h)
        x_v[v_rows] = h
        vt, gcache = mlp_forward(h, s["v2t.W1"], s["v2t.b1"], s["v2t.W2"], s["v2t.b2"])
        check_finite("virtual_text", vt)
        virtual_t[v_rows] = vt
        cache["rnn"] = (X, steps)
        cache["v2t"] = gcache
    if len(vbar_rows):
        vv, gcache = mlp_forward(batch.text[vbar_rows], s["t2v.W1"], s["t2v.b1"], s["t2v.W2"], s["t2v.b2"])
        check_finite("virtual_visual", vv)
        virtual_v[vbar_rows] = vv
        cache["t2v"] = gcache

    text_side = x_t.copy()
    text_side[mt_rows] = virtual_t[mt_rows]
    visual_side = x_v.copy()
    mv_rows = np.flatnonzero(mode_arr == MODE_MV)
    visual_side[mv_rows] = virtual_v[mv_rows]
    fused = text_side + visual_side
    check_finite("fused", fused)

    outputs, hcache = mlp_forward(fused, s["head.H1"], s["head.b1"], s["head.H2"], s["head.b2"])
    check_finite("outputs", outputs)
    cache["head"] = hcache
    return ForwardResult(modes, x_t, x_v, virtual_t, virtual_v, fused, outputs, v_rows, vbar_rows, cache)


def backward_batch(
    result: ForwardResult,
    params: ModelParams,
    d_outputs: np.ndarray,
    d_x_v: Optional[np.ndarray] = None,
    d_virtual_t: Optional[np.ndarray] = None,
    d_virtual_v: Optional[np.ndarray] = None,
) -> Dict[str, np.ndarray]:
    """Gradients of a scalar loss given its partials w.r.t. head outputs and
    (optionally) the per-sample representations, all as (N, ·) arrays."""
    s = params.store
    N, d = result.fused.shape
    mode_arr = np.array(result.modes)
    grads: Dict[str, np.ndarray] = {}

    d_fused, grads["head.H1"], grads["head.b1"], grads["head.H2"], grads["head.b2"] = mlp_backward(
        d_outputs, result.cache["head"], s["head.H1"], s["head.H2"])

    gx_v = np.zeros((N, d)) if d_x_v is None else d_x_v.copy()
    gvt = np.zeros((N, d)) if d_virtual_t is None else d_virtual_t.copy()
    gvv = np.zeros((N, d)) if d_virtual_v is None else d_virtual_v.copy()
    is_mt = (mode_arr == MODE_MT)[:, None]
    is_mv = (mode_arr == MODE_MV)[:, None]
    gx_v += np.where(is_mv, 0.0, d_fused)
    gvt += np.where(is_mt, d_fused, 0.0)
    gvv += np.where(is_mv, d_fused, 0.0)

    for prefix in ("v2t", "t2v", "rnn"):
        for name in s.names():
            if name.startswith(prefix + "."):
                grads[name] = np.zeros_like(s[name])

    v_rows, vbar_rows = result.v_rows, result.vbar_rows
    if len(vbar_rows):
        _, grads["t2v.W1"], grads["t2v.b1"], grads["t2v.W2"], grads["t2v.b2"] = mlp_backward(
            gvv[vbar_rows], result.cache["t2v"], s["t2v.W1"], s["t2v.W2"])
    if len(v_rows):
        dh, grads["v2t.W1"], grads["v2t.b1"], grads["v2t.W2"], grads["v2t.b2"] = mlp_backward(
            gvt[v_rows], result.cache["v2t"], s["v2t.W1"], s["v2t.W2"])
        dh = dh + gx_v[v_rows]
        X, steps = result.cache["rnn"]
        grads["rnn.W_in"], grads["rnn.W_hh"], grads["rnn.b"] = elman_backward(dh, X, steps, s["rnn.W_hh"])
    return grads
