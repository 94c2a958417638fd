"""Dense float64 kernel: parameter storage, Adam, gradient checking, seeded RNG.

Matrices are plain 2-D ``numpy.float64`` arrays; vectors are kept as 1×d
rows so every parameter has a (rows, cols) shape.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, Mapping, Tuple

import numpy as np

from .errors import ConfigError, NonFiniteError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

Objective = Callable[["ParamStore"], Tuple[float, Mapping[str, np.ndarray]]]


def as_matrix(x) -> np.ndarray:
    a = np.array(x, dtype=np.float64)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(1, -1)
    elif a.ndim != 2:
        raise ValueError(f"expected at most 2 dimensions, got {a.ndim}")
    return a


def check_finite(name: str, x) -> None:
    if not np.all(np.isfinite(x)):
        raise NonFiniteError(name)


class Rng:
    """Seeded generator; a thin wrapper over numpy's PCG64 bit generator.

    ``child(*keys)`` derives an independent stream from the seed and the
    keys only, so consumers do not depend on each other's call order.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, *keys: int) -> "Rng":
        r = Rng.__new__(Rng)
        r.seed = self.seed
        r._gen = np.random.Generator(np.random.PCG64([self.seed, *map(int, keys)]))
        return r

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def uniform(self, low, high, size) -> np.ndarray:
        return self._gen.uniform(low, high, size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=False)


def seeded_gaussian(rng: Rng, rows: int, cols: int, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    if std < 0:
        raise ConfigError(f"std must be >= 0, got {std}")
    z = rng.normal((rows, cols))
    return mean + std * z


def uniform_init(rng: Rng, fan_in: int, rows: int, cols: int) -> np.ndarray:
    bound = 1.0 / math.sqrt(fan_in)
    return rng.uniform(-bound, bound, (rows, cols))


@dataclass
class Param:
    value: np.ndarray
    grad: np.ndarray
    adam_m: np.ndarray
    adam_v: np.ndarray


@dataclass
class ParamStore:
    """Named trainable matrices with gradient and Adam moment buffers.

    Iteration is always in lexicographic name order.
    """

    _params: Dict[str, Param] = field(default_factory=dict)
    step_count: int = 0

    def add(self, name: str, value) -> None:
        v = as_matrix(value).copy()
        check_finite(name, v)
        z = np.zeros_like(v)
        self._params[name] = Param(v, z.copy(), z.copy(), z.copy())

    def names(self) -> list:
        return sorted(self._params)

    def __contains__(self, name) -> bool:
        return name in self._params

    def __iter__(self) -> Iterator[Tuple[str, Param]]:
        for name in self.names():
            yield name, self._params[name]

    def __len__(self) -> int:
        return len(self._params)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._params[name].value

    def __setitem__(self, name: str, value) -> None:
        v = as_matrix(value)
        p = self._params[name]
        if v.shape != p.value.shape:
            raise ValueError(f"shape mismatch for {name}: {v.shape} vs {p.value.shape}")
        p.value = v.copy()

    def grad(self, name: str) -> np.ndarray:
        return self._params[name].grad

    def zero_grad(self) -> None:
        for _, p in self:
            p.grad[...] = 0.0

    def values(self) -> Dict[str, np.ndarray]:
        return {name: p.value.copy() for name, p in self}

    def copy(self) -> "ParamStore":
        out = ParamStore(step_count=self.step_count)
        for name, p in self:
            out._params[name] = Param(p.value.copy(), p.grad.copy(), p.adam_m.copy(), p.adam_v.copy())
        return out

    def num_scalars(self) -> int:
        return sum(p.value.size for _, p in self)


def evaluate_with_gradients(objective: Objective, params: ParamStore) -> float:
    """Run ``objective`` and store its gradients in ``params``.

    ``objective(params)`` returns ``(loss, grads)`` where ``grads`` maps
    parameter names to arrays of the parameter's shape; names it omits get
    a zero gradient.
    """
    for name, p in params:
        check_finite(name, p.value)
    loss, grads = objective(params)
    loss = float(loss)
    if not math.isfinite(loss):
        raise NonFiniteError("loss")
    params.zero_grad()
    for name in sorted(grads):
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        g = np.asarray(grads[name], dtype=np.float64).reshape(params[name].shape)
        check_finite(f"grad[{name}]", g)
        params.grad(name)[...] = g
    return loss


def adam_step(params: ParamStore, lr: float) -> ParamStore:
    """One bias-corrected Adam update in place; gradients are zeroed afterwards."""
    if not lr > 0:
        raise ConfigError(f"learning rate must be > 0, got {lr}")
    params.step_count += 1
    t = params.step_count
    c1 = 1.0 - ADAM_BETA1 ** t
    c2 = 1.0 - ADAM_BETA2 ** t
    for _, p in params:
        g = p.grad
        p.adam_m = ADAM_BETA1 * p.adam_m + (1.0 - ADAM_BETA1) * g
        p.adam_v = ADAM_BETA2 * p.adam_v + (1.0 - ADAM_BETA2) * g * g
        m_hat = p.adam_m / c1
        v_hat = p.adam_v / c2
        p.value = p.value - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        p.grad = np.zeros_like(g)
    return params


def relative_error(a, n):
    return np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))


@dataclass
class GradCheckReport:
    max_rel_error: Dict[str, float]
    failures: list  # (name, (row, col), analytic, numeric, rel_error)
    tol: float
    h: float
    atol: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)


def grad_check(objective: Objective, params: ParamStore, h: float = 1e-5, tol: float = 1e-4,
               atol: float = 0.0) -> GradCheckReport:
    """Compare analytic gradients against central differences, entry by entry.

    An entry fails when its relative error exceeds ``tol`` and its absolute
    error exceeds ``atol``. With the default ``atol=0`` an exactly-zero
    gradient fails as soon as the difference quotient picks up roundoff
    (about eps·|f|/h), so callers checking piecewise-linear losses may want
    an ``atol`` near that resolution.
    """
    if not (1e-8 < h <= 1e-3):
        raise ConfigError(f"h must lie in (1e-8, 1e-3], got {h}")
    work = params.copy()
    evaluate_with_gradients(objective, work)
    analytic = {name: p.grad.copy() for name, p in work}

    max_err: Dict[str, float] = {}
    failures = []
    for name, p in work:
        worst = 0.0
        base = p.value
        for idx in np.ndindex(base.shape):
            w0 = base[idx]
            base[idx] = w0 + h
            f_plus = float(objective(work)[0])
            base[idx] = w0 - h
            f_minus = float(objective(work)[0])
            base[idx] = w0
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = analytic[name][idx]
            err = float(relative_error(a, numeric))
            worst = max(worst, err)
            if err > tol and abs(a - numeric) > atol:
                failures.append((name, idx, float(a), numeric, err))
        max_err[name] = worst
    return GradCheckReport(max_err, failures, tol, h, atol)
