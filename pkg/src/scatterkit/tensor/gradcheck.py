"""Finite-difference gradient checks for every registered operation."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import ops
from .core import Tensor, no_grad

# builder(rng, dtype) -> (fn, list of input arrays); fn maps Tensors to one Tensor
Builder = Callable[[np.random.Generator, type], tuple[Callable[..., Tensor], list[np.ndarray]]]

REGISTRY: dict[str, Builder] = {}


def register(name: str):
    def deco(builder: Builder) -> Builder:
        REGISTRY[name] = builder
        return builder
    return deco


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """``||a - n|| / max(||a||, ||n||)``, 0 when both vanish."""
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def numeric_grad(fn, arrays: list[np.ndarray], weights: np.ndarray, index: int,
                 h: float) -> np.ndarray:
    base = arrays[index]
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)
    w64 = weights.ravel().astype(np.float64)
    with no_grad():
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + h
            fp = float(np.dot(fn(*[Tensor(a) for a in arrays]).data.ravel().astype(np.float64), w64))
            flat[j] = orig - h
            fm = float(np.dot(fn(*[Tensor(a) for a in arrays]).data.ravel().astype(np.float64), w64))
            flat[j] = orig
            gflat[j] = (fp - fm) / (2 * h)
    return grad


def check(fn, arrays: list[np.ndarray], rng: np.random.Generator, h: float | None = None) -> float:
    """Worst relative error over all inputs of ``fn`` for a random projection of its output."""
    dtype = arrays[0].dtype
    if h is None:
        h = 1e-5
    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    # the finite-difference oracle always runs in double; the analytic pass keeps ``dtype``
    arrays = [a.astype(np.float64) for a in arrays]
    out = fn(*leaves)
    weights = rng.standard_normal(out.shape).astype(dtype)
    ops.sum(ops.mul(out, Tensor(weights))).backward()
    worst = 0.0
    for i, leaf in enumerate(leaves):
        analytic = np.zeros_like(arrays[i]) if leaf.grad is None else leaf.grad
        numeric = numeric_grad(fn, arrays, weights, i, h)
        worst = max(worst, relative_error(analytic.astype(np.float64), numeric.astype(np.float64)))
    return worst


@dataclass
class GradcheckReport:
    results: dict[str, float]
    tolerance: float
    seconds: float

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.results, key=self.results.get)
        return name, self.results[name]

    @property
    def passed(self) -> bool:
        return all(v < self.tolerance for v in self.results.values())


def run_all(precision: str = "double", instances: int = 10, seed: int = 0,
            names=None) -> GradcheckReport:
    from .. import piha  # noqa: F401  registers the composed block
    dtype = np.float64 if precision == "double" else np.float32
    tol = 1e-6 if precision == "double" else 1e-4
    t0 = time.perf_counter()
    results = {}
    for name in sorted(REGISTRY if names is None else names):
        rng = np.random.default_rng([seed, sum(map(ord, name))])
        worst = 0.0
        for _ in range(instances):
            fn, arrays = REGISTRY[name](rng, dtype)
            worst = max(worst, check(fn, arrays, rng))
        results[name] = worst
    return GradcheckReport(results, tol, time.perf_counter() - t0)


# ---------------------------------------------------------------- builders

def _away_from(x: np.ndarray, point: float, margin: float) -> np.ndarray:
    """Push entries out of ``(point - margin, point + margin)`` so kinks stay outside the stencil."""
    close = np.abs(x - point) < margin
    return np.where(close, point + np.sign(x - point + 1e-300) * margin * 2, x)


def _distinct(rng, shape, gap: float) -> np.ndarray:
    """Randomly permuted values at least ``0.9 * gap`` apart (keeps max-pool argmax stable)."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap + rng.uniform(0, 0.1 * gap, n)).reshape(shape) - n * gap / 2


@register("add")
def _b_add(rng, dt):
    return ops.add, [rng.standard_normal((2, 3, 4, 4)).astype(dt), rng.standard_normal((2, 3, 1, 1)).astype(dt)]


@register("mul")
def _b_mul(rng, dt):
    return ops.mul, [rng.standard_normal((2, 3, 4, 4)).astype(dt), rng.standard_normal((2, 3, 1, 1)).astype(dt)]


@register("relu")
def _b_relu(rng, dt):
    return ops.relu, [_away_from(rng.standard_normal((2, 3, 4)), 0.0, 0.01).astype(dt)]


@register("sigmoid")
def _b_sigmoid(rng, dt):
    return ops.sigmoid, [(2 * rng.standard_normal((3, 5))).astype(dt)]


@register("softmax")
def _b_softmax(rng, dt):
    axis = int(rng.integers(0, 2))
    return (lambda x: ops.softmax(x, axis=axis)), [rng.standard_normal((4, 5)).astype(dt)]


@register("log_softmax")
def _b_log_softmax(rng, dt):
    return (lambda x: ops.log_softmax(x, axis=1)), [rng.standard_normal((3, 6)).astype(dt)]


@register("dense")
def _b_dense(rng, dt):
    x = rng.standard_normal((3, 5)).astype(dt)
    w = rng.standard_normal((4, 5)).astype(dt)
    b = rng.standard_normal(4).astype(dt)
    return ops.dense, [x, w, b]


@register("conv2d")
def _b_conv(rng, dt):
    groups = int(rng.choice([1, 2]))
    stride = int(rng.choice([1, 2]))
    pad = int(rng.integers(0, 2))
    x = rng.standard_normal((2, 4, 5, 5)).astype(dt)
    w = rng.standard_normal((6, 4 // groups, 3, 3)).astype(dt)
    b = rng.standard_normal(6).astype(dt)
    return (lambda x, w, b: ops.conv2d(x, w, b, groups=groups, stride=stride, pad=pad)), [x, w, b]


@register("gap")
def _b_gap(rng, dt):
    return ops.gap, [rng.standard_normal((2, 3, 4, 5)).astype(dt)]


@register("sap")
def _b_sap(rng, dt):
    rho = 0.05
    x = _away_from(rng.standard_normal((2, 3, 4, 4)), rho, 0.01)
    x[0, 0] = -1.0  # one channel with an empty mask
    return (lambda x: ops.sap(x, rho)), [x.astype(dt)]


@register("maxpool2d")
def _b_maxpool(rng, dt):
    x = _distinct(rng, (2, 2, 6, 6), 0.1)
    k, s = (2, 2) if rng.uniform() < 0.5 else (3, 1)
    return (lambda x: ops.maxpool2d(x, k, s)), [x.astype(dt)]


@register("concat")
def _b_concat(rng, dt):
    a = rng.standard_normal((2, 2, 3)).astype(dt)
    b = rng.standard_normal((2, 3, 3)).astype(dt)
    return (lambda a, b: ops.concat([a, b], axis=1)), [a, b]


@register("stack")
def _b_stack(rng, dt):
    a = rng.standard_normal((2, 3)).astype(dt)
    b = rng.standard_normal((2, 3)).astype(dt)
    return (lambda a, b: ops.stack([a, b], axis=1)), [a, b]


@register("split")
def _b_split(rng, dt):
    def fn(x):
        parts = ops.split(x, 3, axis=1)
        return ops.concat([ops.mul(parts[2], parts[0]), parts[1]], axis=1)
    return fn, [rng.standard_normal((2, 6, 2)).astype(dt)]


@register("reshape")
def _b_reshape(rng, dt):
    return (lambda x: ops.reshape(x, (3, 8))), [rng.standard_normal((2, 3, 4)).astype(dt)]


@register("sum_mean")
def _b_sum_mean(rng, dt):
    return (lambda x: ops.add(ops.sum(x, axis=1), ops.mean(x, axis=1))), [rng.standard_normal((3, 4)).astype(dt)]


@register("cross_entropy")
def _b_ce(rng, dt):
    labels = rng.integers(0, 5, size=4)
    return (lambda z: ops.cross_entropy(z, labels)), [rng.standard_normal((4, 5)).astype(dt)]
