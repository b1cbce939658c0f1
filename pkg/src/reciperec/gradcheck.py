"""Central finite-difference gradient checks for ops and whole models."""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import tensor as T
from .tensor import Tensor

FLOOR = 1e-12


def numerical_grad(f: Callable[[], Tensor], p: Tensor, eps: float = 1e-5,
                   coords: np.ndarray | None = None) -> np.ndarray:
    """Central differences of ``f`` w.r.t. ``p``; entries outside ``coords`` stay zero."""
    grad = np.zeros_like(p.data)
    flat = p.data.reshape(-1)
    out = grad.reshape(-1)
    coords = np.arange(flat.size) if coords is None else coords
    with T.no_grad():
        for i in coords.tolist():
            orig = flat[i]
            flat[i] = orig + eps
            up = f().item()
            flat[i] = orig - eps
            down = f().item()
            flat[i] = orig
            out[i] = (up - down) / (2 * eps)
    return grad


def analytic_grads(f: Callable[[], Tensor], params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    for p in params.values():
        p.zero_grad()
    T.get_tape().reset()
    loss = f()
    T.backward(loss)
    return {k: p.grad.copy() for k, p in params.items()}


def relative_error(a: np.ndarray, n: np.ndarray, floor: float = FLOOR) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)`` over a whole tensor.

    Entrywise ratios are dominated by round-off on entries near zero, so the
    error is measured on the tensor as a vector.
    """
    if a.size == 0:
        return 0.0
    denom = max(np.linalg.norm(a), np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(f: Callable[[], Tensor], params: dict[str, Tensor], eps: float = 1e-5,
                    sample: int | None = None,
                    rng: np.random.Generator | None = None) -> dict[str, float]:
    """Relative error of the analytic gradient for every named parameter.

    With ``sample`` set, only that many random coordinates per tensor are
    perturbed and compared.
    """
    analytic = analytic_grads(f, params)
    rng = rng or np.random.default_rng(0)
    out = {}
    for k, p in params.items():
        coords = None
        if sample is not None and p.data.size > sample:
            coords = np.sort(rng.choice(p.data.size, size=sample, replace=False))
        num = numerical_grad(f, p, eps, coords)
        a = analytic[k] if coords is None else analytic[k].reshape(-1)[coords]
        n = num if coords is None else num.reshape(-1)[coords]
        out[k] = relative_error(a, n)
    return out


def _rand(rng, *shape, low=-1.0, high=1.0):
    return Tensor(rng.uniform(low, high, size=shape), requires_grad=True)


def op_cases(rng: np.random.Generator) -> dict[str, tuple[Callable[[], Tensor], dict[str, Tensor]]]:
    """One small scalar-valued case per differentiable op, inputs uniform in [-1, 1]."""
    cases = {}

    def case(name, fn, **ins):
        w = rng.uniform(-1, 1, size=fn_shape_probe(fn, ins))
        cases[name] = (lambda fn=fn, ins=ins, w=w: T.sum(fn(**ins) * w), ins)

    a, b = _rand(rng, 3, 4), _rand(rng, 4, 2)
    case("matmul", lambda a, b: T.matmul(a, b), a=a, b=b)
    x3, w2 = _rand(rng, 2, 3, 4), _rand(rng, 4, 3)
    case("matmul_batched", lambda x, w: T.matmul(x, w), x=x3, w=w2)
    case("add", lambda a, b: T.add(a, b), a=_rand(rng, 3, 4), b=_rand(rng, 1, 4))
    case("sub", lambda a, b: T.sub(a, b), a=_rand(rng, 3, 4), b=_rand(rng, 4))
    case("mul", lambda a, b: T.mul(a, b), a=_rand(rng, 3, 4), b=_rand(rng, 3, 1))
    case("div", lambda a, b: T.div(a, b), a=_rand(rng, 3, 4), b=_rand(rng, 3, 4, low=0.5, high=1.5))
    case("neg", lambda a: T.neg(a), a=_rand(rng, 2, 3))
    case("scale", lambda a: T.scale(a, 0.3), a=_rand(rng, 2, 3))
    case("exp", lambda a: T.exp(a), a=_rand(rng, 2, 3))
    case("log", lambda a: T.log(a), a=_rand(rng, 2, 3, low=0.5, high=1.5))
    case("sqrt", lambda a: T.sqrt(a), a=_rand(rng, 2, 3, low=0.5, high=1.5))
    case("relu", lambda a: T.relu(a), a=_rand(rng, 3, 4))
    case("leaky_relu", lambda a: T.leaky_relu(a, 0.2), a=_rand(rng, 3, 4))
    case("tanh", lambda a: T.tanh(a), a=_rand(rng, 3, 4))
    case("sum_axis", lambda a: T.sum(a, axis=1), a=_rand(rng, 3, 4))
    case("mean", lambda a: T.mean(a, axis=0), a=_rand(rng, 3, 4))
    case("row_mean", lambda a: T.row_mean(a), a=_rand(rng, 3, 4))
    case("max_axis", lambda a: T.max_axis(a, axis=1), a=_rand(rng, 3, 4))
    case("transpose", lambda a: T.transpose(a), a=_rand(rng, 3, 4))
    case("reshape", lambda a: T.reshape(a, (4, 3)), a=_rand(rng, 3, 4))
    case("permute", lambda a: T.permute(a, (2, 0, 1)), a=_rand(rng, 2, 3, 4))
    case("concat", lambda a, b: T.concat([a, b], axis=1), a=_rand(rng, 3, 2), b=_rand(rng, 3, 3))
    case("stack", lambda a, b: T.stack([a, b], axis=0), a=_rand(rng, 3, 2), b=_rand(rng, 3, 2))
    case("getitem", lambda a: T.getitem(a, (slice(0, 2), slice(1, 3))), a=_rand(rng, 3, 4))
    idx = np.array([0, 2, 2, 1, 0])
    case("gather_rows", lambda a: T.gather_rows(a, idx), a=_rand(rng, 3, 4))
    seg = np.array([0, 0, 1, 3, 3, 3])
    case("segment_sum", lambda a: T.segment_sum(a, seg, 4), a=_rand(rng, 6, 3))
    case("segment_softmax", lambda a: T.segment_softmax(a, seg, 4), a=_rand(rng, 6, 2))
    dst, src = np.array([0, 0, 1, 2, 2, 2]), np.array([1, 2, 0, 0, 1, 3])
    case("edge_aggregate", lambda w, x: T.edge_aggregate(w, x, dst, src, 3),
         w=_rand(rng, 6, 2), x=_rand(rng, 4, 2, 3))
    case("edge_aggregate_shared", lambda w, x: T.edge_aggregate(w, x, dst, src, 3),
         w=_rand(rng, 6, 2), x=_rand(rng, 4, 3))
    mask = rng.random((3, 4)) < 0.6
    case("apply_mask", lambda a: T.apply_mask(a, mask, 1.0 / 0.6), a=_rand(rng, 3, 4))
    case("softmax_scaled", lambda a: T.softmax_scaled(a, 1.7), a=_rand(rng, 3, 4))
    kmask = np.array([[True, True, False, True]])
    case("softmax_scaled_masked", lambda a: T.softmax_scaled(a, 2.0, kmask), a=_rand(rng, 3, 4))
    case("log_softmax", lambda a: T.log_softmax(a, mask=mask | np.eye(3, 4, dtype=bool)),
         a=_rand(rng, 3, 4))
    return cases


def fn_shape_probe(fn, ins) -> tuple[int, ...]:
    with T.no_grad():
        return fn(**ins).shape


def check_ops(rng: np.random.Generator, eps: float = 1e-5) -> dict[str, float]:
    """Worst relative gradient error per op over its inputs."""
    out = {}
    for name, (f, ins) in op_cases(rng).items():
        errs = check_gradients(f, ins, eps)
        out[name] = max(errs.values())
    return out
