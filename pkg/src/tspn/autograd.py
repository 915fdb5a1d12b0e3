"""A small dense reverse-mode differentiation kernel (float64, rank <= 2).

Only the handful of operations the relation heads need are provided. Each op
records its parents and a closure that pushes the output gradient back.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

BCE_CLAMP = 1e-7
CHECKPOINT_FORMAT = "tspn-checkpoint"
CHECKPOINT_VERSION = 1


class ShapeError(ValueError):
    pass


class Tensor:
    __slots__ = ("values", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, values, requires_grad: bool = False, name: str = "",
                 _parents: tuple = (), _backward: Callable | None = None):
        v = np.array(values, dtype=np.float64)
        if v.ndim > 2:
            raise ShapeError(f"{name or 'tensor'}: rank {v.ndim} > 2 unsupported")
        self.values = v
        self.grad = np.zeros_like(v)
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        return float(self.values)

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.values)

    def __repr__(self):
        return f"Tensor({self.name or ''}{list(self.shape)})"

    def backward(self) -> None:
        backward(self)


def _label(t: Tensor, default: str) -> str:
    return t.name or default


def _node(values, parents, fn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(values, requires_grad=needs, _parents=parents if needs else (),
                  _backward=fn if needs else None)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def linear(w: Tensor, x: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` for ``x`` of shape ``(d_in,)`` or ``(n, d_in)``."""
    w, x = _as_tensor(w), _as_tensor(x)
    if w.values.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError(f"linear: {_label(x, 'input')}{list(x.shape)} incompatible with "
                         f"{_label(w, 'weight')}{list(w.shape)}")
    out = x.values @ w.values
    parents = (w, x)
    if b is not None:
        b = _as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias {_label(b, 'bias')}{list(b.shape)} does not "
                             f"match output width {w.shape[1]}")
        out = out + b.values
        parents = (w, x, b)

    def fn(g):
        if w.requires_grad:
            w.grad += np.outer(x.values, g) if x.values.ndim == 1 else x.values.T @ g
        if x.requires_grad:
            x.grad += g @ w.values.T
        if b is not None and b.requires_grad:
            b.grad += g if g.ndim == 1 else g.sum(axis=0)
    return _node(out, parents, fn)


def concat(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    xs = [_as_tensor(x) for x in xs]
    lead = {x.shape[:-1] for x in xs}
    if len(lead) != 1:
        raise ShapeError("concat: leading shapes differ: "
                         + ", ".join(f"{_label(x, f'#{i}')}{list(x.shape)}"
                                     for i, x in enumerate(xs)))
    out = np.concatenate([x.values for x in xs], axis=-1)
    cuts = np.cumsum([x.shape[-1] for x in xs])[:-1]

    def fn(g):
        for x, part in zip(xs, np.split(g, cuts, axis=-1)):
            if x.requires_grad:
                x.grad += part
    return _node(out, tuple(xs), fn)


def _same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: {_label(a, 'lhs')}{list(a.shape)} vs "
                         f"{_label(b, 'rhs')}{list(b.shape)}")


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("hadamard", a, b)

    def fn(g):
        if a.requires_grad:
            a.grad += g * b.values
        if b.requires_grad:
            b.grad += g * a.values
    return _node(a.values * b.values, (a, b), fn)


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _same_shape("add", a, b)

    def fn(g):
        if a.requires_grad:
            a.grad += g
        if b.requires_grad:
            b.grad += g
    return _node(a.values + b.values, (a, b), fn)


def bias_add(x: Tensor, b: Tensor) -> Tensor:
    """Add a ``(d,)`` bias to every row of ``x``."""
    x, b = _as_tensor(x), _as_tensor(b)
    if b.values.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ShapeError(f"bias_add: {_label(b, 'bias')}{list(b.shape)} vs "
                         f"{_label(x, 'input')}{list(x.shape)}")

    def fn(g):
        if x.requires_grad:
            x.grad += g
        if b.requires_grad:
            b.grad += g if g.ndim == 1 else g.sum(axis=0)
    return _node(x.values + b.values, (x, b), fn)


def sigmoid(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    s = 0.5 * (np.tanh(0.5 * x.values) + 1.0)

    def fn(g):
        x.grad += g * s * (1.0 - s)
    return _node(s, (x,), fn)


def bce(pred: Tensor, target) -> Tensor:
    """Element-wise binary cross entropy; predictions clamped to [1e-7, 1 - 1e-7]."""
    pred = _as_tensor(pred)
    t = np.asarray(target.values if isinstance(target, Tensor) else target, dtype=np.float64)
    if t.shape != pred.shape:
        raise ShapeError(f"bce: target {list(t.shape)} vs {_label(pred, 'prediction')}"
                         f"{list(pred.shape)}")
    p = np.clip(pred.values, BCE_CLAMP, 1.0 - BCE_CLAMP)
    out = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))

    def fn(g):
        inside = (pred.values > BCE_CLAMP) & (pred.values < 1.0 - BCE_CLAMP)
        pred.grad += np.where(inside, g * (p - t) / (p * (1.0 - p)), 0.0)
    return _node(out, (pred,), fn)


def mean(x: Tensor) -> Tensor:
    x = _as_tensor(x)
    n = x.values.size

    def fn(g):
        x.grad += np.full(x.shape, g / n)
    return _node(x.values.mean() if n else 0.0, (x,), fn)


def scale(x: Tensor, c: float) -> Tensor:
    x = _as_tensor(x)

    def fn(g):
        x.grad += c * g
    return _node(c * x.values, (x,), fn)


def rows(x: Tensor, index) -> Tensor:
    """Select rows of a rank-2 tensor."""
    x = _as_tensor(x)
    idx = np.asarray(index, dtype=np.intp)

    def fn(g):
        np.add.at(x.grad, idx, g)
    return _node(x.values[idx], (x,), fn)


def reshape(x: Tensor, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    if len(shape) > 2:
        raise ShapeError(f"reshape: rank {len(shape)} > 2 unsupported")

    def fn(g):
        x.grad += g.reshape(x.shape)
    return _node(x.values.reshape(shape), (x,), fn)


def outer_rows(a: Tensor, b: Tensor) -> Tensor:
    """Row-wise outer product, flattened: ``(n, m), (n, k) -> (n, m*k)``."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.values.ndim != 2 or b.values.ndim != 2 or a.shape[0] != b.shape[0]:
        raise ShapeError(f"outer_rows: {list(a.shape)} vs {list(b.shape)}")
    n, m = a.shape
    k = b.shape[1]
    out = (a.values[:, :, None] * b.values[:, None, :]).reshape(n, m * k)

    def fn(g):
        g3 = g.reshape(n, m, k)
        if a.requires_grad:
            a.grad += (g3 * b.values[:, None, :]).sum(axis=2)
        if b.requires_grad:
            b.grad += (g3 * a.values[:, :, None]).sum(axis=1)
    return _node(out, (a, b), fn)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every ``requires_grad`` tensor."""
    if loss.values.size != 1 or loss.values.ndim > 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    # interior gradients start at zero; leaves keep what they accumulated
    for node in order:
        if node._backward is not None:
            node.grad = np.zeros_like(node.values)
    loss.grad = np.ones_like(loss.values)
    for node in reversed(order):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# parameters, optimizer, gradient checking
# ---------------------------------------------------------------------------

class ParamSet(dict):
    """Named trainable tensors."""

    @classmethod
    def init_uniform(cls, shapes: Mapping[str, tuple[int, ...]], rng: np.random.Generator,
                     fan_in: Mapping[str, int]) -> ParamSet:
        """Uniform in +-1/sqrt(fan_in); names are drawn in the given order."""
        out = cls()
        for name, shape in shapes.items():
            bound = 1.0 / np.sqrt(fan_in[name])
            out[name] = Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True,
                               name=name)
        return out

    def zero_grad(self) -> None:
        for t in self.values():
            t.zero_grad()

    def clone(self) -> ParamSet:
        return ParamSet({k: Tensor(t.values.copy(), requires_grad=True, name=k)
                         for k, t in self.items()})

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: t.shape for k, t in self.items()}

    def equal(self, other: ParamSet) -> bool:
        return self.keys() == other.keys() and all(
            np.array_equal(t.values, other[k].values) for k, t in self.items())


class Adam:
    """Adaptive-moment updates with bias correction."""

    def __init__(self, params: ParamSet, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(p.values) for k, p in params.items()}
        self.v = {k: np.zeros_like(p.values) for k, p in params.items()}

    def step(self) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in self.params.items():
            g = p.grad
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            p.values = p.values - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)
            p.zero_grad()


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-4

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.worst <= self.tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """``|a - n| / max(|a|, |n|, floor)``; the floor keeps zero gradients defined."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(f: Callable[[ParamSet], Tensor], params: ParamSet, eps: float = 1e-5,
               tol: float = 1e-4, names: Iterable[str] | None = None) -> GradCheckReport:
    """Compare backprop gradients with central differences entry by entry."""
    params.zero_grad()
    loss = f(params)
    backward(loss)
    report = GradCheckReport(tol=tol)
    for name in (names or list(params)):
        p = params[name]
        analytic = p.grad.copy()
        numeric = np.zeros_like(p.values)
        flat = p.values.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = f(params).item()
            flat[i] = orig - eps
            down = f(params).item()
            flat[i] = orig
            nflat[i] = (up - down) / (2 * eps)
        report.max_rel_error[name] = float(relative_error(analytic, numeric).max(initial=0.0))
    params.zero_grad()
    return report


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(params: ParamSet, path, meta: Mapping | None = None) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "meta": dict(meta or {}),
        "tensors": {k: {"shape": list(t.shape), "values": t.values.reshape(-1).tolist()}
                    for k, t in params.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path, expected: Mapping[str, tuple[int, ...]] | None = None
                    ) -> tuple[ParamSet, dict]:
    """Load a checkpoint; with ``expected`` shapes, any mismatch raises ``ShapeError``."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path}: not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    params = ParamSet()
    for name, rec in doc["tensors"].items():
        shape = tuple(rec["shape"])
        values = np.array(rec["values"], dtype=np.float64)
        if values.size != int(np.prod(shape)):
            raise ShapeError(f"{path}: tensor {name} has {values.size} values for shape {shape}")
        params[name] = Tensor(values.reshape(shape), requires_grad=True, name=name)
    if expected is not None:
        if set(expected) != set(params):
            raise ShapeError(f"{path}: tensors {sorted(params)} != expected {sorted(expected)}")
        for name, shape in expected.items():
            if params[name].shape != tuple(shape):
                raise ShapeError(f"{path}: {name} has shape {params[name].shape}, "
                                 f"config expects {tuple(shape)}")
    return params, doc.get("meta", {})
