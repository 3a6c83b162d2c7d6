"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tape` records every primitive applied to its tensors. Calling
:meth:`Tape.backward` walks the record in reverse and accumulates
vector-Jacobian products into the leaves. The engine is deliberately
small and unfused: it is the reference route every faster gradient in the
package is checked against.

Example::

    tape = Tape()
    x = tape.variable(np.array(3.0))
    loss = tape.square(x)
    grads = tape.backward(loss)
    grads[x]  # array(6.)
"""

from __future__ import annotations

from collections.abc import Callable, Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Any

import numpy as np

__all__ = [
    "AutodiffError",
    "NonFiniteError",
    "ShapeError",
    "Tape",
    "TapeError",
    "Tensor",
    "finite_diff_check",
    "softplus",
]


class AutodiffError(Exception):
    """Base class for errors raised by the tape engine."""


class ShapeError(AutodiffError, ValueError):
    """A primitive was applied to operands of incompatible shapes."""

    def __init__(self, primitive: str, *shapes: tuple[int, ...]):
        self.primitive = primitive
        self.shapes = shapes
        shown = ", ".join(str(s) for s in shapes)
        super().__init__(f"{primitive}: incompatible operand shapes {shown}")


class NonFiniteError(AutodiffError, FloatingPointError):
    """A computation produced NaN or Inf."""


class TapeError(AutodiffError, RuntimeError):
    """The tape was used out of order (e.g. backward before forward)."""


def softplus(z: np.ndarray | float, beta: float = 1.0) -> np.ndarray:
    """Overflow-safe ``log(1 + exp(beta*z)) / beta``."""
    bz = beta * np.asarray(z, dtype=np.float64)
    return (np.maximum(bz, 0.0) + np.log1p(np.exp(-np.abs(bz)))) / beta


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # two-branch form avoids exp overflow for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Tensor:
    """A dense float64 array living on a tape.

    Tensors hash by identity, so they can key the gradient map returned by
    :meth:`Tape.backward`.
    """

    __slots__ = ("data", "name", "requires_grad", "_tape", "__weakref__")

    def __init__(self, data: np.ndarray, tape: Tape, *, requires_grad: bool, name: str | None = None):
        self.data = data
        self.name = name
        self.requires_grad = requires_grad
        self._tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape})"


@dataclass
class _Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    attrs: dict[str, Any] = field(default_factory=dict)


class Tape:
    """Records primitive operations for reverse-mode differentiation.

    Leaves are created with :meth:`variable` (differentiable) or
    :meth:`constant`. Every primitive returns a new :class:`Tensor`; inputs
    are never mutated.
    """

    def __init__(self, *, check_finite: bool = True):
        self.nodes: list[_Node] = []
        self.leaves: list[Tensor] = []
        self.check_finite = check_finite

    # ------------------------------------------------------------------ leaves
    def variable(self, value: Any, name: str | None = None) -> Tensor:
        data = np.array(value, dtype=np.float64)
        t = Tensor(data, self, requires_grad=True, name=name)
        self.leaves.append(t)
        return t

    def constant(self, value: Any, name: str | None = None) -> Tensor:
        data = np.array(value, dtype=np.float64)
        t = Tensor(data, self, requires_grad=False, name=name)
        self.leaves.append(t)
        return t

    def _lift(self, value: Tensor | np.ndarray | float) -> Tensor:
        if isinstance(value, Tensor):
            if value._tape is not self:
                raise TapeError("tensor belongs to a different tape")
            return value
        return self.constant(value)

    # ----------------------------------------------------------------- record
    def _record(self, op: str, inputs: tuple[Tensor, ...], data: np.ndarray, **attrs: Any) -> Tensor:
        if self.check_finite and not np.all(np.isfinite(data)):
            raise NonFiniteError(f"{op} produced non-finite values")
        out = Tensor(data, self, requires_grad=any(t.requires_grad for t in inputs))
        self.nodes.append(_Node(op, inputs, out, attrs))
        return out

    @staticmethod
    def _compute(op: str, vals: Sequence[np.ndarray], attrs: Mapping[str, Any]) -> np.ndarray:
        if op == "matmul":
            return vals[0] @ vals[1]
        if op == "add":
            return vals[0] + vals[1]
        if op == "sub":
            return vals[0] - vals[1]
        if op == "mul":
            return vals[0] * vals[1]
        if op == "scale":
            return attrs["k"] * vals[0]
        if op == "sigmoid":
            return _sigmoid(vals[0])
        if op == "tanh":
            return np.tanh(vals[0])
        if op == "relu":
            return np.maximum(vals[0], 0.0)
        if op == "softplus":
            return softplus(vals[0], attrs["beta"])
        if op == "square":
            return vals[0] * vals[0]
        if op == "sum":
            return np.asarray(vals[0].sum())
        if op == "concat":
            return np.concatenate([np.atleast_1d(v) for v in vals])
        if op == "power":
            return vals[0] ** attrs["n"]
        if op == "sqrt":
            return np.sqrt(vals[0])
        raise TapeError(f"unknown primitive {op!r}")

    # ------------------------------------------------------------- primitives
    def matmul(self, a: Tensor, b: Tensor) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        if a.data.ndim != 2 or b.data.ndim not in (1, 2) or a.shape[1] != b.shape[0]:
            raise ShapeError("matmul", a.shape, b.shape)
        return self._record("matmul", (a, b), a.data @ b.data)

    def _binary(self, op: str, a: Tensor, b: Tensor) -> Tensor:
        a, b = self._lift(a), self._lift(b)
        if a.shape != b.shape:
            raise ShapeError(op, a.shape, b.shape)
        return self._record(op, (a, b), self._compute(op, (a.data, b.data), {}))

    def add(self, a: Tensor, b: Tensor) -> Tensor:
        return self._binary("add", a, b)

    def sub(self, a: Tensor, b: Tensor) -> Tensor:
        return self._binary("sub", a, b)

    def mul(self, a: Tensor, b: Tensor) -> Tensor:
        return self._binary("mul", a, b)

    def scale(self, a: Tensor, k: float) -> Tensor:
        a = self._lift(a)
        return self._record("scale", (a,), float(k) * a.data, k=float(k))

    def sigmoid(self, a: Tensor) -> Tensor:
        a = self._lift(a)
        return self._record("sigmoid", (a,), _sigmoid(a.data))

    def tanh(self, a: Tensor) -> Tensor:
        a = self._lift(a)
        return self._record("tanh", (a,), np.tanh(a.data))

    def relu(self, a: Tensor) -> Tensor:
        a = self._lift(a)
        return self._record("relu", (a,), np.maximum(a.data, 0.0))

    def softplus(self, a: Tensor, beta: float = 1.0) -> Tensor:
        if beta <= 0:
            raise ValueError("softplus beta must be positive")
        a = self._lift(a)
        return self._record("softplus", (a,), softplus(a.data, beta), beta=float(beta))

    def square(self, a: Tensor) -> Tensor:
        a = self._lift(a)
        return self._record("square", (a,), a.data * a.data)

    def sum(self, a: Tensor) -> Tensor:
        a = self._lift(a)
        return self._record("sum", (a,), np.asarray(a.data.sum()))

    def concat(self, parts: Iterable[Tensor]) -> Tensor:
        parts = tuple(self._lift(p) for p in parts)
        if not parts:
            raise ShapeError("concat")
        if any(p.data.ndim > 1 for p in parts):
            raise ShapeError("concat", *(p.shape for p in parts))
        return self._record("concat", parts, np.concatenate([np.atleast_1d(p.data) for p in parts]))

    def power(self, a: Tensor, n: float) -> Tensor:
        a = self._lift(a)
        return self._record("power", (a,), a.data ** n, n=n)

    def sqrt(self, a: Tensor) -> Tensor:
        a = self._lift(a)
        with np.errstate(invalid="ignore"):  # negative input is reported as non-finite below
            data = np.sqrt(a.data)
        return self._record("sqrt", (a,), data)

    # convenience compositions, recorded as primitives
    def mean(self, parts: Sequence[Tensor]) -> Tensor:
        if not parts:
            raise ShapeError("mean")
        acc = parts[0]
        for p in parts[1:]:
            acc = self.add(acc, p)
        return self.scale(acc, 1.0 / len(parts))

    def dot(self, a: Tensor, b: Tensor) -> Tensor:
        return self.sum(self.mul(a, b))

    # --------------------------------------------------------------- backward
    def backward(self, output: Tensor, seed: np.ndarray | float | None = None) -> dict[Tensor, np.ndarray]:
        """Accumulate d(output)/d(leaf) for every leaf on this tape.

        Args:
            output: A tensor produced by a primitive on this tape.
            seed: Upstream gradient, shaped like ``output``. Defaults to ones.

        Returns:
            Mapping from every leaf tensor to its gradient. Leaves the output
            does not depend on map to zeros.
        """
        if not self.nodes:
            raise TapeError("backward called before any forward computation")
        if output._tape is not self:
            raise TapeError("output tensor belongs to a different tape")
        if seed is None:
            seed_arr = np.ones_like(output.data)
        else:
            seed_arr = np.array(seed, dtype=np.float64)
            if seed_arr.shape != output.shape:
                raise ShapeError("backward seed", seed_arr.shape, output.shape)

        grads: dict[int, np.ndarray] = {id(output): seed_arr}
        for node in reversed(self.nodes):
            g = grads.pop(id(node.output), None)
            if g is None:
                continue
            for t, contrib in zip(node.inputs, self._vjp(node, g)):
                if contrib is None or not t.requires_grad:
                    continue
                key = id(t)
                if key in grads:
                    grads[key] = grads[key] + contrib
                else:
                    grads[key] = contrib
        return {leaf: grads.get(id(leaf), np.zeros_like(leaf.data)) for leaf in self.leaves}

    @staticmethod
    def _vjp(node: _Node, g: np.ndarray) -> list[np.ndarray | None]:
        op = node.op
        vals = [t.data for t in node.inputs]
        y = node.output.data
        if op == "matmul":
            a, b = vals
            if b.ndim == 1:
                return [np.outer(g, b), a.T @ g]
            return [g @ b.T, a.T @ g]
        if op == "add":
            return [g, g]
        if op == "sub":
            return [g, -g]
        if op == "mul":
            return [g * vals[1], g * vals[0]]
        if op == "scale":
            return [node.attrs["k"] * g]
        if op == "sigmoid":
            return [g * y * (1.0 - y)]
        if op == "tanh":
            return [g * (1.0 - y * y)]
        if op == "relu":
            return [g * (vals[0] > 0.0)]
        if op == "softplus":
            return [g * _sigmoid(node.attrs["beta"] * vals[0])]
        if op == "square":
            return [2.0 * vals[0] * g]
        if op == "sum":
            return [np.full_like(vals[0], float(g))]
        if op == "concat":
            out, start = [], 0
            for v in vals:
                n = max(v.size, 1)
                out.append(g[start:start + n].reshape(v.shape))
                start += n
            return out
        if op == "power":
            n = node.attrs["n"]
            return [g * n * vals[0] ** (n - 1)]
        if op == "sqrt":
            return [g * 0.5 / y]
        raise TapeError(f"no gradient rule for {op!r}")

    # ----------------------------------------------------------------- replay
    def replay(self) -> list[np.ndarray]:
        """Re-execute the record from the leaf values; returns fresh outputs."""
        if not self.nodes:
            raise TapeError("nothing recorded")
        values: dict[int, np.ndarray] = {id(t): t.data for t in self.leaves}
        outs = []
        for node in self.nodes:
            data = self._compute(node.op, [values[id(t)] for t in node.inputs], node.attrs)
            values[id(node.output)] = data
            outs.append(data)
        return outs


def finite_diff_check(
    loss_fn: Callable[[Mapping[str, np.ndarray]], float],
    params: Mapping[str, np.ndarray],
    analytic: Mapping[str, np.ndarray],
    epsilon: float = 1e-5,
) -> float:
    """Compare analytic gradients with central finite differences.

    Args:
        loss_fn: Deterministic scalar function of a parameter mapping.
        params: Point at which to differentiate. Not modified.
        analytic: Gradient claimed for every entry of ``params``.
        epsilon: Central-difference step.

    Returns:
        The maximum over all entries of
        ``|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)``.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    work = {k: np.array(v, dtype=np.float64) for k, v in params.items()}

    def evaluate() -> float:
        value = float(loss_fn(work))
        if not np.isfinite(value):
            raise NonFiniteError("loss is not finite")
        return value

    evaluate()
    worst = 0.0
    for name, arr in work.items():
        grad = np.asarray(analytic[name], dtype=np.float64)
        if grad.shape != arr.shape:
            raise ShapeError("finite_diff_check", grad.shape, arr.shape)
        flat = arr.reshape(-1)
        gflat = grad.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            up = evaluate()
            flat[j] = orig - epsilon
            down = evaluate()
            flat[j] = orig
            numeric = (up - down) / (2.0 * epsilon)
            err = abs(gflat[j] - numeric) / max(abs(gflat[j]), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
