"""Reverse-mode automatic differentiation over scalar computation graphs.

A :class:`Tape` records scalar operations in evaluation order.  Graphs are
built once (through :class:`Var` handles and operator overloading) and can
then be evaluated at many input bindings with :func:`forward` and
differentiated with :func:`gradient`.

    >>> tape = Tape()
    >>> x = tape.input("x")
    >>> tape.set_output(x * x)
    >>> forward(tape, {"x": 3.0})
    9.0
    >>> gradient(tape, {"x": 3.0})
    {'x': 6.0}
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

OPS = (
    "constant", "input", "add", "mul", "div", "neg",
    "exp", "log", "tanh", "pow", "clamp_min",
)


class NonFiniteError(FloatingPointError):
    """Raised when a forward pass produces NaN or infinity."""

    def __init__(self, index: int, op: str, value: float):
        super().__init__(f"non-finite value {value!r} at node {index} ({op})")
        self.index = index
        self.op = op


class UnboundInputError(KeyError):
    pass


@dataclass
class Node:
    op: str
    parents: tuple[int, ...] = ()
    # constant value, pow exponent or clamp floor
    arg: float | None = None
    value: float = math.nan


@dataclass
class Tape:
    nodes: list[Node] = field(default_factory=list)
    inputs: dict[str, int] = field(default_factory=dict)
    output: int | None = None

    def _push(self, op, parents=(), arg=None) -> Var:
        for p in parents:
            if not 0 <= p < len(self.nodes):
                raise ValueError(f"parent {p} does not precede node {len(self.nodes)}")
        self.nodes.append(Node(op, tuple(parents), arg))
        return Var(self, len(self.nodes) - 1)

    def input(self, name: str) -> Var:
        if name in self.inputs:
            return Var(self, self.inputs[name])
        v = self._push("input")
        self.inputs[name] = v.index
        return v

    def const(self, value: float) -> Var:
        return self._push("constant", (), float(value))

    def lift(self, value) -> Var:
        if isinstance(value, Var):
            if value.tape is not self:
                raise ValueError("variable belongs to another tape")
            return value
        return self.const(value)

    def set_output(self, var: Var) -> None:
        self.output = var.index

    def __len__(self):
        return len(self.nodes)


class Var:
    """Handle to a node on a tape; supports arithmetic with floats and Vars."""

    __slots__ = ("tape", "index")

    def __init__(self, tape: Tape, index: int):
        self.tape = tape
        self.index = index

    def _bin(self, op, other, swap=False):
        other = self.tape.lift(other)
        a, b = (other, self) if swap else (self, other)
        return self.tape._push(op, (a.index, b.index))

    def __add__(self, other):
        return self._bin("add", other)

    def __radd__(self, other):
        return self._bin("add", other, swap=True)

    def __sub__(self, other):
        return self._bin("add", -self.tape.lift(other))

    def __rsub__(self, other):
        return self.tape.lift(other) + (-self)

    def __mul__(self, other):
        return self._bin("mul", other)

    def __rmul__(self, other):
        return self._bin("mul", other, swap=True)

    def __truediv__(self, other):
        return self._bin("div", other)

    def __rtruediv__(self, other):
        return self._bin("div", other, swap=True)

    def __neg__(self):
        return self.tape._push("neg", (self.index,))

    def __pow__(self, exponent):
        if isinstance(exponent, Var):
            raise TypeError("pow supports constant real exponents only")
        return self.tape._push("pow", (self.index,), float(exponent))

    def exp(self):
        return self.tape._push("exp", (self.index,))

    def log(self):
        return self.tape._push("log", (self.index,))

    def tanh(self):
        return self.tape._push("tanh", (self.index,))

    def clamp_min(self, floor: float):
        return self.tape._push("clamp_min", (self.index,), float(floor))


# free-function spellings so generic code can run on floats or Vars
def exp(v):
    return v.exp() if isinstance(v, Var) else math.exp(v)


def log(v):
    return v.log() if isinstance(v, Var) else math.log(v)


def tanh(v):
    return v.tanh() if isinstance(v, Var) else math.tanh(v)


def clamp_min(v, floor):
    return v.clamp_min(floor) if isinstance(v, Var) else max(v, floor)


def forward(tape: Tape, inputs: dict[str, float]) -> float:
    """Evaluate every node; return the value of the output node."""
    if tape.output is None:
        raise ValueError("tape has no output node")
    missing = set(tape.inputs) - set(inputs)
    if missing:
        raise UnboundInputError(f"unbound input slots: {sorted(missing)}")
    slot = {idx: name for name, idx in tape.inputs.items()}
    nodes = tape.nodes
    for i, nd in enumerate(nodes):
        op = nd.op
        p = nd.parents
        if op == "input":
            v = float(inputs[slot[i]])
        elif op == "constant":
            v = nd.arg
        elif op == "add":
            v = nodes[p[0]].value + nodes[p[1]].value
        elif op == "mul":
            v = nodes[p[0]].value * nodes[p[1]].value
        elif op == "div":
            d = nodes[p[1]].value
            v = nodes[p[0]].value / d if d != 0.0 else math.inf
        elif op == "neg":
            v = -nodes[p[0]].value
        elif op == "exp":
            a = nodes[p[0]].value
            v = math.exp(a) if a < 709.0 else math.inf
        elif op == "log":
            a = nodes[p[0]].value
            v = math.log(a) if a > 0.0 else math.nan
        elif op == "tanh":
            v = math.tanh(nodes[p[0]].value)
        elif op == "pow":
            a = nodes[p[0]].value
            try:
                v = a ** nd.arg
            except (OverflowError, ZeroDivisionError):
                v = math.inf
            if isinstance(v, complex):
                v = math.nan
        elif op == "clamp_min":
            v = max(nodes[p[0]].value, nd.arg)
        else:  # pragma: no cover
            raise ValueError(f"unknown op {op}")
        if not math.isfinite(v):
            raise NonFiniteError(i, op, v)
        nd.value = v
    return nodes[tape.output].value


def backward(tape: Tape) -> list[float]:
    """Adjoints of the output w.r.t. every node, using cached forward values."""
    nodes = tape.nodes
    adj = [0.0] * len(nodes)
    adj[tape.output] = 1.0
    for i in range(tape.output, -1, -1):
        g = adj[i]
        if g == 0.0:
            continue
        nd = nodes[i]
        op = nd.op
        p = nd.parents
        if op == "add":
            adj[p[0]] += g
            adj[p[1]] += g
        elif op == "mul":
            adj[p[0]] += g * nodes[p[1]].value
            adj[p[1]] += g * nodes[p[0]].value
        elif op == "div":
            b = nodes[p[1]].value
            adj[p[0]] += g / b
            adj[p[1]] -= g * nodes[p[0]].value / (b * b)
        elif op == "neg":
            adj[p[0]] -= g
        elif op == "exp":
            adj[p[0]] += g * nd.value
        elif op == "log":
            adj[p[0]] += g / nodes[p[0]].value
        elif op == "tanh":
            adj[p[0]] += g * (1.0 - nd.value * nd.value)
        elif op == "pow":
            a = nodes[p[0]].value
            if nd.arg != 0.0:
                adj[p[0]] += g * nd.arg * a ** (nd.arg - 1.0)
        elif op == "clamp_min":
            # subgradient 0 on the flat side, 1 at and above the floor
            if nodes[p[0]].value >= nd.arg:
                adj[p[0]] += g
    return adj


def gradient(tape: Tape, inputs: dict[str, float]) -> dict[str, float]:
    """d output / d input for every bound input slot (runs forward first)."""
    forward(tape, inputs)
    adj = backward(tape)
    return {name: adj[idx] for name, idx in tape.inputs.items()}


def value_and_gradient(tape: Tape, inputs: dict[str, float]) -> tuple[float, dict[str, float]]:
    val = forward(tape, inputs)
    adj = backward(tape)
    return val, {name: adj[idx] for name, idx in tape.inputs.items()}


def finite_difference(f, point: dict[str, float], names=None, step: float = 1e-5) -> dict[str, float]:
    """Central finite differences of a scalar function of named reals."""
    names = list(point) if names is None else names
    out = {}
    for k in names:
        hi = dict(point)
        lo = dict(point)
        hi[k] += step
        lo[k] -= step
        out[k] = (f(hi) - f(lo)) / (2 * step)
    return out
