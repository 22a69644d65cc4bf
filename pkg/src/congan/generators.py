"""Sequential generator networks.

``h_tilde(z, omega)`` produces a synthetic action and ``g_tilde(x, omega, nu)``
produces a synthetic outcome from that action.  Both consume the same noise
``omega``; ``nu`` enters only the outcome generator.

Each layer is stored as an ``(fan_out + 1) x (fan_in + 1)`` matrix acting on
the input augmented with a leading constant 1.  Row 0 is the fixed
pass-through ``[1, 0, ..., 0]`` that carries the constant forward, column 0
holds the biases and the remaining block holds the slopes.  Only rows
``1:`` are trainable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad

FORMAT = "congan-params"
VERSION = 1
DEFAULT_HIDDEN = (16, 4, 3, 2)
H_INPUTS = 2  # (z, omega)
G_INPUTS = 3  # (x, omega, nu)


class ShapeError(ValueError):
    pass


def _passthrough_row(fan_in: int) -> np.ndarray:
    row = np.zeros(fan_in + 1)
    row[0] = 1.0
    return row


def layer_sizes(n_inputs: int, hidden) -> list[tuple[int, int]]:
    widths = [n_inputs, *hidden, 1]
    return list(zip(widths[:-1], widths[1:]))


@dataclass
class GeneratorParams:
    beta: list[np.ndarray]
    theta: list[np.ndarray]
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    activation: str = "tanh"

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        _check_stack(self.beta, H_INPUTS, self.hidden, "beta")
        _check_stack(self.theta, G_INPUTS, self.hidden, "theta")
        if self.activation != "tanh":
            raise ValueError(f"unsupported activation {self.activation!r}")

    # flat views over trainable entries, beta first then theta
    def names(self) -> list[str]:
        out = []
        for tag, stack in (("beta", self.beta), ("theta", self.theta)):
            for l, W in enumerate(stack):
                for r in range(1, W.shape[0]):
                    for c in range(W.shape[1]):
                        out.append(f"{tag}.{l}.{r}.{c}")
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([W[1:].ravel() for W in (*self.beta, *self.theta)])

    def with_flat(self, vec: np.ndarray) -> GeneratorParams:
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.size:
            raise ShapeError(f"expected {self.size} entries, got {vec.size}")
        pos = 0
        stacks = []
        for stack in (self.beta, self.theta):
            new = []
            for W in stack:
                k = (W.shape[0] - 1) * W.shape[1]
                M = W.copy()
                M[1:] = vec[pos:pos + k].reshape(W.shape[0] - 1, W.shape[1])
                pos += k
                new.append(M)
            stacks.append(new)
        return GeneratorParams(stacks[0], stacks[1], self.hidden, self.activation)

    def as_inputs(self) -> dict[str, float]:
        return dict(zip(self.names(), self.flat().tolist()))

    @property
    def size(self) -> int:
        return sum((W.shape[0] - 1) * W.shape[1] for W in (*self.beta, *self.theta))

    def copy(self) -> GeneratorParams:
        return GeneratorParams([W.copy() for W in self.beta], [W.copy() for W in self.theta],
                               self.hidden, self.activation)

    # serialization ----------------------------------------------------
    def to_dict(self) -> dict:
        def enc(stack):
            return [{"shape": list(W.shape), "data": W.ravel().tolist()} for W in stack]
        return {"format": FORMAT, "version": VERSION, "activation": self.activation,
                "hidden": list(self.hidden), "beta": enc(self.beta), "theta": enc(self.theta)}

    @classmethod
    def from_dict(cls, d: dict) -> GeneratorParams:
        if d.get("format") != FORMAT or d.get("version") != VERSION:
            raise ValueError(f"not a {FORMAT} v{VERSION} record")

        def dec(stack):
            return [np.asarray(e["data"], dtype=float).reshape(e["shape"]) for e in stack]
        return cls(dec(d["beta"]), dec(d["theta"]), tuple(d["hidden"]), d["activation"])

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> GeneratorParams:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _check_stack(stack, n_inputs, hidden, tag):
    sizes = layer_sizes(n_inputs, hidden)
    if len(stack) != len(sizes):
        raise ShapeError(f"{tag}: expected {len(sizes)} layers, got {len(stack)}")
    for l, (W, (fi, fo)) in enumerate(zip(stack, sizes)):
        if W.shape != (fo + 1, fi + 1):
            raise ShapeError(f"{tag}[{l}]: shape {W.shape}, expected {(fo + 1, fi + 1)}")
        if not np.all(np.isfinite(W)):
            raise ValueError(f"{tag}[{l}]: non-finite weights")


def zero_weights(hidden=DEFAULT_HIDDEN) -> GeneratorParams:
    def stack(n_in):
        out = []
        for fi, fo in layer_sizes(n_in, hidden):
            W = np.zeros((fo + 1, fi + 1))
            W[0] = _passthrough_row(fi)
            out.append(W)
        return out
    return GeneratorParams(stack(H_INPUTS), stack(G_INPUTS), tuple(hidden))


def init_weights(hidden=DEFAULT_HIDDEN, seed: int = 0) -> GeneratorParams:
    """Glorot-uniform slopes, zero biases; reproducible per seed."""
    hidden = tuple(hidden)
    if not hidden:
        raise ValueError("need at least one hidden layer")
    rng = np.random.default_rng(seed)
    params = zero_weights(hidden)
    for stack in (params.beta, params.theta):
        for W in stack:
            fo, fi = W.shape[0] - 1, W.shape[1] - 1
            bound = np.sqrt(6.0 / (fi + fo))
            W[1:, 1:] = rng.uniform(-bound, bound, size=(fo, fi))
    return params


# vectorized forward / backward --------------------------------------------

def mlp_forward(stack, inputs: np.ndarray):
    """Run an augmented-weight MLP on rows of ``inputs``.

    Returns the output column (n,) and the list of layer activations needed
    by :func:`mlp_backward`.
    """
    a = np.asarray(inputs, dtype=float)
    acts = [a]
    last = len(stack) - 1
    for l, W in enumerate(stack):
        pre = a @ W[1:, 1:].T + W[1:, 0]
        a = pre if l == last else np.tanh(pre)
        acts.append(a)
    return a[:, 0], acts


def mlp_backward(stack, acts, d_out: np.ndarray):
    """Gradients of ``sum(d_out * output)`` w.r.t. trainable rows and inputs."""
    grads = [None] * len(stack)
    delta = np.asarray(d_out, dtype=float)[:, None]
    last = len(stack) - 1
    for l in range(last, -1, -1):
        W = stack[l]
        if l != last:
            delta = delta * (1.0 - acts[l + 1] ** 2)
        a_prev = acts[l]
        g = np.empty((W.shape[0] - 1, W.shape[1]))
        g[:, 0] = delta.sum(axis=0)
        g[:, 1:] = delta.T @ a_prev
        grads[l] = g
        delta = delta @ W[1:, 1:]
    return grads, delta


def h_forward(params: GeneratorParams, z, omega):
    inp = np.column_stack([np.ravel(z), np.ravel(omega)])
    return mlp_forward(params.beta, inp)


def g_forward(params: GeneratorParams, x, omega, nu):
    inp = np.column_stack([np.ravel(x), np.ravel(omega), np.ravel(nu)])
    return mlp_forward(params.theta, inp)


def generate(params: GeneratorParams, z, omega, nu):
    """Sequential synthetic sample: x = h(z, omega), y = g(x, omega, nu)."""
    x, _ = h_forward(params, z, omega)
    y, _ = g_forward(params, x, omega, nu)
    return x, y


def h_tilde(z: float, omega: float, params: GeneratorParams) -> float:
    if not 0.0 <= omega <= 1.0:
        raise ValueError("omega must lie in [0, 1]")
    return float(h_forward(params, [z], [omega])[0][0])


def g_tilde(x: float, omega: float, nu: float, params: GeneratorParams) -> float:
    if not (0.0 <= omega <= 1.0 and 0.0 <= nu <= 1.0):
        raise ValueError("omega and nu must lie in [0, 1]")
    return float(g_forward(params, [x], [omega], [nu])[0][0])


def flat_grads(params: GeneratorParams, beta_grads, theta_grads) -> np.ndarray:
    return np.concatenate([g.ravel() for g in (*beta_grads, *theta_grads)])


# scalar-tape versions -------------------------------------------------------

def tape_weights(tape: ad.Tape, params: GeneratorParams):
    """Bind every trainable entry to a named tape input; fixed rows become constants."""
    out = {}
    for tag, stack in (("beta", params.beta), ("theta", params.theta)):
        layers = []
        for l, W in enumerate(stack):
            rows = []
            for r in range(1, W.shape[0]):
                rows.append([tape.input(f"{tag}.{l}.{r}.{c}") for c in range(W.shape[1])])
            layers.append(rows)
        out[tag] = layers
    return out


def mlp_scalar(layers, inputs):
    """Layer recursion on scalars (floats or tape Vars)."""
    a = list(inputs)
    last = len(layers) - 1
    for l, rows in enumerate(layers):
        nxt = []
        for row in rows:
            acc = row[0]
            for w, v in zip(row[1:], a):
                acc = acc + w * v
            nxt.append(acc if l == last else ad.tanh(acc))
        a = nxt
    return a[0]
