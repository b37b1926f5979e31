"""Minimal dense feed-forward networks with exact reverse-mode gradients.

Every actor, critic, message encoder and coordinator in this package is one of
these nets: a stack of affine layers with elementwise (or blockwise-softmax)
activations. Parameters live in a single flat float64 buffer; per-layer weight
and bias arrays are views into it, which keeps optimizer steps, soft target
blends and gradient clipping down to a handful of vector ops.

Inputs may be single vectors ``(d,)`` or batches ``(B, d)``; gradients returned
for a batch are summed over the batch dimension.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit

from .errors import ContractError, ShapeError

ELU_ALPHA = 1.0
SOFTMAX_SUM_TOL = 1e-9


class Activation(str, Enum):
    IDENTITY = "identity"
    RELU = "relu"
    ELU = "elu"
    SIGMOID = "sigmoid"
    TANH = "tanh"
    SOFTMAX = "softmax"


class UpdateMode(str, Enum):
    SGD_ASCENT = "sgd_ascent"
    SGD_DESCENT = "sgd_descent"
    ADAM = "adam"


@dataclass(frozen=True)
class LayerSpec:
    """One dense layer: ``out = activation(W @ x + b)``.

    ``groups`` only matters for softmax: the output is split into ``groups``
    equal blocks and softmax is applied independently per block (used by the
    joint fully-connected actor that emits one distribution per agent).
    """

    in_dim: int
    out_dim: int
    activation: Activation = Activation.IDENTITY
    groups: int = 1
    use_bias: bool = True

    def __post_init__(self) -> None:
        if self.in_dim <= 0 or self.out_dim <= 0:
            raise ShapeError(f"layer dims must be positive, got {self.in_dim}x{self.out_dim}")
        if self.out_dim % self.groups != 0:
            raise ShapeError(f"out_dim {self.out_dim} not divisible into {self.groups} groups")

    @property
    def n_params(self) -> int:
        return self.out_dim * self.in_dim + (self.out_dim if self.use_bias else 0)


def validate_layer_chain(specs: tuple[LayerSpec, ...]) -> None:
    if not specs:
        raise ShapeError("a net needs at least one layer")
    for a, b in zip(specs, specs[1:]):
        if a.out_dim != b.in_dim:
            raise ShapeError(f"layer chain mismatch: {a.out_dim} -> {b.in_dim}")
    for spec in specs[:-1]:
        if spec.activation is Activation.SOFTMAX:
            raise ShapeError("softmax is only allowed as the final layer")


class Tape:
    """Cached per-layer inputs and pre/post activations from one forward pass."""

    __slots__ = ("net_id", "inputs", "pre", "post", "batched")

    def __init__(self, net_id: int, inputs: list, pre: list, post: list, batched: bool):
        self.net_id = net_id
        self.inputs = inputs
        self.pre = pre
        self.post = post
        self.batched = batched


class GradRecord:
    """Parameter gradients (flat, mirroring a net's buffer) plus the input gradient."""

    __slots__ = ("flat", "input_grad")

    def __init__(self, flat: np.ndarray, input_grad: np.ndarray):
        self.flat = flat
        self.input_grad = input_grad

    def scaled(self, c: float) -> "GradRecord":
        return GradRecord(self.flat * c, self.input_grad * c)


class AdamState:
    __slots__ = ("m", "v", "t")

    def __init__(self, n: int):
        self.m = np.zeros(n)
        self.v = np.zeros(n)
        self.t = 0


def _activate(z: np.ndarray, spec: LayerSpec) -> np.ndarray:
    kind = spec.activation
    if kind is Activation.IDENTITY:
        return z
    if kind is Activation.RELU:
        return np.maximum(z, 0.0)
    if kind is Activation.ELU:
        return np.where(z > 0.0, z, ELU_ALPHA * np.expm1(np.minimum(z, 0.0)))
    if kind is Activation.SIGMOID:
        return expit(z)
    if kind is Activation.TANH:
        return np.tanh(z)
    if kind is Activation.SOFTMAX:
        return _softmax(z, spec.groups)
    raise ShapeError(f"unknown activation {kind}")


def _softmax(z: np.ndarray, groups: int) -> np.ndarray:
    blocks = z.reshape(z.shape[:-1] + (groups, z.shape[-1] // groups))
    shifted = blocks - blocks.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)
    return out.reshape(z.shape)


def _activation_backward(grad_out: np.ndarray, z: np.ndarray, y: np.ndarray, spec: LayerSpec) -> np.ndarray:
    kind = spec.activation
    if kind is Activation.IDENTITY:
        return grad_out
    if kind is Activation.RELU:
        return np.where(z > 0.0, grad_out, 0.0)
    if kind is Activation.ELU:
        return np.where(z > 0.0, grad_out, grad_out * (y + ELU_ALPHA))
    if kind is Activation.SIGMOID:
        return grad_out * y * (1.0 - y)
    if kind is Activation.TANH:
        return grad_out * (1.0 - y * y)
    if kind is Activation.SOFTMAX:
        yb = y.reshape(y.shape[:-1] + (spec.groups, y.shape[-1] // spec.groups))
        gb = grad_out.reshape(yb.shape)
        inner = (yb * gb).sum(axis=-1, keepdims=True)
        return (yb * (gb - inner)).reshape(y.shape)
    raise ShapeError(f"unknown activation {kind}")


class Net:
    """A dense MLP with parameters in one flat buffer.

    ``weights[i]`` and ``biases[i]`` are views into ``flat``; mutating either
    side is visible through the other.
    """

    def __init__(self, specs: tuple[LayerSpec, ...], flat: np.ndarray):
        validate_layer_chain(tuple(specs))
        expected = sum(s.n_params for s in specs)
        if flat.shape != (expected,):
            raise ShapeError(f"flat buffer has {flat.shape}, layout needs ({expected},)")
        self.specs = tuple(specs)
        self.flat = flat
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray | None] = []
        offset = 0
        for s in self.specs:
            w = flat[offset : offset + s.out_dim * s.in_dim].reshape(s.out_dim, s.in_dim)
            offset += s.out_dim * s.in_dim
            if s.use_bias:
                b = flat[offset : offset + s.out_dim]
                offset += s.out_dim
            else:
                b = None
            self.weights.append(w)
            self.biases.append(b)
        self.adam: AdamState | None = None

    @classmethod
    def build(cls, specs: list[LayerSpec] | tuple[LayerSpec, ...], rng: np.random.Generator) -> "Net":
        """Fan-in scaled uniform weight init, zero biases."""
        specs = tuple(specs)
        validate_layer_chain(specs)
        flat = np.zeros(sum(s.n_params for s in specs))
        net = cls(specs, flat)
        for w, s in zip(net.weights, specs):
            bound = 1.0 / np.sqrt(s.in_dim)
            w[...] = rng.uniform(-bound, bound, size=w.shape)
        return net

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.specs[-1].out_dim

    @property
    def n_params(self) -> int:
        return self.flat.size

    def copy(self) -> "Net":
        return Net(self.specs, self.flat.copy())

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, Tape]:
        x = np.asarray(x, dtype=np.float64)
        batched = x.ndim == 2
        if x.ndim not in (1, 2) or x.shape[-1] != self.in_dim:
            raise ShapeError(f"input shape {x.shape} incompatible with in_dim {self.in_dim}")
        if not np.all(np.isfinite(x)):
            raise ShapeError("non-finite input")
        inputs, pres, posts = [], [], []
        h = x
        for w, b, s in zip(self.weights, self.biases, self.specs):
            inputs.append(h)
            z = h @ w.T if batched else w @ h
            if b is not None:
                z = z + b
            y = _activate(z, s)
            pres.append(z)
            posts.append(y)
            h = y
        return h, Tape(id(self), inputs, pres, posts, batched)

    def backward(self, tape: Tape, output_grad: np.ndarray, from_logits: bool = False) -> GradRecord:
        """Exact reverse-mode gradients of ``output . output_grad``.

        With ``from_logits`` the gradient is taken w.r.t. the final layer's
        pre-activation instead (callers supply e.g. the softmax log-prob
        shortcut directly, skipping the head's activation backward).
        """
        if tape.net_id != id(self):
            raise ContractError("tape does not belong to this net")
        grad = np.asarray(output_grad, dtype=np.float64)
        expected = tape.post[-1].shape
        if grad.shape != expected:
            raise ShapeError(f"output_grad shape {grad.shape}, forward produced {expected}")
        flat = np.zeros(self.n_params)
        rec = Net(self.specs, flat)  # reuse the view layout for the gradient buffer
        g = grad
        for i in range(len(self.specs) - 1, -1, -1):
            s = self.specs[i]
            if not (from_logits and i == len(self.specs) - 1):
                g = _activation_backward(g, tape.pre[i], tape.post[i], s)
            x = tape.inputs[i]
            if tape.batched:
                rec.weights[i][...] = g.T @ x
                if rec.biases[i] is not None:
                    rec.biases[i][...] = g.sum(axis=0)
                g = g @ self.weights[i]
            else:
                rec.weights[i][...] = np.outer(g, x)
                if rec.biases[i] is not None:
                    rec.biases[i][...] = g
                g = self.weights[i].T @ g
        return GradRecord(flat, g)


def apply_update(net: Net, grads: GradRecord | np.ndarray, step: float, mode: UpdateMode | str) -> Net:
    """In-place parameter step; returns the same net.

    ``sgd_ascent`` adds ``step * grad``; ``sgd_descent`` subtracts it; ``adam``
    runs the standard bias-corrected descent rule with state kept on the net.
    """
    mode = UpdateMode(mode)
    if step <= 0.0:
        raise ValueError(f"step must be positive, got {step}")
    g = grads.flat if isinstance(grads, GradRecord) else np.asarray(grads, dtype=np.float64)
    if g.shape != net.flat.shape:
        raise ShapeError(f"gradient shape {g.shape} does not match params {net.flat.shape}")
    if mode is UpdateMode.SGD_ASCENT:
        net.flat += step * g
    elif mode is UpdateMode.SGD_DESCENT:
        net.flat -= step * g
    else:
        beta1, beta2, eps = 0.9, 0.999, 1e-8
        if net.adam is None:
            net.adam = AdamState(net.n_params)
        st = net.adam
        st.t += 1
        st.m += (1.0 - beta1) * (g - st.m)
        st.v += (1.0 - beta2) * (g * g - st.v)
        m_hat = st.m / (1.0 - beta1**st.t)
        v_hat = st.v / (1.0 - beta2**st.t)
        net.flat -= step * m_hat / (np.sqrt(v_hat) + eps)
    return net


def soft_update(target: Net, source: Net, blend: float) -> None:
    """target <- (1 - blend) * target + blend * source, elementwise."""
    if target.flat.shape != source.flat.shape:
        raise ShapeError("target/source parameter layouts differ")
    target.flat += blend * (source.flat - target.flat)


def clip_global_norm(grad_flats: list[np.ndarray], max_norm: float) -> float:
    """Scale the whole gradient set so its joint L2 norm is at most ``max_norm``."""
    total = np.sqrt(sum(float(g @ g) for g in grad_flats))
    if total > max_norm > 0.0:
        scale = max_norm / total
        for g in grad_flats:
            g *= scale
    return total

def gradient_check(net: Net, x: np.ndarray, eps: float = 1e-5) -> float:
    """Max mismatch between analytic and central-difference parameter gradients.

    The probe scalar is ``sum_k (k+1) * output_k`` (the ramp breaks softmax's
    constant-sum degeneracy). Returns ``max |analytic - numeric| / max(1, |numeric|)``.
    """
    if not (0.0 < eps <= 1e-3):
        raise ValueError(f"eps must be in (0, 1e-3], got {eps}")
    ramp = np.arange(1.0, net.out_dim + 1.0)
    y, tape = net.forward(x)
    analytic = net.backward(tape, np.broadcast_to(ramp, y.shape).copy()).flat
    worst = 0.0
    for i in range(net.n_params):
        orig = net.flat[i]
        net.flat[i] = orig + eps
        hi = float(np.sum(net.forward(x)[0] * ramp))
        net.flat[i] = orig - eps
        lo = float(np.sum(net.forward(x)[0] * ramp))
        net.flat[i] = orig
        numeric = (hi - lo) / (2.0 * eps)
        worst = max(worst, abs(analytic[i] - numeric) / max(1.0, abs(numeric)))
    return worst


def net_to_dict(net: Net) -> dict:
    return {
        "layers": [
            {
                "in_dim": s.in_dim,
                "out_dim": s.out_dim,
                "activation": s.activation.value,
                "groups": s.groups,
                "use_bias": s.use_bias,
            }
            for s in net.specs
        ],
        "params": net.flat.tolist(),
    }


def net_from_dict(data: dict) -> Net:
    specs = tuple(
        LayerSpec(
            in_dim=int(l["in_dim"]),
            out_dim=int(l["out_dim"]),
            activation=Activation(l["activation"]),
            groups=int(l.get("groups", 1)),
            use_bias=bool(l.get("use_bias", True)),
        )
        for l in data["layers"]
    )
    flat = np.asarray(data["params"], dtype=np.float64)
    return Net(specs, flat)
