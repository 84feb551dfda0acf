"""Small dense networks with analytic gradients, in float64 throughout.

Only what the pipeline's heads need: affine layers with relu/tanh/sigmoid/
identity activations, exact backprop, plain SGD and bias-corrected
adaptive-moment updates, and a binary checkpoint format.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

PARAMS_MAGIC = b"ARDP"
PARAMS_VERSION = 1

_ACT_CODES = {"identity": 0, "relu": 1, "tanh": 2, "sigmoid": 3}
_ACT_NAMES = {v: k for k, v in _ACT_CODES.items()}


class TrainingError(RuntimeError):
    """Non-finite values encountered during a forward/backward/update step."""


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "identity":
        return z
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return expit(z)
    raise ValueError(f"unknown activation {name!r}")


def _activate_grad(name: str, z: np.ndarray, out: np.ndarray) -> np.ndarray:
    if name == "identity":
        return np.ones_like(z)
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - out * out
    if name == "sigmoid":
        return out * (1.0 - out)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class DenseNet:
    """A stack of affine layers; ``weights[l]`` has shape (in, out)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("layer lists must have equal length")
        for l, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in _ACT_CODES:
                raise ValueError(f"layer {l}: unknown activation {act!r}")
            if w.ndim != 2 or b.shape != (w.shape[1],):
                raise ValueError(f"layer {l}: weight {w.shape} / bias {b.shape} mismatch")
            if l > 0 and w.shape[0] != self.weights[l - 1].shape[1]:
                raise ValueError(f"layer {l}: input {w.shape[0]} does not compose")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @classmethod
    def build(cls, dims, activations, rng: np.random.Generator) -> "DenseNet":
        """Seeded uniform init in +-sqrt(6 / (fan_in + fan_out)), zero biases."""
        if len(dims) != len(activations) + 1:
            raise ValueError("need len(dims) == len(activations) + 1")
        weights, biases = [], []
        for fan_in, fan_out in zip(dims, dims[1:]):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            biases.append(np.zeros(fan_out))
        return cls(weights, biases, list(activations))

    @classmethod
    def identity(cls, dim: int) -> "DenseNet":
        return cls([np.eye(dim)], [np.zeros(dim)], ["identity"])

    def copy(self) -> "DenseNet":
        return DenseNet(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def forward(net: DenseNet, x: np.ndarray):
    """Run the network; returns (output, cache) with per-layer pre-activations.

    Accepts a single vector or a (batch, in_dim) matrix; the output mirrors
    the input's shape convention.
    """
    x = np.asarray(x, dtype=np.float64)
    vector = x.ndim == 1
    a = x[None, :] if vector else x
    if a.shape[1] != net.in_dim:
        raise ValueError(f"input width {a.shape[1]} != net in_dim {net.in_dim}")
    if not np.isfinite(a).all():
        raise TrainingError("non-finite network input")
    inputs, pres, outs = [a], [], []
    for w, b, act in zip(net.weights, net.biases, net.activations):
        z = a @ w + b
        a = _activate(act, z)
        pres.append(z)
        outs.append(a)
        inputs.append(a)
    cache = {"inputs": inputs[:-1], "pre": pres, "out": outs, "vector": vector}
    return (a[0] if vector else a), cache


def backward(net: DenseNet, cache: dict, dy: np.ndarray):
    """Exact gradients for every layer given dL/dy; also returns dL/dx."""
    dy = np.asarray(dy, dtype=np.float64)
    if cache["vector"]:
        dy = dy[None, :]
    if dy.shape != cache["out"][-1].shape:
        raise ValueError(f"dy shape {dy.shape} != output shape {cache['out'][-1].shape}")
    grads: list[tuple[np.ndarray, np.ndarray]] = [None] * len(net.weights)
    delta = dy
    for l in range(len(net.weights) - 1, -1, -1):
        delta = delta * _activate_grad(net.activations[l], cache["pre"][l], cache["out"][l])
        grads[l] = (cache["inputs"][l].T @ delta, delta.sum(axis=0))
        delta = delta @ net.weights[l].T
    dx = delta[0] if cache["vector"] else delta
    return grads, dx


def flat_grads(layer_grads) -> list[np.ndarray]:
    """Flatten [(dW, db), ...] into the DenseNet.params() ordering."""
    out = []
    for dw, db in layer_grads:
        out.extend((dw, db))
    return out


@dataclass
class OptState:
    """SGD or bias-corrected adaptive-moment optimizer state.

    ``weight_decay`` is decoupled (applied directly to the parameters,
    AdamW-style), not folded into the gradients.
    """

    kind: str
    learning_rate: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step_count: int = 0
    _m: list = field(default_factory=list, repr=False)
    _v: list = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


def step(opt: OptState, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
    """Update parameters in place from gradients; returns the params list."""
    if len(params) != len(grads):
        raise ValueError("params/grads length mismatch")
    for p, g in zip(params, grads):
        if p.shape != np.shape(g):
            raise ValueError(f"gradient shape {np.shape(g)} != parameter shape {p.shape}")
        if not np.isfinite(g).all():
            raise TrainingError("non-finite gradient")
    if opt.weight_decay:
        for p in params:
            p *= 1.0 - opt.learning_rate * opt.weight_decay
    if opt.kind == "sgd":
        for p, g in zip(params, grads):
            p -= opt.learning_rate * g
        return params
    if not opt._m:
        opt._m = [np.zeros_like(p) for p in params]
        opt._v = [np.zeros_like(p) for p in params]
    opt.step_count += 1
    t = opt.step_count
    for p, g, m, v in zip(params, grads, opt._m, opt._v):
        m *= opt.beta1
        m += (1.0 - opt.beta1) * g
        v *= opt.beta2
        v += (1.0 - opt.beta2) * (g * g)
        m_hat = m / (1.0 - opt.beta1**t)
        v_hat = v / (1.0 - opt.beta2**t)
        p -= opt.learning_rate * m_hat / (np.sqrt(v_hat) + opt.eps)
    return params


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(net: DenseNet, path) -> None:
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<II", PARAMS_VERSION, len(net.weights)))
        for w, act in zip(net.weights, net.activations):
            fh.write(struct.pack("<III", w.shape[0], w.shape[1], _ACT_CODES[act]))
        for w, b in zip(net.weights, net.biases):
            fh.write(w.astype("<f8").tobytes(order="C"))
            fh.write(b.astype("<f8").tobytes(order="C"))


def load_checkpoint(path) -> DenseNet:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != PARAMS_MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    version, n_layers = struct.unpack_from("<II", raw, 4)
    if version != PARAMS_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    off = 12
    shapes = []
    for _ in range(n_layers):
        rows, cols, code = struct.unpack_from("<III", raw, off)
        off += 12
        if code not in _ACT_NAMES:
            raise ValueError(f"{path}: unknown activation code {code}")
        shapes.append((rows, cols, _ACT_NAMES[code]))
    weights, biases, acts = [], [], []
    for rows, cols, act in shapes:
        need = 8 * (rows * cols + cols)
        if off + need > len(raw):
            raise ValueError(f"{path}: truncated payload")
        w = np.frombuffer(raw, dtype="<f8", count=rows * cols, offset=off).reshape(rows, cols)
        off += 8 * rows * cols
        b = np.frombuffer(raw, dtype="<f8", count=cols, offset=off)
        off += 8 * cols
        weights.append(w.copy())
        biases.append(b.copy())
        acts.append(act)
    return DenseNet(weights, biases, acts)
