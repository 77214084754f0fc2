"""Dense encoder E plus linear projection head g, with a hand-written backward pass."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "linear")


@dataclass
class EncoderModel:
    """``weights[i]`` has shape (fan_in, fan_out); the last layer is the head.

    Encoder layers apply ``activation``; the projection head is linear.
    """

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}")
        if len(self.weights) != len(self.biases) or len(self.weights) < 2:
            raise ValueError("need at least one encoder layer and a head")
        for a, b in zip(self.weights[:-1], self.weights[1:]):
            if a.shape[1] != b.shape[0]:
                raise ValueError("layer shapes do not chain")
        if self.proj_dim % 2:
            raise ValueError("projection dimension must be even")

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def feature_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def proj_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def dtype(self):
        return self.weights[0].dtype

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def copy(self) -> "EncoderModel":
        return EncoderModel([w.copy() for w in self.weights],
                            [b.copy() for b in self.biases], self.activation)

    def astype(self, dtype) -> "EncoderModel":
        return EncoderModel([w.astype(dtype) for w in self.weights],
                            [b.astype(dtype) for b in self.biases], self.activation)

    def save(self, path) -> None:
        arrays = {f"w{i}": w for i, w in enumerate(self.weights)}
        arrays.update({f"b{i}": b for i, b in enumerate(self.biases)})
        with open(path, "wb") as fh:
            np.savez(fh, activation=np.array(self.activation), **arrays)

    @classmethod
    def load(cls, path) -> "EncoderModel":
        with np.load(path) as data:
            n = sum(1 for k in data.files if k.startswith("w"))
            return cls([data[f"w{i}"] for i in range(n)], [data[f"b{i}"] for i in range(n)],
                       str(data["activation"]))


def init_encoder(
    input_dim: int,
    hidden=(256, 128),
    feature_dim: int = 64,
    proj_dim: int = 32,
    seed: int = 0,
    activation: str = "tanh",
    dtype=np.float32,
) -> EncoderModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    sizes = [input_dim, *hidden, feature_dim, proj_dim]
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        lim = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-lim, lim, (fan_in, fan_out)).astype(dtype))
        bs.append(np.zeros(fan_out, dtype=dtype))
    return EncoderModel(ws, bs, activation)


@dataclass
class Tape:
    inputs: list[np.ndarray] = field(default_factory=list)   # input of each layer
    outputs: list[np.ndarray] = field(default_factory=list)  # post-activation output


def encoder_forward(model: EncoderModel, x):
    """Returns (features, projections, tape) for a batch of flattened images."""
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[None]
    if x.ndim > 2:
        x = x.reshape(x.shape[0], -1)
    if x.shape[1] != model.input_dim:
        raise ValueError(f"input dimension {x.shape[1]} != model input {model.input_dim}")
    h = x.astype(model.dtype, copy=False)
    tape = Tape()
    last = len(model.weights) - 1
    for i, (w, b) in enumerate(zip(model.weights, model.biases)):
        tape.inputs.append(h)
        h = h @ w + b
        if i < last and model.activation == "tanh":
            h = np.tanh(h)
        tape.outputs.append(h)
    return tape.inputs[-1], h, tape


def encoder_backward(model: EncoderModel, tape: Tape, grad_proj) -> list[np.ndarray]:
    """Parameter gradients ordered like :meth:`EncoderModel.params`."""
    g = np.asarray(grad_proj).astype(model.dtype, copy=False)
    last = len(model.weights) - 1
    grads: list[np.ndarray] = [None] * (2 * len(model.weights))
    for i in range(last, -1, -1):
        if i < last and model.activation == "tanh":
            g = g * (1.0 - tape.outputs[i] ** 2)
        grads[2 * i] = tape.inputs[i].T @ g
        grads[2 * i + 1] = g.sum(axis=0)
        if i:
            g = g @ model.weights[i].T
    return grads
