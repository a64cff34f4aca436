"""Small fully-connected networks with hand-written gradients.

The control stack only needs two-hidden-layer perceptrons with either a
scalar linear output (value estimates) or groupwise-softmax outputs
(probability vectors), so forward, backward, and Adam are written directly
against that shape. Gradients are exact for both parameters and inputs;
inputs matter because policy updates climb the value network's input
gradient.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

MAGIC = b"MLPC"
FORMAT_VERSION = 1

HEAD_LINEAR = "linear"
HEAD_SOFTMAX = "softmax"


@dataclass
class Mlp:
    """Feed-forward net: relu hidden layers, linear or groupwise-softmax head.

    params alternate weight matrices (fan_in, fan_out) and bias vectors.
    For a softmax head, `groups` partitions the output vector; each group is
    normalized independently.
    """

    dims: tuple[int, ...]
    head: str = HEAD_LINEAR
    groups: tuple[int, ...] = ()
    params: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.groups = tuple(int(g) for g in self.groups)
        if self.head not in (HEAD_LINEAR, HEAD_SOFTMAX):
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == HEAD_SOFTMAX and sum(self.groups) != self.dims[-1]:
            raise ValueError("softmax groups must partition the output vector")

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def copy(self) -> "Mlp":
        return Mlp(self.dims, self.head, self.groups, [p.copy() for p in self.params])

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        """Outputs plus the cache needed for an exact backward pass."""
        x = np.asarray(x, dtype=np.float64)
        squeeze = x.ndim == 1
        if squeeze:
            x = x[None, :]
        if x.shape[1] != self.dims[0]:
            raise ValueError(f"input width {x.shape[1]} != {self.dims[0]}")
        n_layers = len(self.dims) - 1
        acts = [x]
        pre = []
        a = x
        for layer in range(n_layers):
            w = self.params[2 * layer]
            b = self.params[2 * layer + 1]
            z = a @ w + b
            pre.append(z)
            a = np.maximum(z, 0.0) if layer < n_layers - 1 else z
            acts.append(a)
        y = self._apply_head(a)
        cache = {"acts": acts, "pre": pre, "out": y, "squeeze": squeeze}
        return (y[0] if squeeze else y), cache

    def _apply_head(self, z: np.ndarray) -> np.ndarray:
        if self.head == HEAD_LINEAR:
            return z
        y = np.empty_like(z)
        start = 0
        for g in self.groups:
            chunk = z[:, start : start + g]
            shifted = chunk - chunk.max(axis=1, keepdims=True)
            e = np.exp(shifted)
            y[:, start : start + g] = e / e.sum(axis=1, keepdims=True)
            start += g
        return y

    def backward(self, cache: dict, dout: np.ndarray) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients of a scalar loss w.r.t. parameters and the input batch.

        dout is dLoss/dOutput, same shape as the forward output; parameter
        gradients are summed over the batch.
        """
        dout = np.asarray(dout, dtype=np.float64)
        if dout.ndim == 1:
            dout = dout[None, :]
        y = cache["out"]
        if self.head == HEAD_SOFTMAX:
            dz = np.empty_like(dout)
            start = 0
            for g in self.groups:
                p = y[:, start : start + g]
                dp = dout[:, start : start + g]
                inner = (dp * p).sum(axis=1, keepdims=True)
                dz[:, start : start + g] = p * (dp - inner)
                start += g
        else:
            dz = dout

        grads: list[np.ndarray] = [None] * len(self.params)
        n_layers = len(self.dims) - 1
        for layer in reversed(range(n_layers)):
            a_prev = cache["acts"][layer]
            w = self.params[2 * layer]
            grads[2 * layer] = a_prev.T @ dz
            grads[2 * layer + 1] = dz.sum(axis=0)
            da = dz @ w.T
            if layer > 0:
                dz = da * (cache["pre"][layer - 1] > 0)
            else:
                dx = da
        if cache["squeeze"]:
            dx = dx[0]
        return grads, dx


def init_mlp(
    dims, head: str = HEAD_LINEAR, groups=(), rng: np.random.Generator | None = None
) -> Mlp:
    """Uniform fan-in-scaled initialization, deterministic from the given rng."""
    rng = rng if rng is not None else np.random.default_rng()
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        params.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        params.append(rng.uniform(-bound, bound, size=fan_out))
    return Mlp(tuple(dims), head, tuple(groups), params)


@dataclass
class AdamState:
    """Per-network Adam accumulators."""

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    @classmethod
    def for_net(cls, net: Mlp, lr: float = 1e-3) -> "AdamState":
        return cls(
            lr=lr,
            m=[np.zeros_like(p) for p in net.params],
            v=[np.zeros_like(p) for p in net.params],
        )


def adam_step(net: Mlp, state: AdamState, grads: list[np.ndarray]) -> Mlp:
    """One bias-corrected Adam update, in place."""
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    for p, m, v, g in zip(net.params, state.m, state.v, grads):
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1**state.t)
        v_hat = v / (1 - b2**state.t)
        p -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return net


def soft_update(target: Mlp, source: Mlp, tau: float) -> None:
    """Polyak-average source parameters into the target network."""
    for tp, sp in zip(target.params, source.params):
        tp *= 1.0 - tau
        tp += tau * sp


# -- checkpoint container ----------------------------------------------------
#
# Layout (little-endian):
#   magic "MLPC" | u32 version | u8 head (0 linear, 1 softmax) | u8 activation
#   u16 reserved | u32 n_dims | u32*n_dims dims | u32 n_groups | u32*n groups
#   float64 parameters in declared order (W1, b1, W2, b2, ...), row-major.


def save_mlp(path, net: Mlp) -> None:
    head_code = 0 if net.head == HEAD_LINEAR else 1
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IBBH", FORMAT_VERSION, head_code, 0, 0))
        fh.write(struct.pack("<I", len(net.dims)))
        fh.write(struct.pack(f"<{len(net.dims)}I", *net.dims))
        fh.write(struct.pack("<I", len(net.groups)))
        if net.groups:
            fh.write(struct.pack(f"<{len(net.groups)}I", *net.groups))
        for p in net.params:
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_mlp(path) -> Mlp:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ValueError(f"{path}: not a model checkpoint")
    off = 4
    version, head_code, _act, _pad = struct.unpack_from("<IBBH", blob, off)
    off += 8
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    (n_dims,) = struct.unpack_from("<I", blob, off)
    off += 4
    dims = struct.unpack_from(f"<{n_dims}I", blob, off)
    off += 4 * n_dims
    (n_groups,) = struct.unpack_from("<I", blob, off)
    off += 4
    groups = struct.unpack_from(f"<{n_groups}I", blob, off) if n_groups else ()
    off += 4 * n_groups
    params = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        for shape in ((fan_in, fan_out), (fan_out,)):
            count = int(np.prod(shape))
            arr = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
            off += 8 * count
            params.append(arr.reshape(shape).astype(np.float64))
    if off != len(blob):
        raise ValueError(f"{path}: trailing bytes in checkpoint")
    head = HEAD_LINEAR if head_code == 0 else HEAD_SOFTMAX
    return Mlp(tuple(int(d) for d in dims), head, tuple(int(g) for g in groups), params)
