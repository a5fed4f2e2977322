"""The classifier: a fully-connected net with two ReLU hidden layers and a
single-logit output, binary cross-entropy in stable logit form, analytic
backpropagation and a bias-corrected Adam optimizer.

Default hidden widths are 512 and 32. The decision rule everywhere is
probability >= 0.5, i.e. logit >= 0.

All functions are pure except that `adam_step` returns fresh state; the hot
paths dispatch to the active kernel backend (see fairclf.kernels).
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DataError, NumericalError

DEFAULT_HIDDEN = (512, 32)
MAGIC = b"FCLF"


@dataclass
class MlpParams:
    """Weights and biases; w1 is (h1, d), w2 (h2, h1), w3 (1, h2)."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def arrays(self):
        return (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)

    @property
    def dim(self) -> int:
        return self.w1.shape[1]

    @property
    def layer_sizes(self):
        return (self.w1.shape[0], self.w2.shape[0], self.w3.shape[0])

    def copy(self) -> "MlpParams":
        return MlpParams(*(a.copy() for a in self.arrays()))


@dataclass
class Gradients:
    """Loss gradients, shaped exactly like MlpParams."""

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    def arrays(self):
        return (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3)


@dataclass
class AdamState:
    """First/second moment accumulators plus the step counter."""

    m: tuple
    v: tuple
    t: int = 0
    learning_rate: float = 5e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: MlpParams, learning_rate: float = 5e-4) -> "AdamState":
        return cls(
            m=tuple(np.zeros_like(a) for a in params.arrays()),
            v=tuple(np.zeros_like(a) for a in params.arrays()),
            learning_rate=learning_rate,
        )


@dataclass
class ForwardCache:
    """Per-layer pre-activations/activations for one batch, plus final logits."""

    x: np.ndarray
    z1: np.ndarray
    a1: np.ndarray
    z2: np.ndarray
    a2: np.ndarray
    logits: np.ndarray

    @property
    def batch_size(self) -> int:
        return self.x.shape[0]


def init_params(d: int, seed, hidden=DEFAULT_HIDDEN) -> MlpParams:
    """He-style init: zero-mean weights with variance 2/fan_in, zero biases."""
    if d < 1:
        raise ValueError("input dimension must be >= 1")
    h1, h2 = hidden
    rng = np.random.default_rng(seed)
    w1 = rng.normal(0.0, np.sqrt(2.0 / d), size=(h1, d))
    w2 = rng.normal(0.0, np.sqrt(2.0 / h1), size=(h2, h1))
    w3 = rng.normal(0.0, np.sqrt(2.0 / h2), size=(1, h2))
    return MlpParams(w1, np.zeros(h1), w2, np.zeros(h2), w3, np.zeros(1))


def _as_batch(x, d: int) -> np.ndarray:
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != d:
        raise ValueError(f"batch must have shape (n, {d}), got {x.shape}")
    return x


def forward(params: MlpParams, batch) -> ForwardCache:
    """Evaluate the network on a batch; rejects non-finite input."""
    x = _as_batch(batch, params.dim)
    if x.size and not np.isfinite(x).all():
        raise DataError("non-finite value in input batch")
    z1, a1, z2, a2, logits = kernels.mlp_forward(*params.arrays(), x)
    return ForwardCache(x, z1, a1, z2, a2, logits)


def bce_loss(cache: ForwardCache, labels):
    """Mean binary cross-entropy from logits.

    Uses the overflow-free form max(z,0) - z*y + log(1 + exp(-|z|)).
    Returns (loss, dloss/dlogits) with the gradient already divided by the
    batch size.
    """
    z = cache.logits
    y = np.asarray(labels, dtype=np.float64)
    if y.shape != z.shape:
        raise ValueError("labels length must match batch size")
    n = z.shape[0]
    if n == 0:
        return 0.0, np.zeros(0)
    loss = float(np.mean(np.maximum(z, 0.0) - z * y + np.log1p(np.exp(-np.abs(z)))))
    dlogits = (sigmoid(z) - y) / n
    return loss, dlogits


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def backward(params: MlpParams, cache: ForwardCache, dlogits) -> Gradients:
    """Exact reverse-mode gradients of the scalar loss w.r.t. every parameter."""
    dlogits = np.ascontiguousarray(dlogits, dtype=np.float64)
    if dlogits.shape != cache.logits.shape:
        raise ValueError("upstream gradient shape must match logits")
    grads = kernels.mlp_backward(
        params.w2, params.w3, cache.x, cache.z1, cache.a1, cache.z2, cache.a2, dlogits
    )
    return Gradients(*grads)


def adam_step(params: MlpParams, state: AdamState, grads: Gradients):
    """One optimizer step; returns (new_params, new_state)."""
    for g in grads.arrays():
        if not np.isfinite(g).all():
            raise NumericalError("non-finite gradient passed to adam_step")
    new_params = params.copy()
    new_state = AdamState(
        m=tuple(a.copy() for a in state.m),
        v=tuple(a.copy() for a in state.v),
        t=state.t + 1,
        learning_rate=state.learning_rate,
        beta1=state.beta1,
        beta2=state.beta2,
        eps=state.eps,
    )
    for p, m, v, g in zip(new_params.arrays(), new_state.m, new_state.v, grads.arrays()):
        kernels.adam_update(
            p.ravel(), m.ravel(), v.ravel(), np.ascontiguousarray(g, dtype=np.float64).ravel(),
            new_state.learning_rate, new_state.beta1, new_state.beta2,
            new_state.eps, new_state.t,
        )
    return new_params, new_state


def save_checkpoint(params: MlpParams, path, header_extra=None):
    """Write a checkpoint: magic, length-prefixed JSON header, float32 blob.

    The blob is little-endian float32, parameters concatenated in
    (w1, b1, w2, b2, w3, b3) order, each row-major. Round-trips bit-exactly.
    """
    header = {
        "dim": int(params.dim),
        "layer_sizes": [int(s) for s in params.layer_sizes],
    }
    if header_extra:
        header.update(header_extra)
    blob = b"".join(
        np.ascontiguousarray(a, dtype="<f4").tobytes() for a in params.arrays()
    )
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        fh.write(blob)


def load_checkpoint(path):
    """Read a checkpoint written by save_checkpoint; returns (params, header)."""
    with open(path, "rb") as fh:
        if fh.read(4) != MAGIC:
            raise DataError(f"{path}: not a fairclf checkpoint")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen).decode())
        blob = fh.read()
    d = header["dim"]
    h1, h2, _ = header["layer_sizes"]
    shapes = [(h1, d), (h1,), (h2, h1), (h2,), (1, h2), (1,)]
    expected = sum(int(np.prod(s)) for s in shapes)
    flat = np.frombuffer(blob, dtype="<f4")
    if flat.size != expected:
        raise DataError(f"{path}: parameter blob has {flat.size} floats, expected {expected}")
    arrays = []
    pos = 0
    for shape in shapes:
        count = int(np.prod(shape))
        arrays.append(flat[pos : pos + count].astype(np.float64).reshape(shape))
        pos += count
    return MlpParams(*arrays), header
