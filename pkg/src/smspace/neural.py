"""From-scratch MLPs, the siamese sensorimotor predictor, and Adam.

Parameters are float64 numpy arrays. Weight matrices are stored with shape
``(fan_in, fan_out)`` so a layer computes ``x @ W + b`` on row batches.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .numcore import RandomStream

SELU_ALPHA = 1.6732632423543772
SELU_LAMBDA = 1.0507009873554805


class TrainingError(RuntimeError):
    pass


def selu(x):
    x = np.asarray(x, dtype=np.float64)
    return SELU_LAMBDA * np.where(x > 0, x, SELU_ALPHA * np.expm1(np.minimum(x, 0.0)))


def selu_grad(x, y=None):
    """Derivative at pre-activation ``x``; reuses ``y = selu(x)`` when given."""
    x = np.asarray(x, dtype=np.float64)
    if y is None:
        return SELU_LAMBDA * np.where(x > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(x, 0.0)))
    # for x <= 0: d/dx lam*alpha*(e^x - 1) = selu(x) + lam*alpha
    return np.where(x > 0, SELU_LAMBDA, y + SELU_LAMBDA * SELU_ALPHA)


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_grad(x, y=None):
    return (np.asarray(x) > 0).astype(np.float64)


ACTIVATIONS = {"selu": (selu, selu_grad), "relu": (relu, relu_grad)}


@dataclass
class Mlp:
    sizes: tuple[int, ...]
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "selu"

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def copy(self) -> "Mlp":
        return Mlp(self.sizes, [w.copy() for w in self.weights],
                   [b.copy() for b in self.biases], self.activation)


def mlp_init(sizes, stream: RandomStream, activation: str = "selu") -> Mlp:
    """LeCun-normal weights (variance 1/fan_in), zero biases."""
    sizes = tuple(int(s) for s in sizes)
    if len(sizes) < 2 or any(s <= 0 for s in sizes):
        raise ValueError(f"invalid layer sizes {sizes}")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(stream.normal_array((fan_in, fan_out)) / np.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return Mlp(sizes, weights, biases, activation)


@dataclass
class MlpCache:
    inputs: list[np.ndarray]  # input to each layer (= activation of the previous one)
    pre: list[np.ndarray]  # pre-activation of each hidden layer


def mlp_forward(p: Mlp, x: np.ndarray):
    """Forward a batch (or a single vector) through ``p``; returns ``(y, cache)``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != p.sizes[0]:
        raise ValueError(f"input width {x.shape[1]} != {p.sizes[0]}")
    act, _ = ACTIVATIONS[p.activation]
    inputs, pre = [], []
    a = x
    last = len(p.weights) - 1
    for i, (w, b) in enumerate(zip(p.weights, p.biases)):
        inputs.append(a)
        z = a @ w + b
        if i < last:
            pre.append(z)
            a = act(z)
        else:
            a = z
    cache = MlpCache(inputs, pre)
    return (a[0] if single else a), cache


def mlp_backward(p: Mlp, cache: MlpCache, dy: np.ndarray, need_dx: bool = True):
    """Reverse pass. Returns (per-layer dW, per-layer db, dx or None)."""
    _, act_grad = ACTIVATIONS[p.activation]
    dy = np.atleast_2d(np.asarray(dy, dtype=np.float64))
    n = len(p.weights)
    dws: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    dbs: list[np.ndarray] = [None] * n  # type: ignore[list-item]
    g = dy
    for i in range(n - 1, -1, -1):
        dws[i] = cache.inputs[i].T @ g
        dbs[i] = g.sum(axis=0)
        if i == 0 and not need_dx:
            return dws, dbs, None
        g = g @ p.weights[i].T
        if i > 0:
            g *= act_grad(cache.pre[i - 1], cache.inputs[i])
    return dws, dbs, g


@dataclass
class PredictiveModel:
    """Shared motor encoder plus the sensory predictor.

    The predictor reads ``concat(h_t, h_next, s_t)`` in that order.
    """
    encoder: Mlp
    predictor: Mlp

    def __post_init__(self):
        n_h = self.encoder.sizes[-1]
        n_s = self.predictor.sizes[-1]
        if self.predictor.sizes[0] != 2 * n_h + n_s:
            raise ValueError(
                f"predictor input {self.predictor.sizes[0]} != 2*{n_h} + {n_s}")
        # every parameter array becomes a view into one flat vector
        self.flat = np.concatenate([a.ravel() for a in self.params()])
        offset = 0
        for mlp in (self.encoder, self.predictor):
            for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
                mlp.weights[i] = self.flat[offset:offset + w.size].reshape(w.shape)
                offset += w.size
                mlp.biases[i] = self.flat[offset:offset + b.size]
                offset += b.size

    @property
    def n_motor(self) -> int:
        return self.encoder.sizes[0]

    @property
    def n_h(self) -> int:
        return self.encoder.sizes[-1]

    @property
    def n_sensory(self) -> int:
        return self.predictor.sizes[-1]

    def params(self) -> list[np.ndarray]:
        return self.encoder.params() + self.predictor.params()

    @property
    def n_params(self) -> int:
        return self.flat.size

    def copy(self) -> "PredictiveModel":
        return PredictiveModel(self.encoder.copy(), self.predictor.copy())

    def encode(self, m: np.ndarray) -> np.ndarray:
        return mlp_forward(self.encoder, m)[0]


def build_model(n_motor: int, n_sensory: int, n_h: int, stream: RandomStream,
                encoder_hidden=(150, 100, 50), predictor_hidden=(200, 150, 100),
                activation: str = "selu") -> PredictiveModel:
    encoder = mlp_init((n_motor, *encoder_hidden, n_h), stream, activation)
    predictor = mlp_init((2 * n_h + n_sensory, *predictor_hidden, n_sensory), stream, activation)
    return PredictiveModel(encoder, predictor)


@dataclass
class ForwardCaches:
    enc_t: MlpCache
    enc_next: MlpCache
    pred: MlpCache


def model_forward(model: PredictiveModel, m_t, m_next, s_t):
    """Returns ``(h_t, h_next, s_pred, caches)`` for a batch of transitions."""
    m_t = np.atleast_2d(np.asarray(m_t, dtype=np.float64))
    m_next = np.atleast_2d(np.asarray(m_next, dtype=np.float64))
    s_t = np.atleast_2d(np.asarray(s_t, dtype=np.float64))
    if s_t.shape[1] != model.n_sensory:
        raise ValueError(f"sensory width {s_t.shape[1]} != {model.n_sensory}")
    if not (m_t.shape[0] == m_next.shape[0] == s_t.shape[0]):
        raise ValueError("batch sizes differ")
    # same parameters, same batch shape: identical inputs give identical codes
    h_t, c_t = mlp_forward(model.encoder, m_t)
    h_next, c_next = mlp_forward(model.encoder, m_next)
    s_pred, c_pred = mlp_forward(model.predictor, np.hstack([h_t, h_next, s_t]))
    return h_t, h_next, s_pred, ForwardCaches(c_t, c_next, c_pred)


def mse_loss(preds, targets) -> float:
    """Mean over samples of the squared Euclidean residual norm."""
    preds = np.atleast_2d(np.asarray(preds, dtype=np.float64))
    targets = np.atleast_2d(np.asarray(targets, dtype=np.float64))
    if preds.shape != targets.shape:
        raise ValueError(f"shape mismatch {preds.shape} vs {targets.shape}")
    r = preds - targets
    return float(np.sum(r * r) / r.shape[0])


def backward(model: PredictiveModel, caches: ForwardCaches, residuals, paths=("t", "next")):
    """Exact gradients of ``mse_loss`` given ``residuals = s_pred - s_target``.

    Returns a list aligned with ``model.params()``. The encoder gradient is
    the sum over both siamese applications; ``paths`` restricts which of the
    two contribute (used to check the decomposition).
    """
    residuals = np.atleast_2d(np.asarray(residuals, dtype=np.float64))
    k = residuals.shape[0]
    d_out = (2.0 / k) * residuals
    pw, pb, d_in = mlp_backward(model.predictor, caches.pred, d_out)
    n_h = model.n_h
    enc_w = [np.zeros_like(w) for w in model.encoder.weights]
    enc_b = [np.zeros_like(b) for b in model.encoder.biases]
    for name, cache, dh in (("t", caches.enc_t, d_in[:, :n_h]),
                            ("next", caches.enc_next, d_in[:, n_h:2 * n_h])):
        if name not in paths:
            continue
        ew, eb, _ = mlp_backward(model.encoder, cache, dh, need_dx=False)
        for i in range(len(ew)):
            enc_w[i] += ew[i]
            enc_b[i] += eb[i]
    grads = []
    for w, b in zip(enc_w, enc_b):
        grads.extend((w, b))
    for w, b in zip(pw, pb):
        grads.extend((w, b))
    return grads


def lr_schedule(epoch: int, decay_epochs: int = 80_000, lr_start: float = 1e-3,
                lr_end: float = 1e-5) -> float:
    """Linear decay from ``lr_start`` to ``lr_end``, flat afterwards."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if decay_epochs <= 0 or epoch >= decay_epochs:
        return lr_end
    return lr_start + (lr_end - lr_start) * (epoch / decay_epochs)


def flatten(arrays) -> np.ndarray:
    return np.concatenate([np.ravel(a) for a in arrays])


@dataclass
class AdamState:
    """Moments over the flat parameter vector."""
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_size(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def for_model(cls, model: PredictiveModel) -> "AdamState":
        return cls.for_size(model.n_params)

    def copy(self) -> "AdamState":
        return AdamState(self.m.copy(), self.v.copy(), self.t, self.beta1, self.beta2, self.eps)


def adam_step(params: np.ndarray, adam: AdamState, grads: np.ndarray, lr: float) -> None:
    """In-place bias-corrected Adam update of the flat vector ``params``."""
    if grads.shape != params.shape or adam.m.shape != params.shape:
        raise ValueError("gradient/moment shapes do not mirror parameters")
    if not np.all(np.isfinite(grads)):
        raise TrainingError("non-finite gradient")
    adam.t += 1
    b1, b2 = adam.beta1, adam.beta2
    c1 = 1.0 - b1 ** adam.t
    c2 = 1.0 - b2 ** adam.t
    adam.m *= b1
    adam.m += (1.0 - b1) * grads
    adam.v *= b2
    adam.v += (1.0 - b2) * (grads * grads)
    params -= lr * (adam.m / c1) / (np.sqrt(adam.v / c2) + adam.eps)


def stacked_gradient(model: PredictiveModel, batch, out: np.ndarray | None = None):
    """Loss and flat gradient with both encoder applications done as one
    stacked batch. Same function as ``model_forward`` + ``backward``; only
    the floating-point summation order differs.

    Returns ``(loss, flat_grad)``; ``out`` is reused when given.
    """
    m_t, s_t, m_next, s_next = batch
    k = m_t.shape[0]
    n_h = model.n_h
    h, c_enc = mlp_forward(model.encoder, np.vstack([m_t, m_next]))
    s_pred, c_pred = mlp_forward(model.predictor, np.hstack([h[:k], h[k:], s_t]))
    r = s_pred - s_next
    loss = float(np.sum(r * r) / k)
    if not np.isfinite(loss):
        raise TrainingError(f"non-finite loss {loss}")
    pw, pb, d_in = mlp_backward(model.predictor, c_pred, (2.0 / k) * r)
    ew, eb, _ = mlp_backward(model.encoder, c_enc, np.vstack([d_in[:, :n_h], d_in[:, n_h:2 * n_h]]),
                             need_dx=False)
    if out is None:
        out = np.empty(model.n_params)
    offset = 0
    for a in (x for pair in zip(ew + pw, eb + pb) for x in pair):
        out[offset:offset + a.size] = a.ravel()
        offset += a.size
    return loss, out


def train_step(model: PredictiveModel, adam: AdamState, batch, lr: float,
               grad_buffer: np.ndarray | None = None) -> float:
    """One forward/backward/Adam pass; returns the pre-update batch loss.

    ``batch`` is a tuple ``(m_t, s_t, m_next, s_next)`` of normalized arrays.
    """
    loss, grads = stacked_gradient(model, batch, grad_buffer)
    adam_step(model.flat, adam, grads, lr)
    return loss


# ---------------------------------------------------------------- checkpoints

CKPT_MAGIC = b"SMCKPT01"


def save_checkpoint(path, model: PredictiveModel, epoch: int, adam: AdamState | None = None,
                    extra: dict | None = None) -> None:
    """Magic, u32-length-prefixed JSON header, then float64 LE parameters.

    Parameters come encoder first, layer by layer (weights row-major, then
    biases). When ``adam`` is given its first and second moments follow in
    the same order.
    """
    header = {
        "encoder_sizes": list(model.encoder.sizes),
        "predictor_sizes": list(model.predictor.sizes),
        "n_h": model.n_h,
        "activation": model.encoder.activation,
        "epoch": int(epoch),
        "has_optimizer": adam is not None,
    }
    if adam is not None:
        header["adam"] = {"t": adam.t, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps}
    if extra:
        header.update(extra)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    arrays = [model.flat]
    if adam is not None:
        arrays += [adam.m, adam.v]
    with open(path, "wb") as fh:
        fh.write(CKPT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_checkpoint(path):
    """Returns ``(model, epoch, adam_or_None, header)``."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:8] != CKPT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic")
    (n,) = struct.unpack_from("<I", data, 8)
    header = json.loads(data[12:12 + n].decode("utf-8"))
    offset = 12 + n
    act = header["activation"]

    def empty_mlp(sizes):
        sizes = tuple(sizes)
        return Mlp(sizes, [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
                   [np.zeros(b) for b in sizes[1:]], act)

    model = PredictiveModel(empty_mlp(header["encoder_sizes"]), empty_mlp(header["predictor_sizes"]))
    n = model.n_params
    groups = 3 if header.get("has_optimizer") else 1
    end = offset + 8 * n * groups
    if end > len(data):
        raise ValueError(f"{path}: truncated checkpoint ({len(data)} of {end} bytes)")
    if end != len(data):
        raise ValueError(f"{path}: {len(data) - end} trailing bytes")
    vecs = np.frombuffer(data, dtype="<f8", count=n * groups, offset=offset).astype(np.float64)
    model.flat[:] = vecs[:n]
    adam = None
    if groups == 3:
        cfg = header["adam"]
        adam = AdamState(vecs[n:2 * n].copy(), vecs[2 * n:].copy(),
                         cfg["t"], cfg["beta1"], cfg["beta2"], cfg["eps"])
    return model, header["epoch"], adam, header
