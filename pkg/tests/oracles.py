"""Independent straight-line implementations used as test oracles."""
import math

import numpy as np

LAM = 1.0507009873554805
ALPHA = 1.6732632423543772


def selu(x):
    return np.where(x > 0, LAM * x, LAM * ALPHA * (np.exp(np.minimum(x, 0)) - 1))


def relu(x):
    return np.where(x > 0, x, 0.0)


def _unpack(rows, sizes, offset):
    layers = []
    for a, b in zip(sizes[:-1], sizes[1:]):
        W = rows[:, offset:offset + a * b].reshape(-1, a, b)
        offset += a * b
        c = rows[:, offset:offset + b][:, None, :]
        offset += b
        layers.append((W, c))
    return layers, offset


def _net(layers, x, act):
    for i, (W, c) in enumerate(layers):
        x = x @ W + c
        if i < len(layers) - 1:
            x = act(x)
    return x


def _hidden(rows, enc_sizes, pred_sizes, act, m_t, s_t, m_next):
    """Penultimate predictor activations for every parameter row, (P, k, w)."""
    enc, off = _unpack(rows, enc_sizes, 0)
    pred, _ = _unpack(rows, pred_sizes, off)
    h_t = _net(enc, m_t[None], act)
    h_n = _net(enc, m_next[None], act)
    x = np.concatenate([h_t, h_n, np.broadcast_to(s_t, h_t.shape[:1] + s_t.shape)], axis=2)
    for W, c in pred[:-1]:
        x = act(x @ W + c)
    return x, pred[-1]


def batched_losses(rows, enc_sizes, pred_sizes, activation, m_t, s_t, m_next, s_next):
    """Loss for every parameter vector in ``rows`` (P, n_params) at once,
    evaluated in extended precision.

    All rows must share the final predictor layer. The loss is then an exact
    quadratic form in the penultimate activation ``a``:
    sum_j (a W_j + b_j - s_j)^2 = a G a' + 2 a u + c with G = W W'.
    """
    ld = np.longdouble
    rows = np.asarray(rows, dtype=ld)
    m_t, s_t, m_next, s_next = (np.asarray(a, dtype=ld) for a in (m_t, s_t, m_next, s_next))
    act = selu if activation == "selu" else relu
    a, (W, c) = _hidden(rows, enc_sizes, pred_sizes, act, m_t, s_t, m_next)
    W, c = W[0], c[0, 0]
    G = W @ W.T
    off = c[None, :] - s_next  # (k, n_out)
    u = off @ W.T  # (k, w)
    const = np.sum(off * off, axis=1)  # (k,)
    quad = np.einsum("pki,ij,pkj->pk", a, G, a)
    return np.sum(quad + 2 * np.sum(a * u[None], axis=2) + const[None], axis=1) / m_t.shape[0]


def fd_gradient(flat, step, loss_fn, budget=1_000_000, count=None):
    """Central differences of ``loss_fn`` over the first ``count`` (default
    all) coordinates of ``flat``."""
    n = flat.size if count is None else count
    chunk = max(1, budget // flat.size)
    grad = np.empty(n)
    base = flat.astype(np.longdouble)
    for start in range(0, n, chunk):
        idx = np.arange(start, min(start + chunk, n))
        plus = np.repeat(base[None], idx.size, axis=0)
        minus = plus.copy()
        plus[np.arange(idx.size), idx] += step
        minus[np.arange(idx.size), idx] -= step
        grad[idx] = (loss_fn(plus) - loss_fn(minus)) / (2 * np.longdouble(step))
    return grad


def naive_d_topo(H, P, alpha=50.0):
    n = len(H)
    dh = [[math.dist(H[i], H[j]) for j in range(n)] for i in range(n)]
    dp = [[math.dist(P[i], P[j]) for j in range(n)] for i in range(n)]
    hmax = max(max(r) for r in dh)
    pmax = max(max(r) for r in dp)
    if hmax == 0:
        return 0.0
    return sum(dh[i][j] / hmax * math.exp(-alpha * dp[i][j] / pmax)
               for i in range(n) for j in range(n)) / (n * n)


def naive_ols(H, P):
    """Plain least squares on [H | 1] via lstsq (no ridge)."""
    X = np.hstack([H, np.ones((len(H), 1))])
    coef, *_ = np.linalg.lstsq(X, P, rcond=None)
    return coef[:-1].T, coef[-1]


def naive_d_metric(H, P):
    A, b = naive_ols(H, P)
    Hp = [A @ h + b for h in H]
    n = len(H)
    pmax = max(math.dist(P[i], P[j]) for i in range(n) for j in range(n))
    return sum(abs(math.dist(Hp[i], Hp[j]) - math.dist(P[i], P[j]))
               for i in range(n) for j in range(n)) / (n * n * pmax)


def model_fd_gradient(model, batch, step=1e-6):
    """Central finite differences of the batch loss for every parameter.

    All evaluations run in extended precision. Parameters of the final
    predictor layer (no activation after it) are perturbed through the exact
    identity ``a @ (W + hE) + b = a @ W + b + h a E``, so only that layer's
    output column is recomputed; every other parameter gets a full forward.
    """
    act_name = model.encoder.activation
    ld = np.longdouble
    m_t, s_t, m_next, s_next = (np.asarray(a, dtype=ld) for a in batch)
    k = m_t.shape[0]
    flat = model.flat.copy()
    n_in, n_out = model.predictor.sizes[-2], model.predictor.sizes[-1]
    n_last = n_in * n_out + n_out
    head = flat.size - n_last

    def loss_fn(rows):
        return batched_losses(rows, model.encoder.sizes, model.predictor.sizes, act_name,
                              m_t, s_t, m_next, s_next)

    grad = np.empty(flat.size)
    grad[:head] = fd_gradient(flat, step, loss_fn, count=head)

    # penultimate activations and residuals in extended precision
    act = selu if act_name == "selu" else relu
    x, (W, c) = _hidden(flat.astype(ld)[None], model.encoder.sizes, model.predictor.sizes, act,
                        m_t, s_t, m_next)
    a = x[0]  # (k, n_in)
    r = a @ W[0] + c[0, 0] - s_next  # (k, n_out)
    h = ld(step)

    def perturbed(delta):
        # loss terms of the one affected output column; all other columns
        # are identical between the +h and -h evaluations and cancel
        rr = r + delta
        return np.sum(rr * rr, axis=-2) / k

    # weight W[i, j]: column j moves by +-h * a[:, i]
    shift = h * a.T[:, :, None]  # (n_in, k, 1)
    gw = (perturbed(shift) - perturbed(-shift)) / (2 * h)  # (n_in, n_out)
    gb = (perturbed(h) - perturbed(-h)) / (2 * h)  # bias
    grad[head:head + n_in * n_out] = gw.ravel()
    grad[head + n_in * n_out:] = gb
    return grad


def tiny_gradient_case(index: int):
    """A reproducible random tiny model plus batch for the gradient check.

    Hidden widths and batch sizes are drawn in [1, 5] and [1, 4]; every fifth
    case uses the camera world's 768 sensory values, the rest the field
    world's 4, with 3 or 6 motors alternating.
    """
    from smspace.neural import build_model
    from smspace.numcore import RandomStream
    rng = np.random.default_rng(1000 + index)
    n_m = 3 if index % 2 == 0 else 6
    n_s = 768 if index % 5 == 4 else 4
    n_h = int(rng.integers(1, 6))
    enc = tuple(int(v) for v in rng.integers(1, 6, size=rng.integers(0, 3)))
    pred = tuple(int(v) for v in rng.integers(1, 6, size=rng.integers(1, 3)))
    act = "relu" if index % 7 == 3 else "selu"
    model = build_model(n_m, n_s, n_h, RandomStream(index), enc, pred, act)
    for p in model.params():  # move biases off zero and spread weights
        p += rng.normal(scale=0.3, size=p.shape)
    k = int(rng.integers(1, 5))
    batch = tuple(rng.uniform(-1, 1, (k, n)) for n in (n_m, n_s, n_m, n_s))
    return model, batch


def gradient_relative_error(model, batch, floor=1e-6):
    """Max over parameters of |g - fd| / max(|g|, |fd|, floor)."""
    from smspace.neural import backward, flatten, model_forward
    m_t, s_t, m_next, s_next = batch
    _, _, s_pred, caches = model_forward(model, m_t, m_next, s_t)
    g = flatten(backward(model, caches, s_pred - s_next))
    fd = model_fd_gradient(model, batch)
    return float(np.max(np.abs(g - fd) / np.maximum(np.maximum(np.abs(g), np.abs(fd)), floor)))
