"""
Small neural-network engine: tanh MLPs with a linear bypass, hand-written
reverse-mode gradients and the Adam optimizer.

Everything operates on float64 numpy arrays.  Inputs may be a single vector
of shape ``(n_in,)`` or a batch of shape ``(B, n_in)``; gradients are summed
over the batch.
"""
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass
class MLP:
    """Multilayer perceptron ``y = net(x) + bypass @ x``.

    Hidden layers use tanh; the last layer of ``net`` is linear.  A network
    with no layers at all (``weights == []``) is a pure linear map through
    the bypass.

    Attributes
    ----------
    weights : list of ndarray
        Layer matrices, ``weights[i]`` has shape ``(n_out_i, n_in_i)``.
    biases : list of ndarray
        Layer offsets, ``biases[i]`` has shape ``(n_out_i,)``.
    bypass : ndarray
        Direct linear path of shape ``(n_out, n_in)``.
    """

    weights: list
    biases: list
    bypass: np.ndarray

    @property
    def n_in(self):
        return self.bypass.shape[1]

    @property
    def n_out(self):
        return self.bypass.shape[0]

    @property
    def hidden(self):
        return [w.shape[0] for w in self.weights[:-1]]

    def params(self):
        """Parameters as a flat list ``[W0, b0, W1, b1, ..., bypass]``."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        out.append(self.bypass)
        return out

    @classmethod
    def from_params(cls, params):
        params = list(params)
        layers = params[:-1]
        return cls(weights=list(layers[0::2]), biases=list(layers[1::2]),
                   bypass=params[-1])

    def copy(self):
        return MLP.from_params([p.copy() for p in self.params()])

    def zeros_like(self):
        return MLP.from_params([np.zeros_like(p) for p in self.params()])

    def __call__(self, x):
        return mlp_forward(self, x)


def _check_dims(*dims):
    for d in dims:
        if int(d) != d or d < 1:
            raise InvalidArgumentError(f"network dimensions must be positive integers, got {d}")


def mlp_init(n_in, n_out, hidden=(64, 64), seed=0):
    """Create an MLP with entries drawn from U(-1/sqrt(fan_in), +1/sqrt(fan_in)).

    The fan-in of a layer is its number of inputs.  Biases and the bypass use
    the same rule; the bypass has fan-in ``n_in``.  ``hidden=[]`` gives a
    single affine layer in parallel with the bypass.
    """
    hidden = list(hidden)
    _check_dims(n_in, n_out, *hidden)
    rng = np.random.default_rng(seed)
    sizes = [n_in] + hidden + [n_out]
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    bound = 1.0 / np.sqrt(n_in)
    bypass = rng.uniform(-bound, bound, size=(n_out, n_in))
    return MLP(weights, biases, bypass)


def mlp_linear(n_in, n_out, seed=0, matrix=None):
    """Bypass-only network: ``y = M @ x``."""
    _check_dims(n_in, n_out)
    if matrix is None:
        bound = 1.0 / np.sqrt(n_in)
        matrix = np.random.default_rng(seed).uniform(-bound, bound, size=(n_out, n_in))
    matrix = np.array(matrix, dtype=float).reshape(n_out, n_in)
    return MLP([], [], matrix)


def _as_batch(m, x):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != m.n_in:
        raise InvalidArgumentError(f"expected input dimension {m.n_in}, got shape {x.shape}")
    return xb, single


def mlp_forward_cached(m, x):
    """Forward pass on a batch, returning ``(output, cache)`` for backprop."""
    xb, _ = _as_batch(m, x)
    acts = [xb]
    h = xb
    n_layers = len(m.weights)
    for i, (w, b) in enumerate(zip(m.weights, m.biases)):
        z = h @ w.T + b
        h = np.tanh(z) if i < n_layers - 1 else z
        acts.append(h)
    out = xb @ m.bypass.T
    if n_layers:
        out = out + h
    return out, acts


def mlp_forward(m, x):
    xb, single = _as_batch(m, x)
    out, _ = mlp_forward_cached(m, xb)
    return out[0] if single else out


def mlp_backward(m, acts, adjoint):
    """Reverse pass.

    Returns the gradient of ``sum(adjoint * output)`` with respect to every
    parameter (as an MLP-shaped container, summed over the batch) and with
    respect to the input batch.
    """
    adjoint = np.asarray(adjoint, dtype=float)
    xb = acts[0]
    if adjoint.ndim == 1:
        adjoint = adjoint[None, :]
    if adjoint.shape != (xb.shape[0], m.n_out):
        raise InvalidArgumentError(
            f"output adjoint must have shape {(xb.shape[0], m.n_out)}, got {adjoint.shape}")
    n_layers = len(m.weights)
    g_w = [None] * n_layers
    g_b = [None] * n_layers
    g_bypass = adjoint.T @ xb
    dx = adjoint @ m.bypass
    delta = adjoint
    for i in range(n_layers - 1, -1, -1):
        h_in = acts[i]
        g_w[i] = delta.T @ h_in
        g_b[i] = delta.sum(axis=0)
        d_in = delta @ m.weights[i]
        if i > 0:
            # acts[i] is tanh output of layer i-1
            d_in = d_in * (1.0 - h_in * h_in)
        delta = d_in
    if n_layers:
        dx = dx + delta
    return MLP(g_w, g_b, g_bypass), dx


def mlp_gradient(m, x, output_adjoint):
    """Gradient of ``output_adjoint . mlp_forward(m, x)``.

    Returns ``(grads, input_adjoint)``; ``grads`` is an MLP holding
    parameter gradients.  For a single input vector the input adjoint is a
    vector as well.
    """
    xb, single = _as_batch(m, x)
    adj = np.asarray(output_adjoint, dtype=float)
    if single and adj.ndim != 1:
        raise InvalidArgumentError("single input requires a vector adjoint")
    if adj.shape[-1] != m.n_out:
        raise InvalidArgumentError(f"output adjoint must have {m.n_out} entries, got {adj.shape}")
    _, acts = mlp_forward_cached(m, xb)
    grads, dx = mlp_backward(m, acts, adj)
    return grads, (dx[0] if single else dx)


def add_grads(acc, g):
    """In-place accumulation of MLP-shaped gradients; returns ``acc``."""
    for a, b in zip(acc.params(), g.params()):
        a += b
    return acc


# ---------------------------------------------------------------- Adam

@dataclass
class AdamState:
    first_moment: list
    second_moment: list
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params, beta1=0.9, beta2=0.999, eps=1e-8):
    return AdamState([np.zeros_like(p) for p in params],
                     [np.zeros_like(p) for p in params], 0, beta1, beta2, eps)


def adam_step(params, grads, state, lr):
    """One bias-corrected Adam update.

    Returns ``(new_params, new_state)``; inputs are left untouched.
    """
    params, grads = list(params), list(grads)
    if not (len(params) == len(grads) == len(state.first_moment) == len(state.second_moment)):
        raise InvalidArgumentError("params, grads and optimizer state differ in length")
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        if not (np.shape(p) == np.shape(g) == m.shape == v.shape):
            raise InvalidArgumentError(f"shape mismatch {np.shape(p)} / {np.shape(g)} / {m.shape}")
    t = state.step_count + 1
    b1, b2 = state.beta1, state.beta2
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t, b1, b2, state.eps)


# ---------------------------------------------------------------- serialization

def mlp_to_dict(m):
    return {
        "layers": [{"weight": {"shape": list(w.shape), "values": w.ravel().tolist()},
                    "bias": {"shape": list(b.shape), "values": b.ravel().tolist()}}
                   for w, b in zip(m.weights, m.biases)],
        "bypass": {"shape": list(m.bypass.shape), "values": m.bypass.ravel().tolist()},
    }


def _arr(d):
    return np.array(d["values"], dtype=float).reshape(d["shape"])


def mlp_from_dict(d):
    return MLP([_arr(l["weight"]) for l in d["layers"]],
               [_arr(l["bias"]) for l in d["layers"]],
               _arr(d["bypass"]))


def mlp_to_json(m):
    return json.dumps(mlp_to_dict(m))


def mlp_from_json(text):
    return mlp_from_dict(json.loads(text))


def mlp_to_bytes(m):
    """Binary (npz) encoding; round-trips bit-exactly."""
    buf = io.BytesIO()
    arrays = {f"p{i:03d}": p for i, p in enumerate(m.params())}
    np.savez(buf, **arrays)
    return buf.getvalue()


def mlp_from_bytes(blob):
    with np.load(io.BytesIO(blob)) as data:
        keys = sorted(data.files)
        return MLP.from_params([data[k] for k in keys])
