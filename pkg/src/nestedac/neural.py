"""Small dense feed-forward networks with exact reverse-mode gradients.

Parameters live in one flat float64 buffer laid out layer by layer as
``W_0 (row-major, out x in), b_0, W_1, b_1, ...``; ``weights`` and ``biases``
are views into it. Hidden layers use a rectifier, the output is linear.

The numerical kernels are plain loops compiled with numba. Besides the
generic forward/backward pair there are fused kernels for the two update
shapes the learners use on every environment step (TD critic regression and
the log-likelihood actor step), which avoid allocating intermediate
gradient objects.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Sequence, Union

import numba
import numpy as np

FORMAT_VERSION = 1

PathOrFile = Union[str, Path, BinaryIO]


class NonFiniteError(FloatingPointError):
    """Raised when a gradient or TD error is NaN or infinite."""


def _param_count(sizes: Sequence[int]) -> int:
    return sum(o * i + o for i, o in zip(sizes[:-1], sizes[1:]))


def _layer_views(flat: np.ndarray, sizes: Sequence[int]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    weights, biases, off = [], [], 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        weights.append(flat[off:off + n_in * n_out].reshape(n_out, n_in))
        off += n_in * n_out
        biases.append(flat[off:off + n_out])
        off += n_out
    return weights, biases


class _Flat:
    """Shared behaviour of networks and gradients: a flat buffer plus layer views."""

    layer_sizes: tuple[int, ...]
    params: np.ndarray

    def _bind(self, sizes: Sequence[int], flat: np.ndarray) -> None:
        sizes = tuple(int(s) for s in sizes)
        if len(sizes) < 2:
            raise ValueError("a network needs at least an input and an output layer")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        flat = np.ascontiguousarray(flat, dtype=np.float64)
        if flat.shape != (_param_count(sizes),):
            raise ValueError(f"expected {_param_count(sizes)} parameters for {sizes}, got {flat.shape}")
        self.layer_sizes = sizes
        self.params = flat
        self._sizes = np.asarray(sizes, dtype=np.int64)
        self.weights, self.biases = _layer_views(flat, sizes)

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self) -> np.ndarray:
        return self.params.copy()

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.params).all())


class DenseNet(_Flat):
    def __init__(self, layer_sizes: Sequence[int], params: np.ndarray):
        self._bind(layer_sizes, params)

    @classmethod
    def from_layers(cls, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]) -> "DenseNet":
        if len(weights) != len(biases) or not weights:
            raise ValueError("need one bias vector per weight matrix")
        sizes = [np.shape(weights[0])[1]] + [np.shape(w)[0] for w in weights]
        for i, (w, b) in enumerate(zip(weights, biases)):
            if np.shape(w) != (sizes[i + 1], sizes[i]) or np.shape(b) != (sizes[i + 1],):
                raise ValueError(f"layer {i}: weight {np.shape(w)} and bias {np.shape(b)} do not chain")
        flat = np.concatenate([np.concatenate([np.ravel(w), np.ravel(b)]) for w, b in zip(weights, biases)])
        return cls(sizes, flat.astype(np.float64))

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_outputs(self) -> int:
        return self.layer_sizes[-1]

    def copy(self) -> "DenseNet":
        return DenseNet(self.layer_sizes, self.params.copy())

    def __repr__(self) -> str:
        return f"DenseNet(layer_sizes={self.layer_sizes})"


class GradientSet(_Flat):
    def __init__(self, layer_sizes: Sequence[int], params: np.ndarray):
        self._bind(layer_sizes, params)

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet(self.layer_sizes, self.params * factor)

    def __repr__(self) -> str:
        return f"GradientSet(layer_sizes={self.layer_sizes})"


@dataclass
class ForwardCache:
    """Post-activations (``acts``, input first) and pre-activations of one forward pass."""

    net_id: int
    layer_sizes: tuple[int, ...]
    acts: np.ndarray
    pre: np.ndarray


# -- compiled kernels ------------------------------------------------------------

@numba.njit(cache=True)
def _forward_kernel(params, sizes, x, acts, pre):
    n_layers = sizes.shape[0] - 1
    acts[:sizes[0]] = x
    p_off = 0
    a_off = 0
    z_off = 0
    for layer in range(n_layers):
        n_in = sizes[layer]
        n_out = sizes[layer + 1]
        b_off = p_off + n_in * n_out
        w = params[p_off:b_off].reshape((n_out, n_in))
        z = np.dot(w, acts[a_off:a_off + n_in]) + params[b_off:b_off + n_out]
        pre[z_off:z_off + n_out] = z
        out_off = a_off + n_in
        if layer < n_layers - 1:
            acts[out_off:out_off + n_out] = np.maximum(z, 0.0)
        else:
            acts[out_off:out_off + n_out] = z
        p_off = b_off + n_out
        a_off = out_off
        z_off += n_out
    return a_off


@numba.njit(cache=True)
def _backward_kernel(params, sizes, acts, pre, upstream, grad):
    n_layers = sizes.shape[0] - 1
    p_offs = np.empty(n_layers, dtype=np.int64)
    a_offs = np.empty(n_layers, dtype=np.int64)
    z_offs = np.empty(n_layers, dtype=np.int64)
    p_off = 0
    a_off = 0
    z_off = 0
    for layer in range(n_layers):
        p_offs[layer] = p_off
        a_offs[layer] = a_off
        z_offs[layer] = z_off
        p_off += sizes[layer] * sizes[layer + 1] + sizes[layer + 1]
        a_off += sizes[layer]
        z_off += sizes[layer + 1]
    g = upstream.copy()
    for layer in range(n_layers - 1, -1, -1):
        n_in = sizes[layer]
        n_out = sizes[layer + 1]
        if layer < n_layers - 1:
            z0 = z_offs[layer]
            for o in range(n_out):
                if pre[z0 + o] <= 0.0:
                    g[o] = 0.0
        w0 = p_offs[layer]
        b0 = w0 + n_in * n_out
        a0 = a_offs[layer]
        for o in range(n_out):
            go = g[o]
            row = w0 + o * n_in
            if go == 0.0:
                for i in range(n_in):
                    grad[row + i] = 0.0
            else:
                for i in range(n_in):
                    grad[row + i] = go * acts[a0 + i]
            grad[b0 + o] = go
        if layer > 0:
            g = np.dot(g, params[w0:b0].reshape((n_out, n_in)))


@numba.njit(cache=True)
def _all_finite(v):
    for i in range(v.shape[0]):
        if not np.isfinite(v[i]):
            return False
    return True


@numba.njit(cache=True)
def _softmax_kernel(z):
    m = z[0]
    for i in range(1, z.shape[0]):
        if z[i] > m:
            m = z[i]
    e = np.empty(z.shape[0])
    total = 0.0
    for i in range(z.shape[0]):
        e[i] = math.exp(z[i] - m)
        total += e[i]
    for i in range(z.shape[0]):
        e[i] /= total
    return e


@numba.njit(cache=True)
def _td_update_kernel(params, sizes, obs, next_obs, r, terminal, gamma, step):
    """Semi-gradient TD(0) step on a scalar-output net; returns (delta, V(obs), ok)."""
    n_act = 0
    for s in sizes:
        n_act += s
    acts = np.empty(n_act)
    pre = np.empty(n_act - sizes[0])
    v_next = 0.0
    if not terminal:
        out = _forward_kernel(params, sizes, next_obs, acts, pre)
        v_next = acts[out]
    out = _forward_kernel(params, sizes, obs, acts, pre)
    v_curr = acts[out]
    delta = r + gamma * v_next - v_curr
    if not np.isfinite(delta):
        return delta, v_curr, False
    if delta == 0.0 or step == 0.0:
        return delta, v_curr, True
    grad = np.empty(params.shape[0])
    up = np.empty(1)
    up[0] = -2.0 * delta
    _backward_kernel(params, sizes, acts, pre, up, grad)
    if not _all_finite(grad):
        return delta, v_curr, False
    for i in range(params.shape[0]):
        params[i] -= step * grad[i]
    return delta, v_curr, True


@numba.njit(cache=True)
def _actor_update_kernel(params, sizes, obs, action, delta, step):
    """theta -= step * delta * grad log softmax(f(obs))[action]; returns ok flag."""
    n_act = 0
    for s in sizes:
        n_act += s
    acts = np.empty(n_act)
    pre = np.empty(n_act - sizes[0])
    out = _forward_kernel(params, sizes, obs, acts, pre)
    n_out = sizes[sizes.shape[0] - 1]
    p = _softmax_kernel(acts[out:out + n_out])
    up = np.empty(n_out)
    for i in range(n_out):
        up[i] = -delta * p[i]
    up[action] += delta
    grad = np.empty(params.shape[0])
    _backward_kernel(params, sizes, acts, pre, up, grad)
    if not _all_finite(grad):
        return False
    for i in range(params.shape[0]):
        params[i] -= step * grad[i]
    return True


@numba.njit(cache=True)
def _sample_kernel(params, sizes, obs, u):
    n_act = 0
    for s in sizes:
        n_act += s
    acts = np.empty(n_act)
    pre = np.empty(n_act - sizes[0])
    out = _forward_kernel(params, sizes, obs, acts, pre)
    n_out = sizes[sizes.shape[0] - 1]
    p = _softmax_kernel(acts[out:out + n_out])
    c = 0.0
    for i in range(n_out):
        c += p[i]
        if u < c:
            return i
    return n_out - 1


# -- public API ----------------------------------------------------------------

def net_init(layer_sizes: Sequence[int], rng: np.random.Generator) -> DenseNet:
    """He-style initialisation: N(0, 2/fan_in) weights, zero biases."""
    sizes = [int(s) for s in layer_sizes]
    if len(sizes) < 2:
        raise ValueError("layer_sizes must list at least input and output sizes")
    if any(s < 1 for s in sizes):
        raise ValueError(f"layer sizes must be positive, got {sizes}")
    chunks = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        chunks.append(rng.standard_normal(fan_out * fan_in) * np.sqrt(2.0 / fan_in))
        chunks.append(np.zeros(fan_out))
    return DenseNet(sizes, np.concatenate(chunks))


def _as_input(net: DenseNet, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.n_inputs,):
        raise ValueError(f"input has shape {x.shape}, network expects ({net.n_inputs},)")
    return x


def forward(net: DenseNet, x: np.ndarray) -> tuple[np.ndarray, ForwardCache]:
    x = _as_input(net, x)
    total = sum(net.layer_sizes)
    acts = np.empty(total)
    pre = np.empty(total - net.layer_sizes[0])
    out = _forward_kernel(net.params, net._sizes, x, acts, pre)
    return acts[out:].copy(), ForwardCache(id(net), net.layer_sizes, acts, pre)


def predict(net: DenseNet, x: np.ndarray) -> np.ndarray:
    """Cache-free forward pass for a single input or a batch of rows."""
    h = np.asarray(x, dtype=np.float64)
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.T + b
        if i != last:
            h = np.maximum(h, 0.0)
    return h


def backward(net: DenseNet, cache: ForwardCache, upstream: np.ndarray) -> GradientSet:
    """Gradient of <upstream, output> with respect to every parameter."""
    if cache.net_id != id(net) or cache.layer_sizes != net.layer_sizes:
        raise ValueError("cache was not produced by forward() on this network")
    g = np.asarray(upstream, dtype=np.float64)
    if g.shape != (net.n_outputs,):
        raise ValueError(f"upstream has shape {g.shape}, expected ({net.n_outputs},)")
    grad = np.empty_like(net.params)
    _backward_kernel(net.params, net._sizes, cache.acts, cache.pre, g, grad)
    return GradientSet(net.layer_sizes, grad)


def apply_update(net: DenseNet, grads: GradientSet, step: float, direction: str = "descent") -> None:
    """In place: ``theta -= step * grad`` for descent, ``theta += step * grad`` for ascent."""
    if direction not in ("descent", "ascent"):
        raise ValueError(f"direction must be 'descent' or 'ascent', got {direction!r}")
    if step < 0:
        raise ValueError("step must be non-negative; use direction to flip the sign")
    if grads.layer_sizes != net.layer_sizes:
        raise ValueError(f"gradient shapes {grads.layer_sizes} do not match network {net.layer_sizes}")
    if not grads.is_finite():
        raise NonFiniteError("non-finite gradient entry; update aborted")
    if step == 0.0:
        return
    net.params += (-step if direction == "descent" else step) * grads.params


def td_update(net: DenseNet, obs, next_obs, r: float, terminal: bool, gamma: float, step: float) -> tuple[float, float]:
    """Fused semi-gradient TD(0) descent; same result as forward/backward/apply_update."""
    if net.n_outputs != 1:
        raise ValueError("TD regression needs a scalar-output network")
    delta, v_curr, ok = _td_update_kernel(net.params, net._sizes, _as_input(net, obs),
                                          _as_input(net, next_obs), float(r), bool(terminal),
                                          float(gamma), float(step))
    if not ok:
        raise NonFiniteError(f"non-finite TD error or gradient (delta={delta})")
    return delta, v_curr


def actor_update(net: DenseNet, obs, action: int, delta: float, step: float) -> None:
    """Fused ``theta -= step * delta * grad log pi(action | obs)``."""
    if not 0 <= action < net.n_outputs:
        raise IndexError(f"action {action} out of range for {net.n_outputs} logits")
    if not _actor_update_kernel(net.params, net._sizes, _as_input(net, obs), int(action), float(delta), float(step)):
        raise NonFiniteError("non-finite policy gradient; update aborted")


def sample_policy(net: DenseNet, obs, u: float) -> int:
    """Inverse-CDF draw from softmax(net(obs)) given one uniform ``u`` in [0, 1)."""
    return int(_sample_kernel(net.params, net._sizes, _as_input(net, obs), float(u)))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.asarray(logits, dtype=np.float64)
    e = np.exp(z - z.max())
    return e / e.sum()


def logpi_grad(logits: np.ndarray, action: int) -> np.ndarray:
    """d log softmax(logits)[action] / d logits = onehot(action) - softmax(logits)."""
    p = softmax(logits)
    if not 0 <= action < p.shape[0]:
        raise IndexError(f"action {action} out of range for {p.shape[0]} logits")
    g = -p
    g[action] += 1.0
    return g


# -- checkpoint format ------------------------------------------------------------

def net_arrays(net: DenseNet, prefix: str = "") -> dict[str, np.ndarray]:
    out = {f"{prefix}layer_sizes": np.asarray(net.layer_sizes, dtype=np.int64)}
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        out[f"{prefix}W{i}"] = np.ascontiguousarray(w)
        out[f"{prefix}b{i}"] = np.ascontiguousarray(b)
    return out


def net_from_arrays(arrays, prefix: str = "") -> DenseNet:
    sizes = tuple(int(s) for s in arrays[f"{prefix}layer_sizes"])
    n = len(sizes) - 1
    return DenseNet.from_layers([np.asarray(arrays[f"{prefix}W{i}"]) for i in range(n)],
                                [np.asarray(arrays[f"{prefix}b{i}"]) for i in range(n)])


def save_archive(target: PathOrFile, arrays: dict[str, np.ndarray], meta: dict) -> None:
    """Write arrays plus a JSON header into one .npz archive."""
    payload = dict(arrays)
    header = {**meta, "format_version": FORMAT_VERSION}
    payload["__meta__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    if isinstance(target, (str, Path)):
        with open(target, "wb") as fh:
            np.savez(fh, **payload)
    else:
        np.savez(target, **payload)


def load_archive(source: PathOrFile) -> tuple[dict[str, np.ndarray], dict]:
    with np.load(source, allow_pickle=False) as data:
        if "__meta__" not in data.files:
            raise ValueError("archive has no metadata header")
        arrays = {k: data[k] for k in data.files if k != "__meta__"}
        meta = json.loads(bytes(data["__meta__"]).decode())
    if meta.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint version {meta.get('format_version')!r}")
    return arrays, meta


def save_net(net: DenseNet, target: PathOrFile) -> None:
    save_archive(target, net_arrays(net), {"kind": "dense_net"})


def load_net(source: PathOrFile) -> DenseNet:
    arrays, meta = load_archive(source)
    if meta.get("kind") != "dense_net":
        raise ValueError(f"not a network checkpoint: kind={meta.get('kind')!r}")
    return net_from_arrays(arrays)


def net_bytes(net: DenseNet) -> bytes:
    buf = io.BytesIO()
    save_net(net, buf)
    return buf.getvalue()
