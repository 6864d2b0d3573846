"""Fully-connected networks with hand-rolled backprop, Adam, and checkpoints.

Everything is plain numpy on a single flat parameter vector, so optimizer
state, checkpointing, and determinism stay trivial. Forward/backward support
single inputs (d,) and batches (B, d).
"""

import json

import numpy as np

from .errors import CheckpointError, ConfigError

ACTIVATIONS = ("relu", "tanh", "identity")

CHECKPOINT_VERSION = 1


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z):
    # subgradient at relu kink is 0 by convention
    if name == "relu":
        return (z > 0.0).astype(z.dtype)
    if name == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


class DenseNet:
    """Feed-forward net y = act_L(...act_1(x W_1 + b_1)... W_L + b_L).

    Parameters live in one flat vector ``self.params``; per-layer weight
    matrices are reshaped views into it, so in-place writes to ``params``
    (e.g. after an Adam step) are immediately visible to ``forward``.
    """

    def __init__(self, layer_sizes, activations, rng=None, dtype=np.float64,
                 params=None):
        layer_sizes = [int(n) for n in layer_sizes]
        if len(layer_sizes) < 2:
            raise ConfigError(f"need at least input and output sizes, got {layer_sizes}")
        if any(n <= 0 for n in layer_sizes):
            raise ConfigError(f"layer sizes must be positive, got {layer_sizes}")
        activations = list(activations)
        if len(activations) != len(layer_sizes) - 1:
            raise ConfigError(
                f"{len(layer_sizes) - 1} layers need {len(layer_sizes) - 1} "
                f"activations, got {len(activations)}")
        for a in activations:
            if a not in ACTIVATIONS:
                raise ConfigError(f"unknown activation {a!r}, expected one of {ACTIVATIONS}")
        self.layer_sizes = layer_sizes
        self.activations = activations
        self.dtype = np.dtype(dtype)

        n = self.n_params()
        if params is not None:
            params = np.asarray(params, dtype=self.dtype)
            if params.shape != (n,):
                raise ConfigError(f"expected {n} params, got shape {params.shape}")
            self.params = params.copy()
        else:
            if rng is None:
                raise ConfigError("need an rng to initialize params")
            # uniform +-1/sqrt(fan_in) for both weights and biases, layer order
            chunks = []
            for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
                bound = 1.0 / np.sqrt(fan_in)
                chunks.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
                chunks.append(rng.uniform(-bound, bound, size=fan_out))
            self.params = np.concatenate(chunks).astype(self.dtype)

        # reshaped views into the flat vector, one (W, b) pair per layer
        self._views = []
        off = 0
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            w = self.params[off:off + fan_in * fan_out].reshape(fan_in, fan_out)
            off += fan_in * fan_out
            b = self.params[off:off + fan_out]
            off += fan_out
            self._views.append((w, b))

    def n_params(self):
        return sum(i * o + o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def weights(self):
        return list(self._views)

    def set_params(self, flat):
        flat = np.asarray(flat, dtype=self.dtype)
        if flat.shape != self.params.shape:
            raise ConfigError(f"param shape mismatch: {flat.shape} vs {self.params.shape}")
        self.params[:] = flat

    def _as_batch(self, x):
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.shape[1] != self.layer_sizes[0]:
            raise ConfigError(f"input dim {x.shape[1]} != {self.layer_sizes[0]}")
        return x, single

    def forward(self, x):
        x, single = self._as_batch(x)
        for (w, b), act in zip(self._views, self.activations):
            x = _act(act, x @ w + b)
        return x[0] if single else x

    def forward_cached(self, x):
        """Forward pass keeping layer inputs and pre-activations for backward.

        Returns (y, cache). The cache is only valid until params change.
        """
        x, single = self._as_batch(x)
        inputs, preacts = [], []
        for (w, b), act in zip(self._views, self.activations):
            inputs.append(x)
            z = x @ w + b
            preacts.append(z)
            x = _act(act, z)
        return (x[0] if single else x), (inputs, preacts, single)

    def backward(self, cache, upstream):
        """VJP of the cached forward pass.

        upstream has the shape of the forward output; returns
        (grad_params_flat, grad_input).
        """
        inputs, preacts, single = cache
        delta = np.asarray(upstream, dtype=self.dtype)
        if single:
            delta = delta[None, :]
        grads = [None] * len(self._views)
        for li in reversed(range(len(self._views))):
            w, _ = self._views[li]
            delta = delta * _act_grad(self.activations[li], preacts[li])
            gw = inputs[li].T @ delta
            gb = delta.sum(axis=0)
            grads[li] = (gw, gb)
            delta = delta @ w.T
        flat = np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
        return flat, (delta[0] if single else delta)

    def grad(self, x, upstream):
        _, cache = self.forward_cached(x)
        return self.backward(cache, upstream)


class AdamState:
    """Adam moments for one flat parameter vector."""

    def __init__(self, n_params, learning_rate, beta1=0.9, beta2=0.999,
                 epsilon=1e-8, dtype=np.float64):
        self.learning_rate = float(learning_rate)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.epsilon = float(epsilon)
        self.step_count = 0
        self.m = np.zeros(int(n_params), dtype=dtype)
        self.v = np.zeros(int(n_params), dtype=dtype)


def adam_step(state, params, grad, ascend=False):
    """One Adam update; returns the new parameter vector.

    ``ascend=True`` flips the gradient sign (gradient ascent on an objective
    instead of descent on a loss). Moments and step count mutate in place.
    """
    g = np.asarray(grad, dtype=params.dtype)
    if g.shape != params.shape:
        raise ConfigError(f"grad shape {g.shape} != params shape {params.shape}")
    if not np.all(np.isfinite(g)):
        from .errors import NumericalFault
        raise NumericalFault(
            f"non-finite gradient at step {state.step_count + 1} "
            f"(|bad| = {int(np.sum(~np.isfinite(g)))} of {g.size})")
    if ascend:
        g = -g
    state.step_count += 1
    t = state.step_count
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    m_hat = state.m / (1.0 - state.beta1 ** t)
    v_hat = state.v / (1.0 - state.beta2 ** t)
    return params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def net_state(net):
    """Serializable dict for a DenseNet (flat arrays and strings only)."""
    return {
        "layer_sizes": np.asarray(net.layer_sizes, dtype=np.int64),
        "activations": "|".join(net.activations),
        "dtype": net.dtype.str,
        "params": net.params.copy(),
    }


def net_from_state(state):
    return DenseNet(
        [int(n) for n in np.asarray(state["layer_sizes"])],
        str(state["activations"]).split("|"),
        dtype=np.dtype(str(state["dtype"])),
        params=np.asarray(state["params"]),
    )


def adam_state_dict(adam):
    return {
        "learning_rate": adam.learning_rate,
        "beta1": adam.beta1,
        "beta2": adam.beta2,
        "epsilon": adam.epsilon,
        "step_count": adam.step_count,
        "m": adam.m.copy(),
        "v": adam.v.copy(),
    }


def adam_from_state(state):
    a = AdamState(len(np.asarray(state["m"])), float(state["learning_rate"]),
                  beta1=float(state["beta1"]), beta2=float(state["beta2"]),
                  epsilon=float(state["epsilon"]), dtype=np.asarray(state["m"]).dtype)
    a.step_count = int(state["step_count"])
    a.m = np.asarray(state["m"]).copy()
    a.v = np.asarray(state["v"]).copy()
    return a


def save_checkpoint(path, payload):
    """Write a nested payload of arrays/scalars/strings to a versioned .npz.

    Nested dicts are flattened with '/' separators. Arrays round-trip
    bit-exactly; scalars come back as 0-d arrays and are unwrapped on load.
    """
    flat = {}

    def put(prefix, value):
        if isinstance(value, dict):
            for k, v in value.items():
                if "/" in k:
                    raise ConfigError(f"checkpoint keys must not contain '/': {k!r}")
                put(f"{prefix}{k}/", v)
        else:
            key = prefix[:-1]
            if isinstance(value, str):
                flat[key] = np.str_(value)
            elif isinstance(value, (int, float, np.integer, np.floating, bool)):
                flat[key] = np.asarray(value)
            elif isinstance(value, np.ndarray):
                flat[key] = value
            else:
                raise ConfigError(f"cannot checkpoint {key!r} of type {type(value)}")

    put("", dict(payload))
    flat["__version__"] = np.asarray(CHECKPOINT_VERSION)
    with open(path, "wb") as fh:
        np.savez(fh, **flat)


def load_checkpoint(path):
    """Inverse of save_checkpoint; returns the nested payload dict."""
    with np.load(path, allow_pickle=False) as data:
        raw = {k: data[k] for k in data.files}
    version = int(raw.pop("__version__", -1))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"checkpoint version {version} != {CHECKPOINT_VERSION}")
    out = {}
    for key, value in raw.items():
        parts = key.split("/")
        node = out
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        if value.ndim == 0:
            kind = value.dtype.kind
            if kind in "US":
                node[parts[-1]] = str(value)
            elif kind in "iub":
                node[parts[-1]] = int(value)
            else:
                node[parts[-1]] = float(value)
        else:
            node[parts[-1]] = value
    return out


def params_checksum(*arrays):
    """Cheap content hash to assert parameter freezes in tests."""
    h = 0
    for a in arrays:
        h ^= hash(np.asarray(a).tobytes())
    return h


def json_config_hash(obj):
    """Stable hash of a JSON-serializable object (sorted keys)."""
    import hashlib
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()
