"""The regression network: conv encoder producing features, dense head producing a pose."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .config import NetworkConfig


class Parameters:
    """Named float64 arrays in a fixed order, with a flat-vector view.

    Running batchnorm statistics are buffers: they are part of the flat view
    (and of checkpoints) but not of the trainable vector.
    """

    def __init__(self, arrays, buffers=()):
        self.arrays = {k: np.array(v, dtype=float) for k, v in arrays.items()}
        self.buffers = tuple(buffers)
        unknown = set(self.buffers) - set(self.arrays)
        if unknown:
            raise KeyError(f"unknown buffers {sorted(unknown)}")

    @property
    def names(self):
        return list(self.arrays)

    @property
    def trainable_names(self):
        return [k for k in self.arrays if k not in self.buffers]

    def __getitem__(self, name):
        return self.arrays[name]

    def __setitem__(self, name, value):
        if np.shape(value) != self.arrays[name].shape:
            raise ValueError(f"{name}: shape {np.shape(value)} != {self.arrays[name].shape}")
        self.arrays[name] = np.array(value, dtype=float)

    def __contains__(self, name):
        return name in self.arrays

    def copy(self):
        return Parameters({k: v.copy() for k, v in self.arrays.items()}, self.buffers)

    def layout(self):
        return [(k, list(v.shape)) for k, v in self.arrays.items()]

    def _flat(self, names):
        if not names:
            return np.zeros(0)
        return np.concatenate([self.arrays[k].ravel() for k in names])

    def _assign(self, names, vec):
        vec = np.asarray(vec, dtype=float)
        total = sum(self.arrays[k].size for k in names)
        if vec.shape != (total,):
            raise ValueError(f"flat vector has shape {vec.shape}, expected ({total},)")
        i = 0
        for k in names:
            a = self.arrays[k]
            self.arrays[k] = vec[i : i + a.size].reshape(a.shape).copy()
            i += a.size

    def to_vector(self):
        return self._flat(self.names)

    def load_vector(self, vec):
        self._assign(self.names, vec)
        return self

    def trainable_vector(self):
        return self._flat(self.trainable_names)

    def set_trainable_vector(self, vec):
        self._assign(self.trainable_names, vec)
        return self

    def grads_vector(self, grads):
        """Flatten a ``{name: grad}`` dict in trainable order."""
        return np.concatenate([np.asarray(grads[k], dtype=float).ravel() for k in self.trainable_names])

    def segment_of(self, index):
        """Name of the trainable array owning flat index ``index``."""
        i = 0
        for k in self.trainable_names:
            i += self.arrays[k].size
            if index < i:
                return k
        raise IndexError(index)

    def all_finite(self):
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())


def _he_uniform(rng, shape, fan_in):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape)


def init_parameters(config: NetworkConfig, seed=0) -> Parameters:
    """He-uniform weights, zero biases, batchnorm scale 1 and shift 0.

    Layers followed by batchnorm carry no bias (the normalization removes it).
    """
    rng = np.random.default_rng(seed)
    arrays, buffers = {}, []

    def add_bn(prefix, width):
        arrays[f"{prefix}.bn.gamma"] = np.ones(width)
        arrays[f"{prefix}.bn.beta"] = np.zeros(width)
        arrays[f"{prefix}.bn.running_mean"] = np.zeros(width)
        arrays[f"{prefix}.bn.running_var"] = np.ones(width)
        buffers.extend([f"{prefix}.bn.running_mean", f"{prefix}.bn.running_var"])

    c_in = config.in_channels
    for i, c in enumerate(config.conv_layers):
        k = c.kernel_size
        arrays[f"conv{i}.W"] = _he_uniform(rng, (c.out_channels, c_in, k, k, k), c_in * k ** 3)
        if config.conv_batchnorm:
            add_bn(f"conv{i}", c.out_channels)
        else:
            arrays[f"conv{i}.b"] = np.zeros(c.out_channels)
        c_in = c.out_channels
    widths = config.fc_layers
    for i in range(len(widths) - 1):
        arrays[f"fc{i}.W"] = _he_uniform(rng, (widths[i], widths[i + 1]), widths[i])
        if i < config.fc_batchnorm:
            add_bn(f"fc{i}", widths[i + 1])
        else:
            arrays[f"fc{i}.b"] = np.zeros(widths[i + 1])
    # Glorot-uniform head keeps the initial outputs small
    fan_in, fan_out = widths[-1], config.output_dim
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    arrays["head.W"] = rng.uniform(-limit, limit, size=(fan_in, fan_out))
    arrays["head.b"] = np.zeros(fan_out)
    return Parameters(arrays, buffers)


@dataclass
class Tape:
    mode: str
    input_shape: tuple
    records: list = field(default_factory=list)
    features: np.ndarray = None


def as_volume(x, config: NetworkConfig):
    """Coerce ``(N, R, R, R)`` or ``(N, C, R, R, R)`` input, checking the resolution."""
    x = np.asarray(x, dtype=float)
    if x.ndim == 3:
        x = x[None]
    if x.ndim == 4:
        x = x[:, None]
    r = config.input_resolution
    if x.ndim != 5 or x.shape[1] != config.in_channels or x.shape[2:] != (r, r, r):
        raise ValueError(
            f"input shape {x.shape} does not match network input "
            f"(N, {config.in_channels}, {r}, {r}, {r})"
        )
    return x


def _bn(params, prefix, x, train, update_stats, config, tape):
    out, cache = L.batchnorm_forward(
        x,
        params[f"{prefix}.bn.gamma"],
        params[f"{prefix}.bn.beta"],
        params[f"{prefix}.bn.running_mean"],
        params[f"{prefix}.bn.running_var"],
        train,
        config.bn_eps,
    )
    if train and update_stats:
        mom = config.bn_momentum
        params[f"{prefix}.bn.running_mean"] = mom * params[f"{prefix}.bn.running_mean"] + (1 - mom) * cache[4]
        params[f"{prefix}.bn.running_var"] = mom * params[f"{prefix}.bn.running_var"] + (1 - mom) * cache[5]
    tape.records.append(("bn", prefix, cache))
    return out


def forward(params: Parameters, config: NetworkConfig, x, mode="eval", update_stats=True):
    """Predict ``(N, output_dim)`` poses; returns ``(prediction, tape)``.

    ``mode="train"`` normalizes with batch statistics and, unless
    ``update_stats`` is false, folds them into the running averages.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', not {mode!r}")
    train = mode == "train"
    h = as_volume(x, config)
    tape = Tape(mode, h.shape)
    for i, c in enumerate(config.conv_layers):
        h, cache = L.conv3d_forward(h, params[f"conv{i}.W"])
        tape.records.append(("conv", f"conv{i}", cache))
        if config.conv_batchnorm:
            h = _bn(params, f"conv{i}", h, train, update_stats, config, tape)
        else:
            h = h + params[f"conv{i}.b"].reshape(1, -1, 1, 1, 1)
            tape.records.append(("bias3d", f"conv{i}", None))
        h, mask = L.relu_forward(h)
        tape.records.append(("relu", f"conv{i}", mask))
        if c.pool:
            h, cache = L.maxpool_forward(h)
            tape.records.append(("pool", f"conv{i}", cache))
    tape.records.append(("flatten", "flatten", h.shape))
    h = h.reshape(len(h), -1)
    tape.features = h
    n_fc = len(config.fc_layers) - 1
    for i in range(n_fc):
        has_bn = i < config.fc_batchnorm
        h, cache = L.dense_forward(h, params[f"fc{i}.W"], None if has_bn else params[f"fc{i}.b"])
        tape.records.append(("dense", f"fc{i}", cache))
        if has_bn:
            h = _bn(params, f"fc{i}", h, train, update_stats, config, tape)
        h, mask = L.relu_forward(h)
        tape.records.append(("relu", f"fc{i}", mask))
    out, cache = L.dense_forward(h, params["head.W"], params["head.b"])
    tape.records.append(("dense", "head", cache))
    return out, tape


def encode(params: Parameters, config: NetworkConfig, x):
    """Eval-mode encoder features, ``(N, feature_length)``."""
    _, tape = forward(params, config, x, mode="eval")
    return tape.features


def backward(params: Parameters, config: NetworkConfig, tape: Tape, d_out, input_grad=False):
    """Reverse pass; returns ``{name: grad}`` for trainable arrays (and ``dx`` if asked)."""
    d = np.asarray(d_out, dtype=float)
    head = tape.records[-1]
    if head[1] != "head" or d.shape != (head[2][0].shape[0], config.output_dim):
        raise ValueError(f"d_out shape {d.shape} does not match the tape")
    grads = {}
    first_conv = "conv0"
    for kind, name, cache in reversed(tape.records):
        if kind == "dense":
            d, dw, db = L.dense_backward(d, cache)
            grads[f"{name}.W"] = dw
            if f"{name}.b" in params:
                grads[f"{name}.b"] = db
        elif kind == "bn":
            d, dgamma, dbeta = L.batchnorm_backward(d, cache)
            grads[f"{name}.bn.gamma"] = dgamma
            grads[f"{name}.bn.beta"] = dbeta
        elif kind == "relu":
            d = L.relu_backward(d, cache)
        elif kind == "pool":
            d = L.maxpool_backward(d, cache)
        elif kind == "flatten":
            d = d.reshape(cache)
        elif kind == "bias3d":
            grads[f"{name}.b"] = d.sum(axis=(0, 2, 3, 4))
        elif kind == "conv":
            need = input_grad or name != first_conv
            d, grads[f"{name}.W"] = L.conv3d_backward(d, cache, need_dx=need)
        else:
            raise ValueError(f"unknown tape record {kind!r}")
    grads = {k: grads[k] for k in params.trainable_names}
    if input_grad:
        return grads, d
    return grads
