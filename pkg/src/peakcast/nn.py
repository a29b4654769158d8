"""Minimal neural-network stack: dense and 1D-conv layers with backprop.

Networks are branch-structured: each named branch processes one input
block (a flat feature vector or a channels-by-slots matrix), branch
outputs are concatenated and fed to a shared head.  Everything runs on
numpy with explicitly seeded randomness so training is bit-reproducible.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np


class ShapeError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    dims: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "dropout" and not 0.0 <= self.dims["rate"] < 1.0:
            raise ValueError("dropout rate must be in [0, 1)")


@dataclass(frozen=True)
class NetworkSpec:
    branches: tuple[tuple[str, tuple[LayerSpec, ...]], ...]
    head: tuple[LayerSpec, ...]
    output: str  # dp_scalar | ip_ordinal_48


class Dense:
    def __init__(self, n_in, n_out, rng):
        self.w = rng.normal(scale=np.sqrt(2.0 / n_in), size=(n_in, n_out))
        self.b = np.zeros(n_out)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def forward(self, x, train, rng):
        if x.ndim != 2 or x.shape[1] != self.w.shape[0]:
            raise ShapeError(
                f"dense layer expects (batch, {self.w.shape[0]}), got {x.shape}"
            )
        self._x = x
        return x @ self.w + self.b

    def backward(self, grad):
        self.dw += self._x.T @ grad
        self.db += grad.sum(axis=0)
        return grad @ self.w.T

    params = property(lambda self: [self.w, self.b])
    grads = property(lambda self: [self.dw, self.db])


class Conv1D:
    """Valid (no padding) cross-correlation over the last axis."""

    def __init__(self, c_in, filters, kernel, stride, rng):
        self.kernel = kernel
        self.stride = stride
        fan_in = c_in * kernel
        self.w = rng.normal(scale=np.sqrt(2.0 / fan_in), size=(filters, c_in, kernel))
        self.b = np.zeros(filters)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)

    def forward(self, x, train, rng):
        if x.ndim != 3 or x.shape[1] != self.w.shape[1]:
            raise ShapeError(
                f"conv layer expects (batch, {self.w.shape[1]}, length), got {x.shape}"
            )
        if self.kernel > x.shape[2]:
            raise ShapeError(
                f"kernel {self.kernel} exceeds input length {x.shape[2]}"
            )
        windows = np.lib.stride_tricks.sliding_window_view(x, self.kernel, axis=2)
        self._windows = windows[:, :, :: self.stride, :]
        self._in_shape = x.shape
        return (
            np.einsum("bclk,fck->bfl", self._windows, self.w)
            + self.b[None, :, None]
        )

    def backward(self, grad):
        self.dw += np.einsum("bclk,bfl->fck", self._windows, grad)
        self.db += grad.sum(axis=(0, 2))
        dx = np.zeros(self._in_shape)
        for pos in range(grad.shape[2]):
            start = pos * self.stride
            dx[:, :, start : start + self.kernel] += np.einsum(
                "bf,fck->bck", grad[:, :, pos], self.w
            )
        return dx

    params = property(lambda self: [self.w, self.b])
    grads = property(lambda self: [self.dw, self.db])


class ReLU:
    def forward(self, x, train, rng):
        self._mask = x > 0
        return x * self._mask

    def backward(self, grad):
        return grad * self._mask

    params = property(lambda self: [])
    grads = property(lambda self: [])


class Sigmoid:
    def forward(self, x, train, rng):
        self._out = 1.0 / (1.0 + np.exp(-x))
        return self._out

    def backward(self, grad):
        return grad * self._out * (1.0 - self._out)

    params = property(lambda self: [])
    grads = property(lambda self: [])


class Dropout:
    """Inverted dropout: active in training only, identity in eval mode."""

    def __init__(self, rate):
        self.rate = rate

    def forward(self, x, train, rng):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        keep = 1.0 - self.rate
        self._mask = (rng.random(x.shape) < keep) / keep
        return x * self._mask

    def backward(self, grad):
        return grad if self._mask is None else grad * self._mask

    params = property(lambda self: [])
    grads = property(lambda self: [])


class Flatten:
    def forward(self, x, train, rng):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)

    params = property(lambda self: [])
    grads = property(lambda self: [])


def _build_layer(spec: LayerSpec, rng):
    d = spec.dims
    if spec.kind == "dense":
        return Dense(d["n_in"], d["n_out"], rng)
    if spec.kind == "conv1d":
        return Conv1D(d["c_in"], d["filters"], d["kernel"], d.get("stride", 1), rng)
    if spec.kind == "dropout":
        return Dropout(d["rate"])
    if spec.kind == "relu":
        return ReLU()
    if spec.kind == "sigmoid":
        return Sigmoid()
    if spec.kind == "flatten":
        return Flatten()
    raise ValueError(f"unknown layer kind {spec.kind!r}")


class Network:
    """Materialised branch network with shared head."""

    def __init__(self, spec: NetworkSpec, seed: int = 0):
        self.spec = spec
        rng = np.random.default_rng(seed)
        self.branches = [
            (name, [_build_layer(ls, rng) for ls in layers])
            for name, layers in spec.branches
        ]
        self.head = [_build_layer(ls, rng) for ls in spec.head]

    def _all_layers(self):
        for _, layers in self.branches:
            yield from layers
        yield from self.head

    @property
    def params(self):
        return [p for layer in self._all_layers() for p in layer.params]

    @property
    def grads(self):
        return [g for layer in self._all_layers() for g in layer.grads]

    def zero_grads(self):
        for g in self.grads:
            g[:] = 0.0

    def forward(self, inputs: dict, train: bool = False, rng=None):
        """Run all branches and the head; caches activations for backward."""
        outs = []
        self._widths = []
        for name, layers in self.branches:
            if name not in inputs:
                raise ShapeError(f"missing input block {name!r}")
            x = np.asarray(inputs[name], dtype=float)
            for layer in layers:
                x = layer.forward(x, train, rng)
            if x.ndim != 2:
                raise ShapeError(f"branch {name!r} output must be flat, got {x.shape}")
            outs.append(x)
            self._widths.append(x.shape[1])
        x = np.concatenate(outs, axis=1) if len(outs) > 1 else outs[0]
        for layer in self.head:
            x = layer.forward(x, train, rng)
        return x

    def backward(self, grad):
        for layer in reversed(self.head):
            grad = layer.backward(grad)
        pieces = np.split(grad, np.cumsum(self._widths)[:-1], axis=1)
        for (name, layers), piece in zip(self.branches, pieces):
            g = piece
            for layer in reversed(layers):
                g = layer.backward(g)

    def to_json(self) -> str:
        payload = {
            "format_version": 1,
            "spec": _spec_to_dict(self.spec),
            "weights": [p.tolist() for p in self.params],
        }
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "Network":
        payload = json.loads(text)
        if payload.get("format_version") != 1:
            raise ValueError("unsupported network file version")
        net = cls(_spec_from_dict(payload["spec"]), seed=0)
        for p, stored in zip(net.params, payload["weights"], strict=True):
            p[:] = np.asarray(stored, dtype=float)
        return net


def _spec_to_dict(spec: NetworkSpec) -> dict:
    return {
        "branches": [
            [name, [{"kind": ls.kind, "dims": ls.dims} for ls in layers]]
            for name, layers in spec.branches
        ],
        "head": [{"kind": ls.kind, "dims": ls.dims} for ls in spec.head],
        "output": spec.output,
    }


def _spec_from_dict(d: dict) -> NetworkSpec:
    return NetworkSpec(
        branches=tuple(
            (name, tuple(LayerSpec(ls["kind"], ls["dims"]) for ls in layers))
            for name, layers in d["branches"]
        ),
        head=tuple(LayerSpec(ls["kind"], ls["dims"]) for ls in d["head"]),
        output=d["output"],
    )


# ---------------------------------------------------------------- losses

def mse_loss(outputs, targets):
    """Mean squared error over the batch; returns (value, grad)."""
    pred = outputs.reshape(outputs.shape[0], -1)
    t = np.asarray(targets, dtype=float).reshape(pred.shape)
    diff = pred - t
    n = diff.size
    with np.errstate(over="ignore"):  # divergence is reported by the trainer
        return float(np.mean(diff**2)), (2.0 / n) * diff


def ordinal_bce_loss(outputs, targets):
    """Per-neuron binary cross-entropy, summed over neurons, batch mean."""
    p = np.clip(outputs, 1e-12, 1.0 - 1e-12)
    t = np.asarray(targets, dtype=float)
    batch = p.shape[0]
    value = float(-np.sum(t * np.log(p) + (1.0 - t) * np.log1p(-p)) / batch)
    grad = (p - t) / (p * (1.0 - p)) / batch
    return value, grad


LOSSES = {"mse": mse_loss, "ordinal_bce": ordinal_bce_loss}


# ------------------------------------------------------- ordinal coding

def ordinal_encode(ip: int, n_slots: int = 48) -> np.ndarray:
    """Cumulative 0/1 target: ones up to and including the peak slot."""
    if not 0 <= ip <= n_slots - 1:
        raise ValueError(f"slot {ip} outside 0..{n_slots - 1}")
    return (np.arange(n_slots) <= ip).astype(float)


def ordinal_encode_batch(ips, n_slots: int = 48) -> np.ndarray:
    ips = np.asarray(ips, dtype=int)
    if ips.size and (ips.min() < 0 or ips.max() > n_slots - 1):
        raise ValueError("slot outside valid range")
    return (np.arange(n_slots)[None, :] <= ips[:, None]).astype(float)


def ordinal_decode(outputs) -> int:
    """Count of confident neurons minus one, clamped to the slot range."""
    outputs = np.asarray(outputs, dtype=float)
    count = int(np.sum(outputs > 0.5))
    return int(np.clip(count - 1, 0, outputs.size - 1))


def ordinal_decode_batch(outputs) -> np.ndarray:
    outputs = np.asarray(outputs, dtype=float)
    counts = (outputs > 0.5).sum(axis=1)
    return np.clip(counts - 1, 0, outputs.shape[1] - 1).astype(int)


# ------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    loss: str = "mse"

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError("epochs and batch size must be positive, "
                             "learning rate nonnegative")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}")


class _Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m[:] = self.b1 * m + (1 - self.b1) * g
            v[:] = self.b2 * v + (1 - self.b2) * g * g
            m_hat = m / (1 - self.b1**self.t)
            v_hat = v / (1 - self.b2**self.t)
            p -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


class _SGD:
    def __init__(self, params, lr):
        self.lr = lr

    def step(self, params, grads):
        for p, g in zip(params, grads):
            p -= self.lr * g


def train(net: Network, inputs: dict, targets, cfg: TrainConfig) -> list[float]:
    """Minibatch gradient descent; returns the per-epoch training loss."""
    n = len(targets)
    if n == 0:
        raise TrainingError("empty training set")
    loss_fn = LOSSES[cfg.loss]
    rng = np.random.default_rng(cfg.seed)
    opt_cls = {"adam": _Adam, "sgd": _SGD}[cfg.optimizer]
    optimizer = opt_cls(net.params, cfg.learning_rate)
    targets = np.asarray(targets, dtype=float)
    trace = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = {k: v[idx] for k, v in inputs.items()}
            out = net.forward(batch, train=True, rng=rng)
            value, grad = loss_fn(out, targets[idx])
            if not np.isfinite(value):
                raise TrainingError(f"training diverged at epoch {epoch}")
            net.zero_grads()
            net.backward(grad)
            optimizer.step(net.params, net.grads)
            total += value * idx.size
            seen += idx.size
        trace.append(total / seen)
    return trace


def gradient_check(net: Network, loss: str, inputs: dict, targets,
                   h: float = 1e-5, max_entries_per_param: int | None = None,
                   seed: int = 0) -> float:
    """Max relative gap between backprop and central-difference gradients.

    Runs in eval mode (dropout inactive).  Large parameter arrays can be
    subsampled via ``max_entries_per_param``.
    """
    loss_fn = LOSSES[loss]
    out = net.forward(inputs, train=False)
    _, grad = loss_fn(out, targets)
    net.zero_grads()
    net.backward(grad)
    analytic = [g.copy() for g in net.grads]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, g in zip(net.params, analytic):
        flat_p = p.reshape(-1)
        flat_g = g.reshape(-1)
        indices = np.arange(flat_p.size)
        if max_entries_per_param is not None and flat_p.size > max_entries_per_param:
            indices = rng.choice(flat_p.size, size=max_entries_per_param, replace=False)
        for i in indices:
            orig = flat_p[i]
            flat_p[i] = orig + h
            up, _ = loss_fn(net.forward(inputs, train=False), targets)
            flat_p[i] = orig - h
            down, _ = loss_fn(net.forward(inputs, train=False), targets)
            flat_p[i] = orig
            numeric = (up - down) / (2.0 * h)
            denom = max(abs(numeric), abs(flat_g[i]), 1e-8)
            worst = max(worst, abs(numeric - flat_g[i]) / denom)
    return worst


# -------------------------------------------------------- architectures

def _fcnn_spec(n_inputs: int, target: str, hidden: int = 50,
               dropout: float = 0.1) -> NetworkSpec:
    branch = (
        LayerSpec("dense", {"n_in": n_inputs, "n_out": hidden}),
        LayerSpec("relu"),
        LayerSpec("dropout", {"rate": dropout}),
    )
    return NetworkSpec(
        branches=(("main", branch),),
        head=_output_head(hidden, target),
        output="dp_scalar" if target == "dp" else "ip_ordinal_48",
    )


def _output_head(width: int, target: str) -> tuple[LayerSpec, ...]:
    if target == "dp":
        return (LayerSpec("dense", {"n_in": width, "n_out": 1}), LayerSpec("relu"))
    if target == "ip":
        return (LayerSpec("dense", {"n_in": width, "n_out": 48}), LayerSpec("sigmoid"))
    raise ValueError(f"unknown target {target!r}")


def _conv_branch(filters=(8, 4), kernels=(7, 5), length: int = 48):
    layers = []
    c_in = 2
    for f, k in zip(filters, kernels):
        layers += [
            LayerSpec("conv1d", {"c_in": c_in, "filters": f, "kernel": k, "stride": 1}),
            LayerSpec("relu"),
        ]
        length = length - k + 1
        c_in = f
    layers.append(LayerSpec("flatten"))
    return tuple(layers), c_in * length


def build_architecture(name: str, target: str, n_inputs: int | None = None,
                       conv_filters=(8, 4), conv_kernels=(7, 5),
                       lowres_width: int = 16, head_width: int = 64,
                       dropout: float = 0.1) -> NetworkSpec:
    """Network layouts for the three forecasting architectures.

    hr_fcnn / lr_fcnn: one hidden layer of 50 units with 10% dropout.
    mr_cnn: an MLP branch over the daily features plus one two-channel
    convolution block per slot-vector covariate (values + slot index),
    concatenated into a dense head.
    """
    if target not in ("dp", "ip"):
        raise ValueError(f"unknown target {target!r}")
    if name in ("hr_fcnn", "lr_fcnn"):
        if n_inputs is None:
            raise ValueError(f"{name} needs n_inputs")
        return _fcnn_spec(n_inputs, target, dropout=dropout)
    if name != "mr_cnn":
        raise ValueError(f"unknown architecture {name!r}")

    n_low = n_inputs if n_inputs is not None else 8  # one-hot dow + toy
    low_branch = (
        LayerSpec("dense", {"n_in": n_low, "n_out": lowres_width}),
        LayerSpec("relu"),
    )
    conv_layers, conv_width = _conv_branch(conv_filters, conv_kernels)
    branches = [("lowres", low_branch)]
    for block in ("tem", "tem95", "lag"):
        branches.append((block, conv_layers))
    concat_width = lowres_width + 3 * conv_width
    head = (
        LayerSpec("dense", {"n_in": concat_width, "n_out": head_width}),
        LayerSpec("relu"),
        LayerSpec("dropout", {"rate": dropout}),
    ) + _output_head(head_width, target)
    return NetworkSpec(
        branches=tuple(branches),
        head=head,
        output="dp_scalar" if target == "dp" else "ip_ordinal_48",
    )
