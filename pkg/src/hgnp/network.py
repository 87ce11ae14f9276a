"""Masked feed-forward networks with traced forward and backward passes.

A *neuron* is one output unit of a dense layer or one output channel of a
conv layer. Every parametric layer except the last carries a binary mask; a
masked neuron has its output forced to exactly zero. Because ReLU is
positively homogeneous, multiplying the layer output by the mask is the same
as zeroing the post-ReLU activation.

Residual additions are *rank aligned*: the k-th alive channel of the main path
is added to the k-th alive channel of the skip path. With identical masks this
is the ordinary elementwise sum; with different masks of equal size it is what
a physically compacted network computes, so masked and compacted forwards stay
identical.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

LAYER_KINDS = ("dense", "conv2d", "relu", "flatten", "residual_add")
LOSS_KINDS = ("cross_entropy", "mse", "linear")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    fan_in: int = 0
    fan_out: int = 0
    kernel: tuple[int, int] = (1, 1)
    padding: str = "same"
    pool: bool = False
    source: int = -1
    group_id: str | None = None

    @property
    def parametric(self) -> bool:
        return self.kind in ("dense", "conv2d")


def dense(fan_in: int, fan_out: int, group: str | None = None) -> LayerSpec:
    return LayerSpec("dense", fan_in, fan_out, group_id=group)


def conv2d(
    in_channels: int,
    out_channels: int,
    kernel: tuple[int, int] = (3, 3),
    padding: str = "same",
    pool: bool = False,
    group: str | None = None,
) -> LayerSpec:
    return LayerSpec("conv2d", in_channels, out_channels, tuple(kernel), padding, pool, group_id=group)


def relu() -> LayerSpec:
    return LayerSpec("relu")


def flatten() -> LayerSpec:
    return LayerSpec("flatten")


def residual_add(source: int) -> LayerSpec:
    """Add the output of layer ``source`` to the running tensor."""
    return LayerSpec("residual_add", source=source)


@dataclass
class MaskedNetwork:
    layers: list[LayerSpec]
    input_shape: tuple[int, ...]
    weights: list[np.ndarray | None]
    biases: list[np.ndarray | None]
    masks: list[np.ndarray | None]
    original_param_count: int = 0

    @property
    def param_layers(self) -> list[int]:
        return [i for i, s in enumerate(self.layers) if s.parametric]

    @property
    def maskable_layers(self) -> list[int]:
        return self.param_layers[:-1]

    @property
    def param_count(self) -> int:
        return sum(self.weights[i].size + self.biases[i].size for i in self.param_layers)

    @property
    def neuron_count(self) -> int:
        return sum(self.layers[i].fan_out for i in self.maskable_layers)

    @property
    def mask_b(self) -> np.ndarray:
        """All neuron mask bits, concatenated in layer order."""
        if not self.maskable_layers:
            return np.zeros(0, dtype=bool)
        return np.concatenate([self.masks[i] for i in self.maskable_layers])

    def neurons(self) -> list[tuple[int, int]]:
        return [(i, j) for i in self.maskable_layers for j in range(self.layers[i].fan_out)]

    def alive_neurons(self) -> int:
        return int(self.mask_b.sum())

    def flat_params(self) -> np.ndarray:
        parts = []
        for i in self.param_layers:
            parts += [self.weights[i].ravel(), self.biases[i]]
        return np.concatenate(parts)

    def with_flat(self, flat: np.ndarray) -> MaskedNetwork:
        """Copy of the network with parameters taken from ``flat``."""
        if flat.size != self.param_count:
            raise ValueError(f"expected {self.param_count} parameters, got {flat.size}")
        weights = list(self.weights)
        biases = list(self.biases)
        k = 0
        for i in self.param_layers:
            n = weights[i].size
            weights[i] = flat[k : k + n].reshape(weights[i].shape).copy()
            k += n
            n = biases[i].size
            biases[i] = flat[k : k + n].copy()
            k += n
        return replace(self, weights=weights, biases=biases, masks=[None if m is None else m.copy() for m in self.masks])

    def copy(self) -> MaskedNetwork:
        return copy.deepcopy(self)


def infer_shapes(layers: list[LayerSpec], input_shape: tuple[int, ...]) -> list[tuple[int, ...]]:
    """Output shape (without batch axis) of every layer; raises on incompatibility."""
    if not layers:
        raise ValueError("network needs at least one layer")
    shapes: list[tuple[int, ...]] = []
    shape = tuple(input_shape)
    for i, s in enumerate(layers):
        if s.kind not in LAYER_KINDS:
            raise ValueError(f"layer {i}: unknown kind {s.kind!r}")
        if s.kind == "dense":
            if len(shape) != 1 or shape[0] != s.fan_in:
                raise ValueError(f"layer {i}: dense expects ({s.fan_in},) input, got {shape}")
            if s.fan_out < 1:
                raise ValueError(f"layer {i}: dense needs fan_out >= 1")
            shape = (s.fan_out,)
        elif s.kind == "conv2d":
            if len(shape) != 3 or shape[0] != s.fan_in:
                raise ValueError(f"layer {i}: conv2d expects ({s.fan_in}, H, W) input, got {shape}")
            kh, kw = s.kernel
            if kh < 1 or kw < 1 or s.fan_out < 1:
                raise ValueError(f"layer {i}: bad conv2d kernel/channels")
            if s.padding not in ("same", "valid"):
                raise ValueError(f"layer {i}: padding must be 'same' or 'valid'")
            h, w = shape[1:]
            if s.padding == "valid":
                h, w = h - kh + 1, w - kw + 1
            if s.pool:
                h, w = h // 2, w // 2
            if h < 1 or w < 1:
                raise ValueError(f"layer {i}: conv2d output is empty")
            shape = (s.fan_out, h, w)
        elif s.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif s.kind == "residual_add":
            if not 0 <= s.source < i:
                raise ValueError(f"layer {i}: residual source must be an earlier layer, got {s.source}")
            if shapes[s.source] != shape:
                raise ValueError(f"layer {i}: residual shapes differ {shapes[s.source]} vs {shape}")
        shapes.append(shape)
    return shapes


def init_network(
    specs: list[LayerSpec], seed: int, input_shape: tuple[int, ...] | None = None
) -> MaskedNetwork:
    """He-uniform weights, zero biases, every mask bit set."""
    if not specs:
        raise ValueError("empty layer list")
    if input_shape is None:
        if specs[0].kind != "dense":
            raise ValueError("input_shape is required when the first layer is not dense")
        input_shape = (specs[0].fan_in,)
    infer_shapes(specs, input_shape)
    params = [i for i, s in enumerate(specs) if s.parametric]
    if not params:
        raise ValueError("network has no parametric layer")
    rng = np.random.default_rng(seed)
    weights: list[np.ndarray | None] = [None] * len(specs)
    biases: list[np.ndarray | None] = [None] * len(specs)
    masks: list[np.ndarray | None] = [None] * len(specs)
    for i in params:
        s = specs[i]
        if s.kind == "dense":
            shape = (s.fan_out, s.fan_in)
            fan_in = s.fan_in
        else:
            shape = (s.fan_out, s.fan_in, *s.kernel)
            fan_in = s.fan_in * s.kernel[0] * s.kernel[1]
        limit = np.sqrt(6.0 / fan_in)
        weights[i] = rng.uniform(-limit, limit, size=shape)
        biases[i] = np.zeros(s.fan_out)
        if i != params[-1]:
            masks[i] = np.ones(s.fan_out, dtype=bool)
    net = MaskedNetwork(list(specs), tuple(input_shape), weights, biases, masks)
    residual_groups(net)  # validates residual wiring
    net.original_param_count = net.param_count
    return net


def activation_index(net: MaskedNetwork, layer: int) -> int:
    """Index of the layer whose output is the neuron activation of ``layer``."""
    nxt = layer + 1
    if nxt < len(net.layers) and net.layers[nxt].kind == "relu":
        return nxt
    return layer


def tensor_alive(net: MaskedNetwork) -> list[np.ndarray]:
    """Per-layer boolean liveness of output channels (features for flat tensors)."""
    alive: list[np.ndarray] = []
    cur = np.ones(net.input_shape[0], dtype=bool)
    shapes = infer_shapes(net.layers, net.input_shape)
    prev_shape = net.input_shape
    for i, s in enumerate(net.layers):
        if s.parametric:
            cur = net.masks[i].copy() if net.masks[i] is not None else np.ones(s.fan_out, dtype=bool)
        elif s.kind == "flatten":
            spatial = int(np.prod(prev_shape[1:])) if len(prev_shape) > 1 else 1
            cur = np.repeat(cur, spatial)
        elif s.kind == "residual_add":
            if cur.sum() != alive[s.source].sum():
                raise ValueError(
                    f"layer {i}: residual operands have {cur.sum()} and "
                    f"{alive[s.source].sum()} alive channels"
                )
        alive.append(cur)
        prev_shape = shapes[i]
    return alive


def input_alive(net: MaskedNetwork, alive: list[np.ndarray] | None = None) -> list[np.ndarray]:
    alive = tensor_alive(net) if alive is None else alive
    first = np.ones(net.input_shape[0], dtype=bool)
    return [first if i == 0 else alive[i - 1] for i in range(len(net.layers))]


def _producer(net: MaskedNetwork, idx: int) -> int:
    while idx >= 0:
        s = net.layers[idx]
        if s.parametric:
            return idx
        if s.kind == "flatten":
            break
        idx -= 1
    return -1


def residual_groups(net: MaskedNetwork) -> list[list[int]]:
    """Sets of maskable layers whose alive counts must stay equal.

    Layers joined by a residual addition are grouped automatically; explicit
    ``group_id`` tags merge further layers into the same group.
    """
    parent = {i: i for i in net.maskable_layers}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    def union(a, b):
        ra, rb = find(a), find(b)
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)

    maskable = set(net.maskable_layers)
    for i, s in enumerate(net.layers):
        if s.kind != "residual_add":
            continue
        a, b = _producer(net, i - 1), _producer(net, s.source)
        if a not in maskable or b not in maskable:
            raise ValueError(f"layer {i}: residual operands must come from maskable layers")
        union(a, b)
    tagged: dict[str, int] = {}
    for i in net.maskable_layers:
        tag = net.layers[i].group_id
        if tag is not None:
            if tag in tagged:
                union(tagged[tag], i)
            else:
                tagged[tag] = i
    groups: dict[int, list[int]] = {}
    for i in net.maskable_layers:
        groups.setdefault(find(i), []).append(i)
    return [g for g in groups.values() if len(g) > 1]


# ---------------------------------------------------------------------------
# conv helpers


def _pad_amounts(k: int) -> tuple[int, int]:
    lo = (k - 1) // 2
    return lo, k - 1 - lo


def im2col(x: np.ndarray, kernel: tuple[int, int], padding: str) -> np.ndarray:
    """Patches of shape (N, Ho, Wo, C*kh*kw), ordered channel, row, column."""
    kh, kw = kernel
    if padding == "same":
        x = np.pad(x, ((0, 0), (0, 0), _pad_amounts(kh), _pad_amounts(kw)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    n, c, ho, wo = win.shape[:4]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho, wo, c * kh * kw)


def col2im(cols: np.ndarray, x_shape: tuple[int, ...], kernel: tuple[int, int], padding: str) -> np.ndarray:
    kh, kw = kernel
    n, c, h, w = x_shape
    ho, wo = cols.shape[1:3]
    cols = cols.reshape(n, ho, wo, c, kh, kw)
    if padding == "same":
        (t, b), (l, r) = _pad_amounts(kh), _pad_amounts(kw)
    else:
        t = b = l = r = 0
    out = np.zeros((n, c, h + t + b, w + l + r))
    for u in range(kh):
        for v in range(kw):
            out[:, :, u : u + ho, v : v + wo] += cols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    return out[:, :, t : t + h, l : l + w]


def _pool_windows(z: np.ndarray) -> np.ndarray:
    n, c, h, w = z.shape
    h2, w2 = h // 2, w // 2
    zc = z[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2)
    return zc.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)


def _unpool(d: np.ndarray, idx: np.ndarray, z_shape: tuple[int, ...]) -> np.ndarray:
    n, c, h, w = z_shape
    h2, w2 = h // 2, w // 2
    win = np.zeros((n, c, h2, w2, 4))
    np.put_along_axis(win, idx[..., None], d[..., None], axis=-1)
    out = np.zeros(z_shape)
    out[:, :, : 2 * h2, : 2 * w2] = (
        win.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, 2 * h2, 2 * w2)
    )
    return out


def _channel_scale(m: np.ndarray, ndim: int) -> np.ndarray:
    return m.reshape((1, -1) + (1,) * (ndim - 2))


# ---------------------------------------------------------------------------
# forward / backward


@dataclass
class BatchTrace:
    """Everything one forward/backward pass leaves behind.

    ``g`` holds per-sample gradients of the per-sample loss with respect to each
    parametric layer's pre-activation (before mask and pooling); ``act_grad``
    holds per-sample gradients at each maskable layer's activation point.
    Parameter gradients are of the batch-mean loss.
    """

    x: np.ndarray
    masks: list[np.ndarray | None]
    inputs: list[np.ndarray] = field(default_factory=list)
    outs: list[np.ndarray] = field(default_factory=list)
    z: dict[int, np.ndarray] = field(default_factory=dict)
    patches: dict[int, np.ndarray] = field(default_factory=dict)
    relu_gates: dict[int, np.ndarray] = field(default_factory=dict)
    pool_idx: dict[int, np.ndarray] = field(default_factory=dict)
    alive: list[np.ndarray] = field(default_factory=list)
    logits: np.ndarray | None = None
    loss: float | None = None
    g: dict[int, np.ndarray] = field(default_factory=dict)
    act_grad: dict[int, np.ndarray] = field(default_factory=dict)
    grad_w: dict[int, np.ndarray] = field(default_factory=dict)
    grad_b: dict[int, np.ndarray] = field(default_factory=dict)

    @property
    def batch_size(self) -> int:
        return self.x.shape[0]

    def gates(self) -> dict:
        return {"relu": self.relu_gates, "pool": self.pool_idx}


def _effective_masks(net: MaskedNetwork, masks) -> list[np.ndarray | None]:
    if masks is None:
        masks = net.masks
    return [None if m is None else np.asarray(m, dtype=np.float64) for m in masks]


def _radd(main, skip, am, as_):
    if np.array_equal(am, as_):
        return main + skip
    out = np.zeros_like(main)
    ia, is_ = np.flatnonzero(am), np.flatnonzero(as_)
    out[:, ia] = main[:, ia] + skip[:, is_]
    return out


def forward(net: MaskedNetwork, x: np.ndarray, masks=None, gates: dict | None = None):
    """Run the network, returning ``(logits, trace)``.

    ``masks`` overrides the network's mask bits with real-valued per-layer
    scales. ``gates`` (from :meth:`BatchTrace.gates`) freezes ReLU on/off
    patterns and pooling winners, so the network is evaluated as the smooth
    function of its weights that holds inside the current activation region.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != tuple(net.input_shape):
        raise ValueError(f"input shape {x.shape[1:]} does not match network input {net.input_shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("input contains NaN or Inf")
    masks = _effective_masks(net, masks)
    alive = tensor_alive(net)
    trace = BatchTrace(x=x, masks=masks, alive=alive)
    h = x
    for i, s in enumerate(net.layers):
        trace.inputs.append(h)
        if s.kind == "dense":
            z = h @ net.weights[i].T + net.biases[i]
            trace.z[i] = z
            out = z
        elif s.kind == "conv2d":
            cols = im2col(h, s.kernel, s.padding)
            trace.patches[i] = cols
            z = cols @ net.weights[i].reshape(s.fan_out, -1).T + net.biases[i]
            z = z.transpose(0, 3, 1, 2)
            trace.z[i] = z
            out = z
            if s.pool:
                win = _pool_windows(z)
                idx = gates["pool"][i] if gates else np.argmax(win, axis=-1)
                trace.pool_idx[i] = idx
                out = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
        elif s.kind == "relu":
            gate = gates["relu"][i] if gates else h > 0
            trace.relu_gates[i] = gate
            out = h * gate
        elif s.kind == "flatten":
            out = h.reshape(h.shape[0], -1)
        else:
            am = alive[i - 1] if i > 0 else np.ones(net.input_shape[0], dtype=bool)
            out = _radd(h, trace.outs[s.source], am, alive[s.source])
        if s.parametric and masks[i] is not None:
            out = out * _channel_scale(masks[i], out.ndim)
        trace.outs.append(out)
        h = out
    trace.logits = h
    return h, trace


def _targets_matrix(targets: np.ndarray, n: int, k: int) -> np.ndarray:
    t = np.asarray(targets)
    if t.ndim == 1:
        if t.shape[0] != n:
            raise ValueError(f"{t.shape[0]} targets for {n} samples")
        if not np.issubdtype(t.dtype, np.integer):
            raise ValueError("1-D targets must be integer class labels")
        if t.size and (t.min() < 0 or t.max() >= k):
            raise ValueError(f"label out of range [0, {k})")
        out = np.zeros((n, k))
        out[np.arange(n), t] = 1.0
        return out
    if t.shape != (n, k):
        raise ValueError(f"target shape {t.shape} does not match logits {(n, k)}")
    return t.astype(np.float64)


def per_sample_loss(logits: np.ndarray, targets: np.ndarray, loss_kind: str):
    """Per-sample losses and their gradients with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    n = logits.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    if loss_kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {loss_kind!r}")
    k = logits.shape[1]
    if loss_kind == "cross_entropy":
        t = np.asarray(targets)
        if t.ndim != 1 or not np.issubdtype(t.dtype, np.integer):
            raise ValueError("cross_entropy needs integer class labels")
        onehot = _targets_matrix(t, n, k)
        shift = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shift).sum(axis=1))
        losses = lse - shift[np.arange(n), t]
        probs = np.exp(shift - lse[:, None])
        return losses, probs - onehot
    t = _targets_matrix(targets, n, k)
    if loss_kind == "mse":
        diff = logits - t
        return (diff**2).sum(axis=1), 2.0 * diff
    return (t * logits).sum(axis=1), t.copy()


def loss(logits: np.ndarray, targets: np.ndarray, loss_kind: str) -> float:
    """Batch-mean loss."""
    losses, _ = per_sample_loss(logits, targets, loss_kind)
    return float(losses.mean())


def backward(net: MaskedNetwork, trace: BatchTrace, targets: np.ndarray, loss_kind: str) -> BatchTrace:
    """Fill loss, parameter gradients, pre-activation and activation gradients."""
    if trace.logits is None or not trace.outs:
        raise ValueError("backward needs a forward trace")
    losses, dlogits = per_sample_loss(trace.logits, targets, loss_kind)
    trace.loss = float(losses.mean())
    n = trace.batch_size
    masks = trace.masks
    act_points = {activation_index(net, l): l for l in net.maskable_layers}
    pending: dict[int, np.ndarray] = {len(net.layers) - 1: dlogits}
    for i in range(len(net.layers) - 1, -1, -1):
        s = net.layers[i]
        d = pending.pop(i)
        if i in act_points:
            trace.act_grad[act_points[i]] = d
        if s.parametric and masks[i] is not None:
            d = d * _channel_scale(masks[i], d.ndim)
        if s.kind == "dense":
            trace.g[i] = d
            trace.grad_w[i] = d.T @ trace.inputs[i] / n
            trace.grad_b[i] = d.sum(axis=0) / n
            din = d @ net.weights[i]
        elif s.kind == "conv2d":
            if s.pool:
                d = _unpool(d, trace.pool_idx[i], trace.z[i].shape)
            trace.g[i] = d
            gd = d.transpose(0, 2, 3, 1).reshape(-1, s.fan_out)
            cols = trace.patches[i].reshape(gd.shape[0], -1)
            trace.grad_w[i] = (gd.T @ cols).reshape(net.weights[i].shape) / n
            trace.grad_b[i] = gd.sum(axis=0) / n
            dcols = (gd @ net.weights[i].reshape(s.fan_out, -1)).reshape(trace.patches[i].shape)
            din = col2im(dcols, trace.inputs[i].shape, s.kernel, s.padding)
        elif s.kind == "relu":
            din = d * trace.relu_gates[i]
        elif s.kind == "flatten":
            din = d.reshape(trace.inputs[i].shape)
        else:
            am = trace.alive[i - 1]
            as_ = trace.alive[s.source]
            if np.array_equal(am, as_):
                din, dskip = d, d
            else:
                ia, is_ = np.flatnonzero(am), np.flatnonzero(as_)
                din = np.zeros_like(d)
                din[:, ia] = d[:, ia]
                dskip = np.zeros_like(d)
                dskip[:, is_] = d[:, ia]
            pending[s.source] = pending.get(s.source, 0) + dskip
        if i > 0:
            pending[i - 1] = pending.get(i - 1, 0) + din
    return trace


def flat_grad(net: MaskedNetwork, trace: BatchTrace) -> np.ndarray:
    parts = []
    for i in net.param_layers:
        parts += [trace.grad_w[i].ravel(), trace.grad_b[i]]
    return np.concatenate(parts)


def loss_and_grad(net, x, targets, loss_kind, gates=None, masks=None):
    """Batch-mean loss and flat parameter gradient."""
    _, trace = forward(net, x, masks=masks, gates=gates)
    backward(net, trace, targets, loss_kind)
    return trace.loss, flat_grad(net, trace)


def param_alive(net: MaskedNetwork) -> list[tuple[np.ndarray, np.ndarray] | None]:
    """Per layer, boolean liveness of each weight and bias entry.

    A weight is alive only when both its owning neuron and the unit feeding it
    are alive.
    """
    alive = tensor_alive(net)
    ins = input_alive(net, alive)
    out: list = [None] * len(net.layers)
    for i in net.param_layers:
        s = net.layers[i]
        own = alive[i]
        w = np.outer(own, ins[i])
        if s.kind == "conv2d":
            w = np.broadcast_to(w[:, :, None, None], net.weights[i].shape)
        out[i] = (np.array(w, dtype=bool), own.copy())
    return out


def flat_param_alive(net: MaskedNetwork) -> np.ndarray:
    parts = []
    for i, pa in enumerate(param_alive(net)):
        if pa is not None:
            parts += [pa[0].ravel(), pa[1]]
    return np.concatenate(parts)


def compact_arrays(net: MaskedNetwork, weights: list, biases: list):
    """Slice parameter-shaped arrays down to the alive neurons of ``net``."""
    alive = tensor_alive(net)
    ins = input_alive(net, alive)
    new_w: list = [None] * len(net.layers)
    new_b: list = [None] * len(net.layers)
    for i in net.param_layers:
        keep_out = np.flatnonzero(alive[i])
        keep_in = np.flatnonzero(ins[i])
        if keep_out.size == 0:
            raise ValueError(f"layer {i}: every neuron is masked")
        new_w[i] = weights[i][keep_out][:, keep_in].copy()
        new_b[i] = biases[i][keep_out].copy()
    return new_w, new_b


def compact(net: MaskedNetwork) -> MaskedNetwork:
    """Physically remove masked neurons and every weight attached to them."""
    alive = tensor_alive(net)
    ins = input_alive(net, alive)
    weights, biases = compact_arrays(net, net.weights, net.biases)
    layers = []
    for i, s in enumerate(net.layers):
        if s.parametric:
            s = replace(s, fan_in=int(ins[i].sum()), fan_out=int(alive[i].sum()))
        layers.append(s)
    masks = [None if m is None else np.ones(layers[i].fan_out, dtype=bool) for i, m in enumerate(net.masks)]
    out = MaskedNetwork(layers, net.input_shape, weights, biases, masks, net.original_param_count)
    infer_shapes(out.layers, out.input_shape)
    return out
