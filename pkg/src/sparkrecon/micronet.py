"""A small convolutional network engine on numpy.

Covers exactly what the scan-specific k-space networks need: same-padded 2D
convolutions, ReLU, residual blocks, an MSE loss restricted to a band of
rows, reverse-mode gradients and Adam.

Tensors at the public boundary are ``(C, H, W)`` or batched ``(N, C, H, W)``.
Internally activations are kept channels-last, ``(N, H, W, C)``, so that the
im2col matrices feed straight into BLAS.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kcore import AcsSpec, real_dtype


class DivergenceError(ArithmeticError):
    pass


class Conv:
    """Same-padded 2D cross-correlation with bias."""

    def __init__(self, in_channels, out_channels, kh=3, kw=3, weight=None, bias=None, dtype=None):
        if kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"kernel dims must be odd, got {kh}x{kw}")
        dtype = dtype or real_dtype()
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kh, self.kw = kh, kw
        shape = (out_channels, in_channels, kh, kw)
        self.weight = np.zeros(shape, dtype) if weight is None else np.array(weight, dtype=dtype)
        self.bias = np.zeros(out_channels, dtype) if bias is None else np.array(bias, dtype=dtype)
        if self.weight.shape != shape or self.bias.shape != (out_channels,):
            raise ValueError("parameter shapes do not match layer geometry")

    @property
    def halo(self):
        return self.kh // 2, self.kw // 2

    def __repr__(self):
        return f"Conv({self.in_channels}->{self.out_channels}, {self.kh}x{self.kw})"


class ReLU:
    def __repr__(self):
        return "ReLU()"


class ResidualStart:
    def __repr__(self):
        return "ResidualStart()"


class ResidualEnd:
    def __repr__(self):
        return "ResidualEnd()"


class Network:
    """An ordered layer list; channel chaining is checked here, once."""

    def __init__(self, layers):
        self.layers = list(layers)
        convs = self.convs
        if not convs:
            raise ValueError("network needs at least one conv layer")
        ch = convs[0].in_channels
        stack = []
        for layer in self.layers:
            if isinstance(layer, Conv):
                if layer.in_channels != ch:
                    raise ValueError(f"{layer} receives {ch} channels")
                ch = layer.out_channels
            elif isinstance(layer, ResidualStart):
                stack.append(ch)
            elif isinstance(layer, ResidualEnd):
                if not stack:
                    raise ValueError("ResidualEnd without matching ResidualStart")
                if stack.pop() != ch:
                    raise ValueError("residual block changes the channel count")
            elif not isinstance(layer, ReLU):
                raise TypeError(f"unsupported layer {layer!r}")
        if stack:
            raise ValueError("unclosed residual block")
        self.in_channels = convs[0].in_channels
        self.out_channels = ch

    @property
    def convs(self):
        return [layer for layer in self.layers if isinstance(layer, Conv)]

    def params(self):
        """Flat parameter list: weight, bias of each conv in order."""
        out = []
        for conv in self.convs:
            out += [conv.weight, conv.bias]
        return out

    @property
    def n_params(self):
        return sum(p.size for p in self.params())

    @property
    def row_halo(self):
        """Rows of context on each side that can influence one output row."""
        return sum(c.halo[0] for c in self.convs)

    @property
    def dtype(self):
        return self.convs[0].weight.dtype

    def copy(self):
        layers = []
        for layer in self.layers:
            if isinstance(layer, Conv):
                layer = Conv(layer.in_channels, layer.out_channels, layer.kh, layer.kw,
                             layer.weight, layer.bias, dtype=layer.weight.dtype)
            layers.append(layer)
        return Network(layers)

    def __repr__(self):
        return f"Network({self.layers})"


def build_network(in_channels, spec, rng=None, zero_last=True, dtype=None):
    """Build a network from a compact spec and initialize it.

    ``spec`` items are ``(out_channels, kh, kw)`` for a conv, ``"relu"``,
    ``"res["`` and ``"]res"``. Weights are Glorot-uniform from ``rng``; the
    last conv is zeroed when ``zero_last`` is set.
    """
    dtype = dtype or real_dtype()
    rng = rng if rng is not None else np.random.default_rng(0)
    layers = []
    ch = in_channels
    for item in spec:
        if item == "relu":
            layers.append(ReLU())
        elif item == "res[":
            layers.append(ResidualStart())
        elif item == "]res":
            layers.append(ResidualEnd())
        else:
            out, kh, kw = item
            layers.append(Conv(ch, out, kh, kw, dtype=dtype))
            ch = out
    net = Network(layers)
    init_glorot(net, rng, zero_last=zero_last)
    return net


def init_glorot(net, rng, zero_last=True):
    convs = net.convs
    for i, conv in enumerate(convs):
        if zero_last and i == len(convs) - 1:
            conv.weight[...] = 0
        else:
            fan_in = conv.in_channels * conv.kh * conv.kw
            fan_out = conv.out_channels * conv.kh * conv.kw
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            conv.weight[...] = rng.uniform(-bound, bound, conv.weight.shape)
        conv.bias[...] = 0


def _to_nhwc(x):
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[None]
    if x.ndim != 4:
        raise ValueError(f"expected (C, H, W) or (N, C, H, W), got shape {x.shape}")
    return x.transpose(0, 2, 3, 1)


def _from_nhwc(x, batched):
    x = x.transpose(0, 3, 1, 2)
    return np.ascontiguousarray(x if batched else x[0])


def _im2col(x, kh, kw):
    """(N, H, W, C) -> (N*H*W, kh*kw*C) with zero padding."""
    n, h, w, c = x.shape
    ph, pw = kh // 2, kw // 2
    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0))) if (ph or pw) else x
    cols = np.empty((n, h, w, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + h, j:j + w, :]
    return cols.reshape(n * h * w, kh * kw * c)


def _col2im(dcols, shape, kh, kw):
    n, h, w, c = shape
    ph, pw = kh // 2, kw // 2
    dcols = dcols.reshape(n, h, w, kh, kw, c)
    dxp = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=dcols.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + h, j:j + w, :] += dcols[:, :, :, i, j, :]
    return dxp[:, ph:ph + h, pw:pw + w, :]


def _wmat(conv):
    # rows ordered (kh, kw, C) to match _im2col
    return conv.weight.transpose(0, 2, 3, 1).reshape(conv.out_channels, -1)


def _conv_nhwc(x, conv):
    n, h, w, _ = x.shape
    cols = _im2col(x, conv.kh, conv.kw)
    y = cols @ _wmat(conv).T
    y += conv.bias
    return y.reshape(n, h, w, conv.out_channels), cols


def conv2d_forward(x, layer: Conv):
    """Same-padded conv of a ``(C, H, W)`` or ``(N, C, H, W)`` tensor."""
    x = np.asarray(x)
    batched = x.ndim == 4
    xh = _to_nhwc(x)
    if xh.shape[-1] != layer.in_channels:
        raise ValueError(f"{layer} got {xh.shape[-1]} input channels")
    y, _ = _conv_nhwc(xh.astype(layer.weight.dtype, copy=False), layer)
    return _from_nhwc(y, batched)


@dataclass
class Cache:
    entries: list = field(default_factory=list)
    in_shape: tuple = ()
    batched: bool = False

    def relu_masks(self):
        return [e for kind, e in self.entries if kind == "relu"]


def _forward_nhwc(net, x):
    cache = Cache(in_shape=x.shape)
    skips = []
    for layer in net.layers:
        if isinstance(layer, Conv):
            shape = x.shape
            x, cols = _conv_nhwc(x, layer)
            cache.entries.append(("conv", (cols, shape)))
        elif isinstance(layer, ReLU):
            mask = x > 0
            x = x * mask
            cache.entries.append(("relu", mask))
        elif isinstance(layer, ResidualStart):
            skips.append(x)
            cache.entries.append(("res[", None))
        else:
            x = x + skips.pop()
            cache.entries.append(("]res", None))
    return x, cache


def forward(net: Network, x):
    """Run ``net`` on ``x``; returns the output and the cache ``backward`` needs."""
    x = np.asarray(x)
    batched = x.ndim == 4
    xh = _to_nhwc(x).astype(net.dtype, copy=False)
    if xh.shape[-1] != net.in_channels:
        raise ValueError(f"network expects {net.in_channels} channels, got {xh.shape[-1]}")
    y, cache = _forward_nhwc(net, xh)
    cache.batched = batched
    return _from_nhwc(y, batched), cache


def _backward_nhwc(net, cache, g):
    convs = net.convs
    grads = [None] * (2 * len(convs))
    ci = len(convs)
    need_input_grad = net.layers[0] is not convs[0]
    skip_grads = []
    for layer, (kind, entry) in zip(reversed(net.layers), reversed(cache.entries)):
        if kind == "conv":
            ci -= 1
            cols, shape = entry
            conv = convs[ci]
            gm = g.reshape(-1, conv.out_channels)
            dw = gm.T @ cols
            grads[2 * ci] = dw.reshape(conv.out_channels, conv.kh, conv.kw, conv.in_channels).transpose(0, 3, 1, 2)
            grads[2 * ci + 1] = gm.sum(axis=0)
            if ci > 0 or need_input_grad:
                g = _col2im(gm @ _wmat(conv), shape, conv.kh, conv.kw)
            else:
                g = None
        elif kind == "relu":
            g = g * entry
        elif kind == "]res":
            skip_grads.append(g)
        else:
            g = g + skip_grads.pop()
    return grads


def backward(net: Network, cache: Cache, grad_out):
    """Gradients of a scalar loss w.r.t. every parameter, in ``net.params()`` order."""
    g = _to_nhwc(np.asarray(grad_out)).astype(net.dtype, copy=False)
    return _backward_nhwc(net, cache, g)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, **hyper):
        state = cls(**hyper)
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
        return state


def adam_step(params, grads, state: AdamState):
    """One bias-corrected Adam update, in place."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype, copy=False)
    return params, state


@dataclass
class TrainHyper:
    epochs: int = 200
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_final: float | None = None  # geometric decay to this value over the run when set

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")


def _crop_rows(crop, height):
    if isinstance(crop, AcsSpec):
        start, stop = crop.start, crop.stop
    elif crop is None:
        start, stop = 0, height
    else:
        start, stop = crop
    if not 0 <= start < stop <= height:
        raise ValueError(f"crop rows [{start}, {stop}) outside output height {height}")
    return start, stop


def crop_window(net, height, crop):
    """Input rows needed to reproduce the full-grid output on the crop rows.

    Returns ``(lo, hi, a, b)``: forward on input rows ``[lo, hi)`` and the
    crop is output rows ``[a, b)`` of that window. Rows cut off at the window
    edge are at least ``row_halo`` away from the crop, so zero padding there
    never reaches it; the cropped output equals the full-grid one.
    """
    start, stop = _crop_rows(crop, height)
    halo = net.row_halo
    lo, hi = max(0, start - halo), min(height, stop + halo)
    return lo, hi, start - lo, stop - lo


def mse_loss(net, x, target, crop=None):
    """MSE over the crop rows; returns ``(loss, grads, cache)`` for NHWC-trimmed input."""
    lo, hi, a, b = crop_window(net, x.shape[1], crop)
    y, cache = _forward_nhwc(net, x[:, lo:hi])
    diff = y[:, a:b] - target
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    g = np.zeros_like(y)
    g[:, a:b] = (2.0 / diff.size) * diff
    return loss, g, cache


def _prepare(net, x, target):
    xh = _to_nhwc(np.asarray(x)).astype(net.dtype, copy=False)
    th = _to_nhwc(np.asarray(target)).astype(net.dtype, copy=False)
    if xh.shape[-1] != net.in_channels:
        raise ValueError(f"network expects {net.in_channels} channels, got {xh.shape[-1]}")
    if th.shape[-1] != net.out_channels:
        raise ValueError(f"target has {th.shape[-1]} channels, network emits {net.out_channels}")
    return xh, th


def loss_value(net, x, target, crop=None):
    xh, th = _prepare(net, x, target)
    return mse_loss(net, xh, th, crop)[0]


def train(net: Network, x, target, crop=None, hyper: TrainHyper | None = None):
    """Full-batch Adam on the MSE between the cropped output rows and ``target``.

    ``target`` covers only the crop rows. Returns ``(net, history)`` where
    ``history[0]`` is the initial loss and ``history[-1]`` the final one.
    """
    hyper = hyper or TrainHyper()
    xh, th = _prepare(net, x, target)
    start, stop = _crop_rows(crop, xh.shape[1])
    if th.shape[1] != stop - start or th.shape[2] != xh.shape[2] or th.shape[0] != xh.shape[0]:
        raise ValueError(f"target shape {th.shape} does not match crop of output")
    params = net.params()
    state = AdamState.for_params(params, lr=hyper.lr, beta1=hyper.beta1, beta2=hyper.beta2, eps=hyper.eps)
    decay = 1.0
    if hyper.lr_final is not None:
        decay = (hyper.lr_final / hyper.lr) ** (1.0 / max(hyper.epochs - 1, 1))
    history = []
    for epoch in range(hyper.epochs):
        loss, g, cache = mse_loss(net, xh, th, (start, stop))
        if not np.isfinite(loss):
            raise DivergenceError(f"divergence at epoch {epoch}")
        history.append(loss)
        adam_step(params, _backward_nhwc(net, cache, g), state)
        state.lr *= decay
    final = mse_loss(net, xh, th, (start, stop))[0]
    if not np.isfinite(final):
        raise DivergenceError(f"divergence at epoch {hyper.epochs}")
    history.append(final)
    return net, history


def grad_check(net: Network, x, crop=None, eps=1e-5, target=None, n_params=200, seed=0, grad_fn=None):
    """Max relative error between analytic and central-difference gradients.

    Samples ``n_params`` parameters at random. A sample whose +-eps
    perturbation flips any ReLU is redrawn, since the loss has a kink there.
    The relative error of each sample is ``|a - n| / max(|a|, |n|, 1e-3 * s)``
    with ``s`` the largest sampled analytic gradient magnitude.
    ``grad_fn(net, cache, grad_out)`` replaces :func:`backward` when given.
    """
    rng = np.random.default_rng(seed)
    xh = _to_nhwc(np.asarray(x)).astype(net.dtype, copy=False)
    lo, hi, a, b = crop_window(net, xh.shape[1], crop)
    if target is None:
        target = rng.standard_normal((xh.shape[0], b - a, xh.shape[2], net.out_channels))
    else:
        target = _to_nhwc(np.asarray(target))
    target = target.astype(net.dtype)

    loss, g, cache = mse_loss(net, xh, target, crop)
    if grad_fn is None:
        grads = _backward_nhwc(net, cache, g)
    else:
        grads = grad_fn(net, cache, _from_nhwc(g, True))
    base_masks = cache.relu_masks()
    params = net.params()
    sizes = np.array([p.size for p in params])
    total = sizes.sum()

    def evaluate():
        loss, _, c = mse_loss(net, xh, target, crop)
        return loss, c.relu_masks()

    analytic, numeric = [], []
    attempts = 0
    while len(analytic) < min(n_params, total) and attempts < 50 * n_params:
        attempts += 1
        flat = int(rng.integers(total))
        k = int(np.searchsorted(np.cumsum(sizes), flat, side="right"))
        idx = np.unravel_index(flat - (np.cumsum(sizes)[k] - sizes[k]), params[k].shape)
        p = params[k]
        old = p[idx]
        p[idx] = old + eps
        lp, mp = evaluate()
        p[idx] = old - eps
        lm, mm = evaluate()
        p[idx] = old
        if any((m1 != m0).any() or (m2 != m0).any() for m0, m1, m2 in zip(base_masks, mp, mm)):
            continue
        analytic.append(float(grads[k][idx]))
        numeric.append((lp - lm) / (2 * eps))
    analytic = np.array(analytic)
    numeric = np.array(numeric)
    scale = np.abs(analytic).max() if analytic.size else 0.0
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3 * scale)
    denom[denom == 0] = 1.0
    return float(np.max(np.abs(analytic - numeric) / denom))
