"""Dense float64 layer primitives with hand-written backward passes, plus Adam.

Every forward function returns ``(output, cache)`` and has a matching
``*_backward(grad_out, cache)`` that returns the input/parameter gradients.
All arrays are float64 numpy arrays; shapes are validated up front so that
mismatches fail with a message naming the offending dimension.
"""

from __future__ import annotations

import numpy as np


def _as_f64(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


def _check(cond: bool, msg: str) -> None:
    if not cond:
        raise ValueError(msg)


# ---------------------------------------------------------------------------
# conv1d (valid cross-correlation, no padding)
# ---------------------------------------------------------------------------

def conv1d_forward(x, filt, stride=1, bias=None):
    """1-D cross-correlation.

    x: (B, L) or (B, Cin, L); filt: (Cout, F) or (Cout, Cin, F);
    bias: (Cout,) or None.  Output (B, Cout, Lo) with
    Lo = floor((L - F) / stride) + 1.
    """
    x = _as_f64(x)
    filt = _as_f64(filt)
    if x.ndim == 2:
        x = x[:, None, :]
    if filt.ndim == 2:
        filt = filt[:, None, :]
    _check(x.ndim == 3, f"conv1d input must be 2-D or 3-D, got {x.ndim}-D")
    _check(filt.ndim == 3, f"conv1d filters must be 2-D or 3-D, got {filt.ndim}-D")
    _check(stride >= 1, f"conv1d stride must be >= 1, got {stride}")
    B, Cin, L = x.shape
    Cout, Fin, F = filt.shape
    _check(Fin == Cin,
           f"conv1d channel mismatch: input has {Cin} channels, filters expect {Fin}")
    _check(L >= F, f"conv1d input length {L} shorter than filter length {F}")
    Lo = (L - F) // stride + 1
    win = np.lib.stride_tricks.sliding_window_view(x, F, axis=2)[:, :, ::stride, :]
    # (B, Cin, Lo, F) -> (B*Lo, Cin*F) so the contraction is a single GEMM
    wmat = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B * Lo, Cin * F)
    fmat = filt.reshape(Cout, Cin * F)
    out = (wmat @ fmat.T).reshape(B, Lo, Cout).transpose(0, 2, 1)
    if bias is not None:
        bias = _as_f64(bias)
        _check(bias.shape == (Cout,),
               f"conv1d bias shape {bias.shape} != ({Cout},)")
        out = out + bias[None, :, None]
    cache = (wmat, fmat, x.shape, filt.shape, stride, Lo, bias is not None)
    return np.ascontiguousarray(out), cache


def conv1d_backward(grad_out, cache, need_input_grad=True):
    """Returns (grad_x, grad_filt, grad_bias); grad_bias is None if no bias.
    grad_x is None when need_input_grad is False (saves the scatter pass)."""
    wmat, fmat, x_shape, filt_shape, stride, Lo, has_bias = cache
    B, Cin, L = x_shape
    Cout, _, F = filt_shape
    g = _as_f64(grad_out)
    _check(g.shape == (B, Cout, Lo),
           f"conv1d grad shape {g.shape} != {(B, Cout, Lo)}")
    gmat = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(B * Lo, Cout)
    gfilt = (gmat.T @ wmat).reshape(filt_shape)
    gbias = g.sum(axis=(0, 2)) if has_bias else None
    if not need_input_grad:
        return None, gfilt, gbias
    contrib = (gmat @ fmat).reshape(B, Lo, Cin, F).transpose(0, 2, 1, 3)
    gx = np.zeros(x_shape)
    for f in range(F):
        gx[:, :, f:f + stride * Lo:stride] += contrib[:, :, :, f]
    return gx, gfilt, gbias


# ---------------------------------------------------------------------------
# max pooling (non-overlapping, remainder dropped)
# ---------------------------------------------------------------------------

def maxpool1d_forward(x, width):
    """x: (B, C, L) -> (B, C, floor(L / width)). Ties take the first index."""
    x = _as_f64(x)
    _check(x.ndim == 3, f"maxpool1d input must be 3-D, got {x.ndim}-D")
    _check(width >= 1, f"maxpool1d width must be >= 1, got {width}")
    B, C, L = x.shape
    Lo = L // width
    _check(Lo >= 1, f"maxpool1d input length {L} shorter than width {width}")
    xr = x[:, :, : Lo * width].reshape(B, C, Lo, width)
    idx = xr.argmax(axis=3)
    out = np.take_along_axis(xr, idx[:, :, :, None], axis=3)[:, :, :, 0]
    return out, (idx, width, x.shape)


def maxpool1d_backward(grad_out, cache):
    idx, width, x_shape = cache
    B, C, L = x_shape
    Lo = L // width
    g = _as_f64(grad_out)
    gx = np.zeros((B, C, Lo, width))
    np.put_along_axis(gx, idx[:, :, :, None], g[:, :, :, None], axis=3)
    full = np.zeros(x_shape)
    full[:, :, : Lo * width] = gx.reshape(B, C, Lo * width)
    return full


# ---------------------------------------------------------------------------
# batchnorm (per-feature; features are axis 1 for 3-D, columns for 2-D)
# ---------------------------------------------------------------------------

def batchnorm_forward(x, gamma, beta, running_mean, running_var, mode,
                      eps=1e-5, momentum=0.1):
    """Train mode normalizes by batch statistics and updates the running
    statistics in place; eval mode uses the running statistics.
    """
    x = _as_f64(x)
    _check(x.ndim in (2, 3), f"batchnorm input must be 2-D or 3-D, got {x.ndim}-D")
    _check(mode in ("train", "eval"), f"batchnorm mode must be train|eval, got {mode}")
    axes = (0,) if x.ndim == 2 else (0, 2)
    nfeat = x.shape[1]
    for name, arr in (("gamma", gamma), ("beta", beta),
                      ("running_mean", running_mean), ("running_var", running_var)):
        _check(arr.shape == (nfeat,),
               f"batchnorm {name} shape {arr.shape} != ({nfeat},)")

    def expand(v):
        return v[None, :] if x.ndim == 2 else v[None, :, None]

    if mode == "train":
        _check(x.shape[0] >= 2,
               f"batchnorm train mode needs batch size >= 2, got {x.shape[0]}")
        mu = x.mean(axis=axes)
        var = x.var(axis=axes)
        n = x.shape[0] if x.ndim == 2 else x.shape[0] * x.shape[2]
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * n / max(n - 1, 1)
    else:
        mu = running_mean
        var = running_var
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - expand(mu)) * expand(inv_std)
    out = expand(gamma) * xhat + expand(beta)
    cache = (xhat, inv_std, gamma, axes, mode, x.ndim)
    return out, cache


def batchnorm_backward(grad_out, cache):
    """Returns (grad_x, grad_gamma, grad_beta)."""
    xhat, inv_std, gamma, axes, mode, ndim = cache
    g = _as_f64(grad_out)

    def expand(v):
        return v[None, :] if ndim == 2 else v[None, :, None]

    ggamma = (g * xhat).sum(axis=axes)
    gbeta = g.sum(axis=axes)
    if mode == "eval":
        gx = g * expand(gamma) * expand(inv_std)
        return gx, ggamma, gbeta
    n = g.shape[0] if ndim == 2 else g.shape[0] * g.shape[2]
    gxhat = g * expand(gamma)
    gx = (expand(inv_std) / n) * (
        n * gxhat
        - expand(gxhat.sum(axis=axes))
        - xhat * expand((gxhat * xhat).sum(axis=axes))
    )
    return gx, ggamma, gbeta


# ---------------------------------------------------------------------------
# dense / relu
# ---------------------------------------------------------------------------

def dense_forward(x, weights, bias):
    """x: (B, I), weights: (I, O), bias: (O,) -> (B, O)."""
    x = _as_f64(x)
    weights = _as_f64(weights)
    bias = _as_f64(bias)
    _check(x.ndim == 2, f"dense input must be 2-D, got {x.ndim}-D")
    _check(x.shape[1] == weights.shape[0],
           f"dense input width {x.shape[1]} != weight rows {weights.shape[0]}")
    _check(bias.shape == (weights.shape[1],),
           f"dense bias shape {bias.shape} != ({weights.shape[1]},)")
    return x @ weights + bias[None, :], (x, weights)


def dense_backward(grad_out, cache):
    x, weights = cache
    g = _as_f64(grad_out)
    return g @ weights.T, x.T @ g, g.sum(axis=0)


def relu_forward(x):
    x = _as_f64(x)
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_out, mask):
    return _as_f64(grad_out) * mask


# ---------------------------------------------------------------------------
# weighted softmax cross-entropy
# ---------------------------------------------------------------------------

def softmax_cross_entropy(logits, targets, weights=None):
    """Weighted mean CE: loss = sum_i w_i * CE_i / sum_i w_i.

    Returns (loss, grad_logits).  Stabilized by max-subtraction.
    """
    logits = _as_f64(logits)
    _check(logits.ndim == 2, f"logits must be 2-D, got {logits.ndim}-D")
    B, K = logits.shape
    targets = np.asarray(targets, dtype=np.int64)
    _check(targets.shape == (B,), f"targets shape {targets.shape} != ({B},)")
    _check(targets.min() >= 0 and targets.max() < K,
           f"targets must lie in [0, {K}), got range "
           f"[{targets.min()}, {targets.max()}]")
    if weights is None:
        weights = np.ones(B)
    weights = _as_f64(weights)
    _check(weights.shape == (B,), f"weights shape {weights.shape} != ({B},)")
    _check(weights.min() >= 0.0, "weights must be non-negative")
    wsum = weights.sum()
    _check(wsum > 0.0, "softmax_cross_entropy requires at least one positive weight")

    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    per_example = -logp[np.arange(B), targets]
    loss = float((weights * per_example).sum() / wsum)
    grad = np.exp(logp)
    grad[np.arange(B), targets] -= 1.0
    grad *= (weights / wsum)[:, None]
    return loss, grad


# ---------------------------------------------------------------------------
# parameters and Adam
# ---------------------------------------------------------------------------

class ParamSet:
    """Named parameter tensors plus per-parameter Adam moments and a shared
    step counter."""

    def __init__(self, values: dict[str, np.ndarray]):
        self.values = {k: _as_f64(v) for k, v in values.items()}
        self.m = {k: np.zeros_like(v) for k, v in self.values.items()}
        self.v = {k: np.zeros_like(v) for k, v in self.values.items()}
        self.t = 0

    def __getitem__(self, key: str) -> np.ndarray:
        return self.values[key]

    def names(self):
        return list(self.values)

    def copy(self) -> "ParamSet":
        out = ParamSet({k: v.copy() for k, v in self.values.items()})
        out.m = {k: v.copy() for k, v in self.m.items()}
        out.v = {k: v.copy() for k, v in self.v.items()}
        out.t = self.t
        return out


def adam_step(params: ParamSet, grads: dict[str, np.ndarray],
              lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> ParamSet:
    """In-place bias-corrected Adam update (weight decay 0)."""
    for name, g in grads.items():
        _check(name in params.values, f"adam_step: unknown parameter {name!r}")
        _check(g.shape == params.values[name].shape,
               f"adam_step: gradient shape {g.shape} != parameter shape "
               f"{params.values[name].shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    params.t += 1
    t = params.t
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params.values[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)
    return params
