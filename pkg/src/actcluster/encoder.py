"""Fixed CNN encoder with channel-shared 1-D convolutions and the disposable
softmax classifier head used for pseudo-label training.

The conv stage applies the same filters to every sensor channel by folding
channels into the batch dimension.  After four conv -> batchnorm -> ReLU ->
pool stages a window of length 512 is reduced to 32 values per channel; one
dense layer projects the concatenated 32*C values to the 32-d latent space.
The head (latent -> 250 -> K) is only used during pseudo-label training.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nn
from .numerics import ParamSet


@dataclass(frozen=True)
class EncoderConfig:
    # (filter_len, stride, out_filters) per conv layer
    conv_specs: tuple = ((50, 2, 4), (40, 2, 8), (7, 1, 16), (4, 1, 32))
    pool_width: int = 2
    window_len: int = 512
    latent_dim: int = 32
    head_hidden: int = 250
    batch_size: int = 256
    lr: float = 1e-3
    # 'mlp' inserts a jointly-trained 32 -> 256 -> 2 reducer before the head
    reducer: str | None = None
    reducer_hidden: int = 256
    reducer_dim: int = 2

    def conv_output_len(self) -> int:
        length = self.window_len
        for flen, stride, _ in self.conv_specs:
            length = (length - flen) // stride + 1
            length //= self.pool_width
        return length


def _fan_in_uniform(rng, shape, fan_in):
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape)


class EncoderModel:
    """Encoder + head parameters and the forward/backward plumbing."""

    def __init__(self, config: EncoderConfig, n_channels: int, n_classes: int,
                 rng: np.random.Generator):
        if config.conv_output_len() != 1:
            raise ValueError(
                f"conv stack must reduce window {config.window_len} to length 1, "
                f"got {config.conv_output_len()}")
        self.config = config
        self.n_channels = n_channels
        self.n_classes = n_classes
        values = {}
        state = {}
        in_ch = 1
        for li, (flen, _, out_ch) in enumerate(config.conv_specs):
            values[f"conv{li}_filt"] = _fan_in_uniform(
                rng, (out_ch, in_ch, flen), in_ch * flen)
            values[f"conv{li}_bias"] = np.zeros(out_ch)
            values[f"bn{li}_gamma"] = np.ones(out_ch)
            values[f"bn{li}_beta"] = np.zeros(out_ch)
            state[f"bn{li}_mean"] = np.zeros(out_ch)
            state[f"bn{li}_var"] = np.ones(out_ch)
            in_ch = out_ch
        feat = in_ch * n_channels
        values["proj_w"] = _fan_in_uniform(rng, (feat, config.latent_dim), feat)
        values["proj_b"] = np.zeros(config.latent_dim)
        head_in = config.latent_dim
        if config.reducer == "mlp":
            values["red1_w"] = _fan_in_uniform(
                rng, (config.latent_dim, config.reducer_hidden), config.latent_dim)
            values["red1_b"] = np.zeros(config.reducer_hidden)
            values["red2_w"] = _fan_in_uniform(
                rng, (config.reducer_hidden, config.reducer_dim), config.reducer_hidden)
            values["red2_b"] = np.zeros(config.reducer_dim)
            head_in = config.reducer_dim
        values["head1_w"] = _fan_in_uniform(rng, (head_in, config.head_hidden), head_in)
        values["head1_b"] = np.zeros(config.head_hidden)
        values["head2_w"] = _fan_in_uniform(
            rng, (config.head_hidden, n_classes), config.head_hidden)
        values["head2_b"] = np.zeros(n_classes)
        self.params = ParamSet(values)
        self.bn_state = state

    # -- forward ------------------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 3:
            raise ValueError(f"window batch must be 3-D [N, C, W], got {x.ndim}-D")
        if x.shape[1] != self.n_channels:
            raise ValueError(
                f"window batch has {x.shape[1]} channels, model expects "
                f"{self.n_channels}")
        if x.shape[2] != self.config.window_len:
            raise ValueError(
                f"window length {x.shape[2]} != configured {self.config.window_len}")
        return x

    def forward(self, x, mode="eval"):
        """Returns (latent [N, 32], caches).  Caches are needed for backward."""
        x = self._check_input(x)
        N, C, W = x.shape
        p = self.params.values
        h = x.reshape(N * C, 1, W)
        caches = []
        for li in range(len(self.config.conv_specs)):
            _, stride, _ = self.config.conv_specs[li]
            h, c_conv = nn.conv1d_forward(
                h, p[f"conv{li}_filt"], stride, p[f"conv{li}_bias"])
            h, c_bn = nn.batchnorm_forward(
                h, p[f"bn{li}_gamma"], p[f"bn{li}_beta"],
                self.bn_state[f"bn{li}_mean"], self.bn_state[f"bn{li}_var"], mode)
            h, c_relu = nn.relu_forward(h)
            h, c_pool = nn.maxpool1d_forward(h, self.config.pool_width)
            caches.append((c_conv, c_bn, c_relu, c_pool))
        flat = h.reshape(N, C * h.shape[1])
        latent, c_proj = nn.dense_forward(flat, p["proj_w"], p["proj_b"])
        caches.append((c_proj, (N, C) + h.shape[1:]))
        return latent, caches

    def head_forward(self, latent):
        """Logits of the classifier head (and reducer when configured)."""
        p = self.params.values
        caches = []
        h = latent
        if self.config.reducer == "mlp":
            h, c1 = nn.dense_forward(h, p["red1_w"], p["red1_b"])
            h, c1r = nn.relu_forward(h)
            h, c2 = nn.dense_forward(h, p["red2_w"], p["red2_b"])
            caches.append((c1, c1r, c2))
        h1, ch1 = nn.dense_forward(h, p["head1_w"], p["head1_b"])
        a1, ch1r = nn.relu_forward(h1)
        logits, ch2 = nn.dense_forward(a1, p["head2_w"], p["head2_b"])
        caches.append((ch1, ch1r, ch2))
        return logits, caches

    def encode(self, x, batch_size=512):
        """Eval-mode latent representation [N, 32] (deterministic per input)."""
        x = self._check_input(x)
        outs = []
        for start in range(0, x.shape[0], batch_size):
            latent, _ = self.forward(x[start:start + batch_size], mode="eval")
            outs.append(latent)
        z = np.concatenate(outs, axis=0)
        if not np.all(np.isfinite(z)):
            raise FloatingPointError("encoder produced non-finite latents")
        return z

    def encode_reduced(self, x, batch_size=512):
        """2-d output of the MLP reducer (reducer='mlp' only)."""
        if self.config.reducer != "mlp":
            raise ValueError("encode_reduced requires reducer='mlp'")
        p = self.params.values
        z = self.encode(x, batch_size)
        h, _ = nn.dense_forward(z, p["red1_w"], p["red1_b"])
        h, _ = nn.relu_forward(h)
        out, _ = nn.dense_forward(h, p["red2_w"], p["red2_b"])
        return out

    # -- backward -----------------------------------------------------------

    def backward(self, grad_logits, enc_caches, head_caches):
        """Gradients of all parameters given dLoss/dLogits."""
        grads = {}
        ch1, ch1r, ch2 = head_caches[-1]
        g, grads["head2_w"], grads["head2_b"] = nn.dense_backward(grad_logits, ch2)
        g = nn.relu_backward(g, ch1r)
        g, grads["head1_w"], grads["head1_b"] = nn.dense_backward(g, ch1)
        if self.config.reducer == "mlp":
            c1, c1r, c2 = head_caches[0]
            g, grads["red2_w"], grads["red2_b"] = nn.dense_backward(g, c2)
            g = nn.relu_backward(g, c1r)
            g, grads["red1_w"], grads["red1_b"] = nn.dense_backward(g, c1)
        c_proj, conv_out_shape = enc_caches[-1]
        g, grads["proj_w"], grads["proj_b"] = nn.dense_backward(g, c_proj)
        N, C, ch, ln = conv_out_shape
        g = g.reshape(N * C, ch, ln)
        for li in reversed(range(len(self.config.conv_specs))):
            c_conv, c_bn, c_relu, c_pool = enc_caches[li]
            g = nn.maxpool1d_backward(g, c_pool)
            g = nn.relu_backward(g, c_relu)
            g, grads[f"bn{li}_gamma"], grads[f"bn{li}_beta"] = \
                nn.batchnorm_backward(g, c_bn)
            g, grads[f"conv{li}_filt"], grads[f"conv{li}_bias"] = \
                nn.conv1d_backward(g, c_conv, need_input_grad=li > 0)
        return grads

    def loss_and_grads(self, x, targets, weights=None, mode="train"):
        latent, enc_caches = self.forward(x, mode=mode)
        logits, head_caches = self.head_forward(latent)
        loss, grad_logits = nn.softmax_cross_entropy(logits, targets, weights)
        grads = self.backward(grad_logits, enc_caches, head_caches)
        return loss, grads

    # -- persistence --------------------------------------------------------

    def save(self, path):
        arrays = {f"param_{k}": v for k, v in self.params.values.items()}
        arrays.update({f"state_{k}": v for k, v in self.bn_state.items()})
        arrays["meta"] = np.array([self.n_channels, self.n_classes])
        np.savez(path, **arrays)

    def load(self, path):
        with np.load(path) as data:
            n_ch, n_cls = data["meta"].astype(int)
            if (n_ch, n_cls) != (self.n_channels, self.n_classes):
                raise ValueError(
                    f"checkpoint built for C={n_ch}, K={n_cls}; model has "
                    f"C={self.n_channels}, K={self.n_classes}")
            for k in self.params.values:
                self.params.values[k] = data[f"param_{k}"]
            for k in self.bn_state:
                self.bn_state[k] = data[f"state_{k}"]


def pseudo_label_train(model: EncoderModel, windows, labels, weights,
                       rng: np.random.Generator, epochs=5):
    """Adam-train encoder + head on pseudo-labels with per-window weights.

    Windows with weight 0 are never touched.  Returns per-batch losses.
    """
    windows = np.asarray(windows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    keep = np.flatnonzero(weights > 0)
    if keep.size == 0:
        raise ValueError("pseudo_label_train: no window has positive weight")
    losses = []
    bs = model.config.batch_size
    for _ in range(epochs):
        order = keep[rng.permutation(keep.size)]
        starts = list(range(0, order.size, bs))
        # batchnorm needs >= 2 rows; fold a trailing singleton into the
        # previous batch
        if len(starts) > 1 and order.size - starts[-1] == 1:
            starts.pop()
        for si, start in enumerate(starts):
            end = order.size if si == len(starts) - 1 else start + bs
            idx = order[start:end]
            loss, grads = model.loss_and_grads(
                windows[idx], labels[idx], weights[idx], mode="train")
            nn.adam_step(model.params, grads, lr=model.config.lr)
            losses.append(loss)
    return losses
