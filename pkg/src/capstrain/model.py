"""Capsule-network model: convolutional encoder, primary capsules, routed
class capsules (full or position-shared transformation weights), margin and
reconstruction losses, and the full or reduced reconstruction decoder.

All math runs through :mod:`capstrain.tensor`, so every forward pass here is
differentiable end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .tensor import (
    ShapeError,
    Tensor,
    conv2d,
    einsum2,
    matmul,
    relu,
    sigmoid,
    softmax,
    squash,
    vector_norm,
)

__all__ = [
    "CapsNetConfig",
    "CapsNetModel",
    "config_for_scale",
    "make_model",
    "forward_encoder",
    "dynamic_routing",
    "margin_loss",
    "mask_and_decode",
    "total_loss",
    "capsnet_loss",
    "predict",
    "count_parameters",
    "expand_shared_weights",
]

SCALE_PRESETS = {
    # conv filters, primary capsule types
    "paper": (256, 32),
    "desk": (64, 8),
}


@dataclass(frozen=True)
class CapsNetConfig:
    """Architecture hyperparameters and loss constants."""

    input_side: int = 28
    conv_filters: int = 256
    kernel: int = 9
    primary_caps_types: int = 32
    primary_caps_dim: int = 8
    primary_grid_side: int = 6
    digit_caps: int = 10
    digit_caps_dim: int = 16
    routing_iterations: int = 3
    weight_sharing: bool = False
    reduced_decoder: bool = False
    decoder_hidden: tuple = (512, 1024)
    decoder_out: int = 784
    scale_preset: str = "paper"
    margin_pos: float = 0.9
    margin_neg: float = 0.1
    margin_lambda: float = 0.5
    recon_weight: float = 0.0005

    def __post_init__(self):
        conv1_out = self.input_side - self.kernel + 1
        grid = (conv1_out - self.kernel) // 2 + 1
        if grid != self.primary_grid_side:
            raise ValueError(
                f"primary_grid_side={self.primary_grid_side} inconsistent with "
                f"input {self.input_side} and kernel {self.kernel} (expected {grid})"
            )
        if self.routing_iterations < 1:
            raise ValueError("routing_iterations must be >= 1")
        if self.decoder_out != self.input_side**2:
            raise ValueError("decoder_out must equal input_side**2")

    @property
    def primary_positions(self) -> int:
        return self.primary_grid_side**2

    @property
    def input_capsules(self) -> int:
        return self.primary_positions * self.primary_caps_types

    @property
    def decoder_in(self) -> int:
        if self.reduced_decoder:
            return self.digit_caps_dim
        return self.digit_caps * self.digit_caps_dim


def config_for_scale(scale: str = "paper", **overrides) -> CapsNetConfig:
    """Build a config for a named scale.

    ``desk`` shrinks the convolutional width (64 filters, 8 capsule types)
    so CPU training is tractable, but keeps class-capsule counts and
    capsule dimensions untouched so every mechanism still exercises the
    same shapes.
    """
    if scale not in SCALE_PRESETS:
        raise ValueError(f"unknown scale {scale!r}; choose from {sorted(SCALE_PRESETS)}")
    conv_filters, types = SCALE_PRESETS[scale]
    return CapsNetConfig(conv_filters=conv_filters, primary_caps_types=types, scale_preset=scale, **overrides)


class CapsNetModel:
    """Trainable weights for one capsule network."""

    def __init__(self, config: CapsNetConfig, params: dict):
        self.config = config
        self._params = params
        for t in params.values():
            t.requires_grad = True

    def named_parameters(self) -> dict:
        return dict(self._params)

    def parameters(self) -> list:
        return list(self._params.values())

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    @property
    def dtype(self):
        return self._params["conv1.kernel"].dtype

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]


def make_model(config: CapsNetConfig, seed: int = 0, dtype=np.float32) -> CapsNetModel:
    """Initialize all weights deterministically from ``seed``.

    Capsule transformation weights are normal with std 0.1; convolution and
    decoder weights/biases are fan-in-scaled uniform; the routing bias
    starts at zero.
    """
    rng = np.random.default_rng(seed)
    c = config

    def uniform_fan_in(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype))

    pc_filters = c.primary_caps_types * c.primary_caps_dim
    k = c.kernel
    params = {}
    params["conv1.kernel"] = uniform_fan_in((c.conv_filters, 1, k, k), 1 * k * k)
    params["conv1.bias"] = uniform_fan_in((c.conv_filters,), 1 * k * k)
    params["primary.kernel"] = uniform_fan_in((pc_filters, c.conv_filters, k, k), c.conv_filters * k * k)
    params["primary.bias"] = uniform_fan_in((pc_filters,), c.conv_filters * k * k)

    positions = 1 if c.weight_sharing else c.primary_positions
    w_shape = (c.primary_caps_types, positions, c.digit_caps, c.digit_caps_dim, c.primary_caps_dim)
    params["digit.weight"] = Tensor((rng.normal(0.0, 0.1, size=w_shape)).astype(dtype))
    params["digit.bias"] = Tensor(np.zeros((1, c.digit_caps, c.digit_caps_dim, 1), dtype=dtype))

    sizes = [c.decoder_in, *c.decoder_hidden, c.decoder_out]
    for i in range(3):
        fan_in = sizes[i]
        params[f"decoder.w{i + 1}"] = uniform_fan_in((sizes[i], sizes[i + 1]), fan_in)
        params[f"decoder.b{i + 1}"] = uniform_fan_in((sizes[i + 1],), fan_in)
    return CapsNetModel(config, params)


# ---------------------------------------------------------------------------
# forward pass
# ---------------------------------------------------------------------------


def forward_encoder(model: CapsNetModel, images: Tensor) -> Tensor:
    """images [N,1,side,side] -> class capsules v [N,digit_caps,digit_caps_dim].

    Conv stage (stride 1, rectified), primary-capsule conv (stride 2),
    reshape to capsule vectors, squash, then routed projection to the class
    capsules.
    """
    c = model.config
    if images.ndim != 4 or images.shape[1:] != (1, c.input_side, c.input_side):
        raise ShapeError(f"expected images [N,1,{c.input_side},{c.input_side}], got {images.shape}")
    n = images.shape[0]

    x = relu(conv2d(images, model["conv1.kernel"], model["conv1.bias"], stride=1))
    u = conv2d(x, model["primary.kernel"], model["primary.bias"], stride=2)
    # channels are laid out (type, dim); positions flatten row-major
    u = u.reshape(n, c.primary_caps_types, c.primary_caps_dim, c.primary_positions)
    u = u.transpose(0, 1, 3, 2)
    u = squash(u)  # [N, types, positions, dim]

    # project through the per-(type, position) transformation blocks, with
    # the sample axis innermost so each block is one dense matrix product
    out_rows = c.digit_caps * c.digit_caps_dim
    w_mat = model["digit.weight"].reshape(
        c.primary_caps_types, -1, out_rows, c.primary_caps_dim
    )  # shared weights keep extent 1 on the position axis and broadcast
    u_cols = u.transpose(1, 2, 3, 0)  # [types, positions, dim, N]
    u_hat = matmul(w_mat, u_cols)  # [types, positions, out_rows, N]
    u_hat = u_hat.transpose(3, 0, 1, 2).reshape(
        n, c.primary_caps_types, c.primary_positions, c.digit_caps, c.digit_caps_dim
    )
    return dynamic_routing(u_hat, model["digit.bias"], c.routing_iterations)


def dynamic_routing(u_hat: Tensor, bias: Tensor, iterations: int) -> Tensor:
    """Agreement routing over prediction vectors.

    u_hat [N, types, positions, out_caps, out_dim]; bias [1, out_caps,
    out_dim, 1].  Coupling logits start at zero, couplings are softmaxed
    over the output capsules, and each refinement adds the inner product of
    predictions with the squashed output.  The loop is unrolled, so
    gradients flow through every iteration.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    n, types, positions, out_caps, out_dim = u_hat.shape
    bias_mat = bias.reshape(out_caps, out_dim)
    logits = Tensor(np.zeros((n, types, positions, out_caps), dtype=u_hat.dtype))
    v = None
    for it in range(iterations):
        coupling = softmax(logits, axis=-1)
        s = einsum2("ntpj,ntpjd->njd", coupling, u_hat) + bias_mat
        v = squash(s)
        if it + 1 < iterations:
            agreement = einsum2("ntpjd,njd->ntpj", u_hat, v)
            logits = logits + agreement
    return v


# ---------------------------------------------------------------------------
# losses, masking, prediction
# ---------------------------------------------------------------------------


def _one_hot(labels, num_classes, dtype):
    labels = np.asarray(labels)
    if labels.ndim != 1:
        raise ShapeError(f"labels must be 1-D, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes})")
    eye = np.zeros((labels.size, num_classes), dtype=dtype)
    eye[np.arange(labels.size), labels] = 1.0
    return eye


def margin_loss(v: Tensor, labels, m_pos=0.9, m_neg=0.1, lam=0.5) -> Tensor:
    """Two-sided hinge on capsule norms, summed over classes, batch-averaged.

    Zero exactly when every true-class norm reaches m_pos and every other
    norm stays below m_neg.
    """
    n, num_classes, _ = v.shape
    norms = vector_norm(v, axis=-1)  # [N, classes]
    t = Tensor(_one_hot(labels, num_classes, v.dtype))
    pos = relu(m_pos - norms) ** 2
    neg = relu(norms - m_neg) ** 2
    per_class = t * pos + (1.0 - t) * neg * lam
    return per_class.sum(axis=1).mean()


def mask_and_decode(model: CapsNetModel, v: Tensor, labels=None, mode="train", mask_by_max_always=False) -> Tensor:
    """Zero all but one class capsule and reconstruct the image from it.

    Selection: training masks by the true label (requires ``labels``),
    evaluation masks by the largest capsule norm; ``mask_by_max_always``
    forces norm-based selection in both modes.  The full decoder sees all
    capsules flattened (the unselected ones zeroed); the reduced decoder
    sees only the selected capsule's values.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    c = model.config
    n = v.shape[0]
    if mode == "eval" or mask_by_max_always or labels is None:
        selected = np.argmax(np.linalg.norm(v.data, axis=-1), axis=-1)
    else:
        selected = np.asarray(labels)
    keep = Tensor(_one_hot(selected, c.digit_caps, v.dtype).reshape(n, c.digit_caps, 1))

    masked = v * keep
    if c.reduced_decoder:
        x = masked.sum(axis=1)  # [N, digit_caps_dim]
    else:
        x = masked.reshape(n, c.digit_caps * c.digit_caps_dim)

    h = relu(matmul(x, model["decoder.w1"]) + model["decoder.b1"])
    h = relu(matmul(h, model["decoder.w2"]) + model["decoder.b2"])
    return sigmoid(matmul(h, model["decoder.w3"]) + model["decoder.b3"])


def total_loss(margin: Tensor, reconstruction: Tensor, images: Tensor, recon_weight=0.0005) -> Tensor:
    """margin + recon_weight * per-sample sum-squared reconstruction error.

    The squared error is summed over pixels and averaged over the batch so
    the regularization strength does not scale with batch size.
    """
    n = reconstruction.shape[0]
    flat = images.reshape(n, -1)
    diff = reconstruction - flat
    sse = (diff * diff).sum(axis=1).mean()
    return margin + sse * recon_weight


def capsnet_loss(model: CapsNetModel, images: Tensor, labels, mode="train", mask_by_max_always=False):
    """Full forward pass; returns (loss, v, reconstruction)."""
    v = forward_encoder(model, images)
    margin = margin_loss(
        v,
        labels,
        m_pos=model.config.margin_pos,
        m_neg=model.config.margin_neg,
        lam=model.config.margin_lambda,
    )
    rec = mask_and_decode(model, v, labels, mode=mode, mask_by_max_always=mask_by_max_always)
    loss = total_loss(margin, rec, images, recon_weight=model.config.recon_weight)
    return loss, v, rec


def predict(v) -> np.ndarray:
    """Class per sample: argmax of capsule norm, ties to the lowest index."""
    data = v.data if isinstance(v, Tensor) else np.asarray(v)
    if not np.all(np.isfinite(data)):
        raise ValueError("capsule outputs contain non-finite values")
    return np.argmax(np.linalg.norm(data, axis=-1), axis=-1)


# ---------------------------------------------------------------------------
# parameter accounting and weight-sharing helpers
# ---------------------------------------------------------------------------


def count_parameters(config: CapsNetConfig) -> int:
    """Exact closed-form count of all weights and biases."""
    c = config
    k2 = c.kernel**2
    conv1 = c.conv_filters * k2 + c.conv_filters
    pc_filters = c.primary_caps_types * c.primary_caps_dim
    conv2 = pc_filters * c.conv_filters * k2 + pc_filters
    positions = 1 if c.weight_sharing else c.primary_positions
    digit_w = c.primary_caps_types * positions * c.digit_caps * c.digit_caps_dim * c.primary_caps_dim
    digit_b = c.digit_caps * c.digit_caps_dim
    sizes = [c.decoder_in, *c.decoder_hidden, c.decoder_out]
    decoder = sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(3))
    return conv1 + conv2 + digit_w + digit_b + decoder


def decoder_parameters(config: CapsNetConfig) -> int:
    """Parameter count of the reconstruction decoder alone."""
    sizes = [config.decoder_in, *config.decoder_hidden, config.decoder_out]
    return sum(sizes[i] * sizes[i + 1] + sizes[i + 1] for i in range(3))


def expand_shared_weights(shared: CapsNetModel, seed: int = 0) -> CapsNetModel:
    """Full-weight model whose 36 position blocks are copies of the shared block.

    Forward outputs must match the shared model exactly; used to verify the
    sharing arithmetic.
    """
    if not shared.config.weight_sharing:
        raise ValueError("expected a weight-sharing model")
    full_config = replace(shared.config, weight_sharing=False)
    full = make_model(full_config, seed=seed, dtype=shared.dtype)
    src = shared.named_parameters()
    for name, tensor in full.named_parameters().items():
        if name == "digit.weight":
            tiled = np.repeat(src[name].data, shared.config.primary_positions, axis=1)
            tensor.data = tiled.copy()
        else:
            tensor.data = src[name].data.copy()
    return full
