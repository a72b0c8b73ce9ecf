"""Siamese 1D-CNN with channel attention, contrastive loss, checkpoints.

One parameter set serves both branches (weight sharing is structural: there
is a single ModelParams). The embedding pipeline is

    conv(k=5) -> ReLU -> conv(k=5) -> ReLU -> channel attention ->
    flatten -> FC1 -> ReLU -> dropout -> FC2 -> ReLU -> dropout -> FC3

with no activation after FC3. Channel attention squeezes the feature map
with global average pooling, passes it through a two-layer bottleneck
(reduction ratio 8), and gates each channel with a sigmoid weight.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, FormatError, ShapeError
from .fileio import write_bytes_atomic
from .layers import (
    conv1d_backward,
    conv1d_forward,
    conv1d_out_len,
    dropout,
    dropout_backward,
    gap1d,
    gap1d_backward,
    linear_backward,
    linear_forward,
    relu,
    relu_backward,
    sigmoid,
    sigmoid_backward,
)
from .rppg import RppgSignal

CHECKPOINT_MAGIC = b"PKIN"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    in_channels: int = 100
    input_len: int = 125
    conv_channels: tuple[int, int] = (32, 64)
    kernel: int = 5
    stride: int = 1
    attn_reduction: int = 8
    fc_dims: tuple[int, int, int] = (256, 128, 64)
    dropout_rate: float = 0.1
    margin: float = 1.0
    use_attention: bool = True
    literal_squared_distance: bool = False

    def __post_init__(self):
        if self.kernel < 3 or self.kernel % 2 == 0:
            raise ConfigError("kernel must be odd and >= 3")
        if len(self.conv_channels) != 2:
            raise ConfigError("exactly two conv blocks are supported")
        if len(self.fc_dims) != 3:
            raise ConfigError("fc_dims must have exactly 3 entries")
        if self.margin <= 0:
            raise ConfigError("margin must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.attn_hidden < 1:
            raise ConfigError(
                f"attn_reduction {self.attn_reduction} leaves no hidden units "
                f"for {self.conv_channels[1]} channels"
            )
        # both conv stages must leave a positive spatial extent
        self.flatten_len

    @property
    def conv1_len(self) -> int:
        return conv1d_out_len(self.input_len, self.kernel, self.stride)

    @property
    def conv2_len(self) -> int:
        return conv1d_out_len(self.conv1_len, self.kernel, self.stride)

    @property
    def flatten_len(self) -> int:
        return self.conv_channels[1] * self.conv2_len

    @property
    def attn_hidden(self) -> int:
        return self.conv_channels[1] // self.attn_reduction

    @property
    def embed_dim(self) -> int:
        return self.fc_dims[2]


PARAM_FIELDS = (
    "conv1_w", "conv1_b", "conv2_w", "conv2_b",
    "attn1_w", "attn1_b", "attn2_w", "attn2_b",
    "fc1_w", "fc1_b", "fc2_w", "fc2_b", "fc3_w", "fc3_b",
)


@dataclass
class ModelParams:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    attn1_w: np.ndarray
    attn1_b: np.ndarray
    attn2_w: np.ndarray
    attn2_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray
    fc3_w: np.ndarray
    fc3_b: np.ndarray

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_FIELDS}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.as_dict().items()})

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.as_dict().values())


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    c1, c2 = cfg.conv_channels
    d1, d2, d3 = cfg.fc_dims
    return {
        "conv1_w": (c1, cfg.in_channels, cfg.kernel),
        "conv1_b": (c1,),
        "conv2_w": (c2, c1, cfg.kernel),
        "conv2_b": (c2,),
        "attn1_w": (cfg.attn_hidden, c2),
        "attn1_b": (cfg.attn_hidden,),
        "attn2_w": (c2, cfg.attn_hidden),
        "attn2_b": (c2,),
        "fc1_w": (d1, cfg.flatten_len),
        "fc1_b": (d1,),
        "fc2_w": (d2, d1),
        "fc2_b": (d2,),
        "fc3_w": (d3, d2),
        "fc3_b": (d3,),
    }


def init_params(cfg: ModelConfig, seed: int = 0) -> ModelParams:
    """Uniform fan-in initialization: each tensor ~ U(-1/sqrt(fan_in), +).

    Biases use the fan-in of their weight; a fixed seed makes the whole
    training trajectory reproducible.
    """
    rng = np.random.default_rng(seed)
    shapes = param_shapes(cfg)
    values = {}
    for name in PARAM_FIELDS:
        w_shape = shapes[name if name.endswith("_w") else name[:-2] + "_w"]
        fan_in = w_shape[1] * w_shape[2] if len(w_shape) == 3 else w_shape[1]
        bound = 1.0 / np.sqrt(fan_in)
        values[name] = rng.uniform(-bound, bound, shapes[name])
    return ModelParams(**values)


@dataclass(frozen=True)
class KinPair:
    """Two pulse signals plus a binary label; 1 denotes kinship."""

    p: RppgSignal
    c: RppgSignal
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ConfigError(f"label must be 0 or 1, got {self.label}")
        if self.p.data.shape != self.c.data.shape:
            raise ShapeError(
                f"pair signals disagree in shape: {self.p.data.shape} vs {self.c.data.shape}"
            )
        if self.p.method != self.c.method:
            raise ConfigError(
                f"pair mixes methods: {self.p.method} vs {self.c.method}"
            )


def _check_input(cfg: ModelConfig, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-2:] != (cfg.in_channels, cfg.input_len):
        raise ShapeError(
            f"input shape {x.shape[-2:]} != ({cfg.in_channels}, {cfg.input_len})"
        )
    return x


def embed(
    params: ModelParams,
    cfg: ModelConfig,
    x: np.ndarray,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[np.ndarray, dict]:
    """Forward pass; returns (embedding, cache-for-backward).

    ``x`` is (C, W) or (B, C, W). The cache stores exactly what backward
    needs: layer inputs, pre-activations, attention weights, dropout masks.
    """
    x = _check_input(cfg, x)
    cache: dict = {"x": x}
    y1 = conv1d_forward(x, params.conv1_w, params.conv1_b, cfg.stride)
    h1 = relu(y1)
    y2 = conv1d_forward(h1, params.conv2_w, params.conv2_b, cfg.stride)
    h2 = relu(y2)
    cache.update(y1=y1, h1=h1, y2=y2, h2=h2)
    if cfg.use_attention:
        pooled = gap1d(h2)
        a1 = linear_forward(pooled, params.attn1_w, params.attn1_b)
        r1 = relu(a1)
        weights = sigmoid(linear_forward(r1, params.attn2_w, params.attn2_b))
        z = h2 * weights[..., None]
        cache.update(pooled=pooled, a1=a1, r1=r1, attn=weights)
    else:
        z = h2
    flat = z.reshape(*z.shape[:-2], cfg.flatten_len)
    p1 = linear_forward(flat, params.fc1_w, params.fc1_b)
    r_1 = relu(p1)
    d1, m1 = dropout(r_1, cfg.dropout_rate, training, rng)
    p2 = linear_forward(d1, params.fc2_w, params.fc2_b)
    r_2 = relu(p2)
    d2, m2 = dropout(r_2, cfg.dropout_rate, training, rng)
    out = linear_forward(d2, params.fc3_w, params.fc3_b)
    cache.update(flat=flat, p1=p1, d1=d1, m1=m1, p2=p2, d2=d2, m2=m2)
    return out, cache


def embed_backward(
    params: ModelParams,
    cfg: ModelConfig,
    cache: dict,
    upstream: np.ndarray,
    want_input_grad: bool = False,
) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter (and optionally x)."""
    grads: dict[str, np.ndarray] = {}
    g = linear_backward(upstream, cache["d2"], params.fc3_w)
    grads["fc3_w"], grads["fc3_b"] = g.d_weight, g.d_bias
    up = dropout_backward(g.d_input, cache["m2"], cfg.dropout_rate)
    up = relu_backward(up, cache["p2"])
    g = linear_backward(up, cache["d1"], params.fc2_w)
    grads["fc2_w"], grads["fc2_b"] = g.d_weight, g.d_bias
    up = dropout_backward(g.d_input, cache["m1"], cfg.dropout_rate)
    up = relu_backward(up, cache["p1"])
    g = linear_backward(up, cache["flat"], params.fc1_w)
    grads["fc1_w"], grads["fc1_b"] = g.d_weight, g.d_bias
    h2 = cache["h2"]
    dz = g.d_input.reshape(h2.shape)
    if cfg.use_attention:
        weights = cache["attn"]
        dh2 = dz * weights[..., None]
        d_weights = (dz * h2).sum(axis=-1)
        da2 = sigmoid_backward(d_weights, weights)
        g = linear_backward(da2, cache["r1"], params.attn2_w)
        grads["attn2_w"], grads["attn2_b"] = g.d_weight, g.d_bias
        da1 = relu_backward(g.d_input, cache["a1"])
        g = linear_backward(da1, cache["pooled"], params.attn1_w)
        grads["attn1_w"], grads["attn1_b"] = g.d_weight, g.d_bias
        dh2 = dh2 + gap1d_backward(g.d_input, h2.shape[-1])
    else:
        dh2 = dz
        shapes = param_shapes(cfg)
        for name in ("attn1_w", "attn1_b", "attn2_w", "attn2_b"):
            grads[name] = np.zeros(shapes[name])
    dy2 = relu_backward(dh2, cache["y2"])
    g = conv1d_backward(dy2, cache["h1"], params.conv2_w, cfg.stride)
    grads["conv2_w"], grads["conv2_b"] = g.d_weight, g.d_bias
    dy1 = relu_backward(g.d_input, cache["y1"])
    g = conv1d_backward(dy1, cache["x"], params.conv1_w, cfg.stride)
    grads["conv1_w"], grads["conv1_b"] = g.d_weight, g.d_bias
    if want_input_grad:
        grads["x"] = g.d_input
    return grads


def forward_embed(
    params: ModelParams,
    cfg: ModelConfig,
    signal: RppgSignal | np.ndarray,
    mode: str = "eval",
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Embed one signal; dropout is active only in train mode."""
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    x = signal.data if isinstance(signal, RppgSignal) else signal
    out, _ = embed(params, cfg, x, training=(mode == "train"), rng=rng)
    return out


def channel_attention(
    params: ModelParams, cfg: ModelConfig, feature: np.ndarray
) -> np.ndarray:
    """Gate a (..., C2, W2) feature map with learned channel weights in (0,1)."""
    feature = np.asarray(feature, dtype=np.float64)
    pooled = gap1d(feature)
    hidden = relu(linear_forward(pooled, params.attn1_w, params.attn1_b))
    weights = sigmoid(linear_forward(hidden, params.attn2_w, params.attn2_b))
    return feature * weights[..., None]


def attention_weights(
    params: ModelParams, cfg: ModelConfig, feature: np.ndarray
) -> np.ndarray:
    pooled = gap1d(np.asarray(feature, dtype=np.float64))
    hidden = relu(linear_forward(pooled, params.attn1_w, params.attn1_b))
    return sigmoid(linear_forward(hidden, params.attn2_w, params.attn2_b))


def contrastive_loss(
    f_p: np.ndarray,
    f_c: np.ndarray,
    labels: np.ndarray | int,
    margin: float = 1.0,
    literal_squared_distance: bool = False,
) -> tuple[float, np.ndarray, np.ndarray]:
    """Mean contrastive loss over pairs, with exact embedding gradients.

    Per pair: l*d^2 + (1-l)*max(margin - d, 0)^2 with d the Euclidean
    distance between embeddings. ``literal_squared_distance`` instead feeds
    the squared distance into the same expression (kept for comparison; the
    gradient at d=0 uses the zero subgradient either way).
    """
    f_p = np.atleast_2d(np.asarray(f_p, dtype=np.float64))
    f_c = np.atleast_2d(np.asarray(f_c, dtype=np.float64))
    if f_p.shape != f_c.shape:
        raise ShapeError(f"embedding shapes differ: {f_p.shape} vs {f_c.shape}")
    labels = np.atleast_1d(np.asarray(labels, dtype=np.float64))
    if labels.shape[0] != f_p.shape[0]:
        raise ShapeError("one label per pair required")
    n = f_p.shape[0]
    diff = f_p - f_c
    dist = np.linalg.norm(diff, axis=1)
    if literal_squared_distance:
        d = dist**2
        hinge = np.maximum(margin - d, 0.0)
        losses = labels * d**2 + (1 - labels) * hinge**2
        dl_dd = 2 * labels * d - 2 * (1 - labels) * hinge
        grad = (2 * dl_dd)[:, None] * diff / n
    else:
        hinge = np.maximum(margin - dist, 0.0)
        losses = labels * dist**2 + (1 - labels) * hinge**2
        pos_grad = 2 * labels[:, None] * diff
        safe = np.where(dist > 0, dist, 1.0)
        neg_grad = (-2 * (1 - labels) * hinge / safe)[:, None] * diff
        neg_grad[dist == 0] = 0.0
        grad = (pos_grad + neg_grad) / n
    return float(losses.mean()), grad, -grad


def pair_distance(params: ModelParams, cfg: ModelConfig, pair: KinPair) -> float:
    """Euclidean distance between eval-mode embeddings; lower = more kin-like."""
    e_p = forward_embed(params, cfg, pair.p)
    e_c = forward_embed(params, cfg, pair.c)
    return float(np.linalg.norm(e_p - e_c))


def _config_block(cfg: ModelConfig) -> bytes:
    lines = []
    for f in fields(cfg):
        value = getattr(cfg, f.name)
        if isinstance(value, tuple):
            rendered = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            rendered = "1" if value else "0"
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{f.name}={rendered}")
    return ("\n".join(lines) + "\n").encode("utf-8")


def _parse_config_block(blob: bytes) -> ModelConfig:
    raw: dict[str, str] = {}
    for line in blob.decode("utf-8").splitlines():
        key, sep, value = line.partition("=")
        if sep:
            raw[key] = value
    try:
        return ModelConfig(
            in_channels=int(raw["in_channels"]),
            input_len=int(raw["input_len"]),
            conv_channels=tuple(int(v) for v in raw["conv_channels"].split(",")),
            kernel=int(raw["kernel"]),
            stride=int(raw["stride"]),
            attn_reduction=int(raw["attn_reduction"]),
            fc_dims=tuple(int(v) for v in raw["fc_dims"].split(",")),
            dropout_rate=float(raw["dropout_rate"]),
            margin=float(raw["margin"]),
            use_attention=raw["use_attention"] == "1",
            literal_squared_distance=raw["literal_squared_distance"] == "1",
        )
    except (KeyError, ValueError) as exc:
        raise FormatError(f"invalid checkpoint config block: {exc}") from exc


def save_checkpoint(path: str | Path, cfg: ModelConfig, params: ModelParams) -> None:
    """Versioned binary checkpoint; bit-exact round trip.

    Layout: magic 'PKIN', u32 version, u32-length config key-value block,
    then each tensor in declaration order as u32 ndim, u32 dims, f64-LE data.
    """
    out = bytearray()
    out += CHECKPOINT_MAGIC
    out += struct.pack("<I", CHECKPOINT_VERSION)
    block = _config_block(cfg)
    out += struct.pack("<I", len(block))
    out += block
    for name in PARAM_FIELDS:
        arr = np.ascontiguousarray(getattr(params, name), dtype="<f8")
        out += struct.pack("<I", arr.ndim)
        out += struct.pack(f"<{arr.ndim}I", *arr.shape)
        out += arr.tobytes()
    write_bytes_atomic(path, bytes(out))


def load_checkpoint(path: str | Path) -> tuple[ModelConfig, ModelParams]:
    blob = Path(path).read_bytes()
    if blob[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a model checkpoint (bad magic)")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}")
    (block_len,) = struct.unpack_from("<I", blob, 8)
    offset = 12
    cfg = _parse_config_block(blob[offset : offset + block_len])
    offset += block_len
    shapes = param_shapes(cfg)
    values = {}
    for name in PARAM_FIELDS:
        (ndim,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        shape = struct.unpack_from(f"<{ndim}I", blob, offset)
        offset += 4 * ndim
        count = int(np.prod(shape)) if ndim else 1
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape)
        offset += 8 * count
        if shape != shapes[name]:
            raise FormatError(
                f"{path}: tensor {name} has shape {shape}, config implies {shapes[name]}"
            )
        values[name] = arr.astype(np.float64)
    if offset != len(blob):
        raise FormatError(f"{path}: trailing bytes after parameter tensors")
    return cfg, ModelParams(**values)


def ablate_attention(cfg: ModelConfig) -> ModelConfig:
    """The 'without channel attention' variant: identical stack minus gating."""
    return replace(cfg, use_attention=False)
