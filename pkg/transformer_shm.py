"""CNN-Transformer classifier over 28 FRF sensor channels.

Three stages: a weight-shared 1D CNN embeds each sensor row, a post-norm
Transformer encoder mixes the 28 sensor embeddings, and an attention head
queries the sensor sequence to classify the damage state. The head's
attention over sensors is returned with the logits.
"""

import hashlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import softmax as np_softmax

from data_pipeline import Normalizer
from logging_config import setup_logger
from tensor_core import (
    ATTENTION_PARAMS,
    Tensor,
    adaptive_avg_pool,
    batchnorm1d,
    conv1d,
    dropout,
    layer_norm,
    linear,
    load_tensors,
    maxpool1d,
    multi_head_attention,
    positional_encoding,
    relu,
    save_tensors,
)

logger = setup_logger(__name__)

POSITIONAL_MODES = ("sinusoidal", "learned", "none")
CLASSIFIER_ATTENTION_WEIGHTS = tuple(f"classifier.attn.{name}" for name in ATTENTION_PARAMS if name.endswith("weight"))
PREDICT_CHUNK = 256


@dataclass
class ModelConfig:
    sensors: int = 28
    sequence_length: int = 150
    conv_channels: List[int] = field(default_factory=lambda: [32, 64, 128, 128])
    embedding_dim: int = 128
    transformer_layers: int = 2
    attention_heads: int = 4
    feedforward_dim: int = 256
    classifier_hidden_dim: int = 128
    dropout_p: float = 0.1
    classes: int = 3
    positional_encoding: str = "sinusoidal"
    dtype: str = "float32"

    def __post_init__(self):
        self.conv_channels = [int(c) for c in self.conv_channels]
        if self.embedding_dim % self.attention_heads != 0:
            raise ValueError(
                f"embedding_dim {self.embedding_dim} is not divisible by attention_heads {self.attention_heads}"
            )
        if not self.conv_channels or any(b < a for a, b in zip(self.conv_channels, self.conv_channels[1:])):
            raise ValueError(f"conv_channels must be a non-empty non-decreasing list, got {self.conv_channels}")
        if self.conv_channels[-1] != self.embedding_dim:
            raise ValueError(
                f"last conv channel count {self.conv_channels[-1]} must equal embedding_dim {self.embedding_dim}"
            )
        if self.sequence_length < 2 ** len(self.conv_channels):
            raise ValueError(
                f"sequence_length {self.sequence_length} is too short for {len(self.conv_channels)} pooling stages"
            )
        if self.positional_encoding not in POSITIONAL_MODES:
            raise ValueError(f"positional_encoding must be one of {POSITIONAL_MODES}, got {self.positional_encoding!r}")
        if self.positional_encoding == "sinusoidal" and self.embedding_dim % 2:
            raise ValueError("sinusoidal positional encoding needs an even embedding_dim")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ValueError(f"dropout_p must lie in [0, 1), got {self.dropout_p}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)


@dataclass
class ModelParams:
    tensors: Dict[str, Tensor]
    buffers: Dict[str, np.ndarray]
    config: ModelConfig
    normalizer: Optional[Normalizer] = None

    def copy(self) -> "ModelParams":
        return ModelParams(
            tensors={k: Tensor(v.data.copy(), requires_grad=v.requires_grad) for k, v in self.tensors.items()},
            buffers={k: v.copy() for k, v in self.buffers.items()},
            config=self.config,
            normalizer=self.normalizer,
        )

    def parameter_count(self) -> int:
        return int(sum(t.data.size for t in self.tensors.values()))

    def hash(self) -> str:
        digest = hashlib.sha256()
        for name in sorted(self.tensors):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.tensors[name].data).tobytes())
        for name in sorted(self.buffers):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.buffers[name]).tobytes())
        return digest.hexdigest()

    def zero_grad(self):
        for t in self.tensors.values():
            t.zero_grad()

    def attention(self, prefix: str) -> Dict[str, Tensor]:
        return {name: self.tensors[f"{prefix}.{name}"] for name in ATTENTION_PARAMS}


@dataclass
class ForwardOutput:
    logits: Tensor
    sensor_attention: Tensor  # B x heads x sensors
    embeddings: Optional[Tensor] = None
    # per-layer self-attention B x heads x sensors x sensors, debug only
    encoder_attention: Optional[List[np.ndarray]] = None


def parameter_shapes(config: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Learnable tensor shapes, keyed by name, for `config`."""
    shapes: Dict[str, Tuple[int, ...]] = {}
    in_ch = 1
    for i, out_ch in enumerate(config.conv_channels):
        shapes[f"encoder.conv{i}.weight"] = (out_ch, in_ch, 3)
        shapes[f"encoder.conv{i}.bias"] = (out_ch,)
        shapes[f"encoder.bn{i}.gamma"] = (out_ch,)
        shapes[f"encoder.bn{i}.beta"] = (out_ch,)
        in_ch = out_ch

    d, ff = config.embedding_dim, config.feedforward_dim

    def add_attention(prefix: str):
        for proj in "qkvo":
            shapes[f"{prefix}.{proj}_weight"] = (d, d)
            shapes[f"{prefix}.{proj}_bias"] = (d,)

    if config.positional_encoding == "learned":
        shapes["integration.position"] = (config.sensors, d)
    for layer in range(config.transformer_layers):
        prefix = f"integration.layer{layer}"
        add_attention(f"{prefix}.attn")
        for norm in ("norm1", "norm2"):
            shapes[f"{prefix}.{norm}.gamma"] = (d,)
            shapes[f"{prefix}.{norm}.beta"] = (d,)
        shapes[f"{prefix}.ff1.weight"] = (ff, d)
        shapes[f"{prefix}.ff1.bias"] = (ff,)
        shapes[f"{prefix}.ff2.weight"] = (d, ff)
        shapes[f"{prefix}.ff2.bias"] = (d,)

    shapes["classifier.query.weight"] = (d, d)
    shapes["classifier.query.bias"] = (d,)
    add_attention("classifier.attn")
    shapes["classifier.hidden.weight"] = (config.classifier_hidden_dim, d)
    shapes["classifier.hidden.bias"] = (config.classifier_hidden_dim,)
    shapes["classifier.out.weight"] = (config.classes, config.classifier_hidden_dim)
    shapes["classifier.out.bias"] = (config.classes,)
    return shapes


def init_params(config: ModelConfig, seed: int) -> ModelParams:
    """Fan-in uniform weights, zero biases, unit/zero norm affines."""
    rng = np.random.default_rng(seed)
    dtype = config.np_dtype
    tensors = {}
    for name, shape in parameter_shapes(config).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf == "gamma":
            data = np.ones(shape)
        elif leaf == "beta" or leaf.endswith("bias"):
            data = np.zeros(shape)
        elif leaf == "position":
            data = rng.normal(0.0, 0.02, size=shape)
        else:
            fan_in = int(np.prod(shape[1:]))
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        tensors[name] = Tensor(data.astype(dtype), requires_grad=True)

    buffers = {}
    for i, channels in enumerate(config.conv_channels):
        buffers[f"encoder.bn{i}.running_mean"] = np.zeros(channels, dtype=dtype)
        buffers[f"encoder.bn{i}.running_var"] = np.ones(channels, dtype=dtype)
    params = ModelParams(tensors, buffers, config)
    logger.debug(f"Initialized {params.parameter_count()} parameters with seed {seed}")
    return params


def _training(mode: str) -> bool:
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return mode == "train"


def sensor_encoder_forward(x: Tensor, params: ModelParams, mode: str = "eval") -> Tensor:
    config = params.config
    training = _training(mode)
    if x.ndim != 3 or x.shape[1] != config.sensors or x.shape[2] != config.sequence_length:
        raise ValueError(
            f"encoder expects B x {config.sensors} x {config.sequence_length} input, got {x.shape}"
        )
    batch = x.shape[0]
    h = x.reshape(batch * config.sensors, 1, config.sequence_length)
    p = params.tensors
    for i in range(len(config.conv_channels)):
        h = conv1d(h, p[f"encoder.conv{i}.weight"], p[f"encoder.conv{i}.bias"])
        h = batchnorm1d(
            h,
            p[f"encoder.bn{i}.gamma"],
            p[f"encoder.bn{i}.beta"],
            params.buffers[f"encoder.bn{i}.running_mean"],
            params.buffers[f"encoder.bn{i}.running_var"],
            training,
        )
        h = maxpool1d(relu(h), 2)
    return adaptive_avg_pool(h).reshape(batch, config.sensors, config.embedding_dim)


def _encoder_layer(
    h: Tensor,
    params: ModelParams,
    prefix: str,
    training: bool,
    rng: Optional[np.random.Generator],
    attention_sink: Optional[List[np.ndarray]] = None,
) -> Tensor:
    config, p = params.config, params.tensors
    attended, attn = multi_head_attention(h, h, h, params.attention(f"{prefix}.attn"), config.attention_heads)
    if attention_sink is not None:
        attention_sink.append(attn.data)
    h = layer_norm(
        h + dropout(attended, config.dropout_p, training, rng),
        p[f"{prefix}.norm1.gamma"],
        p[f"{prefix}.norm1.beta"],
    )
    ff = relu(linear(h, p[f"{prefix}.ff1.weight"], p[f"{prefix}.ff1.bias"]))
    ff = linear(dropout(ff, config.dropout_p, training, rng), p[f"{prefix}.ff2.weight"], p[f"{prefix}.ff2.bias"])
    return layer_norm(
        h + dropout(ff, config.dropout_p, training, rng),
        p[f"{prefix}.norm2.gamma"],
        p[f"{prefix}.norm2.beta"],
    )


def integration_forward(
    embeddings: Tensor,
    params: ModelParams,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
    attention_sink: Optional[List[np.ndarray]] = None,
) -> Tensor:
    config = params.config
    training = _training(mode)
    if embeddings.ndim != 3 or embeddings.shape[1:] != (config.sensors, config.embedding_dim):
        raise ValueError(
            f"integration expects B x {config.sensors} x {config.embedding_dim}, got {embeddings.shape}"
        )
    h = embeddings
    if config.positional_encoding == "sinusoidal":
        h = h + Tensor(positional_encoding(config.sensors, config.embedding_dim, config.np_dtype))
    elif config.positional_encoding == "learned":
        h = h + params.tensors["integration.position"]
    for layer in range(config.transformer_layers):
        h = _encoder_layer(h, params, f"integration.layer{layer}", training, rng, attention_sink)
    return h


def classifier_forward(
    z: Tensor,
    params: ModelParams,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
) -> ForwardOutput:
    config, p = params.config, params.tensors
    training = _training(mode)
    batch, sensors, dim = z.shape
    query = relu(linear(z.mean(axis=1), p["classifier.query.weight"], p["classifier.query.bias"]))
    context, attn = multi_head_attention(
        query.reshape(batch, 1, dim), z, z, params.attention("classifier.attn"), config.attention_heads
    )
    hidden = relu(linear(context.reshape(batch, dim), p["classifier.hidden.weight"], p["classifier.hidden.bias"]))
    hidden = dropout(hidden, config.dropout_p, training, rng)
    logits = linear(hidden, p["classifier.out.weight"], p["classifier.out.bias"])
    return ForwardOutput(logits=logits, sensor_attention=attn.reshape(batch, config.attention_heads, sensors))


def model_forward(
    x,
    params: ModelParams,
    mode: str = "eval",
    rng: Optional[np.random.Generator] = None,
    keep_embeddings: bool = False,
    keep_encoder_attention: bool = False,
) -> ForwardOutput:
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=params.config.np_dtype))
    if mode == "train" and params.config.dropout_p > 0 and rng is None:
        raise ValueError("train mode with dropout needs an rng")
    sink = [] if keep_encoder_attention else None
    z = integration_forward(sensor_encoder_forward(x, params, mode), params, mode, rng, sink)
    out = classifier_forward(z, params, mode, rng)
    out.encoder_attention = sink
    if keep_embeddings:
        out.embeddings = z
    return out


def predict_proba(x: np.ndarray, params: ModelParams, chunk: int = PREDICT_CHUNK) -> Tuple[np.ndarray, np.ndarray]:
    """Eval-mode class probabilities (N x C) and sensor attention (N x heads x sensors)."""
    x = np.asarray(x, dtype=params.config.np_dtype)
    probs, attention = [], []
    for start in range(0, len(x), chunk):
        out = model_forward(x[start:start + chunk], params, "eval")
        probs.append(np_softmax(out.logits.data.astype(np.float64), axis=1))
        attention.append(out.sensor_attention.data)
    if not probs:
        heads, sensors = params.config.attention_heads, params.config.sensors
        return np.zeros((0, params.config.classes)), np.zeros((0, heads, sensors))
    return np.concatenate(probs), np.concatenate(attention)


def predict(x: np.ndarray, params: ModelParams) -> np.ndarray:
    probs, _ = predict_proba(x, params)
    # argmax keeps the first maximum, i.e. the lowest class index on ties
    return probs.argmax(axis=1)


def save_checkpoint(params: ModelParams, directory: Path, metadata: Optional[dict] = None) -> Path:
    arrays = {name: t.data for name, t in params.tensors.items()}
    arrays.update(params.buffers)
    meta = {
        "model_config": asdict(params.config),
        "buffers": sorted(params.buffers),
        "normalizer_fitted": None,
    }
    if params.normalizer is not None:
        arrays["normalizer.mean"] = params.normalizer.mean
        arrays["normalizer.std"] = params.normalizer.std
        meta["normalizer_fitted"] = params.normalizer.n_fitted
    meta.update(metadata or {})
    return save_tensors(directory, arrays, meta)


def load_checkpoint(directory: Path) -> Tuple[ModelParams, dict]:
    arrays, meta = load_tensors(directory)
    config = ModelConfig(**meta["model_config"])
    buffer_names = set(meta.get("buffers", []))
    normalizer = None
    if meta.get("normalizer_fitted") is not None:
        normalizer = Normalizer(
            mean=arrays.pop("normalizer.mean"),
            std=arrays.pop("normalizer.std"),
            n_fitted=int(meta["normalizer_fitted"]),
        )
    expected = parameter_shapes(config)
    tensors, buffers = {}, {}
    for name, array in arrays.items():
        if name in buffer_names:
            buffers[name] = array
        elif name in expected:
            if tuple(array.shape) != expected[name]:
                raise ValueError(f"checkpoint tensor {name!r} has shape {array.shape}, expected {expected[name]}")
            tensors[name] = Tensor(array, requires_grad=True)
        else:
            raise ValueError(f"unexpected tensor {name!r} in checkpoint at {directory}")
    missing = sorted(set(expected) - set(tensors))
    if missing:
        raise ValueError(f"checkpoint at {directory} is missing tensors: {missing}")
    return ModelParams(tensors, buffers, config, normalizer), meta
