"""Small numpy tensor kernel with reverse-mode gradients.

Only the layers the FRF classifier needs are provided. Every op is a
`Function` whose `forward` works on raw arrays and whose `backward` returns one
gradient per parent; `Tensor.backward` walks the graph in reverse topological
order and accumulates into leaf tensors that require gradients.
"""

import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from logging_config import setup_logger

logger = setup_logger(__name__)

DEFAULT_DTYPE = np.float32
CHECK_DTYPE = np.float64
CONV_KERNEL = 3
BN_MOMENTUM = 0.1
BN_EPS = 1e-5
LN_EPS = 1e-5
CHECKPOINT_FORMAT_VERSION = 1


class NumericError(RuntimeError):
    """Raised for non-finite gradients or losses."""


class Tensor:
    def __init__(self, data, requires_grad: bool = False, ctx: Optional["Function"] = None, dtype=None):
        if isinstance(data, np.ndarray) and dtype is None:
            self.data = data
        else:
            self.data = np.asarray(data, dtype=dtype or DEFAULT_DTYPE)
        self.requires_grad = requires_grad
        self.ctx = ctx
        self.grad: Optional[np.ndarray] = None

    def __repr__(self):
        return f"<Tensor shape={self.shape} dtype={self.dtype} requires_grad={self.requires_grad}>"

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _lift(self, other) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.dtype))

    def __add__(self, other):
        return Add.apply(self, self._lift(other))

    def __radd__(self, other):
        return Add.apply(self._lift(other), self)

    def __sub__(self, other):
        return Sub.apply(self, self._lift(other))

    def __mul__(self, other):
        return Mul.apply(self, self._lift(other))

    def __rmul__(self, other):
        return Mul.apply(self._lift(other), self)

    def __matmul__(self, other):
        return MatMul.apply(self, self._lift(other))

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Reshape.apply(self, shape=shape)

    def transpose(self, *axes) -> "Tensor":
        return Transpose.apply(self, axes=tuple(axes) if axes else None)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Sum.apply(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return Mean.apply(self, axis=axis, keepdims=keepdims)

    def backward(self, grad: Optional[np.ndarray] = None):
        """Accumulate d(self)/d(leaf) into every leaf with requires_grad."""
        if self.ctx is None:
            if self.requires_grad:
                seed = np.ones_like(self.data) if grad is None else grad
                self.grad = seed if self.grad is None else self.grad + seed
            return
        if grad is None:
            if self.data.size != 1:
                raise ValueError(f"backward() without a seed gradient needs a scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)

        grads: Dict[int, np.ndarray] = {id(self): grad}
        for node in reversed(_toposort(self)):
            node_grad = grads.pop(id(node), None)
            if node_grad is None:
                continue
            parent_grads = node.ctx.backward(node_grad)
            for parent, g in zip(node.ctx.parents, parent_grads):
                if g is None or not (parent.requires_grad or parent.ctx is not None):
                    continue
                if parent.ctx is None:
                    parent.grad = g if parent.grad is None else parent.grad + g
                else:
                    key = id(parent)
                    grads[key] = g if key not in grads else grads[key] + g


def _toposort(root: Tensor) -> List[Tensor]:
    order, visited = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node.ctx.parents:
            if parent.ctx is not None and id(parent) not in visited:
                stack.append((parent, False))
    return order


class Function:
    def __init__(self, *parents: Tensor):
        self.parents = parents

    @classmethod
    def apply(cls, *parents: Tensor, **kwargs) -> Tensor:
        ctx = cls(*parents)
        out = ctx.forward(*[p.data for p in parents], **kwargs)
        tracked = any(p.requires_grad or p.ctx is not None for p in parents)
        return Tensor(out, ctx=ctx if tracked else None)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> Sequence[Optional[np.ndarray]]:
        raise NotImplementedError


def unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Add(Function):
    def forward(self, x, y):
        self.shapes = (x.shape, y.shape)
        return x + y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(grad, self.shapes[1])


class Sub(Function):
    def forward(self, x, y):
        self.shapes = (x.shape, y.shape)
        return x - y

    def backward(self, grad):
        return unbroadcast(grad, self.shapes[0]), unbroadcast(-grad, self.shapes[1])


class Mul(Function):
    def forward(self, x, y):
        self.x, self.y = x, y
        return x * y

    def backward(self, grad):
        return unbroadcast(grad * self.y, self.x.shape), unbroadcast(grad * self.x, self.y.shape)


class MatMul(Function):
    def forward(self, x, y):
        if x.shape[-1] != y.shape[-2 if y.ndim > 1 else 0]:
            raise ValueError(f"matmul shape mismatch: {x.shape} @ {y.shape}")
        self.x, self.y = x, y
        return x @ y

    def backward(self, grad):
        gx = grad @ np.swapaxes(self.y, -1, -2)
        gy = np.swapaxes(self.x, -1, -2) @ grad
        return unbroadcast(gx, self.x.shape), unbroadcast(gy, self.y.shape)


class Reshape(Function):
    def forward(self, x, shape):
        self.in_shape = x.shape
        return x.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.in_shape),)


class Transpose(Function):
    def forward(self, x, axes):
        self.axes = axes if axes is not None else tuple(reversed(range(x.ndim)))
        return np.transpose(x, self.axes)

    def backward(self, grad):
        return (np.transpose(grad, np.argsort(self.axes)),)


class Sum(Function):
    def forward(self, x, axis, keepdims):
        self.in_shape, self.axis, self.keepdims = x.shape, axis, keepdims
        return np.asarray(x.sum(axis=axis, keepdims=keepdims))

    def backward(self, grad):
        if self.axis is not None and not self.keepdims:
            grad = np.expand_dims(grad, self.axis)
        return (np.broadcast_to(grad, self.in_shape).copy(),)


class Mean(Sum):
    def forward(self, x, axis, keepdims):
        out = super().forward(x, axis, keepdims)
        self.count = x.size // max(out.size, 1)
        return np.asarray(out / self.count, dtype=x.dtype)

    def backward(self, grad):
        (g,) = super().backward(grad)
        return (g / self.count,)


class ReLU(Function):
    def forward(self, x):
        self.mask = x > 0
        return np.where(self.mask, x, 0).astype(x.dtype, copy=False)

    def backward(self, grad):
        return (grad * self.mask,)


class Softmax(Function):
    def forward(self, x, axis):
        self.axis = axis
        shifted = x - x.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        self.out = e / e.sum(axis=axis, keepdims=True)
        return self.out

    def backward(self, grad):
        s = self.out
        return (s * (grad - (grad * s).sum(axis=self.axis, keepdims=True)),)


class LayerNorm(Function):
    """Normalizes over the last axis, then gamma * x_hat + beta."""

    def forward(self, x, gamma, beta, eps):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self.inv = 1.0 / np.sqrt(var + eps)
        self.x_hat = (x - mu) * self.inv
        self.gamma = gamma
        return self.x_hat * gamma + beta

    def backward(self, grad):
        n = self.x_hat.shape[-1]
        lead = tuple(range(grad.ndim - 1))
        g_hat = grad * self.gamma
        gx = (self.inv / n) * (
            n * g_hat
            - g_hat.sum(axis=-1, keepdims=True)
            - self.x_hat * (g_hat * self.x_hat).sum(axis=-1, keepdims=True)
        )
        return gx, (grad * self.x_hat).sum(axis=lead), grad.sum(axis=lead)


class BatchNorm1d(Function):
    def forward(self, x, gamma, beta, running_mean, running_var, training, momentum, eps):
        self.training = training
        if training:
            count = x.shape[0] * x.shape[2]
            if count < 2:
                raise ValueError(f"batch norm in train mode needs at least 2 values per channel, got {count}")
            mu = x.mean(axis=(0, 2))
            var = x.var(axis=(0, 2))
            # buffers are owned by the caller's training task
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu
            running_var *= 1.0 - momentum
            running_var += momentum * var * count / (count - 1)
        else:
            mu, var = running_mean, running_var
        self.inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype)[None, :, None]
        self.x_hat = (x - mu.astype(x.dtype)[None, :, None]) * self.inv
        self.gamma = gamma[None, :, None]
        return self.x_hat * self.gamma + beta[None, :, None]

    def backward(self, grad):
        g_hat = grad * self.gamma
        if self.training:
            n = grad.shape[0] * grad.shape[2]
            gx = (self.inv / n) * (
                n * g_hat
                - g_hat.sum(axis=(0, 2), keepdims=True)
                - self.x_hat * (g_hat * self.x_hat).sum(axis=(0, 2), keepdims=True)
            )
        else:
            gx = g_hat * self.inv
        return gx, (grad * self.x_hat).sum(axis=(0, 2)), grad.sum(axis=(0, 2))


class Conv1d(Function):
    """Kernel 3, zero padding 1, stride 1, via an im2col matmul."""

    def forward(self, x, weight, bias):
        if x.ndim != 3 or weight.ndim != 3 or weight.shape[1] != x.shape[1]:
            raise ValueError(f"conv1d shape mismatch: input {x.shape}, weight {weight.shape}")
        if weight.shape[2] != CONV_KERNEL:
            raise ValueError(f"conv1d supports kernel {CONV_KERNEL} only, got {weight.shape[2]}")
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"conv1d bias must have shape ({weight.shape[0]},), got {bias.shape}")
        batch, channels, length = x.shape
        padded = np.pad(x, ((0, 0), (0, 0), (1, 1)))
        cols = np.stack([padded[:, :, k:k + length] for k in range(CONV_KERNEL)], axis=2)
        self.cols = cols.reshape(batch, channels * CONV_KERNEL, length)
        self.w2 = weight.reshape(weight.shape[0], -1)
        self.in_shape, self.w_shape = x.shape, weight.shape
        return self.w2 @ self.cols + bias[None, :, None]

    def backward(self, grad):
        batch, channels, length = self.in_shape
        gw = np.einsum("bol,bkl->ok", grad, self.cols).reshape(self.w_shape)
        gcols = (self.w2.T @ grad).reshape(batch, channels, CONV_KERNEL, length)
        gpad = np.zeros((batch, channels, length + 2), dtype=grad.dtype)
        for k in range(CONV_KERNEL):
            gpad[:, :, k:k + length] += gcols[:, :, k]
        return gpad[:, :, 1:-1], gw, grad.sum(axis=(0, 2))


class MaxPool1d(Function):
    def forward(self, x, kernel):
        batch, channels, length = x.shape
        out_len = length // kernel
        windows = x[:, :, :out_len * kernel].reshape(batch, channels, out_len, kernel)
        arg = windows.argmax(axis=-1)
        self.mask = np.zeros_like(windows)
        np.put_along_axis(self.mask, arg[..., None], 1.0, axis=-1)
        self.in_shape, self.kernel = x.shape, kernel
        return np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

    def backward(self, grad):
        batch, channels, length = self.in_shape
        gx = np.zeros(self.in_shape, dtype=grad.dtype)
        used = grad.shape[-1] * self.kernel
        gx[:, :, :used] = (self.mask * grad[..., None]).reshape(batch, channels, used)
        return (gx,)


class Dropout(Function):
    def forward(self, x, mask):
        self.mask = mask
        return x * mask

    def backward(self, grad):
        return (grad * self.mask,)


class WeightedCrossEntropy(Function):
    def forward(self, logits, targets, class_weights):
        batch, classes = logits.shape
        targets = np.asarray(targets, dtype=np.int64)
        if targets.shape != (batch,):
            raise ValueError(f"targets must have shape ({batch},), got {targets.shape}")
        if np.any(targets < 0) or np.any(targets >= classes):
            raise ValueError(f"target class indices must lie in 0..{classes - 1}")
        weights = np.asarray(class_weights, dtype=logits.dtype)
        if weights.shape != (classes,) or np.any(weights <= 0):
            raise ValueError(f"class weights must be {classes} positive values, got {weights}")
        shifted = logits - logits.max(axis=1, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        log_p = shifted - lse
        rows = np.arange(batch)
        self.w = weights[targets]
        self.p = np.exp(log_p)
        self.targets, self.batch = targets, batch
        return np.asarray(np.mean(-self.w * log_p[rows, targets]), dtype=logits.dtype)

    def backward(self, grad):
        g = self.p.copy()
        g[np.arange(self.batch), self.targets] -= 1.0
        return (g * (self.w[:, None] * grad / self.batch),)


class L1Penalty(Function):
    def forward(self, x, lam):
        self.sign, self.lam = np.sign(x), lam
        return np.asarray(lam * np.abs(x).sum(), dtype=x.dtype)

    def backward(self, grad):
        return (self.lam * self.sign * grad,)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear shape mismatch: input {x.shape}, weight {weight.shape}")
    out = x @ weight.transpose()
    return out + bias if bias is not None else out


def relu(x: Tensor) -> Tensor:
    return ReLU.apply(x)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(x, axis=axis)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = LN_EPS) -> Tensor:
    if gamma.shape != (x.shape[-1],) or beta.shape != (x.shape[-1],):
        raise ValueError(f"layer norm affine must have shape ({x.shape[-1]},)")
    return LayerNorm.apply(x, gamma, beta, eps=eps)


def batchnorm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """Per-channel batch norm over (batch, length).

    Eval mode before any train-mode update uses the initial running stats
    (mean 0, var 1).
    """
    return BatchNorm1d.apply(
        x, gamma, beta,
        running_mean=running_mean, running_var=running_var,
        training=training, momentum=momentum, eps=eps,
    )


def conv1d(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    return Conv1d.apply(x, weight, bias)


def maxpool1d(x: Tensor, kernel: int = 2) -> Tensor:
    return MaxPool1d.apply(x, kernel=kernel)


def adaptive_avg_pool(x: Tensor) -> Tensor:
    return x.mean(axis=-1)


def dropout(x: Tensor, p: float, training: bool, rng: Optional[np.random.Generator] = None) -> Tensor:
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must lie in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs an rng")
    keep = rng.random(x.shape) >= p
    mask = (keep / (1.0 - p)).astype(x.dtype)
    return Dropout.apply(x, mask=mask)


def weighted_cross_entropy(logits: Tensor, targets: np.ndarray, class_weights: np.ndarray) -> Tensor:
    return WeightedCrossEntropy.apply(logits, targets=targets, class_weights=class_weights)


def l1_penalty(x: Tensor, lam: float) -> Tensor:
    if lam < 0:
        raise ValueError(f"L1 lambda must be non-negative, got {lam}")
    return L1Penalty.apply(x, lam=lam)


ATTENTION_PARAMS = ("q_weight", "q_bias", "k_weight", "k_bias", "v_weight", "v_bias", "o_weight", "o_bias")


def multi_head_attention(
    query: Tensor,
    key: Tensor,
    value: Tensor,
    weights: Dict[str, Tensor],
    heads: int,
) -> Tuple[Tensor, Tensor]:
    """Scaled dot-product attention with learned Q/K/V/output projections.

    Args:
        query: B x n_q x d
        key, value: B x n_k x d
        weights: projection tensors keyed by ATTENTION_PARAMS
        heads: number of heads, must divide d

    Returns:
        (output B x n_q x d, attention weights B x heads x n_q x n_k)
    """
    batch, n_q, dim = query.shape
    n_k = key.shape[1]
    if dim % heads != 0:
        raise ValueError(f"embedding dim {dim} is not divisible by {heads} heads")
    if key.shape[-1] != dim or value.shape[:2] != key.shape[:2]:
        raise ValueError(f"attention shape mismatch: q {query.shape}, k {key.shape}, v {value.shape}")
    head_dim = dim // heads

    def split(t: Tensor, n: int) -> Tensor:
        return t.reshape(batch, n, heads, head_dim).transpose(0, 2, 1, 3)

    q = split(linear(query, weights["q_weight"], weights["q_bias"]), n_q)
    k = split(linear(key, weights["k_weight"], weights["k_bias"]), n_k)
    v = split(linear(value, weights["v_weight"], weights["v_bias"]), n_k)
    scores = (q @ k.transpose(0, 1, 3, 2)) * (1.0 / np.sqrt(head_dim))
    attn = softmax(scores, axis=-1)
    context = (attn @ v).transpose(0, 2, 1, 3).reshape(batch, n_q, dim)
    return linear(context, weights["o_weight"], weights["o_bias"]), attn


def positional_encoding(n: int, d: int, dtype=DEFAULT_DTYPE) -> np.ndarray:
    if d % 2 != 0:
        raise ValueError(f"sinusoidal positional encoding needs an even dimension, got {d}")
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = 1.0 / np.power(10000.0, np.arange(0, d, 2, dtype=np.float64) / d)
    table = np.zeros((n, d), dtype=np.float64)
    table[:, 0::2] = np.sin(pos * freq)
    table[:, 1::2] = np.cos(pos * freq)
    return table.astype(dtype)


@dataclass
class AdamState:
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Dict[str, Tensor],
    grads: Dict[str, Optional[np.ndarray]],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """Bias-corrected Adam update applied in place to `params`; names without a gradient are skipped."""
    for name, grad in grads.items():
        if grad is not None and not np.all(np.isfinite(grad)):
            raise NumericError(f"non-finite gradient for tensor {name!r} at optimizer step {state.step + 1}")
    state.step += 1
    bias1 = 1.0 - beta1 ** state.step
    bias2 = 1.0 - beta2 ** state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = beta1 * m + (1.0 - beta1) * grad
        v = beta2 * v + (1.0 - beta2) * grad * grad
        state.m[name], state.v[name] = m, v
        update = lr * (m / bias1) / (np.sqrt(v / bias2) + eps)
        param.data -= update.astype(param.dtype, copy=False)
    return state


def gradient_check(
    fn: Callable[[], Tensor],
    tensors: Dict[str, Tensor],
    probes: int = 10,
    step: float = 1e-5,
    seed: int = 0,
    floor: float = 1e-6,
    probe_filter: Optional[Callable[[str, np.ndarray], np.ndarray]] = None,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    `fn` rebuilds the scalar output from `tensors` on every call. At most
    `probes` random coordinates per tensor are compared; `probe_filter` may
    return a boolean mask of admissible coordinates (e.g. away from a kink).
    """
    for name, t in tensors.items():
        if t.dtype != CHECK_DTYPE:
            raise ValueError(f"gradient_check needs float64 tensors, {name!r} is {t.dtype}")
        t.data = np.ascontiguousarray(t.data)
        t.zero_grad()
        t.requires_grad = True
    fn().backward()
    analytic = {name: (t.grad if t.grad is not None else np.zeros_like(t.data)).copy() for name, t in tensors.items()}

    rng = np.random.default_rng(seed)
    worst = 0.0
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        candidates = np.arange(flat.size)
        if probe_filter is not None:
            candidates = candidates[probe_filter(name, t.data).reshape(-1)]
        if candidates.size == 0:
            continue
        chosen = rng.choice(candidates, size=min(probes, candidates.size), replace=False)
        for idx in chosen:
            original = flat[idx]
            flat[idx] = original + step
            plus = float(fn().data)
            flat[idx] = original - step
            minus = float(fn().data)
            flat[idx] = original
            numeric = (plus - minus) / (2.0 * step)
            exact = float(analytic[name].reshape(-1)[idx])
            err = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            worst = max(worst, err)
    logger.debug(f"gradient_check over {len(tensors)} tensors: max relative error {worst:.3e}")
    return worst


def derive_seed(*keys: Union[int, str]) -> int:
    """Stable 32-bit seed from a tuple of keys."""
    entropy = [k if isinstance(k, int) else zlib.crc32(str(k).encode()) for k in keys]
    return int(np.random.SeedSequence(entropy).generate_state(1)[0])


@dataclass
class RngStream:
    """Counter-based stream: draw n depends only on (seed, n)."""

    seed: int
    counter: int = 0

    def next(self) -> np.random.Generator:
        rng = np.random.default_rng([self.seed, self.counter])
        self.counter += 1
        return rng

    def at(self, counter: int) -> np.random.Generator:
        return np.random.default_rng([self.seed, counter])


def save_tensors(directory: Path, tensors: Dict[str, np.ndarray], metadata: Optional[dict] = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries, offset, crc = [], 0, 0
    with open(directory / "weights.bin", "wb") as f:
        for name in sorted(tensors):
            array = np.asarray(tensors[name])
            dtype = array.dtype.newbyteorder("<")
            raw = np.ascontiguousarray(array, dtype=dtype).tobytes()
            entries.append({
                "name": name,
                "shape": list(array.shape),
                "dtype": dtype.str,
                "offset": offset,
                "nbytes": len(raw),
            })
            f.write(raw)
            crc = zlib.crc32(raw, crc)
            offset += len(raw)
    manifest = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "crc32": crc,
        "tensors": entries,
        "metadata": metadata or {},
    }
    with open(directory / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return directory


def load_tensors(directory: Path) -> Tuple[Dict[str, np.ndarray], dict]:
    directory = Path(directory)
    manifest_path, weights_path = directory / "manifest.json", directory / "weights.bin"
    if not manifest_path.is_file() or not weights_path.is_file():
        raise FileNotFoundError(f"checkpoint at {directory} needs manifest.json and weights.bin")
    with open(manifest_path, "r") as f:
        manifest = json.load(f)
    if manifest.get("format_version") != CHECKPOINT_FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {manifest.get('format_version')} at {directory}")
    blob = weights_path.read_bytes()
    tensors = {}
    for entry in manifest["tensors"]:
        start, stop = entry["offset"], entry["offset"] + entry["nbytes"]
        if stop > len(blob):
            raise ValueError(f"weights.bin at {directory} is truncated at tensor {entry['name']!r}")
        dtype = np.dtype(entry["dtype"])
        array = np.frombuffer(blob[start:stop], dtype=dtype).reshape(entry["shape"])
        tensors[entry["name"]] = array.astype(dtype.newbyteorder("="))
    expected = manifest.get("crc32")
    if expected is not None and zlib.crc32(blob) != expected:
        raise ValueError(f"weights.bin at {directory} fails its CRC-32 check")
    return tensors, manifest.get("metadata", {})
