"""Residual three-layer CNN denoiser, written from scratch on numpy.

The network estimates the noise map of a standardised single-channel image;
the denoised image is the input minus that estimate. Layers:

    conv 9x9, 1 -> 64, ReLU
    conv 1x1, 64 -> 32, ReLU
    conv 5x5, 32 -> 1, linear

All convolutions are same-size cross-correlations with zero padding.
Tensors are ``(n, c, h, w)`` numpy arrays.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, DataError, NumericalError

DEFAULT_ARCH = ((1, 64, 9), (64, 32, 1), (32, 1, 5))


class ModelFormatError(DataError):
    pass


# --------------------------------------------------------------------------
# Layers
# --------------------------------------------------------------------------

@dataclass
class ConvLayer:
    weight: np.ndarray  # (c_out, c_in, k, k)
    bias: np.ndarray    # (c_out,)

    def __post_init__(self):
        if self.weight.ndim != 4 or self.weight.shape[2] != self.weight.shape[3]:
            raise ConfigurationError("kernel must have shape (c_out, c_in, k, k)")
        if self.weight.shape[2] % 2 != 1:
            raise ConfigurationError("kernel size must be odd")
        if self.bias.shape != (self.weight.shape[0],):
            raise ConfigurationError("bias length must equal c_out")

    @property
    def c_out(self) -> int:
        return self.weight.shape[0]

    @property
    def c_in(self) -> int:
        return self.weight.shape[1]

    @property
    def k(self) -> int:
        return self.weight.shape[2]


def check_tensor4(x) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 4:
        raise DataError(f"expected a 4-axis tensor (n, c, h, w), got shape {x.shape}")
    return x


def _shift_stack(xp, k, h, w):
    """``(c, H+k-1, W+k-1)`` padded map -> ``(k*k*c, h*w)`` rows ordered (dy, dx, c)."""
    c = xp.shape[0]
    out = np.empty((k, k, c, h, w), xp.dtype)
    for dy in range(k):
        for dx in range(k):
            out[dy, dx] = xp[:, dy:dy + h, dx:dx + w]
    return out.reshape(k * k * c, h * w)


def _correlate(x, weight):
    """Same-size zero-padded cross-correlation of one ``(c, h, w)`` map."""
    c, h, w = x.shape
    o, _, k, _ = weight.shape
    p = k // 2
    if k == 1:
        return (weight[:, :, 0, 0] @ x.reshape(c, h * w)).reshape(o, h, w)
    if c <= o:
        xp = np.pad(x, ((0, 0), (p, p), (p, p)))
        wm = weight.transpose(0, 2, 3, 1).reshape(o, k * k * c)
        return (wm @ _shift_stack(xp, k, h, w)).reshape(o, h, w)
    # few output channels: project first, then scatter-add the shifted maps
    wa = weight.transpose(2, 3, 0, 1).reshape(k * k * o, c)
    z = (wa @ x.reshape(c, h * w)).reshape(k, k, o, h, w)
    acc = np.zeros((o, h + k - 1, w + k - 1), x.dtype)
    for dy in range(k):
        for dx in range(k):
            acc[:, k - 1 - dy:k - 1 - dy + h, k - 1 - dx:k - 1 - dx + w] += z[dy, dx]
    return acc[:, p:p + h, p:p + w]


def conv2d_forward(x, layer: ConvLayer) -> np.ndarray:
    x = check_tensor4(x)
    if x.shape[1] != layer.c_in:
        raise DataError(f"input has {x.shape[1]} channels, layer expects {layer.c_in}")
    out = np.empty((x.shape[0], layer.c_out) + x.shape[2:], dtype=np.result_type(x, layer.weight))
    for i in range(x.shape[0]):
        out[i] = _correlate(x[i], layer.weight)
    out += layer.bias[None, :, None, None]
    return out


def conv2d_backward(x, layer: ConvLayer, grad_out, need_grad_x: bool = True):
    """Gradients ``(grad_x, grad_weight, grad_bias)`` of the forward map."""
    x = check_tensor4(x)
    grad_out = check_tensor4(grad_out)
    n, c, h, w = x.shape
    o, k = layer.c_out, layer.k
    if grad_out.shape != (n, o, h, w):
        raise DataError(f"grad_out shape {grad_out.shape} inconsistent with forward output {(n, o, h, w)}")
    p = k // 2
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_w = np.zeros_like(layer.weight)
    for i in range(n):
        g = grad_out[i].reshape(o, h * w)
        if k == 1:
            grad_w[:, :, 0, 0] += g @ x[i].reshape(c, h * w).T
            continue
        xp = np.pad(x[i], ((0, 0), (p, p), (p, p)))
        if c * k * k <= 4096 and c <= o:
            gw = g @ _shift_stack(xp, k, h, w).T  # (o, k*k*c), ordered (dy, dx, c)
            grad_w += gw.reshape(o, k, k, c).transpose(0, 3, 1, 2)
        else:
            for dy in range(k):
                for dx in range(k):
                    grad_w[:, :, dy, dx] += g @ xp[:, dy:dy + h, dx:dx + w].reshape(c, h * w).T
    grad_x = None
    if need_grad_x:
        flipped = np.ascontiguousarray(layer.weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3))
        grad_x = np.empty_like(x, dtype=np.result_type(x, grad_out))
        for i in range(n):
            grad_x[i] = _correlate(grad_out[i], flipped)
    return grad_x, grad_w, grad_b


def relu_forward(x):
    return np.maximum(x, 0)


def relu_backward(x, grad_out):
    """Gradient of ReLU; the derivative at 0 is taken as 0."""
    return np.where(x > 0, grad_out, 0)


def mse_loss(pred, target):
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise DataError(f"shape mismatch {pred.shape} vs {target.shape}")
    d = pred - target
    return float(np.mean(d * d)), 2.0 * d / d.size


# --------------------------------------------------------------------------
# Optimiser
# --------------------------------------------------------------------------

@dataclass
class TrainConfig:
    lr: float = 1e-3
    batch: int = 9
    max_epochs: int = 10000
    patience: int = 50
    min_improvement: float = 1e-8
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        for name in ("lr", "batch", "max_epochs", "patience", "beta1", "beta2", "eps"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"TrainConfig.{name} must be positive")
        if self.min_improvement < 0:
            raise ConfigurationError("min_improvement must be >= 0")
        if self.patience >= self.max_epochs:
            raise ConfigurationError("patience must be smaller than max_epochs")
        if not (self.beta1 < 1 and self.beta2 < 1):
            raise ConfigurationError("Adam betas must be < 1")
        if self.dtype not in ("float32", "float64"):
            raise ConfigurationError("dtype must be float32 or float64")


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)


def adam_step(params, grads, state: AdamState, cfg: TrainConfig) -> None:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DataError("params, grads and Adam state must align")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DataError("gradient shape mismatch")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


# --------------------------------------------------------------------------
# Model
# --------------------------------------------------------------------------

@dataclass
class SrcnnModel:
    layers: list
    mean: float = 0.0
    std: float = 1.0
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.c_out != b.c_in:
                raise ConfigurationError("layer channel chain is inconsistent")
        if self.layers[0].c_in != 1 or self.layers[-1].c_out != 1:
            raise ConfigurationError("network must map one channel to one channel")
        if not self.std > 0:
            raise ConfigurationError("standardisation std must be > 0")

    @classmethod
    def init(cls, seed=0, arch=DEFAULT_ARCH, init_std: float = 0.02, dtype=np.float64) -> "SrcnnModel":
        rng = np.random.default_rng(seed)
        layers = [ConvLayer((init_std * rng.standard_normal((o, c, k, k))).astype(dtype), np.zeros(o, dtype))
                  for c, o, k in arch]
        return cls(layers, metadata={"seed": int(seed) if np.isscalar(seed) else None})

    @classmethod
    def zeros(cls, arch=DEFAULT_ARCH) -> "SrcnnModel":
        return cls([ConvLayer(np.zeros((o, c, k, k)), np.zeros(o)) for c, o, k in arch])

    def params(self) -> list:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def astype(self, dtype) -> "SrcnnModel":
        layers = [ConvLayer(l.weight.astype(dtype), l.bias.astype(dtype)) for l in self.layers]
        return SrcnnModel(layers, self.mean, self.std, dict(self.metadata))

    def copy(self) -> "SrcnnModel":
        return self.astype(self.layers[0].weight.dtype)

    # network on standardised input ------------------------------------
    def forward(self, x, keep: bool = False):
        """Noise estimate of a standardised batch; with ``keep`` also the
        per-layer pre-activations needed for backprop."""
        cache = []
        h = x
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            z = conv2d_forward(h, layer)
            cache.append((h, z))
            h = z if i == last else relu_forward(z)
        return (h, cache) if keep else h

    def backward(self, cache, grad_out) -> list:
        """Parameter gradients in :meth:`params` order."""
        grads = [None] * (2 * len(self.layers))
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            h, z = cache[i]
            if i != len(self.layers) - 1:
                g = relu_backward(z, g)
            gx, gw, gb = conv2d_backward(h, self.layers[i], g, need_grad_x=i > 0)
            grads[2 * i], grads[2 * i + 1] = gw, gb
            g = gx
        return grads

    def residual_loss(self, x, clean):
        """MSE of ``x - net(x)`` against ``clean`` and its parameter gradients."""
        est, cache = self.forward(x, keep=True)
        loss, g = mse_loss(x - est, clean)
        return loss, self.backward(cache, -g)

    # inference in image units ------------------------------------------
    def estimate_noise(self, image) -> np.ndarray:
        img = np.asarray(getattr(image, "data", image), dtype=np.float64)
        dtype = self.layers[0].weight.dtype
        z = ((img - self.mean) / self.std).astype(dtype)
        squeeze = img.ndim == 2
        z = z[None, None] if squeeze else z[:, None]
        est = self.forward(z).astype(np.float64) * self.std
        return est[0, 0] if squeeze else est[:, 0]


def denoise(model: SrcnnModel, image):
    """Return ``(denoised, noise_estimate)``; complex input is denoised per
    component."""
    img = np.asarray(getattr(image, "data", image))
    if np.iscomplexobj(img):
        dr, er = denoise(model, img.real)
        di, ei = denoise(model, img.imag)
        return dr + 1j * di, er + 1j * ei
    img = img.astype(np.float64)
    est = model.estimate_noise(img)
    return img - est, est


# --------------------------------------------------------------------------
# Training
# --------------------------------------------------------------------------

class EarlyStopping:
    """Tracks the best validation loss; ``update`` returns True to stop.

    A loss counts as an improvement when it beats the best by more than
    ``min_improvement``; training stops once ``patience`` further epochs
    have passed without one.
    """

    def __init__(self, patience: int, min_improvement: float):
        self.patience = patience
        self.min_improvement = min_improvement
        self.best = math.inf
        self.best_epoch = -1
        self.since = 0

    def update(self, epoch: int, loss: float) -> tuple[bool, bool]:
        """Return ``(is_best, stop)``."""
        if loss < self.best - self.min_improvement:
            self.best, self.best_epoch, self.since = loss, epoch, 0
            return True, False
        self.since += 1
        return False, self.since > self.patience


@dataclass
class HistoryRow:
    epoch: int
    train_loss: float
    val_loss: float
    is_best: bool


def write_history(history, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss", "is_best"])
        for r in history:
            w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), int(r.is_best)])
    return path


def standardization(images) -> tuple[float, float]:
    a = np.asarray(images, dtype=np.float64)
    std = float(a.std())
    return float(a.mean()), std if std > 0 else 1.0


def evaluate_loss(model: SrcnnModel, inputs, targets, batch: int) -> float:
    total = 0.0
    for s in range(0, len(inputs), batch):
        x, y = inputs[s:s + batch], targets[s:s + batch]
        total += mse_loss(x - model.forward(x), y)[0] * len(x)
    return total / len(inputs)


def train(model: SrcnnModel, train_set, val_set, cfg: TrainConfig, progress=None):
    """Train the residual denoiser; returns ``(best_model, history)``.

    ``train_set`` / ``val_set`` are ``(noisy, clean)`` pairs of arrays shaped
    ``(n, h, w)`` in image units; they are standardised with the training
    noisy-input statistics, which are stored on the returned model.
    """
    xt, yt = (np.asarray(a, dtype=np.float64) for a in train_set)
    xv, yv = (np.asarray(a, dtype=np.float64) for a in val_set)
    if len(xt) == 0 or len(xv) == 0:
        raise DataError("training and validation sets must be non-empty")
    if xt.shape != yt.shape or xv.shape != yv.shape:
        raise DataError("noisy/clean arrays must have equal shapes")
    dtype = np.dtype(cfg.dtype)
    mean, std = standardization(xt)
    prep = lambda a: ((a - mean) / std).astype(dtype)[:, None]
    xt, yt, xv, yv = prep(xt), prep(yt), prep(xv), prep(yv)

    net = model.astype(dtype)
    net.mean, net.std = mean, std
    net.metadata = {**model.metadata, "train_seed": cfg.seed}
    params = net.params()
    state = AdamState.zeros_like(params)
    rng = np.random.default_rng(cfg.seed)
    stopper = EarlyStopping(cfg.patience, cfg.min_improvement)
    best = net.copy()
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(xt))
        total = 0.0
        for s in range(0, len(order), cfg.batch):
            idx = order[s:s + cfg.batch]
            loss, grads = net.residual_loss(xt[idx], yt[idx])
            if not math.isfinite(loss):
                raise NumericalError(f"training diverged at epoch {epoch} (loss={loss})")
            adam_step(params, grads, state, cfg)
            total += loss * len(idx)
        train_loss = total / len(order)
        val_loss = evaluate_loss(net, xv, yv, cfg.batch)
        if not math.isfinite(val_loss):
            raise NumericalError(f"validation loss non-finite at epoch {epoch}")
        is_best, stop = stopper.update(epoch, val_loss)
        if is_best:
            best = net.copy()
        history.append(HistoryRow(epoch, train_loss, val_loss, is_best))
        if progress is not None:
            progress(history[-1])
        if stop:
            break
    best.metadata = {**best.metadata, "best_epoch": stopper.best_epoch, "best_val_loss": stopper.best}
    return best, history


# --------------------------------------------------------------------------
# Serialisation
# --------------------------------------------------------------------------

def _paths(path):
    p = Path(path)
    name = p.name
    for suffix in (".srcnn.json", ".srcnn.bin"):
        if name.endswith(suffix):
            name = name[: -len(suffix)]
    return p.with_name(name + ".srcnn.json"), p.with_name(name + ".srcnn.bin")


def save_model(model: SrcnnModel, path, hyperparameters: dict | None = None) -> Path:
    """Write ``<name>.srcnn.json`` (header) and ``<name>.srcnn.bin`` (f32 LE)."""
    head_path, bin_path = _paths(path)
    blob = b"".join(np.ascontiguousarray(p, dtype="<f4").tobytes() for p in model.params())
    header = {
        "format": "srcnn-1",
        "layers": [{"c_in": l.c_in, "c_out": l.c_out, "k": l.k} for l in model.layers],
        "standardization": {"mean": model.mean, "std": model.std},
        "metadata": model.metadata,
        "hyperparameters": hyperparameters or {},
        "dtype": "f32",
        "n_bytes": len(blob),
        "sha256": hashlib.sha256(blob).hexdigest(),
    }
    head_path.parent.mkdir(parents=True, exist_ok=True)
    bin_path.write_bytes(blob)
    head_path.write_text(json.dumps(header, indent=2, sort_keys=True, default=float) + "\n")
    return head_path


def load_model(path, dtype=np.float32) -> SrcnnModel:
    head_path, bin_path = _paths(path)
    try:
        header = json.loads(head_path.read_text())
        arch = [(d["c_in"], d["c_out"], d["k"]) for d in header["layers"]]
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ModelFormatError(f"cannot read model header {head_path}: {exc}") from exc
    blob = bin_path.read_bytes()
    expected = sum(4 * (o * c * k * k + o) for c, o, k in arch)
    if len(blob) != expected or header.get("n_bytes") != expected:
        raise ModelFormatError(f"weight file has {len(blob)} bytes; header shapes need {expected}")
    if hashlib.sha256(blob).hexdigest() != header.get("sha256"):
        raise ModelFormatError("weight file hash mismatch (corrupted model)")
    flat = np.frombuffer(blob, dtype="<f4").astype(dtype)
    layers, pos = [], 0
    for c, o, k in arch:
        n = o * c * k * k
        w = flat[pos:pos + n].reshape(o, c, k, k).copy()
        pos += n
        b = flat[pos:pos + o].copy()
        pos += o
        layers.append(ConvLayer(w, b))
    st = header.get("standardization", {})
    return SrcnnModel(layers, float(st.get("mean", 0.0)), float(st.get("std", 1.0)), header.get("metadata", {}))
