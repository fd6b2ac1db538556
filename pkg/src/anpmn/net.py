"""Noise-regression network: 1-D convolutions into a normalized FC stack.

The same backbone serves two regressors: a 6-channel instance mapping a
one-second IMU window to per-axis accelerometer/gyro noise stds, and a
3-channel instance mapping a position window to per-axis position noise
stds.  Everything is implemented directly on numpy arrays with hand-derived
backward passes; training uses Adam on the MSE loss.

A softplus output head makes the regressed standard deviations structurally
positive, since they are squared into covariance matrices downstream.  Input
windows are mean-centered per channel: the regression target is a dispersion
measure, invariant to the window's DC level.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "NetConfig",
    "TrainConfig",
    "TrainResult",
    "SigmaNet",
    "TrainingDivergedError",
    "mse_loss",
    "train_network",
    "infer_sigma_q",
    "infer_sigma_r",
    "save_weights",
    "load_weights",
    "WEIGHTS_MAGIC",
]

WEIGHTS_MAGIC = b"ANPM"
WEIGHTS_VERSION = 1


class TrainingDivergedError(RuntimeError):
    """Loss became non-finite during optimization."""


@dataclass(frozen=True)
class NetConfig:
    """Architecture description; all sizes flow from here.

    ``conv_blocks`` lists (out_channels, kernel_len, stride) per block, each
    followed by a ReLU.  ``fc_widths`` are the hidden fully-connected widths;
    layer normalization sits after the first hidden layer.  The output head
    is a linear layer into softplus with ``out_dim`` units.
    """

    in_channels: int
    out_dim: int
    window_len: int = 100
    conv_blocks: tuple = ((16, 5, 2), (32, 5, 2))
    fc_widths: tuple = (128, 64)
    center_input: bool = True
    use_layer_norm: bool = True

    def __post_init__(self) -> None:
        if self.out_dim != self.in_channels:
            raise ValueError("per-axis regression requires out_dim == in_channels")
        if self.window_len != 100:
            raise ValueError("window length is fixed at 100 samples (one second)")
        object.__setattr__(self, "conv_blocks", tuple(tuple(b) for b in self.conv_blocks))
        object.__setattr__(self, "fc_widths", tuple(self.fc_widths))

    def to_json(self) -> str:
        return json.dumps({
            "in_channels": self.in_channels,
            "out_dim": self.out_dim,
            "window_len": self.window_len,
            "conv_blocks": [list(b) for b in self.conv_blocks],
            "fc_widths": list(self.fc_widths),
            "center_input": self.center_input,
            "use_layer_norm": self.use_layer_norm,
        }, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "NetConfig":
        d = json.loads(text)
        return cls(
            in_channels=d["in_channels"], out_dim=d["out_dim"],
            window_len=d["window_len"],
            conv_blocks=tuple(tuple(b) for b in d["conv_blocks"]),
            fc_widths=tuple(d["fc_widths"]),
            center_input=d["center_input"], use_layer_norm=d["use_layer_norm"],
        )


@dataclass(frozen=True)
class TrainConfig:
    """Optimization hyperparameters (Adam)."""

    lr: float = 0.001
    batch: int = 64
    epochs: int = 200
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch < 1:
            raise ValueError("batch size must be >= 1")


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class _CenterChannels:
    params: list = []
    grads: list = []

    def forward(self, x):
        return x - x.mean(axis=-1, keepdims=True)

    def backward(self, dy):
        return dy - dy.mean(axis=-1, keepdims=True)


class _Conv1D:
    def __init__(self, c_in, c_out, kernel, stride, rng):
        bound = 1.0 / np.sqrt(c_in * kernel)
        self.W = rng.uniform(-bound, bound, (c_out, c_in, kernel))
        self.b = rng.uniform(-bound, bound, c_out)
        self.stride = stride
        self.params = [self.W, self.b]
        self.grads = [np.zeros_like(self.W), np.zeros_like(self.b)]

    def out_len(self, length):
        return (length - self.W.shape[2]) // self.stride + 1

    def forward(self, x):
        k, s = self.W.shape[2], self.stride
        l_out = self.out_len(x.shape[2])
        idx = s * np.arange(l_out)[:, None] + np.arange(k)[None, :]
        self._xw = x[:, :, idx]  # (B, C_in, L_out, K)
        return np.einsum("bctk,ock->bot", self._xw, self.W) + self.b[None, :, None]

    def backward(self, dy):
        k, s = self.W.shape[2], self.stride
        self.grads[0][...] = np.einsum("bot,bctk->ock", dy, self._xw)
        self.grads[1][...] = dy.sum(axis=(0, 2))
        tmp = np.einsum("bot,ock->bctk", dy, self.W)
        B, c_in = tmp.shape[0], tmp.shape[1]
        l_out = dy.shape[2]
        l_in = s * (l_out - 1) + k
        dx = np.zeros((B, c_in, l_in))
        for kk in range(k):
            dx[:, :, kk : kk + s * l_out : s] += tmp[:, :, :, kk]
        return dx


class _ReLU:
    params: list = []
    grads: list = []

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, dy):
        return np.where(self._mask, dy, 0.0)


class _Flatten:
    params: list = []
    grads: list = []

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class _Dense:
    def __init__(self, n_in, n_out, rng):
        bound = 1.0 / np.sqrt(n_in)
        self.W = rng.uniform(-bound, bound, (n_out, n_in))
        self.b = rng.uniform(-bound, bound, n_out)
        self.params = [self.W, self.b]
        self.grads = [np.zeros_like(self.W), np.zeros_like(self.b)]

    def forward(self, x):
        self._x = x
        return x @ self.W.T + self.b

    def backward(self, dy):
        self.grads[0][...] = dy.T @ self._x
        self.grads[1][...] = dy.sum(axis=0)
        return dy @ self.W


class _LayerNorm:
    def __init__(self, dim, eps=1e-5):
        self.gamma = np.ones(dim)
        self.beta = np.zeros(dim)
        self.eps = eps
        self.params = [self.gamma, self.beta]
        self.grads = [np.zeros_like(self.gamma), np.zeros_like(self.beta)]

    def forward(self, x):
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        self._istd = 1.0 / np.sqrt(var + self.eps)
        self._xhat = (x - mu) * self._istd
        return self.gamma * self._xhat + self.beta

    def backward(self, dy):
        d = dy.shape[-1]
        self.grads[0][...] = (dy * self._xhat).sum(axis=0)
        self.grads[1][...] = dy.sum(axis=0)
        dxhat = dy * self.gamma
        return (self._istd / d) * (
            d * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - self._xhat * (dxhat * self._xhat).sum(axis=-1, keepdims=True)
        )


class _Softplus:
    params: list = []
    grads: list = []

    def forward(self, x):
        self._x = x
        return np.logaddexp(0.0, x)

    def backward(self, dy):
        return dy * _sigmoid(self._x)


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------

class SigmaNet:
    """Backbone network instance; parameters live in the layer objects."""

    def __init__(self, config: NetConfig, rng: np.random.Generator | None = None):
        self.config = config
        rng = rng or np.random.default_rng(0)
        layers: list = []
        if config.center_input:
            layers.append(_CenterChannels())
        c, length = config.in_channels, config.window_len
        for c_out, kernel, stride in config.conv_blocks:
            conv = _Conv1D(c, c_out, kernel, stride, rng)
            layers.append(conv)
            layers.append(_ReLU())
            length = conv.out_len(length)
            c = c_out
        layers.append(_Flatten())
        width = c * length
        for i, w_out in enumerate(config.fc_widths):
            layers.append(_Dense(width, w_out, rng))
            if i == 0 and config.use_layer_norm:
                layers.append(_LayerNorm(w_out))
            layers.append(_ReLU())
            width = w_out
        self.head = _Dense(width, config.out_dim, rng)
        layers.append(self.head)
        layers.append(_Softplus())
        self.layers = layers

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.grads]

    def set_parameters(self, values: list[np.ndarray]) -> None:
        for p, v in zip(self.parameters(), values, strict=True):
            p[...] = v

    def init_head_bias(self, target_mean: np.ndarray) -> None:
        """Start the softplus head at the label mean (inverse softplus)."""
        self.head.b[...] = np.log(np.expm1(np.maximum(target_mean, 1e-12)))

    # -- forward / backward ---------------------------------------------------

    def forward_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 3 or x.shape[1:] != (self.config.in_channels, self.config.window_len):
            raise ValueError(
                f"expected (B, {self.config.in_channels}, {self.config.window_len}) "
                f"input, got {x.shape}"
            )
        if not np.all(np.isfinite(x)):
            raise ValueError("non-finite values in network input")
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        """Single window (C, L) -> positive std estimates (out_dim,)."""
        return self.forward_batch(np.asarray(x, dtype=float)[None])[0]

    def loss_and_gradients(self, x: np.ndarray, y: np.ndarray) -> float:
        """MSE loss over the batch; gradients land in ``gradients()``."""
        y = np.asarray(y, dtype=float)
        y_hat = self.forward_batch(x)
        diff = y_hat - y
        loss = float(np.mean(diff**2))
        grad = 2.0 * diff / diff.size
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return loss


def mse_loss(y_hat: np.ndarray, y: np.ndarray) -> float:
    """Mean squared componentwise difference."""
    y_hat = np.asarray(y_hat, dtype=float)
    y = np.asarray(y, dtype=float)
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch {y_hat.shape} vs {y.shape}")
    return float(np.mean((y_hat - y) ** 2))


def infer_sigma_q(net: SigmaNet, imu_window: np.ndarray) -> np.ndarray:
    """Per-axis inertial noise stds [acc x/y/z, gyro x/y/z] from a 6x100 window."""
    imu_window = np.asarray(imu_window, dtype=float)
    if imu_window.shape != (6, net.config.window_len):
        raise ValueError(f"expected (6, {net.config.window_len}), got {imu_window.shape}")
    return net.forward(imu_window)


def infer_sigma_r(net: SigmaNet, pos_window: np.ndarray) -> np.ndarray:
    """Per-axis position noise stds [N, E, D] from a 3x100 window."""
    pos_window = np.asarray(pos_window, dtype=float)
    if pos_window.shape != (3, net.config.window_len):
        raise ValueError(f"expected (3, {net.config.window_len}), got {pos_window.shape}")
    return net.forward(pos_window)


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    net: SigmaNet
    train_loss: list[float]
    val_loss: list[float]
    best_epoch: int

    @property
    def best_val_loss(self) -> float:
        return self.val_loss[self.best_epoch]


def _eval_loss(net: SigmaNet, x: np.ndarray, y: np.ndarray, chunk: int = 512) -> float:
    total, count = 0.0, 0
    for i in range(0, len(x), chunk):
        y_hat = net.forward_batch(x[i : i + chunk])
        total += float(np.sum((y_hat - y[i : i + chunk]) ** 2))
        count += y_hat.size
    return total / count


def train_network(
    x_train: np.ndarray,
    y_train: np.ndarray,
    x_val: np.ndarray,
    y_val: np.ndarray,
    net_cfg: NetConfig,
    cfg: TrainConfig,
) -> TrainResult:
    """Adam over shuffled mini-batches; returns the lowest-validation-loss net.

    All randomness (init, shuffling) derives from the counter-based generator
    keyed by the seed, so repeated runs are bit-identical.
    """
    if len(x_train) == 0:
        raise ValueError("training set is empty")
    rng = np.random.Generator(np.random.Philox(key=np.array(
        [cfg.seed % 2**64, 0x6E6574], dtype=np.uint64)))
    net = SigmaNet(net_cfg, rng)
    net.init_head_bias(np.mean(y_train, axis=0))

    params = net.parameters()
    grads = net.gradients()
    m = [np.zeros_like(p) for p in params]
    v = [np.zeros_like(p) for p in params]
    step = 0

    train_hist, val_hist = [], []
    best_val = np.inf
    best_epoch = 0
    best_params = [p.copy() for p in params]

    n = len(x_train)
    for epoch in range(cfg.epochs):
        perm = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, cfg.batch):
            sel = perm[start : start + cfg.batch]
            loss = net.loss_and_gradients(x_train[sel], y_train[sel])
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    f"loss became non-finite at epoch {epoch}, step {step}"
                )
            epoch_loss += loss * len(sel)
            step += 1
            bc1 = 1.0 - cfg.beta1**step
            bc2 = 1.0 - cfg.beta2**step
            for p, g, mi, vi in zip(params, grads, m, v):
                mi *= cfg.beta1
                mi += (1.0 - cfg.beta1) * g
                vi *= cfg.beta2
                vi += (1.0 - cfg.beta2) * g * g
                p -= cfg.lr * (mi / bc1) / (np.sqrt(vi / bc2) + cfg.eps)
        train_hist.append(epoch_loss / n)
        vl = _eval_loss(net, x_val, y_val) if len(x_val) else train_hist[-1]
        val_hist.append(vl)
        if vl < best_val:
            best_val = vl
            best_epoch = epoch
            best_params = [p.copy() for p in params]

    net.set_parameters(best_params)
    return TrainResult(net=net, train_loss=train_hist, val_loss=val_hist,
                       best_epoch=best_epoch)


# ---------------------------------------------------------------------------
# weights file: magic, version, config JSON, little-endian f64 arrays
# ---------------------------------------------------------------------------

def save_weights(net: SigmaNet, path: Path) -> None:
    path = Path(path)
    cfg = net.config.to_json().encode()
    with path.open("wb") as fh:
        fh.write(WEIGHTS_MAGIC)
        fh.write(struct.pack("<I", WEIGHTS_VERSION))
        fh.write(struct.pack("<I", len(cfg)))
        fh.write(cfg)
        for p in net.parameters():
            fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def load_weights(path: Path) -> SigmaNet:
    path = Path(path)
    blob = path.read_bytes()
    if blob[:4] != WEIGHTS_MAGIC:
        raise ValueError(f"{path.name}: not a weights file (bad magic)")
    version = struct.unpack("<I", blob[4:8])[0]
    if version != WEIGHTS_VERSION:
        raise ValueError(f"{path.name}: unsupported weights version {version}")
    cfg_len = struct.unpack("<I", blob[8:12])[0]
    cfg = NetConfig.from_json(blob[12 : 12 + cfg_len].decode())
    net = SigmaNet(cfg)
    offset = 12 + cfg_len
    for p in net.parameters():
        nbytes = p.size * 8
        chunk = blob[offset : offset + nbytes]
        if len(chunk) != nbytes:
            raise ValueError(f"{path.name}: truncated weights file")
        p[...] = np.frombuffer(chunk, dtype="<f8").reshape(p.shape)
        offset += nbytes
    if offset != len(blob):
        raise ValueError(f"{path.name}: trailing bytes in weights file")
    return net
