"""Three-class patch classifier: a small convolutional network in plain numpy.

Four 3x3 convolution blocks (32/64/128/256 filters, same padding) with
2x2 max pooling, a global spatial max, dropout, and two dense layers
ending in softmax over {junction, terminal, false}. Forward, backward,
and the Adam update are all explicit so every gradient can be checked
against finite differences.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .errors import WeightFormatError

LABELS = ("junction", "terminal", "false")

CONV_LAYOUT = (("conv1", 1, 32), ("conv2", 32, 64), ("conv3", 64, 128), ("conv4", 128, 256))
DENSE_LAYOUT = (("dense1", 256, 128), ("dense2", 128, 3))

WEIGHT_MAGIC = b"TMCW"
WEIGHT_VERSION = 1
_DTYPE_F32 = 0


# ---------------------------------------------------------------- layers

def conv3x3_forward(x, w, b):
    """Same-padded stride-1 3x3 convolution. x: (N, C, H, W), w: (O, C, 3, 3)."""
    n, c, h, wd = x.shape
    o = w.shape[0]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    cols = np.empty((n, c, 9, h, wd), dtype=x.dtype)
    k = 0
    for dy in range(3):
        for dx in range(3):
            cols[:, :, k] = xp[:, :, dy:dy + h, dx:dx + wd]
            k += 1
    flat = cols.reshape(n, c * 9, h * wd).transpose(1, 0, 2).reshape(c * 9, n * h * wd)
    y = (w.reshape(o, c * 9) @ flat).reshape(o, n, h * wd).transpose(1, 0, 2)
    y = y.reshape(n, o, h, wd) + b[None, :, None, None]
    return y, (flat, x.shape, w)


def conv3x3_backward(dy, cache):
    flat, xshape, w = cache
    n, c, h, wd = xshape
    o = w.shape[0]
    dyf = dy.reshape(n, o, h * wd).transpose(1, 0, 2).reshape(o, n * h * wd)
    dwf = dyf @ flat.T
    db = dy.sum(axis=(0, 2, 3))
    dflat = w.reshape(o, c * 9).T @ dyf
    dcols = dflat.reshape(c * 9, n, h * wd).transpose(1, 0, 2).reshape(n, c, 9, h, wd)
    dxp = np.zeros((n, c, h + 2, wd + 2), dtype=dy.dtype)
    k = 0
    for dyy in range(3):
        for dxx in range(3):
            dxp[:, :, dyy:dyy + h, dxx:dxx + wd] += dcols[:, :, k]
            k += 1
    return dxp[:, :, 1:-1, 1:-1], dwf.reshape(w.shape), db


def maxpool2_forward(x):
    """2x2 stride-2 max pool; odd trailing rows/columns are dropped."""
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    win = x[:, :, :h2 * 2, :w2 * 2].reshape(n, c, h2, 2, w2, 2)
    win = win.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2, w2, 4)
    idx = win.argmax(axis=-1)
    y = np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def maxpool2_backward(dy, cache):
    idx, xshape = cache
    n, c, h, w = xshape
    h2, w2 = h // 2, w // 2
    dwin = np.zeros((n, c, h2, w2, 4), dtype=dy.dtype)
    np.put_along_axis(dwin, idx[..., None], dy[..., None], axis=-1)
    dx = np.zeros(xshape, dtype=dy.dtype)
    dx[:, :, :h2 * 2, :w2 * 2] = (
        dwin.reshape(n, c, h2, w2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h2 * 2, w2 * 2))
    return dx


def global_maxpool_forward(x):
    n, c, h, w = x.shape
    flat = x.reshape(n, c, h * w)
    idx = flat.argmax(axis=-1)
    y = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return y, (idx, x.shape)


def global_maxpool_backward(dy, cache):
    idx, xshape = cache
    n, c, h, w = xshape
    dflat = np.zeros((n, c, h * w), dtype=dy.dtype)
    np.put_along_axis(dflat, idx[..., None], dy[..., None], axis=-1)
    return dflat.reshape(xshape)


def relu_forward(x):
    return np.maximum(x, 0), x > 0


def relu_backward(dy, mask):
    return dy * mask


def dense_forward(x, w, b):
    """x: (N, I), w: (O, I)."""
    return x @ w.T + b, (x, w)


def dense_backward(dy, cache):
    x, w = cache
    return dy @ w, dy.T @ x, dy.sum(axis=0)


def dropout_forward(x, rate, rng):
    """Inverted dropout: surviving units scaled so inference needs no rescale."""
    if rate == 0.0:
        return x, None
    keep = rng.random(x.shape) >= rate
    return x * keep / (1.0 - rate), keep


def dropout_backward(dy, keep, rate):
    if keep is None:
        return dy
    return dy * keep / (1.0 - rate)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax_cross_entropy(logits, onehot):
    """Mean cross-entropy and its gradient wrt logits."""
    probs = softmax(logits)
    n = logits.shape[0]
    loss = float(-(onehot * np.log(np.clip(probs, 1e-12, None))).sum() / n)
    dlogits = (probs - onehot) / n
    return loss, probs, dlogits.astype(logits.dtype)


# ---------------------------------------------------------------- model

class CnnModel:
    """Parameter container plus forward/backward over the fixed layout."""

    def __init__(self, seed: int = 0, dropout_rate: float = 0.5, dtype=np.float32):
        self.dropout_rate = float(dropout_rate)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.params: dict[str, np.ndarray] = {}
        for name, cin, cout in CONV_LAYOUT:
            std = np.sqrt(2.0 / (cin * 9))
            self.params[name + "_w"] = (rng.standard_normal((cout, cin, 3, 3)) * std).astype(self.dtype)
            self.params[name + "_b"] = np.zeros(cout, dtype=self.dtype)
        for name, fin, fout in DENSE_LAYOUT:
            std = np.sqrt(2.0 / fin)
            self.params[name + "_w"] = (rng.standard_normal((fout, fin)) * std).astype(self.dtype)
            self.params[name + "_b"] = np.zeros(fout, dtype=self.dtype)

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def _prepare(self, patches) -> np.ndarray:
        x = np.asarray(patches, dtype=self.dtype)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3:
            raise ValueError(f"patches must be (N, H, W), got shape {x.shape}")
        return x[:, None]

    def forward(self, patches, train_mode: bool = False, rng=None):
        """Class probabilities, shape (N, 3). Dropout only in train mode."""
        x = self._prepare(patches)
        p = self.params
        for name, _, _ in CONV_LAYOUT:
            x, _ = conv3x3_forward(x, p[name + "_w"], p[name + "_b"])
            x, _ = relu_forward(x)
            if name != "conv4":
                x, _ = maxpool2_forward(x)
        x, _ = global_maxpool_forward(x)
        if train_mode and self.dropout_rate > 0.0:
            if rng is None:
                raise ValueError("train-mode forward with dropout needs an rng")
            x, _ = dropout_forward(x, self.dropout_rate, rng)
        x, _ = dense_forward(x, p["dense1_w"], p["dense1_b"])
        x, _ = relu_forward(x)
        logits, _ = dense_forward(x, p["dense2_w"], p["dense2_b"])
        return softmax(logits)

    def loss_and_grads(self, patches, onehot, rng=None):
        """Mean cross-entropy and gradients for every parameter tensor."""
        x = self._prepare(patches)
        y = np.asarray(onehot, dtype=self.dtype)
        if y.shape != (x.shape[0], 3):
            raise ValueError(f"labels shape {y.shape} does not match batch {x.shape[0]}")
        p = self.params
        caches = []
        for name, _, _ in CONV_LAYOUT:
            x, ccache = conv3x3_forward(x, p[name + "_w"], p[name + "_b"])
            x, rmask = relu_forward(x)
            pcache = None
            if name != "conv4":
                x, pcache = maxpool2_forward(x)
            caches.append((ccache, rmask, pcache))
        x, gcache = global_maxpool_forward(x)
        if self.dropout_rate > 0.0:
            if rng is None:
                raise ValueError("training forward with dropout needs an rng")
            x, keep = dropout_forward(x, self.dropout_rate, rng)
        else:
            keep = None
        x, d1cache = dense_forward(x, p["dense1_w"], p["dense1_b"])
        x, d1mask = relu_forward(x)
        logits, d2cache = dense_forward(x, p["dense2_w"], p["dense2_b"])
        loss, _, dlogits = softmax_cross_entropy(logits, y)

        grads: dict[str, np.ndarray] = {}
        dx, grads["dense2_w"], grads["dense2_b"] = dense_backward(dlogits, d2cache)
        dx = relu_backward(dx, d1mask)
        dx, grads["dense1_w"], grads["dense1_b"] = dense_backward(dx, d1cache)
        dx = dropout_backward(dx, keep, self.dropout_rate)
        dx = global_maxpool_backward(dx, gcache)
        for name, _, _ in reversed(CONV_LAYOUT):
            ccache, rmask, pcache = caches.pop()
            if pcache is not None:
                dx = maxpool2_backward(dx, pcache)
            dx = relu_backward(dx, rmask)
            dx, grads[name + "_w"], grads[name + "_b"] = conv3x3_backward(dx, ccache)
        return loss, grads


def classify(model: CnnModel, patch) -> tuple[str, np.ndarray]:
    """Argmax class of one patch; exact ties go to the earlier class."""
    probs = model.forward(patch)[0]
    return LABELS[int(np.argmax(probs))], probs


class Adam:
    """Bias-corrected Adam on a model's parameter dict."""

    def __init__(self, model: CnnModel, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.model = model
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in model.params.items()}
        self.v = {k: np.zeros_like(v) for k, v in model.params.items()}

    def step(self, grads: dict):
        if set(grads) != set(self.model.params):
            raise ValueError("gradient names do not match model parameters")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for k, p in self.model.params.items():
            g = grads[k]
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != param shape {p.shape} for {k}")
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            mhat = self.m[k] / (1 - b1 ** self.t)
            vhat = self.v[k] / (1 - b2 ** self.t)
            p -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(p.dtype)


def augment(patch: np.ndarray, rng) -> np.ndarray:
    """Rotate by a random multiple of 90 degrees (pure index permutation)."""
    return np.rot90(patch, k=int(rng.integers(0, 4)))


@dataclass
class TrainConfig:
    epochs: int = 20
    lr: float = 1e-3
    batch_size: int = 64
    seed: int = 0
    augment: bool = True
    val_fraction: float = 0.1
    dropout_rate: float = 0.5

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not 0.0 < self.val_fraction < 1.0:
            raise ValueError("validation fraction must be in (0, 1)")


def _onehot(labels: np.ndarray) -> np.ndarray:
    out = np.zeros((labels.size, 3), dtype=np.float32)
    out[np.arange(labels.size), labels] = 1.0
    return out


def train(patches, labels, config: TrainConfig | None = None, log=None):
    """Adam training with a stratified validation split.

    patches: (N, 50, 50) floats; labels: (N,) ints indexing LABELS.
    Returns (model holding the best-validation-accuracy weights, history),
    history being one dict per epoch with train_loss and val_acc.
    """
    cfg = config or TrainConfig()
    patches = np.asarray(patches, dtype=np.float32)
    labels = np.asarray(labels)
    for ci, name in enumerate(LABELS):
        if int((labels == ci).sum()) < 2:
            raise ValueError(f"class {name!r} needs at least 2 samples")

    rng = np.random.default_rng(cfg.seed)
    val_idx = []
    train_idx = []
    for ci in range(len(LABELS)):
        idx = np.nonzero(labels == ci)[0]
        idx = idx[rng.permutation(idx.size)]
        n_val = max(1, int(round(cfg.val_fraction * idx.size)))
        val_idx.append(idx[:n_val])
        train_idx.append(idx[n_val:])
    val_idx = np.concatenate(val_idx)
    train_idx = np.concatenate(train_idx)

    model = CnnModel(seed=cfg.seed, dropout_rate=cfg.dropout_rate)
    opt = Adam(model, lr=cfg.lr)
    val_x = patches[val_idx]
    val_y = labels[val_idx]

    best_acc = -1.0
    best_params = model.copy_params()
    history = []
    for epoch in range(cfg.epochs):
        order = train_idx[rng.permutation(train_idx.size)]
        losses = []
        for b0 in range(0, order.size, cfg.batch_size):
            batch = order[b0:b0 + cfg.batch_size]
            bx = patches[batch]
            if cfg.augment:
                bx = np.stack([augment(p, rng) for p in bx])
            loss, grads = model.loss_and_grads(bx, _onehot(labels[batch]), rng=rng)
            opt.step(grads)
            losses.append(loss)
        preds = predict_classes(model, val_x)
        val_acc = float((preds == val_y).mean())
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_acc": val_acc})
        if log is not None:
            log(history[-1])
        if val_acc > best_acc:
            best_acc = val_acc
            best_params = model.copy_params()
    model.params = best_params
    return model, history


def predict_classes(model: CnnModel, patches, batch_size: int = 256) -> np.ndarray:
    """Argmax class indices, computed in inference mode."""
    patches = np.asarray(patches, dtype=np.float32)
    out = np.empty(patches.shape[0], dtype=np.int64)
    for b0 in range(0, patches.shape[0], batch_size):
        probs = model.forward(patches[b0:b0 + batch_size])
        out[b0:b0 + probs.shape[0]] = probs.argmax(axis=1)
    return out


# ---------------------------------------------------------------- weights file

def save_weights(model: CnnModel, path) -> None:
    """Little-endian container: magic, version, tensor table, CRC32 trailer."""
    if model.dtype != np.float32:
        raise ValueError("only float32 models are serializable")
    blob = bytearray()
    blob += WEIGHT_MAGIC
    blob += struct.pack("<I", WEIGHT_VERSION)
    blob += struct.pack("<I", len(model.params))
    for name in sorted(model.params):
        arr = model.params[name]
        enc = name.encode("utf-8")
        blob += struct.pack("<H", len(enc))
        blob += enc
        blob += struct.pack("<BB", _DTYPE_F32, arr.ndim)
        for d in arr.shape:
            blob += struct.pack("<I", d)
        blob += np.ascontiguousarray(arr, dtype="<f4").tobytes()
    blob += struct.pack("<I", zlib.crc32(bytes(blob)) & 0xFFFFFFFF)
    with open(path, "wb") as fh:
        fh.write(bytes(blob))


def load_weights(path) -> CnnModel:
    with open(path, "rb") as fh:
        blob = fh.read()

    def need(offset, count, what):
        if offset + count > len(blob):
            raise WeightFormatError(f"truncated while reading {what}", offset)
        return blob[offset:offset + count]

    if need(0, 4, "magic") != WEIGHT_MAGIC:
        raise WeightFormatError(f"bad magic {blob[:4]!r}", 0)
    (version,) = struct.unpack("<I", need(4, 4, "version"))
    if version != WEIGHT_VERSION:
        raise WeightFormatError(f"unsupported version {version}", 4)
    (count,) = struct.unpack("<I", need(8, 4, "tensor count"))
    off = 12
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", need(off, 2, "name length"))
        off += 2
        name = need(off, nlen, "tensor name").decode("utf-8")
        off += nlen
        dtype_code, rank = struct.unpack("<BB", need(off, 2, f"{name} header"))
        if dtype_code != _DTYPE_F32:
            raise WeightFormatError(f"unknown dtype code {dtype_code} for {name}", off)
        off += 2
        dims = []
        for _ in range(rank):
            (d,) = struct.unpack("<I", need(off, 4, f"{name} dims"))
            dims.append(d)
            off += 4
        nbytes = 4 * int(np.prod(dims, dtype=np.int64)) if dims else 4
        raw = need(off, nbytes, f"values of tensor {name!r}")
        tensors[name] = np.frombuffer(raw, dtype="<f4").reshape(dims).copy()
        off += nbytes
    (stored_crc,) = struct.unpack("<I", need(off, 4, "checksum"))
    actual = zlib.crc32(blob[:off]) & 0xFFFFFFFF
    if stored_crc != actual:
        raise WeightFormatError(
            f"checksum mismatch: stored {stored_crc:#010x}, computed {actual:#010x}", off)

    model = CnnModel(seed=0)
    expected = {k: v.shape for k, v in model.params.items()}
    got = {k: v.shape for k, v in tensors.items()}
    if expected != got:
        missing = sorted(set(expected) - set(got))
        extra = sorted(set(got) - set(expected))
        shapes = sorted(k for k in expected.keys() & got.keys() if expected[k] != got[k])
        raise WeightFormatError(
            f"tensor set mismatch (missing {missing}, extra {extra}, bad shapes {shapes})", 12)
    model.params = {k: v.astype(np.float32) for k, v in tensors.items()}
    return model
