"""Dataset generation and file formats.

The synthetic generator draws one parametric texture per class (blob,
vertical stripes, horizontal stripes, checkerboard) with per-sample
amplitude jitter and pixel noise, so classes are separable by a linear
probe yet leave a CNN something to learn.

The native on-disk format is PNSD: a fixed little-endian binary with a
small header followed by (label, float32 pixels) records.  CSV and IDX
(MNIST-layout) loaders cover external data.
"""

import struct

import numpy as np

from .errors import ContractError, ShapeError, UsageError
from .network import Dataset

PNSD_MAGIC = b"PNSD"
PNSD_VERSION = 1


def _class_pattern(k, c, h, w):
    """Deterministic base texture for class k, shape (C, H, W)."""
    ys = np.linspace(-1.0, 1.0, h)[:, None]
    xs = np.linspace(-1.0, 1.0, w)[None, :]
    kind = k % 4
    level = k // 4  # extra classes recolor/refreq the same four textures
    freq = 3.0 + level
    if kind == 0:
        cx, cy = -0.4, -0.4
        plane = np.exp(-((xs - cx) ** 2 + (ys - cy) ** 2) / (2 * 0.35**2))
    elif kind == 1:
        plane = np.sin(np.pi * freq * xs) * np.ones_like(ys)
    elif kind == 2:
        plane = np.sin(np.pi * freq * ys) * np.ones_like(xs)
    else:
        plane = np.sin(np.pi * freq * xs) * np.sin(np.pi * freq * ys)
    # distinct channel mix per class so color carries signal too
    mix = np.array([1.0, 0.4, -0.6])
    mix = np.roll(mix, k % max(c, 1))[:c]
    if c > 3:
        mix = np.resize(mix, c)
    return mix[:, None, None] * plane[None, :, :]


def gen_synthetic(classes, per_class, dims=(3, 14, 14), seed=0, noise=0.35):
    """Build a synthetic classification dataset, float32 pixels.

    Deterministic in (classes, per_class, dims, seed, noise); samples
    are laid out class-major so equal specs give byte-identical files.
    """
    if classes < 1 or per_class < 1:
        raise ContractError("classes and per_class must be at least 1")
    c, h, w = (int(d) for d in dims)
    rng = np.random.default_rng(np.random.SeedSequence((int(seed), 7)))
    n = classes * per_class
    x = np.empty((n, c, h, w), dtype=np.float32)
    y = np.empty(n, dtype=np.int64)
    row = 0
    for k in range(classes):
        base = _class_pattern(k, c, h, w)
        amp = rng.uniform(0.8, 1.2, size=per_class)
        jitter = rng.normal(0.0, noise, size=(per_class, c, h, w))
        x[row : row + per_class] = amp[:, None, None, None] * base[None] + jitter
        y[row : row + per_class] = k
        row += per_class
    return Dataset(x=x.astype(np.float64), y=y, classes=classes)


def nearest_centroid_accuracy(data):
    """Self-check: classify each sample by the nearest class centroid."""
    flat = data.x.reshape(data.n, -1)
    centroids = np.stack(
        [flat[data.y == k].mean(axis=0) for k in range(data.classes)]
    )
    d2 = ((flat[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float((d2.argmin(axis=1) == data.y).mean())


# ---------------------------------------------------------------------------
# PNSD binary format

_HEADER = struct.Struct("<4sHIHHHH")  # magic, version, count, classes, C, H, W


def save_pnsd(path, data):
    n = data.n
    c, h, w = data.x.shape[1:]
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(PNSD_MAGIC, PNSD_VERSION, n, data.classes, c, h, w))
        labels = data.y.astype("<u2")
        pixels = data.x.astype("<f4").reshape(n, -1)
        for i in range(n):
            fh.write(labels[i].tobytes())
            fh.write(pixels[i].tobytes())


def load_pnsd(path):
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise UsageError(f"{path}: truncated header")
        magic, version, n, classes, c, h, w = _HEADER.unpack(head)
        if magic != PNSD_MAGIC:
            raise UsageError(f"{path}: not a PNSD dataset file")
        if version != PNSD_VERSION:
            raise UsageError(f"{path}: unsupported PNSD version {version}")
        rec = 2 + 4 * c * h * w
        raw = fh.read()
    if len(raw) != n * rec:
        raise UsageError(f"{path}: expected {n * rec} record bytes, got {len(raw)}")
    rows = np.frombuffer(raw, dtype=np.uint8).reshape(n, rec)
    y = np.ascontiguousarray(rows[:, :2]).view("<u2").ravel().astype(np.int64)
    x = np.ascontiguousarray(rows[:, 2:]).view("<f4").reshape(n, c, h, w)
    return Dataset(x=x.astype(np.float64), y=y, classes=classes)


# ---------------------------------------------------------------------------
# external loaders


def load_csv(path, dims, classes=None):
    """Rows of label,pixel,pixel,...; pixels row-major over (C,H,W)."""
    c, h, w = (int(d) for d in dims)
    table = np.loadtxt(path, delimiter=",", ndmin=2)
    if table.shape[1] != 1 + c * h * w:
        raise ShapeError(
            f"{path}: rows have {table.shape[1]} fields, expected {1 + c * h * w}"
        )
    y = table[:, 0].astype(np.int64)
    x = table[:, 1:].reshape(-1, c, h, w)
    k = classes if classes is not None else int(y.max()) + 1
    return Dataset(x=x, y=y, classes=k)


def load_idx(images_path, labels_path):
    """MNIST-layout IDX pair: u8 images (N,H,W) and u8 labels (N,)."""
    with open(images_path, "rb") as fh:
        magic, n, h, w = struct.unpack(">IIII", fh.read(16))
        if magic != 0x00000803:
            raise UsageError(f"{images_path}: bad IDX image magic {magic:#x}")
        img = np.frombuffer(fh.read(), dtype=np.uint8)
    with open(labels_path, "rb") as fh:
        magic, nl = struct.unpack(">II", fh.read(8))
        if magic != 0x00000801:
            raise UsageError(f"{labels_path}: bad IDX label magic {magic:#x}")
        lab = np.frombuffer(fh.read(), dtype=np.uint8)
    if len(img) != n * h * w or len(lab) != n or n != nl:
        raise UsageError("IDX image/label sizes disagree")
    x = img.reshape(n, 1, h, w).astype(np.float64) / 255.0
    y = lab.astype(np.int64)
    return Dataset(x=x, y=y, classes=int(y.max()) + 1)
