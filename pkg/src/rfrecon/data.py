"""Dataset construction: synthetic sphere data and CIFAR-10 ingestion.

Every dataset row is normalized to the radius-sqrt(d) sphere, which the
training and reconstruction code assume throughout. CIFAR pixels go through
scale-to-[0,1] -> per-coordinate standardization with subset statistics ->
per-row renormalization; the inverse map is kept in the metadata so exported
images can be compared against the originals.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .linalg import as_matrix

CIFAR_RECORD_BYTES = 3073
CIFAR_PIXELS = 3072
CIFAR_CLASS_NAMES = [
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
]


class CifarFormatError(ValueError):
    """Byte stream is not a valid CIFAR-10 binary batch."""

    def __init__(self, message, offset=0):
        super().__init__(message)
        self.offset = offset


@dataclass
class Dataset:
    """Inputs on the sqrt(d)-sphere plus finite labels and provenance."""

    X: np.ndarray
    Y: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = as_matrix(self.X, "X")
        self.Y = np.asarray(self.Y, dtype=np.float64)
        if self.Y.ndim == 1:
            self.Y = self.Y.reshape(-1, 1)
        if self.Y.shape[0] != self.X.shape[0]:
            raise ValueError(
                f"Y has {self.Y.shape[0]} rows, X has {self.X.shape[0]}"
            )
        if not np.all(np.isfinite(self.Y)):
            raise ValueError("labels contain non-finite values")
        norms = np.linalg.norm(self.X, axis=1)
        target = np.sqrt(self.d)
        if np.max(np.abs(norms - target)) > 1e-8:
            raise ValueError(
                "dataset rows must have norm sqrt(d) "
                f"(worst deviation {np.max(np.abs(norms - target)):.3e})"
            )

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def k(self):
        return self.Y.shape[1]


def normalize_rows(X):
    """Rescale each row onto the radius-sqrt(d) sphere."""
    X = as_matrix(X, "X")
    d = X.shape[1]
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ValueError("cannot project a zero row onto the sphere")
    # divide by norm/sqrt(d) so the d=1 case lands exactly on +-1
    return X / (norms / np.sqrt(d))


def sphere_uniform(rng, n, d):
    """n rows drawn i.i.d. uniformly from the radius-sqrt(d) sphere."""
    if n < 1 or d < 1:
        raise ValueError(f"need n, d >= 1, got n={n}, d={d}")
    return normalize_rows(rng.normal((n, d)))


def noisy_linear_labels(rng, X, g=None, noise=None):
    """Labels Y = X g + eps with g_i ~ N(0, 1/d) and eps_i ~ N(0, 0.25).

    `g` and `noise` may be supplied directly (test hook); otherwise both are
    drawn from `rng`, independently of X.
    """
    X = as_matrix(X, "X")
    n, d = X.shape
    if g is None:
        g = rng.normal(d, std=1.0 / np.sqrt(d))
    if noise is None:
        noise = rng.normal(n, std=0.5)
    y = X @ np.asarray(g, dtype=np.float64) + np.asarray(noise, dtype=np.float64)
    return y.reshape(n, 1)


@dataclass(frozen=True)
class CifarRecord:
    """One CIFAR-10 example: class label plus 3072 plane-ordered pixel bytes."""

    label: int
    pixels: bytes

    def to_bytes(self):
        return bytes([self.label]) + self.pixels


def parse_cifar_batch(data):
    """Parse a CIFAR-10 binary batch into records, in file order."""
    if len(data) % CIFAR_RECORD_BYTES != 0:
        offset = len(data) - len(data) % CIFAR_RECORD_BYTES
        raise CifarFormatError(
            f"batch length {len(data)} is not a multiple of {CIFAR_RECORD_BYTES} "
            f"(trailing bytes start at offset {offset})",
            offset=offset,
        )
    records = []
    for offset in range(0, len(data), CIFAR_RECORD_BYTES):
        label = data[offset]
        if label > 9:
            raise CifarFormatError(
                f"label byte {label} out of range at offset {offset}", offset=offset
            )
        records.append(CifarRecord(label, bytes(data[offset + 1:offset + CIFAR_RECORD_BYTES])))
    return records


def serialize_cifar_records(records):
    return b"".join(r.to_bytes() for r in records)


def read_cifar_dir(path):
    """Records from the five training batches of a CIFAR-10 binary directory."""
    from pathlib import Path

    records = []
    for i in range(1, 6):
        batch = Path(path) / f"data_batch_{i}.bin"
        if not batch.exists():
            raise FileNotFoundError(f"missing CIFAR batch file {batch}")
        records.extend(parse_cifar_batch(batch.read_bytes()))
    return records


def _collect_by_class(records, wanted, per_class):
    """First `per_class` records of each wanted class, in scan order."""
    buckets = {c: [] for c in wanted}
    for rec in records:
        if rec.label in buckets and len(buckets[rec.label]) < per_class:
            buckets[rec.label].append(rec)
        if all(len(v) == per_class for v in buckets.values()):
            break
    short = {c: len(v) for c, v in buckets.items() if len(v) < per_class}
    if short:
        raise ValueError(
            f"not enough records: needed {per_class} per class, found {short}"
        )
    return buckets


def _standardize_pixels(chosen):
    """[0,1]-scaled pixels -> subset standardization -> sqrt(d)-sphere rows."""
    raw = np.stack([
        np.frombuffer(rec.pixels, dtype=np.uint8).astype(np.float64) / 255.0
        for rec in chosen
    ])
    mean = raw.mean(axis=0)
    std = np.maximum(raw.std(axis=0), 1e-6)
    standardized = (raw - mean) / std
    row_norms = np.linalg.norm(standardized, axis=1)
    X = normalize_rows(standardized)
    normalization = {
        "pixel_mean": mean.tolist(),
        "pixel_std": std.tolist(),
        "row_norms": row_norms.tolist(),
    }
    return X, normalization


def build_cifar_subset(records, class_a, class_b, n):
    """Balanced binary subset: first n/2 of class_a (label -1), then class_b (+1)."""
    if n < 2 or n % 2 != 0:
        raise ValueError(f"n must be even and >= 2, got {n}")
    per_class = n // 2
    buckets = _collect_by_class(records, (class_a, class_b), per_class)
    chosen = buckets[class_a] + buckets[class_b]
    X, normalization = _standardize_pixels(chosen)
    Y = np.concatenate([-np.ones(per_class), np.ones(per_class)]).reshape(n, 1)
    meta = {
        "source": "cifar-binary",
        "class_names": [CIFAR_CLASS_NAMES[class_a], CIFAR_CLASS_NAMES[class_b]],
        "classes": [int(class_a), int(class_b)],
        "normalization": normalization,
    }
    return Dataset(X=X, Y=Y, meta=meta)


def one_hot_labels(records, classes, per_class):
    """Balanced multi-class subset with 10-dimensional one-hot labels."""
    classes = list(classes)
    buckets = _collect_by_class(records, classes, per_class)
    chosen = [rec for c in classes for rec in buckets[c]]
    X, normalization = _standardize_pixels(chosen)
    Y = np.zeros((len(chosen), 10))
    for i, rec in enumerate(chosen):
        Y[i, rec.label] = 1.0
    meta = {
        "source": "cifar-onehot",
        "class_names": [CIFAR_CLASS_NAMES[c] for c in classes],
        "classes": [int(c) for c in classes],
        "normalization": normalization,
    }
    return Dataset(X=X, Y=Y, meta=meta)


def save_dataset(path, dataset):
    """JSON header line + raw little-endian float64 payload (X then Y)."""
    header = {
        "n": dataset.n,
        "d": dataset.d,
        "k": dataset.k,
        "meta": dataset.meta,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header).encode("utf-8") + b"\n")
        fh.write(np.ascontiguousarray(dataset.X, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(dataset.Y, dtype="<f8").tobytes())


def load_dataset(path):
    with open(path, "rb") as fh:
        header_line = fh.readline()
        try:
            header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise ValueError(f"{path}: malformed dataset header: {exc}") from None
        n, d, k = header["n"], header["d"], header["k"]
        payload = fh.read()
    x_bytes = n * d * 8
    if len(payload) != x_bytes + n * k * 8:
        raise ValueError(f"{path}: payload size does not match header dims")
    X = np.frombuffer(payload, dtype="<f8", count=n * d).astype(np.float64).reshape(n, d)
    Y = np.frombuffer(payload, dtype="<f8", count=n * k, offset=x_bytes)
    return Dataset(X=X, Y=Y.astype(np.float64).reshape(n, k), meta=header.get("meta", {}))


def row_to_rgb(row, meta, row_scale=None):
    """Render one dataset row as an HxWx3 uint8 image.

    CIFAR rows are denormalized with the stored subset statistics (using
    `row_scale`, the pre-normalization row norm, or the subset mean of those
    norms when the row is a reconstruction with no original scale). Other
    rows are min-max scaled to grayscale on a near-square canvas.
    """
    row = np.asarray(row, dtype=np.float64)
    d = row.shape[0]
    normalization = meta.get("normalization") if meta else None
    if normalization is not None and d == CIFAR_PIXELS:
        mean = np.asarray(normalization["pixel_mean"])
        std = np.asarray(normalization["pixel_std"])
        if row_scale is None:
            row_scale = float(np.mean(normalization["row_norms"]))
        standardized = row * (row_scale / np.sqrt(d))
        pixels = (standardized * std + mean) * 255.0
        planes = np.clip(np.rint(pixels), 0.0, 255.0).astype(np.uint8).reshape(3, 32, 32)
        return np.transpose(planes, (1, 2, 0))
    side = int(np.ceil(np.sqrt(d)))
    canvas = np.zeros(side * side)
    span = row.max() - row.min()
    canvas[:d] = (row - row.min()) / span * 255.0 if span > 0 else 127.0
    gray = np.clip(np.rint(canvas), 0.0, 255.0).astype(np.uint8).reshape(side, side)
    return np.stack([gray, gray, gray], axis=-1)


def write_ppm(path, image):
    """Write an HxWx3 uint8 array as a binary PPM (P6) file."""
    image = np.asarray(image, dtype=np.uint8)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"expected HxWx3 image, got shape {image.shape}")
    height, width = image.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{width} {height}\n255\n".encode("ascii"))
        fh.write(image.tobytes())


def image_grid(images, columns, pad=2):
    """Tile equally-sized HxWx3 images into one canvas, row-major."""
    if not images:
        raise ValueError("no images to tile")
    h, w = images[0].shape[:2]
    rows = (len(images) + columns - 1) // columns
    canvas = np.zeros((rows * (h + pad) - pad, columns * (w + pad) - pad, 3), dtype=np.uint8)
    for idx, img in enumerate(images):
        r, c = divmod(idx, columns)
        canvas[r * (h + pad):r * (h + pad) + h, c * (w + pad):c * (w + pad) + w] = img
    return canvas
