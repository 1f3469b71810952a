"""Datasets: the six-ridge toy grid, MNIST IDX ingestion, splits and batching."""
from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
_IDX_DTYPES = {0x08: np.uint8, 0x09: np.int8, 0x0B: ">i2", 0x0C: ">i4", 0x0D: ">f4", 0x0E: ">f8"}

MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


class IngestionError(ValueError):
    pass


# ---------------------------------------------------------------------------
# toy grid distribution


@dataclass(frozen=True)
class ToyComponent:
    axis: int            # axis carrying the uniform factor; the other axis is Gaussian
    bias: tuple[float, float]


@dataclass(frozen=True)
class ToySpec:
    """Six ridges: three horizontal (uniform in x) and three vertical (uniform in y).

    The ridge with index ``dropout_component`` loses every point whose x
    falls inside ``dropout``.
    """

    components: tuple[ToyComponent, ...] = (
        ToyComponent(0, (0.0, 0.0)),
        ToyComponent(0, (0.0, -3.0)),
        ToyComponent(0, (0.0, 3.0)),
        ToyComponent(1, (0.0, 0.0)),
        ToyComponent(1, (3.0, 0.0)),
        ToyComponent(1, (-3.0, 0.0)),
    )
    half_width: float = 10.0
    ridge_std: float = 0.1
    dropout_component: int = 2
    dropout: tuple[float, float] = (1.6, 2.6)

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self.components), 1.0 / len(self.components))

    @property
    def dropped_fraction(self) -> float:
        """Fraction of the mixture removed by rejection: w_t3 * (dropout length / support length)."""
        lo, hi = self.dropout
        return self.weights[self.dropout_component] * (hi - lo) / (2.0 * self.half_width)

    @property
    def accepted_weights(self) -> np.ndarray:
        """Component frequencies after rejection.

        A draw is (component, point); rejecting the pair and redrawing both
        scales each weight by its acceptance probability and renormalizes:
        w_j' = w_j a_j / (1 - dropped_fraction), with a_j = 1 except for
        the dropout ridge, where a = 1 - (dropout length) / (support length).
        """
        lo, hi = self.dropout
        accept = np.ones(len(self.components))
        accept[self.dropout_component] -= (hi - lo) / (2.0 * self.half_width)
        return self.weights * accept / (1.0 - self.dropped_fraction)


def _toy_draw(spec: ToySpec, rng: np.random.Generator, n: int) -> tuple[np.ndarray, np.ndarray]:
    comp = rng.integers(0, len(spec.components), size=n)
    uniform = rng.uniform(-spec.half_width, spec.half_width, size=n)
    gauss = rng.normal(0.0, spec.ridge_std, size=n)
    axis = np.array([c.axis for c in spec.components])[comp]
    bias = np.array([c.bias for c in spec.components])[comp]
    pts = np.where(axis[:, None] == 0, np.stack([uniform, gauss], 1), np.stack([gauss, uniform], 1))
    return pts + bias, comp


def toy_sample(spec: ToySpec, n: int, seed: int, return_components: bool = False):
    """Rejection sampler: redraw (component, point) pairs that land in the dropout window."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = spec.dropout
    points, comps, have = [], [], 0
    while have < n:
        pts, comp = _toy_draw(spec, rng, n - have + 64)
        keep = ~((comp == spec.dropout_component) & (pts[:, 0] > lo) & (pts[:, 0] < hi))
        points.append(pts[keep])
        comps.append(comp[keep])
        have += int(keep.sum())
    points = np.concatenate(points)[:n]
    comps = np.concatenate(comps)[:n]
    return (points, comps) if return_components else points


def _normal_logpdf(x, std):
    return -0.5 * (x / std) ** 2 - math.log(std) - 0.5 * math.log(2.0 * math.pi)


def toy_component_log_densities(spec: ToySpec, points) -> np.ndarray:
    """Log of each ridge's density (before mixing), shape ``[n, 6]``; dropout ridge renormalized."""
    pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
    lo, hi = spec.dropout
    w = spec.half_width
    out = np.empty((pts.shape[0], len(spec.components)))
    for j, c in enumerate(spec.components):
        u = pts[:, c.axis] - c.bias[c.axis]
        g = pts[:, 1 - c.axis] - c.bias[1 - c.axis]
        support = (u > -w) & (u < w)
        length = 2.0 * w
        if j == spec.dropout_component:
            support &= ~((pts[:, 0] > lo) & (pts[:, 0] < hi))
            length -= hi - lo
        with np.errstate(divide="ignore"):
            out[:, j] = np.where(support, -math.log(length), -np.inf) + _normal_logpdf(g, spec.ridge_std)
    return out


def toy_log_density(spec: ToySpec, points) -> np.ndarray:
    """Exact log-density of :func:`toy_sample`'s output law. Accepts one point or ``[n, 2]``."""
    comp = toy_component_log_densities(spec, points)
    with np.errstate(divide="ignore"):
        terms = comp + np.log(spec.accepted_weights)
    m = terms.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = m[:, 0] + np.log(np.exp(terms - m).sum(axis=1))
    return out[0] if np.ndim(points) == 1 else out


def toy_bin_probabilities(spec: ToySpec, edges_x: np.ndarray, edges_y: np.ndarray) -> np.ndarray:
    """Exact probability mass of each rectangular bin, via per-axis CDFs."""
    from scipy.stats import norm

    lo, hi = spec.dropout
    w = spec.half_width
    probs = np.zeros((len(edges_x) - 1, len(edges_y) - 1))
    for j, (c, wt) in enumerate(zip(spec.components, spec.accepted_weights)):
        per_axis = []
        for axis, edges in enumerate((edges_x, edges_y)):
            e = edges - c.bias[axis]
            if axis == c.axis:
                clipped = np.clip(e, -w, w)
                cdf = clipped + w
                length = 2.0 * w
                if j == spec.dropout_component:
                    # dropout window is in absolute x; the uniform axis is x here
                    cdf = cdf - np.clip(e, lo, hi) + lo
                    length -= hi - lo
                cdf = cdf / length
            else:
                cdf = norm.cdf(e / spec.ridge_std)
            per_axis.append(np.diff(cdf))
        probs += wt * np.outer(per_axis[0], per_axis[1])
    return probs


def write_points_csv(path, points: np.ndarray, header=("x1", "x2")) -> None:
    points = np.atleast_2d(points)
    with open(path, "w") as f:
        f.write(",".join(header) + "\n")
        for row in points:
            f.write(",".join(repr(float(v)) for v in row) + "\n")


def read_points_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path) as f:
        header = f.readline().strip().split(",")
        rows = [[float(v) for v in line.split(",")] for line in f if line.strip()]
    data = np.array(rows, dtype=np.float64).reshape(-1, len(header))
    return header, data


# ---------------------------------------------------------------------------
# splits and normalization


@dataclass(frozen=True)
class Normalization:
    """``normalized = raw * scale + offset``."""

    scale: float = 1.0
    offset: float = 0.0

    def normalize(self, x):
        return np.asarray(x, dtype=np.float64) * self.scale + self.offset

    def denormalize(self, y):
        return (np.asarray(y, dtype=np.float64) - self.offset) / self.scale


@dataclass
class SplitDataset:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    provenance: str = ""
    normalization: Normalization = field(default_factory=Normalization)
    image_shape: tuple[int, ...] | None = None

    def partition(self, name: str) -> np.ndarray:
        if name not in ("train", "validation", "test"):
            raise KeyError(f"unknown partition {name!r}")
        return getattr(self, name)


def split_rows(data: np.ndarray, validation: int, test: int, seed: int) -> tuple[np.ndarray, ...]:
    """Seeded disjoint train/validation/test partition of the rows of ``data``."""
    if validation + test > len(data):
        raise ValueError(f"cannot carve {validation}+{test} held-out rows from {len(data)}")
    perm = np.random.default_rng(seed).permutation(len(data))
    te = perm[:test]
    va = perm[test:test + validation]
    tr = perm[test + validation:]
    return data[tr], data[va], data[te]


def batch_iter(data: np.ndarray, batch_size: int, seed: int, epoch: int = 0) -> Iterator[np.ndarray]:
    """One epoch of shuffled batches; the last batch may be short."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    perm = np.random.default_rng([seed, epoch]).permutation(len(data))
    for lo in range(0, len(data), batch_size):
        yield data[perm[lo:lo + batch_size]]


# ---------------------------------------------------------------------------
# IDX


def _open_maybe_gz(path: Path) -> bytes:
    if path.suffix == ".gz":
        with gzip.open(path, "rb") as f:
            return f.read()
    with open(path, "rb") as f:
        return f.read()


def parse_idx(raw: bytes, expected_magic: int | None = None) -> np.ndarray:
    if len(raw) < 4:
        raise IngestionError("IDX header truncated")
    magic = struct.unpack(">I", raw[:4])[0]
    if expected_magic is not None and magic != expected_magic:
        raise IngestionError(f"bad IDX magic 0x{magic:08x}, expected 0x{expected_magic:08x}")
    if magic >> 16 != 0 or (magic >> 8) & 0xFF not in _IDX_DTYPES:
        raise IngestionError(f"bad IDX magic 0x{magic:08x}")
    dtype = np.dtype(_IDX_DTYPES[(magic >> 8) & 0xFF])
    rank = magic & 0xFF
    header = 4 + 4 * rank
    if len(raw) < header:
        raise IngestionError("IDX dimension header truncated")
    dims = struct.unpack(f">{rank}I", raw[4:header])
    count = int(np.prod(dims)) if rank else 1
    need = header + count * dtype.itemsize
    if len(raw) != need:
        kind = "truncated" if len(raw) < need else "has trailing bytes"
        raise IngestionError(f"IDX payload {kind}: {len(raw)} bytes, expected {need}")
    return np.frombuffer(raw, dtype=dtype, count=count, offset=header).reshape(dims)


def read_idx(path, expected_magic: int | None = None) -> np.ndarray:
    path = Path(path)
    return parse_idx(_open_maybe_gz(path), expected_magic)


def write_idx(path, array: np.ndarray) -> None:
    array = np.ascontiguousarray(array, dtype=np.uint8)
    magic = (0x08 << 8) | array.ndim
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())


def _find_mnist_file(root: Path, stem: str) -> Path:
    for cand in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
        if (root / cand).exists():
            return root / cand
    raise FileNotFoundError(f"no {stem}[.gz] under {root}")


def mnist_load(path, validation_size: int = 10_000, train_size: int | None = None,
               test_size: int | None = None, seed: int = 0) -> SplitDataset:
    """Load the four MNIST IDX files under ``path`` as [0, 1] pixel rows.

    Validation rows are carved from the training file; ``train_size`` and
    ``test_size`` optionally subsample the remaining partitions.
    """
    root = Path(path)
    arrays = {}
    for key, stem in MNIST_FILES.items():
        magic = IDX_IMAGES_MAGIC if key.endswith("images") else IDX_LABELS_MAGIC
        arrays[key] = read_idx(_find_mnist_file(root, stem), magic)
    for split in ("train", "test"):
        imgs, labels = arrays[f"{split}_images"], arrays[f"{split}_labels"]
        if imgs.shape[0] != labels.shape[0]:
            raise IngestionError(f"{split}: {imgs.shape[0]} images but {labels.shape[0]} labels")
    image_shape = arrays["train_images"].shape[1:]
    if arrays["test_images"].shape[1:] != image_shape:
        raise IngestionError("train and test image shapes differ")
    norm = Normalization(scale=1.0 / 255.0)
    train_all = norm.normalize(arrays["train_images"].reshape(len(arrays["train_images"]), -1))
    test = norm.normalize(arrays["test_images"].reshape(len(arrays["test_images"]), -1))
    if validation_size >= len(train_all):
        raise IngestionError(f"validation_size {validation_size} >= training rows {len(train_all)}")
    perm = np.random.default_rng(seed).permutation(len(train_all))
    validation = train_all[perm[:validation_size]]
    train = train_all[perm[validation_size:]]
    if train_size is not None:
        train = train[:train_size]
    if test_size is not None:
        test = test[:test_size]
    return SplitDataset(train, validation, test, provenance=f"mnist:{os.fspath(root)}",
                        normalization=norm, image_shape=tuple(image_shape))


def read_pgm(path) -> np.ndarray:
    """Binary (P5) greyscale PGM with maxval <= 255."""
    with open(path, "rb") as f:
        raw = f.read()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos)
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos])
    if tokens[0] != b"P5":
        raise IngestionError(f"{path}: not a binary PGM")
    width, height, maxval = (int(t) for t in tokens[1:])
    if maxval > 255:
        raise IngestionError(f"{path}: 16-bit PGM not supported")
    pixels = raw[pos + 1:pos + 1 + width * height]
    if len(pixels) != width * height:
        raise IngestionError(f"{path}: truncated pixel data")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(height, width)


def image_folder_load(path, image_shape: tuple[int, int], validation_size: int,
                      test_size: int, seed: int = 0) -> SplitDataset:
    """Every ``*.pgm`` under ``path`` (sorted), scaled to [0, 1] and split at random."""
    files = sorted(Path(path).glob("*.pgm"))
    if not files:
        raise IngestionError(f"no .pgm files under {path}")
    images = []
    for f in files:
        img = read_pgm(f)
        if img.shape != tuple(image_shape):
            raise IngestionError(f"{f}: shape {img.shape}, expected {tuple(image_shape)}")
        images.append(img.reshape(-1))
    norm = Normalization(scale=1.0 / 255.0)
    rows = norm.normalize(np.stack(images))
    train, validation, test = split_rows(rows, validation_size, test_size, seed)
    return SplitDataset(train, validation, test, provenance=f"image_folder:{os.fspath(path)}",
                        normalization=norm, image_shape=tuple(image_shape))
