"""Datasets: IDX and NPZ loaders, a hermetic sprite generator, batching.

Images are float64 arrays of shape (n, C, H, W) with values in [0, 1].
Ground-truth generative factors ride along as a :class:`FactorTable` when
the dataset has them.
"""

import ast
import struct
import zipfile
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, FormatError, LengthError, ValidationError
from .metrics import FactorTable

IDX_IMAGES_MAGIC = 2051
IDX_LABELS_MAGIC = 2049

SPRITE_CARDINALITIES = (3, 6, 40, 32, 32)  # shape, scale, orientation, pos-x, pos-y


@dataclass
class Dataset:
    """Images plus optional ground-truth factors."""

    name: str
    images: np.ndarray
    factors: FactorTable | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 4:
            raise ContractError(f"images must be (n, C, H, W), got shape {self.images.shape}")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise ValidationError("pixel values must lie in [0, 1]")
        if self.factors is not None and self.factors.n != self.images.shape[0]:
            raise ContractError(
                f"{self.factors.n} factor rows for {self.images.shape[0]} images")

    @property
    def n(self) -> int:
        return self.images.shape[0]

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])


# ---------------------------------------------------------------------------
# IDX (big-endian) loader
# ---------------------------------------------------------------------------


def _read_idx_images(path):
    with open(path, "rb") as fh:
        head = fh.read(16)
        if len(head) < 16:
            raise LengthError(f"{path}: header truncated")
        magic, count, rows, cols = struct.unpack(">IIII", head)
        if magic != IDX_IMAGES_MAGIC:
            raise FormatError(f"{path}: bad magic {magic}, expected {IDX_IMAGES_MAGIC}")
        payload = fh.read()
    expected = count * rows * cols
    if len(payload) != expected:
        raise LengthError(f"{path}: {len(payload)} payload bytes, header promises {expected}")
    return np.frombuffer(payload, dtype=np.uint8).reshape(count, rows, cols)


def _read_idx_labels(path):
    with open(path, "rb") as fh:
        head = fh.read(8)
        if len(head) < 8:
            raise LengthError(f"{path}: header truncated")
        magic, count = struct.unpack(">II", head)
        if magic != IDX_LABELS_MAGIC:
            raise FormatError(f"{path}: bad magic {magic}, expected {IDX_LABELS_MAGIC}")
        payload = fh.read()
    if len(payload) != count:
        raise LengthError(f"{path}: {len(payload)} payload bytes, header promises {count}")
    return np.frombuffer(payload, dtype=np.uint8)


def load_mnist_idx(images_path, labels_path) -> Dataset:
    """Load an IDX image/label pair; pixels are scaled by 1/255.

    The single label column becomes a 10-way factor table.
    """
    images = _read_idx_images(images_path)
    labels = _read_idx_labels(labels_path)
    if images.shape[0] != labels.shape[0]:
        raise LengthError(
            f"image count {images.shape[0]} and label count {labels.shape[0]} differ")
    n, h, w = images.shape
    data = images.astype(np.float64).reshape(n, 1, h, w) / 255.0
    factors = FactorTable(labels.astype(np.int64).reshape(n, 1), (10,))
    return Dataset(name="mnist", images=data, factors=factors)


# ---------------------------------------------------------------------------
# NPZ loader (minimal NPY surface: u1 / little-endian i8, C order)
# ---------------------------------------------------------------------------

_NPY_MAGIC = b"\x93NUMPY"
_NPY_DTYPES = {"|u1": np.dtype(np.uint8), "<i8": np.dtype("<i8")}


def _parse_npy(blob: bytes, member: str) -> np.ndarray:
    if blob[:6] != _NPY_MAGIC:
        raise FormatError(f"{member}: bad NPY magic {blob[:6]!r}")
    if len(blob) < 10:
        raise LengthError(f"{member}: truncated NPY header")
    major, minor = blob[6], blob[7]
    if (major, minor) == (1, 0):
        (header_len,) = struct.unpack_from("<H", blob, 8)
        body = 10
    elif (major, minor) == (2, 0):
        (header_len,) = struct.unpack_from("<I", blob, 8)
        body = 12
    else:
        raise FormatError(f"{member}: unsupported NPY version {major}.{minor}")
    header = blob[body : body + header_len].decode("latin1")
    try:
        info = ast.literal_eval(header)
    except (ValueError, SyntaxError) as exc:
        raise FormatError(f"{member}: unparseable NPY header") from exc
    if info.get("fortran_order"):
        raise FormatError(f"{member}: Fortran-ordered arrays are not supported")
    descr = info.get("descr")
    if descr not in _NPY_DTYPES:
        raise FormatError(f"{member}: unsupported dtype {descr!r}")
    dtype = _NPY_DTYPES[descr]
    shape = tuple(int(s) for s in info.get("shape", ()))
    count = int(np.prod(shape, dtype=np.int64)) if shape else 1
    payload = blob[body + header_len :]
    if len(payload) < count * dtype.itemsize:
        raise LengthError(f"{member}: payload shorter than header promises")
    arr = np.frombuffer(payload, dtype=dtype, count=count).reshape(shape)
    return arr


def _read_npz_member(zf: zipfile.ZipFile, member: str) -> np.ndarray:
    try:
        blob = zf.read(member)
    except KeyError:
        raise FormatError(f"archive is missing required member {member!r}") from None
    return _parse_npy(blob, member)


def load_dsprites_npz(path) -> Dataset:
    """Load the binary-sprites archive: imgs (n,64,64 u8) + latents_classes (n,6 i8).

    The constant color column is dropped; the remaining five factor columns
    are validated against cardinalities (3, 6, 40, 32, 32).
    """
    try:
        zf = zipfile.ZipFile(path)
    except zipfile.BadZipFile as exc:
        raise FormatError(f"{path}: not a ZIP archive") from exc
    with zf:
        imgs = _read_npz_member(zf, "imgs.npy")
        classes = _read_npz_member(zf, "latents_classes.npy")
    if imgs.ndim != 3 or imgs.shape[1:] != (64, 64):
        raise ValidationError(f"imgs has shape {imgs.shape}, expected (n, 64, 64)")
    if classes.ndim != 2 or classes.shape[1] != 6:
        raise ValidationError(f"latents_classes has shape {classes.shape}, expected (n, 6)")
    if imgs.shape[0] != classes.shape[0]:
        raise LengthError(
            f"imgs rows ({imgs.shape[0]}) and latents_classes rows ({classes.shape[0]}) differ")
    if imgs.max(initial=0) > 1:
        raise ValidationError("imgs must be binary {0, 1}")
    if classes.shape[0] and np.any(classes[:, 0] != classes[0, 0]):
        raise ValidationError("color column (0) is expected to be constant")
    factors_raw = classes[:, 1:].astype(np.int64)
    for k, card in enumerate(SPRITE_CARDINALITIES):
        col = factors_raw[:, k]
        if col.size and (col.min() < 0 or col.max() >= card):
            raise ValidationError(
                f"factor column {k} has values outside [0, {card}): unexpected cardinalities")
    n = imgs.shape[0]
    images = imgs.astype(np.float64).reshape(n, 1, 64, 64)
    return Dataset(name="dsprites", images=images,
                   factors=FactorTable(factors_raw, SPRITE_CARDINALITIES))


# ---------------------------------------------------------------------------
# hermetic sprite generator
# ---------------------------------------------------------------------------


def _triangle_mask(u, v, h):
    # Vertices (0, -h), (0.9h, 0.7h), (-0.9h, 0.7h), counter-clockwise.
    ax, ay = 0.0, -h
    bx, by = 0.9 * h, 0.7 * h
    cx, cy = -0.9 * h, 0.7 * h
    e1 = (bx - ax) * (v - ay) - (by - ay) * (u - ax)
    e2 = (cx - bx) * (v - by) - (cy - by) * (u - bx)
    e3 = (ax - cx) * (v - cy) - (ay - cy) * (u - cx)
    return (e1 >= 0) & (e2 >= 0) & (e3 >= 0)


def synth_sprites(n: int, seed: int = 0) -> Dataset:
    """Render n binary 64x64 sprites from uniformly drawn factors.

    Factors follow the (shape, scale, orientation, pos-x, pos-y) layout with
    cardinalities (3, 6, 40, 32, 32): squares, ellipses and triangles at six
    sizes, forty rotations and a 32x32 grid of positions. Deterministic in
    ``seed``.
    """
    if n < 1:
        raise ContractError(f"need n >= 1 sprites, got {n}")
    rng = np.random.default_rng(seed)
    cards = np.array(SPRITE_CARDINALITIES)
    factors = (rng.random((n, 5)) * cards).astype(np.int64)

    images = np.zeros((n, 1, 64, 64))
    yy, xx = np.mgrid[0:64, 0:64].astype(np.float64)
    chunk = 512
    for start in range(0, n, chunk):
        f = factors[start : start + chunk]
        m = f.shape[0]
        half = (4.0 + 1.6 * f[:, 1]).reshape(m, 1, 1)
        theta = (f[:, 2] * (2.0 * np.pi / 40.0)).reshape(m, 1, 1)
        cx = (14.0 + f[:, 3] * (36.0 / 31.0)).reshape(m, 1, 1)
        cy = (14.0 + f[:, 4] * (36.0 / 31.0)).reshape(m, 1, 1)
        dx = xx[None] - cx
        dy = yy[None] - cy
        u = np.cos(theta) * dx + np.sin(theta) * dy
        v = -np.sin(theta) * dx + np.cos(theta) * dy
        square = np.maximum(np.abs(u), np.abs(v)) <= half
        ellipse = (u / half) ** 2 + (v / (0.55 * half)) ** 2 <= 1.0
        triangle = _triangle_mask(u, v, half)
        shape_idx = f[:, 0].reshape(m, 1, 1)
        mask = np.where(shape_idx == 0, square, np.where(shape_idx == 1, ellipse, triangle))
        images[start : start + chunk, 0] = mask.astype(np.float64)
    return Dataset(name="synth", images=images,
                   factors=FactorTable(factors, SPRITE_CARDINALITIES))


# ---------------------------------------------------------------------------
# subsampling and batching
# ---------------------------------------------------------------------------


def subsample(ds: Dataset, n: int, seed: int = 0) -> Dataset:
    """Uniform subsample without replacement; n == ds.n gives a permutation."""
    if not 1 <= n <= ds.n:
        raise ContractError(f"subsample size must lie in [1, {ds.n}], got {n}")
    idx = np.random.default_rng(seed).permutation(ds.n)[:n]
    factors = None
    if ds.factors is not None:
        factors = FactorTable(ds.factors.factors[idx], ds.factors.cardinalities)
    return Dataset(name=ds.name, images=ds.images[idx], factors=factors)


class BatchStream:
    """Infinite stream of index batches; one seeded permutation per epoch.

    Trailing short batches are dropped, so every batch has exactly
    ``batch_size`` rows. ``epoch`` counts the permutation currently being
    consumed.
    """

    def __init__(self, n: int, batch_size: int, order_seed: int):
        if not 1 <= batch_size <= n:
            raise ContractError(f"batch_size must lie in [1, {n}], got {batch_size}")
        self.n = n
        self.batch_size = batch_size
        self.order_seed = order_seed
        self.epoch = 0
        self._perm = None
        self._pos = 0

    def __iter__(self):
        return self

    def __next__(self) -> np.ndarray:
        if self._perm is None:
            rng = np.random.default_rng([self.order_seed, self.epoch])
            self._perm = rng.permutation(self.n)
            self._pos = 0
        idx = self._perm[self._pos : self._pos + self.batch_size]
        self._pos += self.batch_size
        if self._pos + self.batch_size > self.n:
            self._perm = None
            self.epoch += 1
        return idx


def batches(ds: Dataset, batch_size: int, seed: int = 0) -> BatchStream:
    return BatchStream(ds.n, batch_size, seed)
