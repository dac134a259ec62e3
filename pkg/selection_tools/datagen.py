'''Synthetic source data, severity-controlled corruptions and IDX ingestion.'''
import logging
import struct
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np
from scipy.fft import dctn, idctn

from .errors import ConfigException, DataException, FormatException, UnsupportedVersionException

logger = logging.getLogger(__name__)

IMAGE_SIZE = 16
DATASET_MAGIC = b'MSDS'
DATASET_VERSION = 1
IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class Role(Enum):
    SOURCE_TRAIN = 'source_train'
    SOURCE_TEST = 'source_test'
    TARGET_TRAIN = 'target_train'
    TARGET_TEST = 'target_test'
    VALIDATION = 'validation'


class Corruption(Enum):
    BRIGHTNESS = 'brightness'
    SATURATE = 'saturate'
    SPATTER = 'spatter'
    CONTRAST = 'contrast'
    GAUSSIAN_NOISE = 'gaussian_noise'
    JPEG_LIKE = 'jpeg_like'
    SPECKLE_NOISE = 'speckle_noise'


# Parameter per severity 1..5. Levels 2-4 are set to move a source-trained model
# off its clean accuracy.
SEVERITY_SCHEDULES = {
    Corruption.GAUSSIAN_NOISE: (0.04, 0.10, 0.18, 0.28, 0.40),
    Corruption.SPECKLE_NOISE: (0.10, 0.25, 0.40, 0.60, 0.80),
    Corruption.BRIGHTNESS: (0.10, 0.20, 0.30, 0.45, 0.60),
    Corruption.CONTRAST: (0.8, 0.6, 0.45, 0.3, 0.2),
    Corruption.SATURATE: (0.8, 0.6, 0.45, 0.3, 0.2),
    Corruption.SPATTER: (0.04, 0.08, 0.14, 0.20, 0.28),
    Corruption.JPEG_LIKE: (2, 4, 7, 10, 13),
}

DEFAULT_SEVERITIES = (2, 3, 4)


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    role: Role
    num_classes: int
    ids: Optional[np.ndarray] = field(default=None)

    def __post_init__(self):
        inputs = np.array(self.inputs, dtype=np.float64)
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        ids = np.arange(len(labels)) if self.ids is None else np.array(self.ids, dtype=np.int64).reshape(-1)
        if len(inputs) != len(labels) or len(ids) != len(labels):
            raise DataException("{} inputs, {} labels, {} ids".format(len(inputs), len(labels), len(ids)))
        if np.any(labels < 0) or np.any(labels >= self.num_classes):
            raise DataException("labels must lie in [0, {})".format(self.num_classes))
        for array in (inputs, labels, ids):
            array.flags.writeable = False
        object.__setattr__(self, 'inputs', inputs)
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'ids', ids)

    def __len__(self):
        return len(self.labels)

    @property
    def input_shape(self):
        return tuple(self.inputs.shape[1:])

    def subset(self, indices, role=None):
        '''Items at `indices`, keeping their ids.'''
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[indices], self.labels[indices], role or self.role,
                       self.num_classes, self.ids[indices])

    def with_role(self, role):
        return Dataset(self.inputs, self.labels, role, self.num_classes, self.ids)

    def renumbered(self):
        return Dataset(self.inputs, self.labels, self.role, self.num_classes)

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)


@dataclass(frozen=True)
class ShiftSpec:
    corruption: Corruption
    severity: int
    seed: int = 0
    magnitude: Optional[float] = None

    def __post_init__(self):
        if not isinstance(self.corruption, Corruption):
            try:
                object.__setattr__(self, 'corruption', Corruption(self.corruption))
            except ValueError:
                raise ConfigException("unknown corruption '{}'".format(self.corruption))
        if not 1 <= int(self.severity) <= 5:
            raise ConfigException("severity must be in [1, 5], got {}".format(self.severity))

    @property
    def parameter(self):
        if self.magnitude is not None:
            return self.magnitude
        return SEVERITY_SCHEDULES[self.corruption][int(self.severity) - 1]


def _segment_distance(xx, yy, start, end):
    '''Distance from each pixel to the segment start-end.'''
    direction = end - start
    t = ((xx - start[0]) * direction[0] + (yy - start[1]) * direction[1]) / max(direction @ direction, 1e-12)
    t = np.clip(t, 0.0, 1.0)
    return np.sqrt((xx - start[0] - t * direction[0]) ** 2 + (yy - start[1] - t * direction[1]) ** 2)


def _glyph_distance(family, u, v):
    '''Distance (in glyph units) from each pixel to the stroke of a shape family.
    Families 0-3 are the close pairs ring/square and plus/x.'''
    r = np.sqrt(u ** 2 + v ** 2)
    horizontal = np.maximum(np.abs(v), np.maximum(np.abs(u) - 0.7, 0.0))
    vertical = np.maximum(np.abs(u), np.maximum(np.abs(v) - 0.7, 0.0))
    if family == 0:  # ring
        return np.abs(r - 0.6)
    if family == 1:  # square outline
        return np.abs(np.maximum(np.abs(u), np.abs(v)) - 0.55)
    if family == 2:  # plus
        return np.minimum(horizontal, vertical)
    if family == 3:  # x
        d1 = np.abs(u - v) / np.sqrt(2)
        d2 = np.abs(u + v) / np.sqrt(2)
        return np.maximum(np.minimum(d1, d2), np.maximum(r - 0.85, 0.0))
    if family == 4:  # disk
        return np.maximum(r - 0.5, 0.0)
    if family == 5:  # triangle outline
        edges = [v + 0.45, -0.87 * u + 0.5 * v - 0.35, 0.87 * u + 0.5 * v - 0.35]
        return np.abs(np.max(edges, axis=0))
    if family == 6:
        return horizontal
    if family == 7:
        return vertical
    if family == 8:  # two dots
        return np.minimum(np.sqrt((u - 0.4) ** 2 + v ** 2), np.sqrt((u + 0.4) ** 2 + v ** 2)) - 0.15
    # L shape
    down = np.maximum(np.abs(u + 0.4), np.maximum(np.abs(v) - 0.6, 0.0))
    across = np.maximum(np.abs(v - 0.6), np.maximum(np.abs(u) - 0.4, 0.0))
    return np.minimum(down, across)


_CORNERS = ((-0.8, -0.8), (0.8, -0.8), (-0.8, 0.8), (0.8, 0.8))


def render_glyph(label, rng, size=IMAGE_SIZE):
    '''Renders one jittered glyph over one or two clutter strokes.
    family = label % 10, corner-dot code = label // 10.'''
    family, code = label % 10, label // 10
    grid = np.linspace(-1.0, 1.0, size)
    yy, xx = np.meshgrid(grid, grid, indexing='ij')

    angle = rng.uniform(-0.35, 0.35)
    scale = rng.uniform(0.75, 1.2)
    dx, dy = rng.uniform(-0.18, 0.18, size=2)
    thickness = rng.uniform(0.1, 0.2)
    cos, sin = np.cos(angle), np.sin(angle)
    u = ((xx - dx) * cos + (yy - dy) * sin) / scale
    v = (-(xx - dx) * sin + (yy - dy) * cos) / scale

    d = _glyph_distance(family, u, v)
    image = np.exp(-(np.maximum(d, 0.0) / thickness) ** 2) * rng.uniform(0.55, 1.0)
    for _ in range(int(rng.integers(1, 3))):
        start = rng.uniform(-0.9, 0.9, size=2)
        heading = rng.uniform(0.0, np.pi)
        end = start + rng.uniform(0.3, 0.7) * np.array([np.cos(heading), np.sin(heading)])
        stroke = np.exp(-(_segment_distance(xx, yy, start, end) / thickness) ** 2)
        image = np.maximum(image, stroke * rng.uniform(0.3, 0.7))
    for bit, (cx, cy) in enumerate(_CORNERS):
        if code >> bit & 1:
            image = np.maximum(image, np.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / 0.02))
    image = image + rng.normal(0.0, 0.03, size=image.shape)
    return np.clip(image, 0.0, 1.0)[:, :, None]


def gen_source(num_classes, per_class_count, seed, role=Role.SOURCE_TRAIN):
    '''Procedurally rendered 16x16 grayscale glyphs, `per_class_count` per class,
    shuffled with the same seed.'''
    if not 2 <= num_classes <= 100:
        raise ConfigException("num_classes must be in [2, 100], got {}".format(num_classes))
    if per_class_count < 1:
        raise ConfigException("per_class_count must be >= 1, got {}".format(per_class_count))

    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(num_classes), per_class_count)
    images = np.stack([render_glyph(int(label), rng) for label in labels])
    order = rng.permutation(len(labels))
    logger.debug("generated %d glyphs over %d classes", len(labels), num_classes)
    return Dataset(images[order], labels[order], role, num_classes)


def _spatter(images, coverage, rng):
    out = images.copy()
    _, h, w, _ = images.shape
    yy, xx = np.mgrid[0:h, 0:w]
    for image in out:
        mask = np.zeros((h, w), dtype=bool)
        while mask.mean() < coverage:
            cy, cx = rng.uniform(0, h), rng.uniform(0, w)
            radius = rng.uniform(0.8, 2.2)
            blob = (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
            image[blob, 0] = rng.uniform(0.2, 0.6)
            mask |= blob
    return out


def _zigzag(block):
    return sorted(((i, j) for i in range(block) for j in range(block)),
                  key=lambda ij: (ij[0] + ij[1], ij[1] if (ij[0] + ij[1]) % 2 else ij[0]))


def _jpeg_like(images, dropped, block=4):
    '''Zeroes the `dropped` highest-frequency DCT coefficients of every block x block tile.
    Edge pixels outside whole tiles are left as they are.'''
    out = images.copy()
    n, h, w, _ = images.shape
    hb, wb = h // block, w // block
    if hb == 0 or wb == 0 or dropped == 0:
        return out
    tiles = images[:, :hb * block, :wb * block, 0].reshape(n, hb, block, wb, block).transpose(0, 1, 3, 2, 4)
    coeffs = dctn(tiles, axes=(3, 4), norm='ortho')
    for i, j in _zigzag(block)[block * block - int(dropped):]:
        coeffs[..., i, j] = 0.0
    restored = idctn(coeffs, axes=(3, 4), norm='ortho').transpose(0, 1, 3, 2, 4).reshape(n, hb * block, wb * block)
    out[:, :hb * block, :wb * block, 0] = restored
    return out


def corrupt(d, spec, role=None):
    '''Applies one corruption at the severity's scheduled strength.
    args:
        d: Dataset with pixels in [0, 1].
        spec: ShiftSpec.
        role: role of the returned dataset (defaults to d's role).
    returns:
        a Dataset with the same labels and ids, pixels clipped to [0, 1].
    '''
    if not isinstance(spec, ShiftSpec):
        raise ConfigException("corrupt needs a ShiftSpec, got {!r}".format(spec))
    x = d.inputs
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise DataException("corrupt expects pixels in [0, 1]")
    rng = np.random.default_rng([spec.seed, int(spec.severity), list(Corruption).index(spec.corruption)])
    p = spec.parameter
    kind = spec.corruption

    if kind == Corruption.GAUSSIAN_NOISE:
        out = x + rng.normal(0.0, p, size=x.shape)
    elif kind == Corruption.SPECKLE_NOISE:
        out = x + x * rng.normal(0.0, p, size=x.shape)
    elif kind == Corruption.BRIGHTNESS:
        out = x + p
    elif kind == Corruption.CONTRAST:
        means = x.mean(axis=(1, 2, 3), keepdims=True)
        out = (x - means) * p + means
    elif kind == Corruption.SATURATE:
        out = np.power(x, p)
    elif kind == Corruption.SPATTER:
        out = _spatter(x, p, rng)
    elif kind == Corruption.JPEG_LIKE:
        out = _jpeg_like(x, p)
    else:
        raise ConfigException("unknown corruption '{}'".format(kind))

    return Dataset(np.clip(out, 0.0, 1.0), d.labels, role or d.role, d.num_classes, d.ids)


def split(d, fractions, seed):
    '''Disjoint, seeded, stratified splits, each renumbered.

    Every item gets a key spreading its class evenly over [0, 1) (its shuffled rank
    within the class, centred). Items are ordered by key and the order is cut at the
    rounded cumulative fractions of the total, so split sizes follow the fractions
    exactly and per-class proportions stay within one item.
    '''
    fractions = [float(f) for f in fractions]
    if not fractions or any(f <= 0 for f in fractions) or sum(fractions) > 1.0 + 1e-9:
        raise ConfigException("fractions must be positive and sum to at most 1, got {}".format(fractions))

    rng = np.random.default_rng(seed)
    n = len(d)
    keys = np.zeros(n)
    for label in range(d.num_classes):
        members = rng.permutation(np.flatnonzero(d.labels == label))
        keys[members] = (np.arange(len(members)) + 0.5) / max(len(members), 1)
    order = np.lexsort((rng.permutation(n), keys))
    cuts = np.floor(np.cumsum([0.0] + fractions) * n + 0.5).astype(int)

    result = []
    for k in range(len(fractions)):
        indices = order[cuts[k]:min(cuts[k + 1], n)]
        if len(indices) == 0:
            raise ConfigException("split {} of fractions {} is empty".format(k, fractions))
        result.append(d.subset(np.sort(indices)).renumbered())
    return result


def _read_idx(raw, magic, what):
    if len(raw) < 8:
        raise FormatException("{} file too short for an IDX header".format(what), 0)
    found, count = struct.unpack_from('>II', raw, 0)
    if found != magic:
        raise FormatException("{} file has magic 0x{:08X}, expected 0x{:08X}".format(what, found, magic), 0)
    return count


def ingest_idx(images_path, labels_path, role=Role.SOURCE_TRAIN, num_classes=None):
    '''Reads an IDX image/label pair (MNIST layout) into a Dataset of HxWx1 images in [0, 1].'''
    with open(images_path, 'rb') as fh:
        images_raw = fh.read()
    with open(labels_path, 'rb') as fh:
        labels_raw = fh.read()

    n_images = _read_idx(images_raw, IDX_IMAGES_MAGIC, 'images')
    if len(images_raw) < 16:
        raise FormatException("images file too short for its dimensions", 8)
    rows, cols = struct.unpack_from('>II', images_raw, 8)
    n_labels = _read_idx(labels_raw, IDX_LABELS_MAGIC, 'labels')
    if n_images != n_labels:
        raise FormatException("{} images but {} labels".format(n_images, n_labels), 4)

    pixels = n_images * rows * cols
    if len(images_raw) < 16 + pixels:
        raise FormatException("images file truncated", len(images_raw))
    if len(labels_raw) < 8 + n_labels:
        raise FormatException("labels file truncated", len(labels_raw))

    images = np.frombuffer(images_raw, dtype=np.uint8, count=pixels, offset=16)
    labels = np.frombuffer(labels_raw, dtype=np.uint8, count=n_labels, offset=8).astype(np.int64)
    images = images.reshape(n_images, rows, cols, 1) / 255.0
    classes = num_classes or max(2, int(labels.max()) + 1 if n_labels else 2)
    return Dataset(images, labels, role, classes)


def to_bytes(d):
    n = len(d)
    h, w = d.input_shape[:2] if n else (0, 0)
    header = DATASET_MAGIC + struct.pack('<IIIII', DATASET_VERSION, d.num_classes, n, h, w)
    return (header + d.labels.astype('<u2').tobytes()
            + d.inputs.reshape(n, -1).astype('<f4').tobytes())


def from_bytes(raw, role):
    if raw[:4] != DATASET_MAGIC:
        raise FormatException("bad magic {!r}, expected {!r}".format(raw[:4], DATASET_MAGIC), 0)
    if len(raw) < 24:
        raise FormatException("truncated dataset header", len(raw))
    version, num_classes, n, h, w = struct.unpack_from('<IIIII', raw, 4)
    if version != DATASET_VERSION:
        raise UnsupportedVersionException("unsupported dataset version {}".format(version), 4)
    expected = 24 + 2 * n + 4 * n * h * w
    if len(raw) != expected:
        raise FormatException("dataset payload is {} bytes, expected {}".format(len(raw), expected),
                              min(len(raw), expected))
    labels = np.frombuffer(raw, dtype='<u2', count=n, offset=24).astype(np.int64)
    pixels = np.frombuffer(raw, dtype='<f4', count=n * h * w, offset=24 + 2 * n)
    return Dataset(pixels.astype(np.float64).reshape(n, h, w, 1), labels, role, num_classes)


def save_dataset(d, path):
    with open(path, 'wb') as fh:
        fh.write(to_bytes(d))


def load_dataset(path, role):
    with open(path, 'rb') as fh:
        return from_bytes(fh.read(), role)
