"""In-memory datasets, score thresholding and train/test splitting."""
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError

HIGH, LOW, DISCARD = "high", "low", "discard"
CLASS_LOW, CLASS_HIGH = 0, 1


@dataclass
class RawRecord:
    id: int
    image: np.ndarray  # H x W x 3, float in [0, 1]
    mean_score: float
    semantic: np.ndarray  # (M,) of 0/1


@dataclass
class Dataset:
    """Scored images with multi-hot semantic tags.

    Images are stored as uint8 and exposed as floats in [0, 1]; the 8-bit
    grid is the canonical representation, so persisting and re-reading a
    dataset is lossless.
    """

    images: np.ndarray  # (N, H, W, 3) uint8
    scores: np.ndarray  # (N,) float64
    semantic: np.ndarray  # (N, M) uint8
    attributes: tuple
    ids: np.ndarray = None
    score_range: tuple = (1.0, 10.0)

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8)
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.semantic = np.asarray(self.semantic, dtype=np.uint8)
        self.attributes = tuple(self.attributes)
        if self.ids is None:
            self.ids = np.arange(len(self.scores), dtype=np.int64)
        n = len(self.scores)
        if self.images.shape[0] != n or self.semantic.shape[0] != n or len(self.ids) != n:
            raise DataError("images, scores, semantic labels and ids differ in length")
        if self.images.ndim != 4 or self.images.shape[-1] != 3:
            raise DataError(f"expected N x H x W x 3 images, got {self.images.shape}")
        if self.semantic.shape[1] != len(self.attributes):
            raise DataError("semantic width does not match attribute names")

    def __len__(self):
        return len(self.scores)

    @property
    def n_attributes(self):
        return len(self.attributes)

    @property
    def image_shape(self):
        return self.images.shape[1:]

    def record(self, i):
        return RawRecord(
            int(self.ids[i]), self.images[i] / 255.0, float(self.scores[i]), self.semantic[i].copy()
        )

    def __iter__(self):
        return (self.record(i) for i in range(len(self)))


@dataclass
class LabeledSet:
    """Images with an aesthetic class (0 = low, 1 = high) and tags ``z``.

    ``z`` is ``None`` for aesthetic-only data.
    """

    images: np.ndarray
    y: np.ndarray
    z: np.ndarray
    ids: np.ndarray
    attributes: tuple = ()
    scores: np.ndarray = field(default=None, repr=False)

    def __len__(self):
        return len(self.y)

    @property
    def n_attributes(self):
        return len(self.attributes)

    def subset(self, idx):
        idx = np.asarray(idx)
        return LabeledSet(
            self.images[idx], self.y[idx], None if self.z is None else self.z[idx],
            self.ids[idx], self.attributes, None if self.scores is None else self.scores[idx],
        )

    def without_semantics(self):
        return LabeledSet(self.images, self.y, None, self.ids, (), self.scores)

    def class_counts(self):
        return np.bincount(self.y, minlength=2)


def delta_label(mean_score, midpoint, delta):
    """Threshold a mean rating into ``"high"``, ``"low"`` or ``"discard"``.

    Scores exactly on ``midpoint +/- delta`` are discarded.
    """
    if delta < 0:
        raise DataError("delta must be nonnegative")
    if mean_score > midpoint + delta:
        return HIGH
    if mean_score < midpoint - delta:
        return LOW
    return DISCARD


def label_scores(scores, midpoint, delta):
    """Vectorized :func:`delta_label`: class array and a keep mask."""
    scores = np.asarray(scores, dtype=np.float64)
    high = scores > midpoint + delta
    low = scores < midpoint - delta
    return high.astype(np.int64), high | low


def labeled(dataset, idx, midpoint, delta):
    y, keep = label_scores(dataset.scores[idx], midpoint, delta)
    sel = np.asarray(idx)[keep]
    return LabeledSet(
        dataset.images[sel], y[keep], dataset.semantic[sel], dataset.ids[sel],
        dataset.attributes, dataset.scores[sel],
    )


def make_split(dataset, midpoint=5.0, delta=0.0, split_seed=0, fractions=(0.8, 0.2)):
    """Random train/test partition with thresholded labels.

    Records are shuffled with ``split_seed`` and cut by ``fractions``. The
    train part is labeled with ``delta``; the test part always with 0.
    """
    if len(dataset) == 0:
        raise DataError("no records to split")
    fractions = tuple(float(f) for f in fractions)
    if len(fractions) != 2 or min(fractions) < 0 or abs(sum(fractions) - 1.0) > 1e-9:
        raise DataError(f"split fractions must be two nonnegative numbers summing to 1, got {fractions}")
    order = np.random.default_rng(split_seed).permutation(len(dataset))
    n_train = int(round(fractions[0] * len(dataset)))
    train = labeled(dataset, order[:n_train], midpoint, delta)
    test = labeled(dataset, order[n_train:], midpoint, 0.0)
    for name, part in (("train", train), ("test", test)):
        counts = part.class_counts()
        if len(part) == 0 or np.any(counts == 0):
            raise DataError(f"{name} split has an empty class (counts low={counts[0]}, high={counts[1]})")
    return train, test
