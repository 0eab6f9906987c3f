"""Synthetic scored images with planted attribute/aesthetic correlations.

Every image shows one (sometimes two) attribute *codes*: small patches with
a per-attribute color and stripe pattern, placed where every training crop
keeps them whole. With ``jitter > 0`` each rendering varies in color gain,
stripe contrast, brightness and stripe phase, so a code is a family of
appearances rather than one fixed template. The aesthetic class of an image is drawn from the plan
entry of its primary attribute, and a weaker global cue (background
saturation and fine-texture contrast) is added in proportion to how far the
rating sits from the midpoint.
"""
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError
from .records import Dataset

_BASE_PLAN = (0.9, 0.1, 0.85, 0.15, 0.7, 0.3, 0.5, 0.5)
_PALETTE = np.array([
    (0.95, 0.10, 0.10), (0.10, 0.85, 0.15), (0.15, 0.25, 0.95), (0.95, 0.90, 0.10),
    (0.90, 0.10, 0.90), (0.10, 0.90, 0.90), (1.00, 0.55, 0.00), (0.55, 0.30, 0.95),
])
_N_PATTERNS = 4


def default_plan(m):
    return tuple(_BASE_PLAN[i % len(_BASE_PLAN)] for i in range(m))


@dataclass(frozen=True)
class SyntheticSpec:
    n: int = 5000
    m: int = 8
    image_size: int = 40
    crop_size: int = 32
    plan: tuple = None
    noise: float = 0.1
    cue_strength: float = 0.6
    two_tag_fraction: float = 0.0
    midpoint: float = 5.0
    score_range: tuple = (1.0, 10.0)
    seed: int = 0
    attribute_names: tuple = None
    patch: int = None  # attribute patch side; default 3 * image_size // 10
    jitter: float = 1.0

    def resolved_plan(self):
        return tuple(float(p) for p in (self.plan if self.plan is not None else default_plan(self.m)))

    def names(self):
        if self.attribute_names is not None:
            return tuple(self.attribute_names)
        return tuple(f"attr{i:02d}" for i in range(self.m))

    def validate(self):
        if self.n < 100:
            raise DataError(f"need at least 100 records, got n={self.n}")
        if self.m < 2:
            raise DataError(f"need at least 2 attributes, got m={self.m}")
        if self.m > len(_PALETTE) * _N_PATTERNS:
            raise DataError(f"at most {len(_PALETTE) * _N_PATTERNS} distinct attribute codes")
        plan, names = self.resolved_plan(), self.names()
        if len(plan) != self.m:
            raise DataError(f"plan has {len(plan)} entries for m={self.m} attributes")
        if len(names) != self.m or len(set(names)) != self.m:
            raise DataError("attribute names must be m distinct strings")
        for i, p in enumerate(plan):
            if not 0.0 <= p <= 1.0:
                raise DataError(f"attribute {i} ({names[i]}): P(high)={p} is outside [0, 1]")
        if not 0 < self.crop_size <= self.image_size:
            raise DataError("crop_size must be in (0, image_size]")
        if self.patch_size() > self.crop_size - (self.image_size - self.crop_size):
            raise DataError("image too small for attribute patches at this crop size")
        if not 0.0 <= self.two_tag_fraction <= 1.0 or self.noise < 0:
            raise DataError("two_tag_fraction must be in [0, 1] and noise nonnegative")
        margin = self.image_size - self.crop_size
        if self.two_tag_fraction > 0 and self.crop_size - self.patch_size() - margin < self.patch_size():
            raise DataError("image too small for two attribute patches; lower patch or two_tag_fraction")
        if not 0.0 <= self.jitter <= 1.0:
            raise DataError("jitter must be in [0, 1]")

    def patch_size(self):
        return self.patch if self.patch is not None else max(3, 3 * self.image_size // 10)


@dataclass
class GroundTruth:
    plan: tuple
    primary: np.ndarray  # (N,) primary attribute per record
    templates: list = field(repr=False, default_factory=list)  # uint8 P x P x 3 per attribute, unjittered


def attribute_code(index):
    """(color, pattern) of attribute ``index``.

    Attributes ``2k`` and ``2k + 1`` share a color and differ only in
    pattern: horizontal versus vertical stripes (same mean color), or solid
    versus checkerboard once the first 16 codes are used. Which pattern
    comes first alternates between colors, so under the default plan the
    aesthetic class is an XOR of color and orientation.
    """
    color = (index // 2) % len(_PALETTE)
    bit = (index % 2) ^ ((index // 2) % 2)
    pair = ((1, 2), (0, 3))[index // (2 * len(_PALETTE))]
    return color, pair[bit]


def _pattern_mask(pattern, patch, low=0.3, phase=0):
    r = np.arange(patch) + phase
    if pattern == 0:
        return np.ones((patch, patch))
    if pattern == 1:
        return np.where(r[:, None] % 2 == 0, 1.0, low) * np.ones((1, patch))
    if pattern == 2:
        return np.ones((patch, 1)) * np.where(r[None, :] % 2 == 0, 1.0, low)
    return np.where((r[:, None] + r[None, :]) % 2 == 0, 1.0, low)


def attribute_template(index, patch):
    """The uint8 patch drawn for attribute ``index`` (no jitter)."""
    color, pattern = attribute_code(index)
    mask = _pattern_mask(pattern, patch)
    return np.rint(255.0 * mask[..., None] * _PALETTE[color]).astype(np.uint8)


def jittered_patch(index, patch, rng, jitter):
    """One rendering of attribute ``index`` with appearance variation.

    ``jitter`` in [0, 1] scales three perturbations: per-channel color
    gain, stripe contrast, and overall brightness. The stripe phase is
    random whenever ``jitter > 0``.
    """
    color, pattern = attribute_code(index)
    gain = 1.0 + jitter * rng.uniform(-0.5, 0.5, size=3)
    low = 0.3 + jitter * rng.uniform(-0.25, 0.35)
    bright = 1.0 + jitter * rng.uniform(-0.3, 0.2)
    phase = int(rng.integers(0, 2)) if jitter > 0 else 0
    mask = _pattern_mask(pattern, patch, low, phase)
    return np.clip(mask[..., None] * _PALETTE[color] * gain * bright, 0.0, 1.0)


def _free(lo, hi, patch, taken):
    return [(y, x) for y in range(lo, hi + 1) for x in range(lo, hi + 1)
            if all(abs(y - ty) >= patch or abs(x - tx) >= patch for ty, tx in taken)]


def _fits(lo, hi, patch, taken, count):
    if count == 0:
        return True
    return any(_fits(lo, hi, patch, taken + [c], count - 1) for c in _free(lo, hi, patch, taken))


def _place(rng, lo, hi, patch, count):
    """Uniformly chosen positions for ``count`` non-overlapping patches."""
    taken = []
    for k in range(count, 0, -1):
        free = [c for c in _free(lo, hi, patch, taken) if _fits(lo, hi, patch, taken + [c], k - 1)]
        if not free:
            raise DataError("no room for non-overlapping attribute patches")
        taken.append(free[int(rng.integers(0, len(free)))])
    return taken


def generate_synthetic(spec):
    """Render a :class:`Dataset` following ``spec``; returns ``(dataset, truth)``."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    plan = np.array(spec.resolved_plan())
    s, p = spec.image_size, spec.patch_size()
    margin = s - spec.crop_size
    lo, hi = margin, spec.crop_size - p
    templates = [attribute_template(i, p) for i in range(spec.m)]
    yy, xx = np.mgrid[0:s, 0:s] / s

    images = np.empty((spec.n, s, s, 3), dtype=np.uint8)
    scores = np.empty(spec.n)
    semantic = np.zeros((spec.n, spec.m), dtype=np.uint8)
    primary = rng.integers(0, spec.m, size=spec.n)
    for i in range(spec.n):
        a = int(primary[i])
        tags = [a]
        if rng.random() < spec.two_tag_fraction:
            other = int(rng.integers(0, spec.m - 1))
            tags.append(other + (other >= a))
        high = rng.random() < plan[a]
        sign = 1.0 if high else -1.0
        margin_score = 0.1 + 0.9 * abs(rng.standard_normal())
        scores[i] = np.round(
            np.clip(spec.midpoint + sign * margin_score, *spec.score_range), 2
        )
        q = sign * min(margin_score / 1.5, 1.0) * spec.cue_strength

        base = rng.uniform(0.25, 0.75, size=3)
        freq = rng.uniform(0.5, 2.0, size=2)
        phase = rng.uniform(0, 2 * np.pi, size=3)
        wave = np.sin(2 * np.pi * (freq[0] * yy + freq[1] * xx)[..., None] + phase)
        img = base + 0.15 * wave
        gray = img.mean(axis=-1, keepdims=True)
        img = gray + (1.0 + 0.6 * q) * (img - gray)
        img += 0.08 * (1.0 + q) * rng.uniform(-1.0, 1.0, size=(s, s, 1))
        img = np.clip(img, 0.0, 1.0)

        for t, (y, x) in zip(tags, _place(rng, lo, hi, p, len(tags))):
            if spec.jitter > 0:
                img[y : y + p, x : x + p] = jittered_patch(t, p, rng, spec.jitter)
            else:
                img[y : y + p, x : x + p] = templates[t] / 255.0
            semantic[i, t] = 1
        if spec.noise > 0:
            img = np.clip(img + spec.noise * rng.standard_normal(img.shape), 0.0, 1.0)
        images[i] = np.rint(img * 255.0).astype(np.uint8)

    dataset = Dataset(images, scores, semantic, spec.names(), score_range=spec.score_range)
    return dataset, GroundTruth(tuple(plan), primary, templates)

