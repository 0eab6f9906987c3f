"""Random crops with horizontal flips for training; center crops for evaluation."""
import numpy as np

from ..errors import InputError


def crop_offsets(source_hw, crop_hw):
    (h, w), (ch, cw) = source_hw, crop_hw
    if ch > h or cw > w:
        raise InputError(f"crop {crop_hw} larger than source {source_hw}")
    return h - ch, w - cw


def center_offset(source_hw, crop_hw):
    dh, dw = crop_offsets(source_hw, crop_hw)
    return dh // 2, dw // 2


def flip(image):
    return image[:, ::-1]


def crop(image, top, left, crop_hw, flipped=False):
    out = image[top : top + crop_hw[0], left : left + crop_hw[1]]
    return flip(out) if flipped else out


def augment(image, rng, crop_hw, train=True):
    """Crop one H x W x C image.

    With ``train`` the offset is uniform over all valid positions and the crop
    is mirrored with probability 1/2; otherwise the center crop is returned.
    """
    if not train:
        top, left = center_offset(image.shape[:2], crop_hw)
        return crop(image, top, left, crop_hw)
    dh, dw = crop_offsets(image.shape[:2], crop_hw)
    top, left = int(rng.integers(0, dh + 1)), int(rng.integers(0, dw + 1))
    return crop(image, top, left, crop_hw, bool(rng.random() < 0.5))


def crop_batch(images, crop_hw, rng=None, mean=None):
    """Crop a uint8 batch to float64, subtracting a per-channel ``mean``.

    ``rng=None`` selects deterministic center crops.
    """
    n = images.shape[0]
    dh, dw = crop_offsets(images.shape[1:3], crop_hw)
    out = np.empty((n, crop_hw[0], crop_hw[1], images.shape[3]))
    if rng is None:
        top, left = dh // 2, dw // 2
        out[...] = images[:, top : top + crop_hw[0], left : left + crop_hw[1]]
    else:
        tops = rng.integers(0, dh + 1, size=n)
        lefts = rng.integers(0, dw + 1, size=n)
        flips = rng.random(n) < 0.5
        for i in range(n):
            out[i] = crop(images[i], tops[i], lefts[i], crop_hw, flips[i])
    out /= 255.0
    if mean is not None:
        out -= mean
    return out


def channel_mean(images):
    """Per-channel mean of a uint8 image stack, on the [0, 1] scale."""
    return images.reshape(-1, images.shape[-1]).mean(axis=0) / 255.0
