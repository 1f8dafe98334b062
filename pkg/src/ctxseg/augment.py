"""Training-time augmentation for (image, mask) pairs.

Order: horizontal flip, isotropic rescale, small rotation, fixed-size crop.
Images are resampled bilinearly and padded with zeros; masks use nearest
neighbor and are padded with the ignore label so fabricated pixels never
contribute to the loss. Randomness comes from an rng keyed by
(base seed, epoch, sample index) so every sample's augmentation is
reproducible and independent of iteration order.
"""

from dataclasses import dataclass

import numpy as np

from ._kernels import bilinear_forward


@dataclass
class AugmentConfig:
    crop_size: int = 64
    flip: bool = True
    scale_range: tuple = (0.5, 2.0)
    rotate_deg: float = 10.0
    ignore_label: int = 255


def sample_rng(base_seed, epoch, index):
    return np.random.default_rng(np.random.SeedSequence([base_seed, epoch, index]))


def resize_image(image, out_h, out_w):
    """Bilinear resize of a [C,H,W] image."""
    return bilinear_forward(np.ascontiguousarray(image[None]), out_h, out_w)[0]


def _nearest_index(in_size, out_size):
    if out_size == 1:
        return np.zeros(1, dtype=np.int64)
    src = np.arange(out_size) * ((in_size - 1) / (out_size - 1))
    return np.clip(np.rint(src).astype(np.int64), 0, in_size - 1)


def resize_mask(mask, out_h, out_w):
    """Nearest-neighbor resize of a [H,W] integer mask."""
    yi = _nearest_index(mask.shape[0], out_h)
    xi = _nearest_index(mask.shape[1], out_w)
    return mask[yi[:, None], xi[None, :]]


def _rotation_source_coords(h, w, angle_rad):
    """Source (y, x) for each output pixel of an inverse rotation about the
    image center."""
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64),
                         np.arange(w, dtype=np.float64), indexing="ij")
    cos, sin = np.cos(angle_rad), np.sin(angle_rad)
    dy, dx = yy - cy, xx - cx
    return cy + cos * dy - sin * dx, cx + sin * dy + cos * dx


def rotate_image(image, angle_deg):
    """Bilinear rotation of a [C,H,W] image; out-of-frame samples are zero."""
    c, h, w = image.shape
    sy, sx = _rotation_source_coords(h, w, np.deg2rad(angle_deg))
    inside = (sy >= 0) & (sy <= h - 1) & (sx >= 0) & (sx <= w - 1)
    y0 = np.clip(np.floor(sy).astype(np.int64), 0, h - 1)
    x0 = np.clip(np.floor(sx).astype(np.int64), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = np.clip(sy - y0, 0.0, 1.0)
    fx = np.clip(sx - x0, 0.0, 1.0)
    out = np.zeros_like(image)
    for ch in range(c):
        plane = image[ch]
        top = plane[y0, x0] * (1 - fx) + plane[y0, x1] * fx
        bot = plane[y1, x0] * (1 - fx) + plane[y1, x1] * fx
        out[ch] = np.where(inside, top * (1 - fy) + bot * fy, 0.0)
    return out


def rotate_mask(mask, angle_deg, ignore_label):
    """Nearest-neighbor rotation of a [H,W] mask; out-of-frame -> ignore."""
    h, w = mask.shape
    sy, sx = _rotation_source_coords(h, w, np.deg2rad(angle_deg))
    inside = (sy >= 0) & (sy <= h - 1) & (sx >= 0) & (sx <= w - 1)
    yi = np.clip(np.rint(sy).astype(np.int64), 0, h - 1)
    xi = np.clip(np.rint(sx).astype(np.int64), 0, w - 1)
    return np.where(inside, mask[yi, xi], ignore_label)


def pad_to(image, mask, size, ignore_label):
    """Zero-pad image / ignore-pad mask up to at least size x size."""
    c, h, w = image.shape
    ph, pw = max(size - h, 0), max(size - w, 0)
    if ph == 0 and pw == 0:
        return image, mask
    out_img = np.zeros((c, h + ph, w + pw), dtype=image.dtype)
    out_img[:, :h, :w] = image
    out_mask = np.full((h + ph, w + pw), ignore_label, dtype=mask.dtype)
    out_mask[:h, :w] = mask
    return out_img, out_mask


def random_crop(image, mask, size, rng):
    c, h, w = image.shape
    top = int(rng.integers(0, h - size + 1))
    left = int(rng.integers(0, w - size + 1))
    return (image[:, top:top + size, left:left + size],
            mask[top:top + size, left:left + size])


def augment_sample(image, mask, config, rng):
    """Apply the full flip/scale/rotate/crop pipeline to one sample."""
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask)
    if config.flip and rng.random() < 0.5:
        image = image[:, :, ::-1].copy()
        mask = mask[:, ::-1].copy()
    lo, hi = config.scale_range
    s = rng.uniform(lo, hi)
    nh = max(int(round(image.shape[1] * s)), 1)
    nw = max(int(round(image.shape[2] * s)), 1)
    image = resize_image(image, nh, nw)
    mask = resize_mask(mask, nh, nw)
    if config.rotate_deg > 0:
        angle = rng.uniform(-config.rotate_deg, config.rotate_deg)
        image = rotate_image(image, angle)
        mask = rotate_mask(mask, angle, config.ignore_label)
    image, mask = pad_to(image, mask, config.crop_size, config.ignore_label)
    return random_crop(image, mask, config.crop_size, rng)
