"""Synthetic segmentation dataset with context-dependent labels.

Every image carries a global context bit, visible only through one small
marker square stamped at a uniformly random position (magenta in context
0, cyan in context 1 — equal-luminance hues unused by any shape).
Background statistics away from the marker are identical across contexts. Two shape types are ambiguous:
their local appearance is the same everywhere, but the class label they
carry depends on the context (disk -> class 1 or 2, square -> class 3 or
4). Two further shape types are unambiguous (classes 5 and 6). Resolving
an ambiguous shape therefore requires relating it to a tiny cue that may
sit anywhere else in the image: a local classifier has a hard accuracy
ceiling on ambiguous pixels, while a model that pools the whole image can
resolve them completely; the built-in oracle self-test quantifies both
ceilings.
"""

from dataclasses import dataclass, field

import numpy as np

from ..checkpoint import load_checkpoint, save_checkpoint
from ..metrics import ConfusionMatrix

NUM_CLASSES = 7          # background + 6
AMBIGUOUS_CLASSES = (1, 2, 3, 4)
AMBIGUOUS_PAIRS = ((1, 2), (3, 4))
MARKER_RADIUS = 3        # the context marker is a (2r+1) x (2r+1) square
# equal-luminance hues unused by any shape, so only the hue carries context
MARKER_COLORS = ((0.85, 0.30, 0.85),   # context 0: magenta
                 (0.30, 0.85, 0.85))   # context 1: cyan

# channel appearance of each shape type (identical across contexts)
_APPEARANCE = {
    "disk": (0.85, 0.30, 0.30),      # class 1 in context 0, class 2 in context 1
    "square": (0.30, 0.30, 0.85),    # class 3 / class 4
    "plus": (0.30, 0.85, 0.30),      # class 5 always
    "diamond": (0.85, 0.85, 0.30),   # class 6 always
}


@dataclass
class SynthSegSpec:
    image_size: int = 64
    num_train: int = 2000
    num_val: int = 500
    shapes_per_image: tuple = (2, 4)   # inclusive range
    seed: int = 0
    noise: float = 0.03

    def __post_init__(self):
        if self.image_size < 32:
            raise ValueError("image_size must be at least 32")
        lo, hi = self.shapes_per_image
        if not (1 <= lo <= hi):
            raise ValueError(f"bad shapes_per_image range {self.shapes_per_image}")


def _shape_mask(size, kind, cy, cx, r):
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    if kind == "disk":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
    if kind == "square":
        return (np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r)
    if kind == "plus":
        return ((np.abs(yy - cy) <= r // 3) & (np.abs(xx - cx) <= r)) \
            | ((np.abs(yy - cy) <= r) & (np.abs(xx - cx) <= r // 3))
    if kind == "diamond":
        return np.abs(yy - cy) + np.abs(xx - cx) <= r
    raise ValueError(f"unknown shape kind {kind!r}")


def _class_for(kind, context):
    if kind == "disk":
        return 1 if context == 0 else 2
    if kind == "square":
        return 3 if context == 0 else 4
    return 5 if kind == "plus" else 6


def generate_sample(spec, rng):
    """-> (image float32 [3,S,S], mask int64 [S,S], context bit)"""
    s = spec.image_size
    context = int(rng.integers(0, 2))
    img = rng.uniform(0.45, 0.55, (3, s, s))
    mask = np.zeros((s, s), dtype=np.int64)
    kinds = list(_APPEARANCE)
    lo, hi = spec.shapes_per_image
    for _ in range(int(rng.integers(lo, hi + 1))):
        kind = kinds[int(rng.integers(0, len(kinds)))]
        r = int(rng.integers(5, 11))
        margin = 2 + r
        cy = int(rng.integers(margin, s - margin))
        cx = int(rng.integers(margin, s - margin))
        m = _shape_mask(s, kind, cy, cx, r)
        for ch, v in enumerate(_APPEARANCE[kind]):
            img[ch][m] = v
        mask[m] = _class_for(kind, context)
    # context marker: stamped last at a random spot clear of every shape,
    # so the cue is never occluded (it stays background in the mask)
    mr = MARKER_RADIUS
    for _ in range(100):
        my = int(rng.integers(mr, s - mr))
        mx = int(rng.integers(mr, s - mr))
        if (mask[my - mr:my + mr + 1, mx - mr:mx + mr + 1] == 0).all():
            break
    for ch, v in enumerate(MARKER_COLORS[context]):
        img[ch, my - mr:my + mr + 1, mx - mr:mx + mr + 1] = v
    img += rng.normal(0.0, spec.noise, img.shape)
    return np.clip(img, 0.0, 1.0).astype(np.float32), mask, context


def generate_split(spec, n, stream):
    images = np.empty((n, 3, spec.image_size, spec.image_size), dtype=np.float32)
    masks = np.empty((n, spec.image_size, spec.image_size), dtype=np.int64)
    contexts = np.empty(n, dtype=np.int64)
    for i in range(n):
        rng = np.random.default_rng(
            np.random.SeedSequence([spec.seed, stream, i]))
        images[i], masks[i], contexts[i] = generate_sample(spec, rng)
    return images, masks, contexts


def write_dataset(spec, directory):
    """Emit train/val splits in the binary+manifest container format."""
    from pathlib import Path
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, n, stream in (("train", spec.num_train, 0), ("val", spec.num_val, 1)):
        images, masks, contexts = generate_split(spec, n, stream)
        path = directory / f"{name}.ckpt"
        save_checkpoint(path, {"images": images, "masks": masks,
                               "contexts": contexts},
                        extra={"num_classes": NUM_CLASSES,
                               "ambiguous_classes": list(AMBIGUOUS_CLASSES),
                               "image_size": spec.image_size,
                               "seed": spec.seed, "split": name})
        paths[name] = path
    return paths


def load_dataset(path):
    """-> (images, masks, contexts, extra)"""
    arrays, extra = load_checkpoint(path)
    for key in ("images", "masks"):
        if key not in arrays:
            raise ValueError(f"{path}: not a segmentation dataset "
                             f"(missing {key!r})")
    return arrays["images"], arrays["masks"], arrays.get("contexts"), extra


def audit_balance(masks, contexts):
    """Pixel counts per class and the worst paired-ambiguous-class imbalance
    (0 = perfectly balanced)."""
    counts = np.bincount(masks.ravel(), minlength=NUM_CLASSES)
    worst = 0.0
    for a, b in AMBIGUOUS_PAIRS:
        hi, lo = max(counts[a], counts[b]), min(counts[a], counts[b])
        if hi == 0:
            continue
        worst = max(worst, (hi - lo) / hi)
    return counts, worst


def oracle_predict(image, with_context):
    """Analytic nearest-appearance classifier.

    Classifies each pixel by the closest known appearance color; ambiguous
    shape pixels are resolved with the marker cue when with_context is
    True, otherwise by a fixed guess (the context-0 label).
    """
    s = image.shape[1]
    colors = [np.array([0.5, 0.5, 0.5])] + \
        [np.array(v) for v in _APPEARANCE.values()] + \
        [np.array(v) for v in MARKER_COLORS]
    dist = np.stack([((image - c[:, None, None]) ** 2).sum(axis=0)
                     for c in colors])
    nearest = dist.argmin(axis=0)  # 0 bg, 1..4 shapes, 5/6 the two marker hues
    context = 1 if (nearest == 6).sum() > (nearest == 5).sum() else 0
    pred = np.zeros((s, s), dtype=np.int64)
    ctx = context if with_context else 0
    pred[nearest == 1] = _class_for("disk", ctx)
    pred[nearest == 2] = _class_for("square", ctx)
    pred[nearest == 3] = 5
    pred[nearest == 4] = 6
    return pred


def ambiguous_miou(preds, masks):
    """Mean IoU over the four context-dependent classes only."""
    cm = ConfusionMatrix(NUM_CLASSES)
    for p, t in zip(preds, masks):
        cm.update(p, t)
    iou = cm.iou_per_class()[list(AMBIGUOUS_CLASSES)]
    valid = ~np.isnan(iou)
    return float(iou[valid].mean()) if valid.any() else 0.0


def self_test(spec, n=50):
    """Generator property check: with the context cue the analytic oracle
    nearly solves ambiguous classes; without it, it cannot.
    Returns (mIoU with context, mIoU without context)."""
    images, masks, _ = generate_split(spec, n, stream=2)
    with_ctx = [oracle_predict(im, True) for im in images]
    without = [oracle_predict(im, False) for im in images]
    return ambiguous_miou(with_ctx, masks), ambiguous_miou(without, masks)
