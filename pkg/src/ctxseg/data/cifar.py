"""CIFAR-10 binary record I/O plus a deterministic surrogate generator.

Record layout: 3073 bytes — one label byte followed by 3072 pixel bytes
(red plane, green plane, blue plane; each 32x32 row-major). The surrogate
generator emits the same format with globally context-dependent classes,
for environments where the real dataset is not on disk.
"""

from pathlib import Path

import numpy as np

RECORD_BYTES = 3073
IMAGE_SHAPE = (3, 32, 32)

# per-channel standardization constants (fractions of full scale)
CIFAR_MEAN = np.array([0.4914, 0.4822, 0.4465])
CIFAR_STD = np.array([0.2470, 0.2435, 0.2616])


def read_cifar_file(path):
    """-> (images uint8 [N,3,32,32], labels int64 [N])"""
    raw = Path(path).read_bytes()
    if len(raw) == 0:
        raise ValueError(f"{path}: empty file")
    if len(raw) % RECORD_BYTES != 0:
        complete = (len(raw) // RECORD_BYTES) * RECORD_BYTES
        raise ValueError(
            f"{path}: file length {len(raw)} is not a multiple of "
            f"{RECORD_BYTES}; record truncated at byte offset {complete} "
            f"(expected {complete + RECORD_BYTES} bytes)")
    data = np.frombuffer(raw, dtype=np.uint8).reshape(-1, RECORD_BYTES)
    labels = data[:, 0].astype(np.int64)
    if labels.max(initial=0) > 9:
        bad = int(np.argmax(labels > 9))
        raise ValueError(f"{path}: record {bad} has label {labels[bad]} "
                         f"outside [0,10)")
    images = data[:, 1:].reshape(-1, *IMAGE_SHAPE)
    return images, labels


def write_cifar_file(path, images, labels):
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels)
    if images.shape[1:] != IMAGE_SHAPE:
        raise ValueError(f"images must be [N,3,32,32], got {images.shape}")
    if labels.shape != (images.shape[0],):
        raise ValueError(f"{images.shape[0]} images but {labels.shape} labels")
    records = np.empty((images.shape[0], RECORD_BYTES), dtype=np.uint8)
    records[:, 0] = labels
    records[:, 1:] = images.reshape(images.shape[0], -1)
    Path(path).write_bytes(records.tobytes())


def standardize(images, mean=CIFAR_MEAN, std=CIFAR_STD, dtype=np.float32):
    """uint8 [N,3,32,32] -> float, scaled to [0,1] then per-channel normalized."""
    x = images.astype(dtype) / 255.0
    return (x - mean.reshape(1, 3, 1, 1).astype(dtype)) \
        / std.reshape(1, 3, 1, 1).astype(dtype)


def load_files(paths):
    """Concatenate several record files into one split."""
    images, labels = [], []
    for p in paths:
        im, lb = read_cifar_file(p)
        images.append(im)
        labels.append(lb)
    return np.concatenate(images), np.concatenate(labels)


# ---------------------------------------------------------------------------
# surrogate dataset: 10 classes = 5 local shapes x 2 global background tints


def _draw_shape(img, shape_type, cy, cx, value):
    yy, xx = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    if shape_type == 0:                                   # square
        m = (np.abs(yy - cy) <= 5) & (np.abs(xx - cx) <= 5)
    elif shape_type == 1:                                 # disk
        m = (yy - cy) ** 2 + (xx - cx) ** 2 <= 36
    elif shape_type == 2:                                 # horizontal bar
        m = (np.abs(yy - cy) <= 2) & (np.abs(xx - cx) <= 9)
    elif shape_type == 3:                                 # vertical bar
        m = (np.abs(yy - cy) <= 9) & (np.abs(xx - cx) <= 2)
    else:                                                 # diamond
        m = np.abs(yy - cy) + np.abs(xx - cx) <= 7
    img[:, m] = value


def generate_surrogate(n, seed):
    """Images whose class = (local shape, global tint); the shape patch is
    tint-neutral and the tint is weak relative to the pixel noise, so the
    second factor is only reliably recoverable by pooling statistics over
    the whole image. Distractor blobs share the shape's value, so the
    shape factor must be read from geometry under heavy noise."""
    rng = np.random.default_rng(seed)
    images = np.zeros((n, 3, 32, 32), dtype=np.uint8)
    labels = rng.integers(0, 10, n)
    yy, xx = np.meshgrid(np.arange(32), np.arange(32), indexing="ij")
    for i in range(n):
        label = int(labels[i])
        shape_type, tint = label % 5, label // 5
        img = rng.normal(110.0, 16.0, (3, 32, 32))
        img[0 if tint == 0 else 2] += 3.0                 # faint red vs blue cast
        value = float(rng.normal(172.0, 6.0))
        for _ in range(int(rng.integers(2, 5))):          # clutter, same value
            dy, dx = rng.integers(3, 29, 2)
            rr = int(rng.integers(2, 4))
            if rng.random() < 0.5:
                m = (yy - dy) ** 2 + (xx - dx) ** 2 <= rr * rr
            else:
                m = (np.abs(yy - dy) <= rr) & (np.abs(xx - dx) <= rr)
            img[:, m] = value
        cy, cx = rng.integers(10, 22, 2)
        _draw_shape(img, shape_type, int(cy), int(cx), value)
        img += rng.normal(0.0, 14.0, img.shape)
        images[i] = np.clip(img, 0, 255).astype(np.uint8)
    return images, labels.astype(np.int64)


def write_surrogate(directory, n_train, n_test, seed):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    tr = generate_surrogate(n_train, seed)
    te = generate_surrogate(n_test, seed + 1)
    write_cifar_file(directory / "train.bin", *tr)
    write_cifar_file(directory / "test.bin", *te)
    return directory / "train.bin", directory / "test.bin"
