"""Training harness: seeded shuffling, epoch loop, CSV metrics, checkpoints.

Reproducibility contract: every stochastic draw flows from named rng
streams derived from the run seed (shuffle, augmentation keyed by
(seed, epoch, sample index)), so repeated runs with the same config+seed
produce byte-identical CSV logs and checkpoints. Wall-clock timing is
logged as 0.0 unless explicitly enabled, to keep the CSV deterministic.
"""

import time
from pathlib import Path

import numpy as np

from . import functional as F
from .augment import augment_sample, sample_rng
from .autodiff import Tensor, no_grad
from .checkpoint import save_checkpoint
from .context import presence_targets_batch
from .metrics import ConfusionMatrix, MetricsReport
from .networks import multi_scale_eval
from .optim import SGD, cosine_lr, poly_lr, total_loss
from .syncbn import convert_to_syncbn

CSV_HEADER = "epoch,iter,lr,seg_loss,se_loss,total_loss,pixAcc,mIoU,wall_s,sync_events"


class TrainingDiverged(RuntimeError):
    pass


def epoch_batches(n, batch_size, rng):
    """Shuffled index batches; an incomplete final batch is discarded."""
    if batch_size > n:
        raise ValueError(f"batch size {batch_size} exceeds dataset size {n}")
    perm = rng.permutation(n)
    for start in range(0, n - batch_size + 1, batch_size):
        yield perm[start:start + batch_size]


def _fmt(v):
    return "" if v is None else f"{v:.6f}"


class CsvLogger:
    def __init__(self, path):
        self.path = Path(path)
        self.path.write_text(CSV_HEADER + "\n")

    def row(self, epoch, iteration, lr, seg, se, total, pix_acc, miou, wall,
            sync_events):
        line = (f"{epoch},{iteration},{lr:.8f},{_fmt(seg)},{_fmt(se)},"
                f"{_fmt(total)},{_fmt(pix_acc)},{_fmt(miou)},{wall:.3f},"
                f"{sync_events}\n")
        with open(self.path, "a") as f:
            f.write(line)


def _check_finite(loss_value, model, out_dir, epoch, iteration):
    if np.isfinite(loss_value):
        return
    snap = Path(out_dir) / "diverged.ckpt"
    save_checkpoint(snap, model.state_arrays(),
                    extra={"epoch": epoch, "iteration": iteration,
                           "loss": repr(loss_value)})
    raise TrainingDiverged(
        f"loss became {loss_value} at epoch {epoch} iteration {iteration}; "
        f"diagnostic snapshot written to {snap}")


def evaluate_segmentation(model, images, masks, num_classes, batch_size=8,
                          ignore_label=255, scales=None, skip_background=False):
    """Run the model over a split and score predictions."""
    model.eval()
    cm = ConfusionMatrix(num_classes, ignore_label)
    with no_grad():
        if scales:
            for img, mask in zip(images, masks):
                probs = multi_scale_eval(model, img, scales)
                cm.update(probs.argmax(axis=0), mask)
        else:
            for start in range(0, len(images), batch_size):
                x = Tensor(np.ascontiguousarray(images[start:start + batch_size]))
                out = model(x)
                logits = out[0] if isinstance(out, tuple) else out
                cm.update(logits.numpy().argmax(axis=1),
                          masks[start:start + batch_size])
    return MetricsReport(cm.pixel_accuracy(), cm.mean_iou(skip_background),
                         cm.iou_per_class()), cm


def train_segmentation(model, train_data, val_data, *, num_classes, epochs,
                       batch_size, base_lr, out_dir, seed=0, momentum=0.9,
                       weight_decay=1e-4, se_alpha=0.2, ignore_label=255,
                       augment_cfg=None, syncbn_devices=0, log_wall=False,
                       dtype=np.float32):
    """-> (history rows, checkpoint path). train/val_data: (images, masks)."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, masks = train_data
    counter = None
    if syncbn_devices > 1:
        counter = convert_to_syncbn(model, syncbn_devices)
    opt = SGD(model.parameters(), base_lr, momentum, weight_decay)
    logger = CsvLogger(out_dir / "metrics.csv")
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
    iters_per_epoch = len(images) // batch_size
    total_iters = epochs * iters_per_epoch
    history = []
    iteration = 0
    for epoch in range(epochs):
        model.train()
        if counter is not None:
            counter.reset()
        t0 = time.perf_counter()
        sums = {"seg": 0.0, "se": 0.0, "total": 0.0}
        saw_se = False
        for idx in epoch_batches(len(images), batch_size, shuffle_rng):
            lr = poly_lr(base_lr, iteration, total_iters)
            opt.lr = lr
            if augment_cfg is not None:
                batch_im = np.empty((len(idx), images.shape[1],
                                     augment_cfg.crop_size,
                                     augment_cfg.crop_size), dtype=dtype)
                batch_mk = np.empty((len(idx), augment_cfg.crop_size,
                                     augment_cfg.crop_size), dtype=np.int64)
                for j, i in enumerate(idx):
                    im, mk = augment_sample(images[i], masks[i], augment_cfg,
                                            sample_rng(seed, epoch, int(i)))
                    batch_im[j], batch_mk[j] = im, mk
            else:
                batch_im = images[idx].astype(dtype)
                batch_mk = masks[idx]
            x = Tensor(np.ascontiguousarray(batch_im))
            out = model(x)
            if isinstance(out, tuple):
                logits, p4, p3 = out
                presence = presence_targets_batch(batch_mk, num_classes,
                                                  ignore_label).astype(dtype)
                loss, seg, se = total_loss(logits, batch_mk, [p4, p3], presence,
                                           se_alpha, ignore_label)
            else:
                loss, seg, se = total_loss(out, batch_mk, [], None, se_alpha,
                                           ignore_label)
            _check_finite(loss.item(), model, out_dir, epoch, iteration)
            opt.zero_grad()
            loss.backward()
            opt.step()
            sums["seg"] += seg.item()
            sums["total"] += loss.item()
            if se is not None:
                sums["se"] += se.item()
                saw_se = True
            iteration += 1
        report, _ = evaluate_segmentation(model, val_data[0], val_data[1],
                                          num_classes, batch_size, ignore_label)
        wall = time.perf_counter() - t0 if log_wall else 0.0
        events = (counter.forward_syncs + counter.backward_syncs) if counter else 0
        k = iters_per_epoch
        row = dict(epoch=epoch, iteration=iteration,
                   lr=poly_lr(base_lr, iteration - 1, total_iters),
                   seg_loss=sums["seg"] / k,
                   se_loss=sums["se"] / k if saw_se else None,
                   total_loss=sums["total"] / k,
                   pix_acc=report.pix_acc, miou=report.mean_iou)
        logger.row(row["epoch"], row["iteration"], row["lr"], row["seg_loss"],
                   row["se_loss"], row["total_loss"], row["pix_acc"],
                   row["miou"], wall, events)
        history.append(row)
    ckpt = out_dir / "model.ckpt"
    save_checkpoint(ckpt, model.state_arrays(),
                    extra={"epochs": epochs, "seed": seed,
                           "num_classes": num_classes})
    return history, ckpt


def evaluate_cifar(model, images, labels, batch_size=128):
    model.eval()
    correct = 0
    with no_grad():
        for start in range(0, len(images), batch_size):
            x = Tensor(np.ascontiguousarray(images[start:start + batch_size]))
            pred = model(x).numpy().argmax(axis=1)
            correct += int((pred == labels[start:start + batch_size]).sum())
    return correct / len(images)


def _cifar_augment(batch, rng, pad=4):
    """Random horizontal flip and shifted crop from a zero-padded canvas."""
    n, c, h, w = batch.shape
    out = np.empty_like(batch)
    flips = rng.random(n) < 0.5
    offs = rng.integers(0, 2 * pad + 1, (n, 2))
    canvas = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=batch.dtype)
    for i in range(n):
        img = batch[i, :, :, ::-1] if flips[i] else batch[i]
        canvas[:] = 0.0
        canvas[:, pad:pad + h, pad:pad + w] = img
        oy, ox = offs[i]
        out[i] = canvas[:, oy:oy + h, ox:ox + w]
    return out


def train_cifar(model, train_data, test_data, *, epochs, batch_size, base_lr,
                out_dir, seed=0, momentum=0.9, weight_decay=5e-4, augment=True,
                log_wall=False, dtype=np.float32):
    """-> (history rows, checkpoint path). train/test_data: (images, labels)
    with images already standardized to float."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    images, labels = train_data
    opt = SGD(model.parameters(), base_lr, momentum, weight_decay)
    logger = CsvLogger(out_dir / "metrics.csv")
    shuffle_rng = np.random.default_rng(np.random.SeedSequence([seed, 17]))
    history = []
    iteration = 0
    for epoch in range(epochs):
        model.train()
        lr = cosine_lr(base_lr, epoch, epochs)
        opt.lr = lr
        t0 = time.perf_counter()
        loss_sum, batches = 0.0, 0
        aug_rng = np.random.default_rng(np.random.SeedSequence([seed, 23, epoch]))
        for idx in epoch_batches(len(images), batch_size, shuffle_rng):
            batch = images[idx].astype(dtype)
            if augment:
                batch = _cifar_augment(batch, aug_rng)
            x = Tensor(np.ascontiguousarray(batch))
            logits = model(x)
            n, ncls = logits.shape
            loss = F.cross_entropy_2d(logits.reshape(n, ncls, 1, 1),
                                      labels[idx].reshape(n, 1, 1))
            _check_finite(loss.item(), model, out_dir, epoch, iteration)
            opt.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += loss.item()
            batches += 1
            iteration += 1
        acc = evaluate_cifar(model, test_data[0], test_data[1], batch_size)
        wall = time.perf_counter() - t0 if log_wall else 0.0
        row = dict(epoch=epoch, iteration=iteration, lr=lr,
                   loss=loss_sum / batches, accuracy=acc)
        logger.row(epoch, iteration, lr, row["loss"], None, row["loss"], acc,
                   None, wall, 0)
        history.append(row)
    ckpt = out_dir / "model.ckpt"
    save_checkpoint(ckpt, model.state_arrays(),
                    extra={"epochs": epochs, "seed": seed})
    return history, ckpt
