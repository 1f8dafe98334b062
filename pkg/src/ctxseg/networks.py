"""Network assemblies: dilated stride-8 FCN, its context-encoded extension,
and the three 14-layer CIFAR-style residual variants."""

from dataclasses import dataclass, field

import numpy as np

from . import functional as F
from .autodiff import Tensor, no_grad
from .context import ContextModule
from .encoding import EncodingLayer
from .layers import BatchNorm, Conv2d, Linear
from .module import Module


# ---------------------------------------------------------------------------
# configuration


@dataclass
class BackboneConfig:
    stage_widths: tuple = (32, 64, 128, 256)
    blocks_per_stage: tuple = (2, 2, 2, 2)
    dilations: tuple = (1, 1, 2, 4)
    stem_width: int = 32
    output_stride: int = 8


@dataclass
class EncNetConfig:
    backbone: BackboneConfig = field(default_factory=BackboneConfig)
    num_classes: int = 6
    codewords: int = 32
    se_loss_weight: float = 0.2
    stage3_branch: bool = True


@dataclass
class CifarNetConfig:
    variant: str = "plain"           # plain | se | encoding
    width: int = 64                  # stage-1 channels
    codewords: int = 16
    se_reduction: int = 16
    stochastic_smoothing: bool = True
    num_classes: int = 10


# ---------------------------------------------------------------------------
# small structural ops


def subsample2(x):
    """Every-other-pixel shortcut downsampling."""
    out_data = x.data[:, :, ::2, ::2].copy()

    def bwd(g):
        dx = np.zeros_like(x.data)
        dx[:, :, ::2, ::2] = g
        x._accum(dx)

    return Tensor._result(out_data, (x,), bwd)


def pad_channels(x, extra):
    """Append `extra` zero-valued channels (identity-shortcut widening)."""
    n, c, h, w = x.shape
    out_data = np.zeros((n, c + extra, h, w), dtype=x.dtype)
    out_data[:, :c] = x.data

    def bwd(g):
        x._accum(g[:, :c])

    return Tensor._result(out_data, (x,), bwd)


# ---------------------------------------------------------------------------
# residual blocks


class BasicBlock(Module):
    """Two 3x3 convolutions with an identity shortcut.

    Downsampling halves the grid with a strided first conv; the shortcut is
    subsampled and zero-padded to the new width, so the block stays free of
    extra weighted layers.
    """

    def __init__(self, in_ch, out_ch, rng, stride=1, dilation=1, dtype=np.float64):
        super().__init__()
        self.stride = stride
        self.in_ch, self.out_ch = in_ch, out_ch
        self.conv1 = Conv2d(in_ch, out_ch, 3, rng, stride=stride, padding=dilation,
                            dilation=dilation, bias=False, dtype=dtype)
        self.bn1 = BatchNorm(out_ch, dtype=dtype)
        self.conv2 = Conv2d(out_ch, out_ch, 3, rng, padding=dilation,
                            dilation=dilation, bias=False, dtype=dtype)
        self.bn2 = BatchNorm(out_ch, dtype=dtype)

    def shortcut(self, x):
        if self.stride == 2:
            x = subsample2(x)
        if self.out_ch > self.in_ch:
            x = pad_channels(x, self.out_ch - self.in_ch)
        return x

    def residual(self, x):
        out = F.relu(self.bn1(self.conv1(x)))
        return self.bn2(self.conv2(out))

    def __call__(self, x):
        return F.relu(self.shortcut(x) + self.residual(x))


class SEBlock(BasicBlock):
    """Basicblock whose residual branch is gated by squeeze-and-excitation."""

    def __init__(self, in_ch, out_ch, rng, reduction=16, stride=1, dtype=np.float64):
        super().__init__(in_ch, out_ch, rng, stride=stride, dtype=dtype)
        hidden = max(out_ch // reduction, 1)
        self.fc1 = Linear(out_ch, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, out_ch, rng, dtype=dtype)

    def __call__(self, x):
        res = self.residual(x)
        z = res.mean(axis=(2, 3))
        gate = F.sigmoid(self.fc2(F.relu(self.fc1(z))))
        return F.relu(self.shortcut(x) + F.channel_scale(res, gate))


class ContextEncodingBlock(BasicBlock):
    """Basicblock whose residual branch is scaled by factors predicted from a
    global residual encoding (1x1 channel reduction, concat + L2 descriptor,
    fully connected sigmoid gate). The shortcut stays unscaled so the
    identity mapping is preserved."""

    def __init__(self, in_ch, out_ch, rng, codewords=16, stride=1,
                 stochastic=True, dtype=np.float64):
        super().__init__(in_ch, out_ch, rng, stride=stride, dtype=dtype)
        reduced = max(out_ch // 4, 1)
        self.reduce = Conv2d(out_ch, reduced, 1, rng, bias=False, dtype=dtype)
        self.reduce_bn = BatchNorm(reduced, dtype=dtype)
        self.encoder = EncodingLayer(codewords, reduced, rng, variant="concat",
                                     stochastic=stochastic, dtype=dtype)
        self.fc = Linear(self.encoder.out_features, out_ch, rng, dtype=dtype)

    def __call__(self, x):
        res = self.residual(x)
        z = F.relu(self.reduce_bn(self.reduce(res)))
        n, c, h, w = z.shape
        feats = z.reshape(n, c, h * w).transpose((0, 2, 1))
        desc = self.encoder(feats)
        gate = F.sigmoid(self.fc(desc))
        return F.relu(self.shortcut(x) + F.channel_scale(res, gate))


# ---------------------------------------------------------------------------
# segmentation backbone (stride 8, dilated stages 3-4)


class Backbone(Module):
    """Residual feature extractor at output stride 8.

    Two strided stem convolutions bring the grid to 1/4; stage 2 halves it
    once more; stages 3 and 4 keep the grid and dilate instead (rates from
    the config, default 2 and 4).
    """

    def __init__(self, config, rng, in_ch=3, dtype=np.float64):
        super().__init__()
        self.config = config
        w = config.stage_widths
        self.stem1 = Conv2d(in_ch, config.stem_width, 3, rng, stride=2, padding=1,
                            bias=False, dtype=dtype)
        self.stem_bn1 = BatchNorm(config.stem_width, dtype=dtype)
        self.stem2 = Conv2d(config.stem_width, config.stem_width, 3, rng, stride=2,
                            padding=1, bias=False, dtype=dtype)
        self.stem_bn2 = BatchNorm(config.stem_width, dtype=dtype)

        def make_stage(in_ch, out_ch, blocks, stride, dilation):
            layers = [BasicBlock(in_ch, out_ch, rng, stride=stride,
                                 dilation=dilation, dtype=dtype)]
            for _ in range(blocks - 1):
                layers.append(BasicBlock(out_ch, out_ch, rng, dilation=dilation,
                                         dtype=dtype))
            return layers

        b = config.blocks_per_stage
        d = config.dilations
        self.stage1 = make_stage(config.stem_width, w[0], b[0], 1, d[0])
        self.stage2 = make_stage(w[0], w[1], b[1], 2, d[1])
        self.stage3 = make_stage(w[1], w[2], b[2], 1, d[2])
        self.stage4 = make_stage(w[2], w[3], b[3], 1, d[3])

    def __call__(self, x):
        """-> (stage3 features, stage4 features)"""
        out = F.relu(self.stem_bn1(self.stem1(x)))
        out = F.relu(self.stem_bn2(self.stem2(out)))
        for block in self.stage1:
            out = block(out)
        for block in self.stage2:
            out = block(out)
        for block in self.stage3:
            out = block(out)
        s3 = out
        for block in self.stage4:
            out = block(out)
        return s3, out


def _check_divisible(x, stride):
    h, w = x.shape[2], x.shape[3]
    if h % stride or w % stride:
        raise ValueError(f"input spatial size {h}x{w} must be divisible by {stride}")


class FCN(Module):
    """Dilated backbone + 1x1 classifier + 8x bilinear upsampling."""

    def __init__(self, config, rng, num_classes, in_ch=3, dtype=np.float64):
        super().__init__()
        self.backbone = Backbone(config, rng, in_ch=in_ch, dtype=dtype)
        self.classifier = Conv2d(config.stage_widths[3], num_classes, 1, rng,
                                 dtype=dtype)
        self.num_classes = num_classes

    def __call__(self, x):
        _check_divisible(x, self.backbone.config.output_stride)
        _, s4 = self.backbone(x)
        logits = self.classifier(s4)
        return F.bilinear_resize(logits, x.shape[2], x.shape[3])


class EncNet(Module):
    """FCN with a context module gating the stage-4 features before the
    classifier and an auxiliary presence-only module on stage 3."""

    def __init__(self, config, rng, in_ch=3, dtype=np.float64):
        super().__init__()
        bb = config.backbone
        self.config = config
        self.backbone = Backbone(bb, rng, in_ch=in_ch, dtype=dtype)
        self.head = ContextModule(bb.stage_widths[3], config.num_classes,
                                  config.codewords, rng, dtype=dtype)
        if config.stage3_branch:
            self.aux = ContextModule(bb.stage_widths[2], config.num_classes,
                                     config.codewords, rng, with_attention=False,
                                     dtype=dtype)
        self.classifier = Conv2d(bb.stage_widths[3], config.num_classes, 1, rng,
                                 dtype=dtype)

    def __call__(self, x):
        """-> (seg_logits, presence probs from the head, presence probs from
        the stage-3 branch or None)"""
        _check_divisible(x, self.config.backbone.output_stride)
        s3, s4 = self.backbone(x)
        y, probs4, _ = self.head(s4)
        probs3 = None
        if self.config.stage3_branch:
            _, probs3, _ = self.aux(s3)
        logits = self.classifier(y)
        logits = F.bilinear_resize(logits, x.shape[2], x.shape[3])
        return logits, probs4, probs3


# ---------------------------------------------------------------------------
# 14-layer CIFAR-style nets


class CifarNet(Module):
    """3x3 stem, three stages of two blocks, global average pooling, fc.

    Channels double at each downsampling (stages 2 and 3). The block flavor
    is chosen by the config variant.
    """

    def __init__(self, config, rng, dtype=np.float64):
        super().__init__()
        d = config.width
        self.config = config
        self.stem = Conv2d(3, d, 3, rng, padding=1, bias=False, dtype=dtype)
        self.stem_bn = BatchNorm(d, dtype=dtype)

        def block(in_ch, out_ch, stride):
            if config.variant == "plain":
                return BasicBlock(in_ch, out_ch, rng, stride=stride, dtype=dtype)
            if config.variant == "se":
                return SEBlock(in_ch, out_ch, rng, reduction=config.se_reduction,
                               stride=stride, dtype=dtype)
            if config.variant == "encoding":
                return ContextEncodingBlock(in_ch, out_ch, rng,
                                            codewords=config.codewords,
                                            stride=stride,
                                            stochastic=config.stochastic_smoothing,
                                            dtype=dtype)
            raise ValueError(f"unknown variant {config.variant!r}")

        self.blocks = [
            block(d, d, 1), block(d, d, 1),
            block(d, 2 * d, 2), block(2 * d, 2 * d, 1),
            block(2 * d, 4 * d, 2), block(4 * d, 4 * d, 1),
        ]
        self.fc = Linear(4 * d, config.num_classes, rng, dtype=dtype)

    def __call__(self, x):
        out = F.relu(self.stem_bn(self.stem(x)))
        for blk in self.blocks:
            out = blk(out)
        return self.fc(out.mean(axis=(2, 3)))


# ---------------------------------------------------------------------------
# builders and introspection


def build_fcn(config, num_classes, seed=0, dtype=np.float64):
    return FCN(config, np.random.default_rng(seed), num_classes, dtype=dtype)


def build_encnet(config, seed=0, dtype=np.float64):
    return EncNet(config, np.random.default_rng(seed), dtype=dtype)


def build_cifar_net(config, seed=0, dtype=np.float64):
    return CifarNet(config, np.random.default_rng(seed), dtype=dtype)


def iter_modules(model):
    yield model
    for _, child in model._children():
        yield from iter_modules(child)


def conv_layers(model):
    return [m for m in iter_modules(model) if isinstance(m, Conv2d)]


def count_weighted_layers(model):
    """Convolutional plus fully connected layers."""
    return sum(1 for m in iter_modules(model) if isinstance(m, (Conv2d, Linear)))


def stage_dilations(backbone):
    return [stage[0].conv1.dilation for stage in
            (backbone.stage1, backbone.stage2, backbone.stage3, backbone.stage4)]


# ---------------------------------------------------------------------------
# multi-scale evaluation


def _valid_size(v, stride=8):
    return max(stride, int(round(v / stride)) * stride)


def multi_scale_eval(model, image, scales, flip=True, stride=8):
    """Average class probabilities over rescaled (and mirrored) forwards.

    image: [C,H,W] array; returns [num_classes,H,W] probabilities.
    """
    if len(scales) == 0:
        raise ValueError("scales must be nonempty")
    image = np.asarray(image)
    c, h, w = image.shape
    acc = None
    count = 0
    with no_grad():
        for s in scales:
            sh, sw = _valid_size(h * s, stride), _valid_size(w * s, stride)
            x = F.bilinear_resize(Tensor(image[None]), sh, sw)
            variants = [x.numpy()]
            if flip:
                variants.append(x.numpy()[:, :, :, ::-1].copy())
            for i, v in enumerate(variants):
                out = model(Tensor(v))
                logits = out[0] if isinstance(out, tuple) else out
                probs = F.softmax(logits, axis=1)
                probs = F.bilinear_resize(probs, h, w).numpy()[0]
                if i == 1:
                    probs = probs[:, :, ::-1]
                acc = probs if acc is None else acc + probs
                count += 1
    return acc / count
