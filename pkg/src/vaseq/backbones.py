"""Frame feature extractors: a VGG-style stack, a ResNet-bottleneck variant,
and a dense-block variant, all taking 96 x 96 x 3 inputs scaled to [-1, 1].

Each variant keeps its published structure (stage layout, kernel sizes,
pooling placement) with the filter counts scaled by ``width`` so the nets run
at desk scale; width 64 reproduces the full published tables.  Stems that
would need fractional output extents at 96 x 96 (7x7 stride-2 convolutions,
3x3 stride-2 pools) use the nearest even-kernel equivalents, since every
layer here must satisfy the exact output-extent arithmetic.

The resulting spatial sizes are: VGG 96->48->24->12->6->3 (flattened);
ResNet 96->48(stem)->24(pool)->12->6->3 with a global average pool;
dense variant the same as ResNet.

Trainability masks: ``frozen`` (fixed feature extractor), ``last-conv``
(final conv stage only) or ``all``.  Batch normalization runs in training
mode only inside trainable stages; frozen stages always use their running
averages, so a frozen backbone is byte-stable across training steps.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .cells import init_uniform, zeros


@dataclass
class BackboneConfig:
    variant: str = "vgg"      # vgg | resnet | dense
    width: int = 4            # base filter count; 64 reproduces the full tables
    trainable: str = "all"    # frozen | last-conv | all


class _Conv:
    def __init__(self, name, stage, rng, dtype, in_depth, out_depth,
                 size, stride=1, pad=0):
        self.name = name
        self.stage = stage
        self.spec = ad.ConvSpec(filter_size=size, stride=stride, pad_w=pad,
                                pad_h=pad, in_depth=in_depth, out_depth=out_depth)
        fan_in = size * size * in_depth
        self.w = init_uniform(rng, (size, size, in_depth, out_depth), fan_in,
                              dtype, gain=np.sqrt(6.0))
        self.b = zeros(out_depth, dtype)

    def __call__(self, x):
        return ad.conv2d(x, self.spec, self.w, self.b)

    def named_params(self):
        return {f"{self.name}/w": self.w, f"{self.name}/b": self.b}


class _BatchNorm:
    def __init__(self, name, stage, dtype, depth):
        self.name = name
        self.stage = stage
        self.gamma = ad.leaf(np.ones(depth), dtype=dtype)
        self.beta = zeros(depth, dtype)
        self.running_mean = np.zeros(depth, dtype=dtype)
        self.running_var = np.ones(depth, dtype=dtype)

    def __call__(self, x, training):
        return ad.batchnorm(x, self.gamma, self.beta,
                            self.running_mean, self.running_var, training)

    def named_params(self):
        return {f"{self.name}/gamma": self.gamma, f"{self.name}/beta": self.beta}

    def named_buffers(self):
        return {f"{self.name}/running_mean": self.running_mean,
                f"{self.name}/running_var": self.running_var}


class Backbone:
    """Base holding registered conv/bn layers plus the mask bookkeeping."""

    def __init__(self, config: BackboneConfig, dtype):
        if config.trainable not in ("frozen", "last-conv", "all"):
            raise ValueError(f"unknown trainability mask {config.trainable!r}")
        self.config = config
        self.dtype = dtype
        self._convs = []
        self._bns = []
        self.last_stage = None
        self.feature_len = None

    def _register(self, layer):
        if isinstance(layer, _BatchNorm):
            self._bns.append(layer)
        else:
            self._convs.append(layer)
        return layer

    def named_params(self):
        out = {}
        for layer in self._convs + self._bns:
            out.update(layer.named_params())
        return out

    def named_buffers(self):
        out = {}
        for layer in self._bns:
            out.update(layer.named_buffers())
        return out

    def trainable_stages(self):
        if self.config.trainable == "all":
            return None  # every stage
        if self.config.trainable == "last-conv":
            return {self.last_stage}
        return set()

    def trainable_names(self):
        stages = self.trainable_stages()
        out = set()
        for layer in self._convs + self._bns:
            if stages is None or layer.stage in stages:
                out.update(layer.named_params())
        return out

    def last_block_names(self):
        out = set()
        for layer in self._convs + self._bns:
            if layer.stage == self.last_stage:
                out.update(layer.named_params())
        return out

    def _bn_training(self, bn, training):
        if not training:
            return False
        stages = self.trainable_stages()
        return stages is None or bn.stage in stages


class VggBackbone(Backbone):
    """Stacks of 3x3 stride-1 pad-1 convolutions with 2x2 stride-2 max pools:
    stage layout [2, 2, 3, 3, 3], widths x[1, 2, 4, 8, 8].  No batch norm.
    Output is the flattened 3 x 3 final stage."""

    STAGE_REPEATS = (2, 2, 3, 3, 3)
    STAGE_SCALE = (1, 2, 4, 8, 8)
    output_channels = property(lambda self: self._final_depth)

    def __init__(self, config, rng, dtype=np.float32, name="cnn"):
        super().__init__(config, dtype)
        depth = 3
        size = 96
        for s, (reps, scl) in enumerate(zip(self.STAGE_REPEATS, self.STAGE_SCALE)):
            out_depth = config.width * scl
            for c in range(reps):
                self._register(_Conv(f"{name}/s{s + 1}c{c + 1}", f"s{s + 1}",
                                     rng, dtype, depth, out_depth, 3, 1, 1))
                depth = out_depth
            size //= 2
        self.last_stage = f"s{len(self.STAGE_REPEATS)}"
        self.feature_len = size * size * depth
        self._final_size = size
        self._final_depth = depth

    def forward(self, x, training):
        i = 0
        for s, reps in enumerate(self.STAGE_REPEATS):
            for _ in range(reps):
                x = ad.relu(self._convs[i](x))
                i += 1
            x = ad.maxpool2d(x, 2, 2)
        n = x.value.shape[0]
        return ad.reshape(x, (n, self.feature_len))

    def feature_channel(self, index):
        return index % self._final_depth

    def scale_output_channels(self, alpha):
        last = self._convs[-1]
        last.w.value = last.w.value * alpha.astype(last.w.value.dtype)
        last.b.value = last.b.value * alpha.astype(last.b.value.dtype)


class ResNetBackbone(Backbone):
    """Bottleneck stages (1x1 reduce, 3x3, 1x1 expand-by-4 with projection
    shortcuts), one block per stage at desk scale, widths x[1, 2, 4, 8].
    Downsampling between stages is a 2x2 stride-2 average pool; features come
    from a global average pool."""

    STAGE_SCALE = (1, 2, 4, 8)

    def __init__(self, config, rng, dtype=np.float32, name="cnn"):
        super().__init__(config, dtype)
        w = config.width
        self._stem_conv = self._register(
            _Conv(f"{name}/stem", "stem", rng, dtype, 3, w, 6, 2, 2))
        self._stem_bn = self._register(_BatchNorm(f"{name}/stem/bn", "stem", dtype, w))
        depth = w
        self._blocks = []
        for s, scl in enumerate(self.STAGE_SCALE):
            stage = f"stage{s + 1}"
            base = w * scl
            out = base * 4
            block = {
                "reduce": self._register(_Conv(f"{name}/{stage}/a", stage, rng, dtype,
                                               depth, base, 1)),
                "reduce_bn": self._register(_BatchNorm(f"{name}/{stage}/a/bn", stage,
                                                       dtype, base)),
                "mid": self._register(_Conv(f"{name}/{stage}/b", stage, rng, dtype,
                                            base, base, 3, 1, 1)),
                "mid_bn": self._register(_BatchNorm(f"{name}/{stage}/b/bn", stage,
                                                    dtype, base)),
                "expand": self._register(_Conv(f"{name}/{stage}/c", stage, rng, dtype,
                                               base, out, 1)),
                "expand_bn": self._register(_BatchNorm(f"{name}/{stage}/c/bn", stage,
                                                       dtype, out)),
                "proj": self._register(_Conv(f"{name}/{stage}/proj", stage, rng, dtype,
                                             depth, out, 1)),
                "proj_bn": self._register(_BatchNorm(f"{name}/{stage}/proj/bn", stage,
                                                     dtype, out)),
            }
            self._blocks.append(block)
            depth = out
        self.last_stage = f"stage{len(self.STAGE_SCALE)}"
        self.feature_len = depth
        self.output_channels = depth

    def feature_channel(self, index):
        return index

    def scale_output_channels(self, alpha):
        for bn in (self._blocks[-1]["expand_bn"], self._blocks[-1]["proj_bn"]):
            a = alpha.astype(bn.gamma.value.dtype)
            bn.gamma.value = bn.gamma.value * a
            bn.beta.value = bn.beta.value * a

    def forward(self, x, training):
        bt = lambda bn: self._bn_training(bn, training)
        x = ad.relu(self._stem_bn(self._stem_conv(x), bt(self._stem_bn)))
        x = ad.maxpool2d(x, 2, 2)
        for s, block in enumerate(self._blocks):
            if s > 0:
                x = ad.avgpool2d(x, 2, 2)
            shortcut = block["proj_bn"](block["proj"](x), bt(block["proj_bn"]))
            y = ad.relu(block["reduce_bn"](block["reduce"](x), bt(block["reduce_bn"])))
            y = ad.relu(block["mid_bn"](block["mid"](y), bt(block["mid_bn"])))
            y = block["expand_bn"](block["expand"](y), bt(block["expand_bn"]))
            x = ad.relu(ad.add(y, shortcut))
        return ad.global_avgpool(x)


class DenseBackbone(Backbone):
    """Dense blocks of BN-ReLU-Conv composites (1x1 bottleneck at 4x growth,
    then 3x3 at growth rate) where every layer's input concatenates all prior
    feature maps; 1x1-conv + 2x2 average-pool transitions halve channels and
    spatial size.  Growth rate is 2 x width; blocks are [2, 2, 2, 2] layers at
    desk scale.  Features come from a final BN-ReLU + global average pool."""

    BLOCK_LAYERS = (2, 2, 2, 2)

    def __init__(self, config, rng, dtype=np.float32, name="cnn"):
        super().__init__(config, dtype)
        k = 2 * config.width
        depth = 2 * k
        self._stem_conv = self._register(
            _Conv(f"{name}/stem", "stem", rng, dtype, 3, depth, 6, 2, 2))
        self._blocks = []
        self._transitions = []
        for bi, layers in enumerate(self.BLOCK_LAYERS):
            stage = f"block{bi + 1}"
            block = []
            for li in range(layers):
                prefix = f"{name}/{stage}/l{li + 1}"
                block.append({
                    "bn1": self._register(_BatchNorm(f"{prefix}/bn1", stage, dtype, depth)),
                    "conv1": self._register(_Conv(f"{prefix}/conv1", stage, rng, dtype,
                                                  depth, 4 * k, 1)),
                    "bn2": self._register(_BatchNorm(f"{prefix}/bn2", stage, dtype, 4 * k)),
                    "conv2": self._register(_Conv(f"{prefix}/conv2", stage, rng, dtype,
                                                  4 * k, k, 3, 1, 1)),
                })
                depth += k
            self._blocks.append(block)
            if bi < len(self.BLOCK_LAYERS) - 1:
                half = depth // 2
                prefix = f"{name}/trans{bi + 1}"
                self._transitions.append({
                    "bn": self._register(_BatchNorm(f"{prefix}/bn", stage, dtype, depth)),
                    "conv": self._register(_Conv(f"{prefix}/conv", stage, rng, dtype,
                                                 depth, half, 1)),
                })
                depth = half
        stage = f"block{len(self.BLOCK_LAYERS)}"
        self._final_bn = self._register(_BatchNorm(f"{name}/final/bn", stage, dtype, depth))
        self.last_stage = stage
        self.feature_len = depth
        self.output_channels = depth

    def feature_channel(self, index):
        return index

    def scale_output_channels(self, alpha):
        a = alpha.astype(self._final_bn.gamma.value.dtype)
        self._final_bn.gamma.value = self._final_bn.gamma.value * a
        self._final_bn.beta.value = self._final_bn.beta.value * a

    def forward(self, x, training):
        bt = lambda bn: self._bn_training(bn, training)
        x = self._stem_conv(x)
        x = ad.maxpool2d(x, 2, 2)
        for bi, block in enumerate(self._blocks):
            for layer in block:
                y = ad.relu(layer["bn1"](x, bt(layer["bn1"])))
                y = layer["conv1"](y)
                y = ad.relu(layer["bn2"](y, bt(layer["bn2"])))
                y = layer["conv2"](y)
                x = ad.concat([x, y], axis=3)
            if bi < len(self._transitions):
                tr = self._transitions[bi]
                x = tr["conv"](ad.relu(tr["bn"](x, bt(tr["bn"]))))
                x = ad.avgpool2d(x, 2, 2)
        x = ad.relu(self._final_bn(x, bt(self._final_bn)))
        return ad.global_avgpool(x)


_VARIANTS = {"vgg": VggBackbone, "resnet": ResNetBackbone, "dense": DenseBackbone}


def build_backbone(config: BackboneConfig, rng, dtype=np.float32, name="cnn"):
    try:
        cls = _VARIANTS[config.variant]
    except KeyError:
        raise ValueError(f"unknown backbone variant {config.variant!r}") from None
    return cls(config, rng, dtype=dtype, name=name)
