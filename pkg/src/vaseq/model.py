"""End-to-end regressor: frame features from the CNN, dynamics from a
two-layer recurrent block (optionally wrapped in windowed attention), and a
two-neuron linear head for per-frame valence and arousal.

Input sequences are B x L x 96 x 96 x 3, already scaled to [-1, 1]; frames
are folded to (B*L) x 96 x 96 x 3 for the CNN and unfolded back to
B x L x features for the recurrent block, predictions come out B x L x 2.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from . import backbones, cells

IMAGE_SIZE = 96


@dataclass
class ModelConfig:
    backbone: str = "vgg"
    width: int = 4
    cell: str = "gru"
    hidden: int = 128
    rnn_layers: int = 2
    attention: bool = True
    attention_window: int = 30
    peepholes: bool = True
    seq_len: int = 16            # bounds the IndRNN recurrent weight: 2**(1/L)
    backbone_trainable: str = "all"
    seed: int = 0

    def fingerprint(self) -> int:
        """CRC of the graph-defining fields only: trainability masks and seeds
        change training behavior but not what a checkpoint must fit."""
        fields = asdict(self)
        fields.pop("backbone_trainable")
        fields.pop("seed")
        blob = json.dumps(fields, sort_keys=True).encode()
        return zlib.crc32(blob)


def trainable_scope_for_case(case: int) -> str:
    """Backbone trainability per strategy case: 0 freezes the CNN, 1 opens
    the last conv stage, 2 and 3 train everything."""
    if case == 0:
        return "frozen"
    if case == 1:
        return "last-conv"
    if case in (2, 3):
        return "all"
    raise ValueError(f"unknown strategy case {case}")


def _make_cell(kind, input_size, hidden, rng, dtype, seq_len, peepholes, name):
    if kind == "gru":
        return cells.GruCell(input_size, hidden, rng, dtype=dtype, name=name)
    if kind == "lstm":
        return cells.LstmCell(input_size, hidden, rng, dtype=dtype,
                              peepholes=peepholes, name=name)
    if kind == "indrnn":
        return cells.IndRnnCell(input_size, hidden, rng, seq_length=seq_len,
                                dtype=dtype, name=name)
    raise ValueError(f"unknown cell kind {kind!r}")


class Regressor:
    def __init__(self, config: ModelConfig, dtype=np.float32):
        self.config = config
        self.dtype = dtype
        rng = np.random.default_rng(config.seed)

        self.backbone = backbones.build_backbone(
            backbones.BackboneConfig(variant=config.backbone, width=config.width,
                                     trainable=config.backbone_trainable),
            rng, dtype=dtype, name="cnn")

        feature_len = self.backbone.feature_len
        layer_cells = []
        for i in range(config.rnn_layers):
            in_size = feature_len if i == 0 else config.hidden
            layer_cells.append(_make_cell(config.cell, in_size, config.hidden, rng,
                                          dtype, config.seq_len, config.peepholes,
                                          name=f"rnn/l{i}"))
        stack = cells.StackedCells(layer_cells)
        if config.attention:
            self.rnn = cells.AttentionWrapper(stack, feature_len, rng,
                                              window=config.attention_window,
                                              dtype=dtype, name="rnn/attn")
        else:
            self.rnn = stack
        self.head = cells.FcHead(config.hidden, rng, dtype=dtype, name="fc")

        self.params: dict[str, ad.Node] = {}
        self.params.update(self.backbone.named_params())
        self.params.update(self.rnn.named_params())
        self.params.update(self.head.named_params())

    # -- forward ------------------------------------------------------------

    def forward(self, images, training: bool) -> ad.Node:
        """Predictions node for a B x L x 96 x 96 x 3 batch in [-1, 1]."""
        if isinstance(images, ad.Node):
            node = images
        else:
            node = ad.constant(np.asarray(images, dtype=self.dtype))
        b, length = node.value.shape[0], node.value.shape[1]
        flat = ad.reshape(node, (b * length, IMAGE_SIZE, IMAGE_SIZE, 3))
        features = self.backbone.forward(flat, training)
        seq = ad.reshape(features, (b, length, self.backbone.feature_len))
        rnn_out = cells.unroll(self.rnn, seq)
        flat_out = ad.reshape(rnn_out, (b * length, self.config.hidden))
        return self.head(flat_out, b, length)

    def predict(self, images) -> np.ndarray:
        return self.forward(images, training=False).value

    # -- parameter bookkeeping ------------------------------------------------

    def named_buffers(self):
        return self.backbone.named_buffers()

    def trainable_names(self) -> set:
        names = set(self.rnn.named_params()) | set(self.head.named_params())
        names |= self.backbone.trainable_names()
        return names

    def recurrent_clips(self):
        if hasattr(self.rnn, "recurrent_clips"):
            return self.rnn.recurrent_clips()
        return {}

    def state(self):
        params = {k: v.value.copy() for k, v in self.params.items()}
        buffers = {k: v.copy() for k, v in self.named_buffers().items()}
        return params, buffers

    def load_state(self, params, buffers=None, prefix=None):
        """Copy arrays into the model's parameters (and buffers) in place.

        With ``prefix`` only matching names are loaded (e.g. ``rnn/`` to seed
        the recurrent block from another checkpoint).
        """
        for name, value in params.items():
            if prefix is not None and not name.startswith(prefix):
                continue
            if name not in self.params:
                raise KeyError(f"unknown parameter {name!r}")
            target = self.params[name]
            if target.value.shape != value.shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{target.value.shape} vs {value.shape}")
            target.value = value.astype(self.dtype, copy=True)
        if buffers:
            own = self.named_buffers()
            for name, value in buffers.items():
                if prefix is not None and not name.startswith(prefix):
                    continue
                if name not in own:
                    raise KeyError(f"unknown buffer {name!r}")
                own[name][...] = value
