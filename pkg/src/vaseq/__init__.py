"""Valence/arousal sequence toolkit: corpus construction, sequence-record
storage, a CNN-RNN-FC regressor trained with a 1-CCC objective, and the
train/eval/test programs around it."""

__version__ = "0.1.0"
