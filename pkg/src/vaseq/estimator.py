"""Scikit-learn style front door: fit/predict/score over in-memory sequence
arrays, wrapping the model, loss and optimizer plumbing.

The estimator follows the usual conventions (constructor stores
hyper-parameters untouched, ``get_params``/``set_params``, trailing
underscore on fitted attributes) so it drops into pipelines and search
utilities without importing anything from scikit-learn itself.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import metrics
from .model import ModelConfig, Regressor
from .optim import Adam
from .validation import check_labels, check_random_state, check_sequences


class SequenceRegressor:
    """CNN-RNN-FC regressor for per-frame valence/arousal.

    Parameters mirror the training configuration: backbone variant and width,
    recurrent cell kind, hidden size, attention window, learning rate, the
    number of optimizer steps, and the mini-batch size (in sequences).
    """

    def __init__(self, backbone="vgg", width=4, cell="gru", hidden=128,
                 rnn_layers=2, attention=True, attention_window=30,
                 peepholes=True, lr=1e-4, steps=200, batch_size=2,
                 random_state=0):
        self.backbone = backbone
        self.width = width
        self.cell = cell
        self.hidden = hidden
        self.rnn_layers = rnn_layers
        self.attention = attention
        self.attention_window = attention_window
        self.peepholes = peepholes
        self.lr = lr
        self.steps = steps
        self.batch_size = batch_size
        self.random_state = random_state

    _param_names = ("backbone", "width", "cell", "hidden", "rnn_layers",
                    "attention", "attention_window", "peepholes", "lr",
                    "steps", "batch_size", "random_state")

    def get_params(self, deep=True):
        return {name: getattr(self, name) for name in self._param_names}

    def set_params(self, **params):
        for name, value in params.items():
            if name not in self._param_names:
                raise ValueError(f"invalid parameter {name!r} for SequenceRegressor")
            setattr(self, name, value)
        return self

    def _config(self, seq_len):
        return ModelConfig(backbone=self.backbone, width=self.width,
                           cell=self.cell, hidden=self.hidden,
                           rnn_layers=self.rnn_layers, attention=self.attention,
                           attention_window=self.attention_window,
                           peepholes=self.peepholes, seq_len=seq_len,
                           seed=self.random_state if self.random_state is not None else 0)

    def fit(self, X, y):
        X = check_sequences(X)
        y = check_labels(y, X.shape[0], X.shape[1])
        rng = check_random_state(self.random_state)
        self.model_ = Regressor(self._config(X.shape[1]))
        self.seq_len_ = X.shape[1]
        optimizer = Adam(lr=self.lr)
        trainable = self.model_.trainable_names()
        clips = self.model_.recurrent_clips()
        history = []
        n = X.shape[0]
        for _ in range(self.steps):
            pick = rng.integers(0, n, size=min(self.batch_size, n))
            preds = self.model_.forward(X[pick], training=True)
            loss = metrics.ccc_loss(preds, ad.constant(y[pick]))
            ad.backward(loss)
            optimizer.step(self.model_.params, trainable=trainable, clips=clips)
            history.append(float(loss.value.item()))
        self.loss_history_ = history
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise RuntimeError("SequenceRegressor is not fitted; call fit first")

    def predict(self, X):
        self._check_fitted()
        X = check_sequences(X)
        out = [self.model_.predict(X[i:i + 8]) for i in range(0, X.shape[0], 8)]
        return np.concatenate(out, axis=0)

    def score(self, X, y):
        """Mean CCC over the valence and arousal dimensions."""
        self._check_fitted()
        X = check_sequences(X)
        y = check_labels(y, X.shape[0], X.shape[1])
        preds = self.predict(X)
        return float(np.mean([metrics.ccc(preds[:, :, d].ravel(), y[:, :, d].ravel())
                              for d in range(2)]))
