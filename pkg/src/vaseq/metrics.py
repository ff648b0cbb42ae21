"""Concordance correlation coefficient and MSE, plus the 1-CCC training loss.

CCC is 2*s_xy / (s_x^2 + s_y^2 + (mean_x - mean_y)^2) with population
(divide-by-N) moments.  Reporting concatenates a whole split before computing
moments, which the streaming accumulator supports without holding the split
in memory.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad


class MetricError(ValueError):
    pass


@dataclass
class MomentSet:
    """Population moments of a (prediction, truth) pair."""

    mean_pred: float
    mean_true: float
    var_pred: float
    var_true: float
    covariance: float

    def __post_init__(self):
        if self.var_pred < 0 or self.var_true < 0:
            raise MetricError("negative variance")
        bound = math.sqrt(self.var_pred * self.var_true) + 1e-9
        if abs(self.covariance) > bound:
            raise MetricError(f"covariance {self.covariance} outside +-{bound}")

    def ccc(self) -> float:
        denom = self.var_pred + self.var_true + (self.mean_pred - self.mean_true) ** 2
        if denom == 0.0:
            # both sequences constant with equal means: report as uncorrelated
            return 0.0
        return 2.0 * self.covariance / denom


def moments(pred, truth) -> MomentSet:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise MetricError(f"length mismatch: {pred.shape} vs {truth.shape}")
    if pred.size < 2:
        raise MetricError("need at least 2 samples")
    mp, mt = pred.mean(), truth.mean()
    # an exactly constant side has zero variance and covariance by identity;
    # computing them numerically would leave rounding dust instead of zero
    const_pred = bool(np.all(pred == pred[0]))
    const_true = bool(np.all(truth == truth[0]))
    return MomentSet(
        mean_pred=float(pred[0]) if const_pred else mp,
        mean_true=float(truth[0]) if const_true else mt,
        var_pred=0.0 if const_pred else float(((pred - mp) ** 2).mean()),
        var_true=0.0 if const_true else float(((truth - mt) ** 2).mean()),
        covariance=0.0 if const_pred or const_true
        else float(((pred - mp) * (truth - mt)).mean()),
    )


def ccc(pred, truth) -> float:
    """Concordance correlation coefficient in [-1, 1]."""
    return moments(pred, truth).ccc()


def mse(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise MetricError(f"length mismatch: {pred.shape} vs {truth.shape}")
    return float(((pred - truth) ** 2).mean())


class MomentAccumulator:
    """Streaming population moments over chunks of (pred, truth) pairs.

    Chunks are merged with the pairwise update so a full split can be scored
    in one pass; ``result()`` matches the one-shot computation to ~1e-9.
    """

    def __init__(self):
        self.n = 0
        self.mean_pred = 0.0
        self.mean_true = 0.0
        self._m2_pred = 0.0
        self._m2_true = 0.0
        self._co = 0.0
        self._sq_err = 0.0
        self._pred_range = [math.inf, -math.inf]
        self._true_range = [math.inf, -math.inf]

    def add(self, pred, truth):
        pred = np.asarray(pred, dtype=np.float64).reshape(-1)
        truth = np.asarray(truth, dtype=np.float64).reshape(-1)
        if pred.shape != truth.shape:
            raise MetricError(f"length mismatch: {pred.shape} vs {truth.shape}")
        k = pred.size
        if k == 0:
            return
        mp, mt = pred.mean(), truth.mean()
        m2p = float(((pred - mp) ** 2).sum())
        m2t = float(((truth - mt) ** 2).sum())
        co = float(((pred - mp) * (truth - mt)).sum())
        n = self.n
        total = n + k
        dp = mp - self.mean_pred
        dt = mt - self.mean_true
        self._m2_pred += m2p + dp * dp * n * k / total
        self._m2_true += m2t + dt * dt * n * k / total
        self._co += co + dp * dt * n * k / total
        self.mean_pred += dp * k / total
        self.mean_true += dt * k / total
        self._sq_err += float(((pred - truth) ** 2).sum())
        self._pred_range = [min(self._pred_range[0], float(pred.min())),
                            max(self._pred_range[1], float(pred.max()))]
        self._true_range = [min(self._true_range[0], float(truth.min())),
                            max(self._true_range[1], float(truth.max()))]
        self.n = total

    def result(self) -> MomentSet:
        if self.n < 2:
            raise MetricError("need at least 2 samples")
        const_pred = self._pred_range[0] == self._pred_range[1]
        const_true = self._true_range[0] == self._true_range[1]
        return MomentSet(
            mean_pred=self.mean_pred,
            mean_true=self.mean_true,
            var_pred=0.0 if const_pred else self._m2_pred / self.n,
            var_true=0.0 if const_true else self._m2_true / self.n,
            covariance=0.0 if const_pred or const_true else self._co / self.n,
        )

    def ccc(self) -> float:
        return self.result().ccc()

    def mse(self) -> float:
        if self.n == 0:
            raise MetricError("empty accumulator")
        return self._sq_err / self.n


def _ccc_node(pred: ad.Node, truth: ad.Node) -> ad.Node:
    """CCC of two flat vectors as a differentiable graph node."""
    mp = ad.mean(pred)
    mt = ad.mean(truth)
    dp = ad.sub(pred, mp)
    dt = ad.sub(truth, mt)
    var_p = ad.mean(ad.mul(dp, dp))
    var_t = ad.mean(ad.mul(dt, dt))
    cov = ad.mean(ad.mul(dp, dt))
    md = ad.sub(mp, mt)
    denom = ad.add(ad.add(var_p, var_t), ad.mul(md, md))
    if denom.value.item() == 0.0:
        # degenerate: both constant with equal means; same convention as ccc()
        return ad.constant(np.zeros(1), dtype=pred.value.dtype)
    return ad.div(ad.scale(cov, 2.0), denom)


def ccc_loss(pred: ad.Node, truth: ad.Node) -> ad.Node:
    """(1 - CCC_valence)/2 + (1 - CCC_arousal)/2 over B x L x 2 tensors.

    Each dimension's CCC is computed over the flattened batch*length axis.
    Differentiable; degenerate constant predictions give loss 1.0 rather
    than an error.
    """
    if pred.value.shape != truth.value.shape:
        raise MetricError(f"shape mismatch: {pred.value.shape} vs {truth.value.shape}")
    if pred.value.shape[-1] != 2:
        raise MetricError(f"expected 2 output dims, got {pred.value.shape}")
    flat_p = ad.reshape(pred, (-1, 2))
    flat_t = ad.reshape(truth, (-1, 2))
    total = None
    for dim in range(2):
        p = ad.reshape(ad.slice_axis(flat_p, 1, dim, dim + 1), (-1,))
        t = ad.reshape(ad.slice_axis(flat_t, 1, dim, dim + 1), (-1,))
        term = ad.scale(ad.shift(ad.neg(_ccc_node(p, t)), 1.0), 0.5)
        total = term if total is None else ad.add(total, term)
    return total
