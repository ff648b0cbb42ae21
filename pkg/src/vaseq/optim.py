"""Adam with bias correction, plus the recurrent-weight clip applied after
each update for cells whose self-connections must stay inside 2**(1/T)."""

from __future__ import annotations

import numpy as np


class NonFiniteGradientError(RuntimeError):
    def __init__(self, name):
        super().__init__(f"non-finite gradient in parameter {name!r}")
        self.param_name = name


class Adam:
    """Moments are allocated lazily, so frozen parameters never get state."""

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params, trainable=None, clips=None):
        """Apply one update to every trainable parameter that has a gradient.

        ``params`` maps names to graph nodes whose ``grad`` was filled by the
        backward pass.  A non-finite gradient aborts the whole step (no
        parameter is touched) and names the offender.
        """
        updates = []
        for name, node in params.items():
            if trainable is not None and name not in trainable:
                continue
            if node.grad is None:
                continue
            if not np.all(np.isfinite(node.grad)):
                raise NonFiniteGradientError(name)
            updates.append((name, node))
        self.t += 1
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for name, node in updates:
            grad = node.grad
            m = self.m.get(name)
            if m is None:
                m = self.m[name] = np.zeros_like(node.value)
                self.v[name] = np.zeros_like(node.value)
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * grad
            v *= self.beta2
            v += (1.0 - self.beta2) * grad * grad
            m_hat = m / correction1
            v_hat = v / correction2
            node.value = node.value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        if clips:
            for name, bound in clips.items():
                node = params.get(name)
                if node is not None:
                    np.clip(node.value, -bound, bound, out=node.value)

    def state_tensors(self):
        """Flat name -> array view of the optimizer state for checkpointing."""
        out = {
            "adam/t": np.array([self.t], dtype=np.float32),
            "adam/lr": np.array([self.lr], dtype=np.float32),
            "adam/beta1": np.array([self.beta1], dtype=np.float32),
            "adam/beta2": np.array([self.beta2], dtype=np.float32),
            "adam/eps": np.array([self.eps], dtype=np.float32),
        }
        for name, m in self.m.items():
            out[f"adam/m/{name}"] = m
            out[f"adam/v/{name}"] = self.v[name]
        return out

    @classmethod
    def from_state_tensors(cls, tensors):
        opt = cls(lr=float(tensors["adam/lr"][0]),
                  beta1=float(tensors["adam/beta1"][0]),
                  beta2=float(tensors["adam/beta2"][0]),
                  eps=float(tensors["adam/eps"][0]))
        opt.t = int(tensors["adam/t"][0])
        for name, value in tensors.items():
            if name.startswith("adam/m/"):
                opt.m[name[len("adam/m/"):]] = value.copy()
            elif name.startswith("adam/v/"):
                opt.v[name[len("adam/v/"):]] = value.copy()
        return opt
