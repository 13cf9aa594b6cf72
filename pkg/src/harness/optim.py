"""Optimizers keyed by parameter name; updates return new arrays."""

import numpy as np

from src.errors import ConfigError


class Sgd:
    """SGD with heavy-ball momentum: ``v = momentum * v + g``, ``p -= lr * v``."""

    def __init__(self, lr, momentum=0.0):
        self.lr = lr
        self.momentum = momentum
        self._velocity = {}

    def update(self, key, value, grad):
        if self.momentum:
            v = self._velocity.get(key)
            v = grad.copy() if v is None else self.momentum * v + grad
            self._velocity[key] = v
            step = v
        else:
            step = grad
        return value - self.lr * step


class AdamLite:
    """Adam with bias correction and no weight decay."""

    def __init__(self, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._m = {}
        self._v = {}
        self._t = {}

    def update(self, key, value, grad):
        t = self._t.get(key, 0) + 1
        m = self.beta1 * self._m.get(key, np.zeros_like(grad)) + (1 - self.beta1) * grad
        v = self.beta2 * self._v.get(key, np.zeros_like(grad)) + (1 - self.beta2) * grad * grad
        self._t[key], self._m[key], self._v[key] = t, m, v
        m_hat = m / (1 - self.beta1 ** t)
        v_hat = v / (1 - self.beta2 ** t)
        return value - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(spec, lr):
    if spec.name == "sgd":
        return Sgd(lr, momentum=spec.momentum)
    if spec.name == "adam":
        return AdamLite(lr, beta1=spec.beta1, beta2=spec.beta2, eps=spec.eps)
    raise ConfigError(f"unknown optimizer {spec.name!r}")
