"""Adam optimiser over :class:`~drqn_cover.nn.layers.Param` objects."""

from __future__ import annotations

import math

import numpy as np


class Adam:
    """Bias-corrected Adam.

    The update ``lr * m_hat / (sqrt(v_hat) + eps)`` is evaluated as
    ``lr_t * m / (sqrt(v) + eps * sqrt(1 - beta2**t))`` with
    ``lr_t = lr * sqrt(1 - beta2**t) / (1 - beta1**t)``, which is the same
    quantity but needs no temporaries beyond one scratch buffer.
    """

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.step_count = 0
        self._scratch = [np.empty_like(p.value) for p in self.params]

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()

    def step(self):
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        root_corr2 = math.sqrt(1 - b2 ** t)
        lr_t = self.lr * root_corr2 / (1 - b1 ** t)
        eps_t = self.eps * root_corr2
        for p, tmp in zip(self.params, self._scratch):
            g, m, v = p.grad, p.adam_m, p.adam_v
            m *= b1
            np.multiply(g, 1 - b1, out=tmp)
            m += tmp
            v *= b2
            np.multiply(g, g, out=tmp)
            tmp *= 1 - b2
            v += tmp
            np.sqrt(v, out=tmp)
            tmp += eps_t
            np.divide(m, tmp, out=tmp)
            tmp *= lr_t
            p.value -= tmp
