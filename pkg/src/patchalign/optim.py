"""SGD-with-momentum and Adam updates plus the polynomial lr schedule.

Conventions:
  * SGD folds weight decay into the gradient before the momentum buffer:
        v <- mu * v + (g + wd * p);  p <- p - lr * v
  * Adam is the standard bias-corrected form with eps = 1e-8.
Both updates are deterministic functions of (params, grads, state). Missing
gradients are treated as zero.
"""

import numpy as np


def poly_decay_lr(base_lr, iteration, max_iter, power=0.9):
    """base_lr * (1 - iteration/max_iter) ** power."""
    if max_iter <= 0:
        raise ValueError(f"max_iter must be positive, got {max_iter}")
    if iteration < 0 or iteration > max_iter:
        raise ValueError(f"iteration {iteration} outside [0, {max_iter}]")
    return base_lr * (1.0 - iteration / max_iter) ** power


class SGDMomentum:
    """Momentum SGD over a name -> Tensor parameter dict."""

    kind = "sgd-momentum"

    def __init__(self, params, lr, momentum=0.9, weight_decay=0.0):
        self.params = dict(params)
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.step_count = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr=None, names=None):
        """One update; `names` restricts the step to a subset of parameters."""
        lr = self.lr if lr is None else lr
        self.step_count += 1
        items = self.params.items() if names is None else ((n, self.params[n]) for n in names)
        for name, p in items:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter '{name}' {p.data.shape}")
            v = self.velocity[name]
            v *= self.momentum
            v += g
            if self.weight_decay:
                v += self.weight_decay * p.data
            p.data = p.data - p.data.dtype.type(lr) * v.astype(p.data.dtype, copy=False)

    def state_arrays(self):
        return {f"velocity.{n}": v for n, v in self.velocity.items()}

    def load_state_arrays(self, arrays):
        for n in self.velocity:
            self.velocity[n] = np.array(arrays[f"velocity.{n}"], dtype=self.velocity[n].dtype)


class Adam:
    """Adam over a name -> Tensor parameter dict (bias-corrected, eps 1e-8)."""

    kind = "adam"

    def __init__(self, params, lr, betas=(0.9, 0.99), eps=1e-8, weight_decay=0.0):
        self.params = dict(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in self.params.items()}
        self.step_count = 0

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def step(self, lr=None):
        lr = self.lr if lr is None else lr
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if g.shape != p.data.shape:
                raise ValueError(f"gradient shape {g.shape} does not match parameter '{name}' {p.data.shape}")
            if self.weight_decay:
                g = g + self.weight_decay * p.data
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * (g * g)
            m_hat = m / (1 - b1 ** t)
            v_hat = v / (1 - b2 ** t)
            p.data = p.data - (p.data.dtype.type(lr) * m_hat / (np.sqrt(v_hat) + self.eps)).astype(
                p.data.dtype, copy=False)

    def state_arrays(self):
        out = {f"m.{n}": a for n, a in self.m.items()}
        out.update({f"v.{n}": a for n, a in self.v.items()})
        return out

    def load_state_arrays(self, arrays):
        for n in self.m:
            self.m[n] = np.array(arrays[f"m.{n}"], dtype=self.m[n].dtype)
            self.v[n] = np.array(arrays[f"v.{n}"], dtype=self.v[n].dtype)
