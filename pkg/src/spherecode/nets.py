"""Minimal dense networks with hand-written backward passes.

Everything runs in float64 numpy so analytic gradients can be checked
against central finite differences to tight tolerances and repeated runs
are bit-identical.  Only what the package needs is implemented: ReLU MLPs
with an optional unit-normalized output, stable softmax/cross-entropy, and
SGD with classical momentum.
"""

from __future__ import annotations

import numpy as np


def softmax(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, shifted for stability."""
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-row cross-entropy of integer targets under row-wise softmax."""
    logp = log_softmax(logits)
    return -logp[np.arange(logits.shape[0]), targets]


_ZERO_ROW_EPS = 1e-12


def normalize_rows_forward(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row normalization y = x / ||x||; returns (y, norms) for backward.

    A row of (near-)zero norm — e.g. an entire ReLU layer shut off with
    zero biases — passes through unscaled instead of producing NaN, and
    the backward divisor stays 1 for that row.
    """
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    norms = np.where(norms < _ZERO_ROW_EPS, 1.0, norms)
    return x / norms, norms


def normalize_rows_backward(
    grad_y: np.ndarray, y: np.ndarray, norms: np.ndarray
) -> np.ndarray:
    """Backward of row normalization: project out the radial component.

    dL/dx = (dL/dy - (dL/dy . y) y) / ||x||
    """
    radial = np.sum(grad_y * y, axis=-1, keepdims=True)
    return (grad_y - radial * y) / norms


class Mlp:
    """Fully-connected network: (linear, ReLU) x hidden, then linear.

    With ``normalize_output=True`` the final activations are projected onto
    the unit sphere, so outputs always have unit row norm.
    """

    def __init__(
        self,
        dims: list[int],
        normalize_output: bool = True,
        rng: np.random.Generator | int | None = 0,
    ):
        if len(dims) < 2:
            raise ValueError("dims must list at least input and output size")
        rng = np.random.default_rng(rng)
        self.dims = list(dims)
        self.normalize_output = normalize_output
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
            last = i == len(dims) - 2
            scale = np.sqrt(1.0 / din) if last else np.sqrt(2.0 / din)
            self.weights.append(rng.standard_normal((din, dout)) * scale)
            self.biases.append(np.zeros(dout))

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, dict]:
        """Returns (output, cache); cache feeds :meth:`backward`."""
        x = np.asarray(x, dtype=np.float64)
        pre: list[np.ndarray] = []
        act: list[np.ndarray] = [x]
        h = x
        n_layers = len(self.weights)
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            pre.append(z)
            h = np.maximum(z, 0.0) if i < n_layers - 1 else z
            act.append(h)
        cache = {"pre": pre, "act": act}
        if self.normalize_output:
            y, norms = normalize_rows_forward(h)
            cache["norm_out"] = y
            cache["norms"] = norms
            return y, cache
        return h, cache

    def backward(
        self, cache: dict, grad_out: np.ndarray
    ) -> tuple[list[np.ndarray], np.ndarray]:
        """Gradients for a given upstream gradient.

        Returns ``(param_grads, grad_input)`` with param_grads ordered like
        :meth:`params`.
        """
        if self.normalize_output:
            grad = normalize_rows_backward(grad_out, cache["norm_out"], cache["norms"])
        else:
            grad = grad_out
        grads_w: list[np.ndarray] = [None] * len(self.weights)  # type: ignore
        grads_b: list[np.ndarray] = [None] * len(self.biases)  # type: ignore
        n_layers = len(self.weights)
        for i in range(n_layers - 1, -1, -1):
            if i < n_layers - 1:
                grad = grad * (cache["pre"][i] > 0.0)
            grads_w[i] = cache["act"][i].T @ grad
            grads_b[i] = grad.sum(axis=0)
            if i > 0:
                grad = grad @ self.weights[i].T
        grad_in = grad @ self.weights[0].T if n_layers > 0 else grad
        param_grads = []
        for gw, gb in zip(grads_w, grads_b):
            param_grads.extend((gw, gb))
        return param_grads, grad_in


class SgdMomentum:
    """SGD with classical momentum: v <- mu v + g; p <- p - lr v.

    Holds references to the parameter arrays and updates them in place.
    """

    def __init__(self, params: list[np.ndarray], lr: float, momentum: float = 0.9):
        if lr <= 0:
            raise ValueError(f"learning rate must be positive, got {lr}")
        if not 0.0 <= momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {momentum}")
        self.params = params
        self.lr = lr
        self.momentum = momentum
        self.velocity = [np.zeros_like(p) for p in params]

    def step(self, grads: list[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError(
                f"got {len(grads)} gradients for {len(self.params)} parameters"
            )
        for p, v, g in zip(self.params, self.velocity, grads):
            v *= self.momentum
            v += g
            p -= self.lr * v
