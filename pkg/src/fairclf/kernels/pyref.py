"""Pure-numpy reference implementations of the hot training kernels.

Mirrors the API of the compiled extension `_core`; used as the fallback
backend when the extension is unavailable, and as the ground truth the
compiled kernels are tested against.
"""

import numpy as np

NAME = "python"


def mlp_forward(w1, b1, w2, b2, w3, b3, x):
    """Two hidden ReLU layers plus a linear output; returns the full cache.

    Returns (z1, a1, z2, a2, logits) with logits flattened to shape (n,).
    """
    z1 = x @ w1.T + b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ w2.T + b2
    a2 = np.maximum(z2, 0.0)
    logits = (a2 @ w3.T)[:, 0] + b3[0]
    return z1, a1, z2, a2, logits


def mlp_backward(w2, w3, x, z1, a1, z2, a2, dlogits):
    """Reverse-mode gradients for mlp_forward.

    ReLU uses subgradient 0 at the kink (z == 0 propagates nothing).
    Returns (dw1, db1, dw2, db2, dw3, db3).
    """
    dz3 = dlogits[:, None]
    dw3 = dz3.T @ a2
    db3 = np.array([dlogits.sum()])
    da2 = dz3 @ w3
    dz2 = np.where(z2 > 0.0, da2, 0.0)
    dw2 = dz2.T @ a1
    db2 = dz2.sum(axis=0)
    da1 = dz2 @ w2
    dz1 = np.where(z1 > 0.0, da1, 0.0)
    dw1 = dz1.T @ x
    db1 = dz1.sum(axis=0)
    return dw1, db1, dw2, db2, dw3, db3


def adam_update(p, m, v, g, lr, beta1, beta2, eps, t):
    """Bias-corrected Adam step, in place on p, m and v. t is the new step count."""
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1**t)
    vhat = v / (1.0 - beta2**t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)
