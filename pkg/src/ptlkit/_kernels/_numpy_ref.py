"""Pure-numpy implementations of the hot forward kernels.

These are the reference semantics; the optional compiled extension in
``_core.pyx`` implements the same math with fused BLAS calls. Both
backends take already-normalized, C-contiguous float64 inputs of shape
(batch, d_in) and return the network output of shape (batch, d_out).
"""

from __future__ import annotations

import numpy as np

NAME = "numpy"


def mlp_forward_batch(w1, b1, w2, b2, w3, b3, x):
    """Two ReLU hidden layers plus a linear output layer, batched."""
    h1 = np.maximum(x @ w1.T + b1, 0.0)
    h2 = np.maximum(h1 @ w2.T + b2, 0.0)
    return h2 @ w3.T + b3


def progressive_forward_batch(
    sw1, sb1, sw2, sb2,
    tw1, tb1, tw2, tb2, tw3, tb3,
    lc1, lc2, alpha1, alpha2,
    wiring_mode, x,
):
    """Two-column forward pass, batched.

    ``wiring_mode`` 0: lateral carries the same-layer source activation
    through its own ReLU and a learnable scale into the target layer's
    pre-activation. ``wiring_mode`` 1: lateral carries the previous-layer
    source activation straight into the pre-activation (original
    progressive-network wiring), no scale.
    """
    hs1 = np.maximum(x @ sw1.T + sb1, 0.0)
    hs2 = np.maximum(hs1 @ sw2.T + sb2, 0.0)
    if wiring_mode == 0:
        g1 = np.maximum(alpha1 * hs1, 0.0)
        g2 = np.maximum(alpha2 * hs2, 0.0)
        ht1 = np.maximum(x @ tw1.T + tb1 + g1 @ lc1.T, 0.0)
        ht2 = np.maximum(ht1 @ tw2.T + tb2 + g2 @ lc2.T, 0.0)
    else:
        ht1 = np.maximum(x @ tw1.T + tb1 + x @ lc1.T, 0.0)
        ht2 = np.maximum(ht1 @ tw2.T + tb2 + hs1 @ lc2.T, 0.0)
    return ht2 @ tw3.T + tb3
