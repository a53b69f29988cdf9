"""Pure numpy kernels. Reference semantics for the compiled ``_kernels`` module."""
import math

import numpy as np

EPS_LOG = 1e-12
LOG_EPS = math.log(EPS_LOG)

PROBABILITY_AVERAGE = 0
LOGIT_SOFTMAX = 1


def loss_grad(X, W, b, T, theta, idx, mode):
    """Mean soft-label cross-entropy of a linear probe over the rows ``idx``.

    ``T`` is (m, N, k): weak probabilities when ``mode`` is
    PROBABILITY_AVERAGE, weak logits when LOGIT_SOFTMAX. Returns
    ``(loss, grad_weight, grad_bias, grad_theta)``.
    """
    B = idx.shape[0]
    Xb = X[idx]
    Z = Xb @ W.T + b
    Z -= Z.max(axis=1, keepdims=True)
    logp = Z - np.log(np.exp(Z).sum(axis=1, keepdims=True))
    p = np.exp(logp)
    live = logp >= LOG_EPS
    ell = np.where(live, logp, LOG_EPS)

    Tb = T[:, idx, :]
    mixed = np.tensordot(theta, Tb, axes=1)
    if mode == PROBABILITY_AVERAGE:
        q = mixed
    else:
        a = mixed - mixed.max(axis=1, keepdims=True)
        ea = np.exp(a)
        q = ea / ea.sum(axis=1, keepdims=True)

    loss = -(q * ell).sum() / B
    qlive = np.where(live, q, 0.0)
    G = p * qlive.sum(axis=1, keepdims=True) - qlive
    gW = G.T @ Xb / B
    gb = G.sum(axis=0) / B

    if mode == PROBABILITY_AVERAGE:
        # gradient w.r.t. theta_i is the alignment cost C_i
        gtheta = -np.einsum("ibk,bk->i", Tb, ell) / B
    else:
        r = -q * (ell - (q * ell).sum(axis=1, keepdims=True))
        gtheta = np.einsum("ibk,bk->i", Tb, r) / B
    return float(loss), gW, gb, gtheta


def adam_update(param, grad, m1, m2, lr, beta1, beta2, eps, t):
    """Bias-corrected Adam step, in place on flat float64 arrays; ``t`` is the new step count."""
    m1 *= beta1
    m1 += (1.0 - beta1) * grad
    m2 *= beta2
    m2 += (1.0 - beta2) * grad * grad
    c1 = 1.0 - beta1 ** t
    c2 = 1.0 - beta2 ** t
    param -= lr * (m1 / c1) / (np.sqrt(m2 / c2) + eps)
