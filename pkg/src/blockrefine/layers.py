"""Forward/backward pairs for the layers used by the encoder and the heads.

Each ``*_forward`` returns ``(out, cache)``; the matching ``*_backward`` takes
the upstream gradient and that cache. Inputs may carry arbitrary leading axes;
the last axis is the feature axis.
"""
import math

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def linear_forward(x, W, b):
    return x @ W + b, (x, W)


def linear_backward(dout, cache):
    x, W = cache
    d_in = W.shape[0]
    x2 = x.reshape(-1, d_in)
    g2 = dout.reshape(-1, W.shape[1])
    dW = x2.T @ g2
    db = g2.sum(0)
    dx = dout @ W.T
    return dx, dW, db


def gelu_forward(x):
    """Exact (erf-based) GELU."""
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    return x * cdf, (x, cdf)


def gelu_backward(dout, cache):
    x, cdf = cache
    pdf = np.exp(-0.5 * x * x) * _INV_SQRT2PI
    return dout * (cdf + x * pdf)


def batchnorm_forward(x, gamma, beta, bn_state, mode, eps=1e-5, momentum=0.1):
    """Batch normalization over the rows of a 2-D input.

    ``bn_state`` holds ``running_mean`` / ``running_var`` and is updated in
    place in train mode: ``running = (1 - momentum) * running + momentum * batch``.
    The running variance uses the unbiased batch estimate; normalization
    uses the biased one.
    """
    if mode == "train":
        mu = x.mean(0)
        xc = x - mu
        var = (xc * xc).mean(0)
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv_std
        n = x.shape[0]
        bn_state["running_mean"] *= 1.0 - momentum
        bn_state["running_mean"] += momentum * mu
        bn_state["running_var"] *= 1.0 - momentum
        bn_state["running_var"] += momentum * var * n / max(n - 1, 1)
        return gamma * xhat + beta, (xhat, inv_std, gamma)
    inv_std = 1.0 / np.sqrt(bn_state["running_var"] + eps)
    xhat = (x - bn_state["running_mean"]) * inv_std
    return gamma * xhat + beta, (xhat, inv_std, gamma)


def batchnorm_backward(dout, cache):
    """Full batch-statistics backward (mean and variance depend on every row)."""
    xhat, inv_std, gamma = cache
    dgamma = (dout * xhat).sum(0)
    dbeta = dout.sum(0)
    dxhat = dout * gamma
    dx = inv_std * (dxhat - dxhat.mean(0) - xhat * (dxhat * xhat).mean(0))
    return dx, dgamma, dbeta


def layernorm_forward(x, gamma, beta, eps=1e-6):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv_std
    return xhat * gamma + beta, (xhat, inv_std, gamma)


def layernorm_backward(dout, cache):
    xhat, inv_std, gamma = cache
    d = xhat.shape[-1]
    dgamma = (dout * xhat).reshape(-1, d).sum(0)
    dbeta = dout.reshape(-1, d).sum(0)
    dxhat = dout * gamma
    dx = inv_std * (dxhat - dxhat.mean(-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dgamma, dbeta


def softmax(x, axis=-1):
    z = x - x.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)
