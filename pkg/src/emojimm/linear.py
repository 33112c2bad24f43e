"""Softmax and the multinomial logistic-regression objective shared by the heads."""

from __future__ import annotations

import numpy as np


def softmax(scores: np.ndarray) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(scores)):
        raise ValueError("non-finite class scores")
    z = scores - scores.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def argmax_lowest(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest label index on ties
    return np.argmax(probs, axis=-1)


def topk_order(probs: np.ndarray, m: int) -> np.ndarray:
    return np.argsort(-probs, kind="stable")[:m]


def logreg_objective(W, b, X, y, lam: float = 0.0):
    """Mean NLL + (lam/2)||W||_F^2 and its gradients w.r.t. W (dim x k) and b."""
    n = X.shape[0]
    rows = np.arange(n)
    z = X @ W + b
    z -= z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e.sum(axis=1)
    loss = float(np.mean(np.log(s) - z[rows, y])) + 0.5 * lam * float(np.sum(W * W))
    G = e / s[:, None]
    G[rows, y] -= 1.0
    G /= n
    gW = X.T @ G + lam * W
    gb = G.sum(axis=0)
    return loss, gW, gb


def gradient_descent(W, b, X, y, lam, max_iter=1000, tol=1e-6, step=1.0, callback=None, accelerate=True):
    """Full-batch gradient descent with Armijo backtracking.

    With ``accelerate`` each step is taken from a Nesterov extrapolation point;
    a step that would raise the objective restarts the momentum instead, so the
    objective never increases. ``callback(it, W, b)`` may return True to stop
    early. Returns (W, b, loss, iterations).
    """
    loss, gW, gb = logreg_objective(W, b, X, y, lam)
    z = (W, b, loss, gW, gb)
    t = 1.0
    it = 0
    while it < max_iter:
        if np.sqrt(float(np.sum(gW * gW) + np.sum(gb * gb))) < tol:
            break
        zW, zb, z_loss, z_gW, z_gb = z
        gnorm2 = float(np.sum(z_gW * z_gW) + np.sum(z_gb * z_gb))
        while True:
            W_new, b_new = zW - step * z_gW, zb - step * z_gb
            new_loss, new_gW, new_gb = logreg_objective(W_new, b_new, X, y, lam)
            if new_loss <= z_loss - 0.5 * step * gnorm2 or step < 1e-12:
                break
            step *= 0.5
        if new_loss > loss and zW is not W:
            z, t = (W, b, loss, gW, gb), 1.0
            continue
        it += 1
        prev_W, prev_b = W, b
        W, b, loss, gW, gb = W_new, b_new, new_loss, new_gW, new_gb
        beta = 0.0
        if accelerate:
            t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
            beta, t = (t - 1.0) / t_next, t_next
        if beta > 0.0:
            zW, zb = W + beta * (W - prev_W), b + beta * (b - prev_b)
            z = (zW, zb, *logreg_objective(zW, zb, X, y, lam))
        else:
            z = (W, b, loss, gW, gb)
        step = min(step * 1.25, 1e3)
        if callback is not None and callback(it, W, b):
            break
    return W, b, loss, it
