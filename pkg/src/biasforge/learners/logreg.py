"""Class-weighted logistic regression trained by mini-batch SGD."""

from __future__ import annotations

import numpy as np
from numba import njit

BATCH_SIZE = 256
CONVERGENCE_TOL = 1e-3


@njit(cache=True)
def _sigmoid(z):
    if z >= 0:
        return 1.0 / (1.0 + np.exp(-z))
    e = np.exp(z)
    return e / (1.0 + e)


@njit(cache=True)
def sgd_epoch(X, y, w, order, coef, intercept, lr, l2, batch_size):
    """One pass of mini-batch SGD over ``order``; updates ``coef`` in place.

    Returns the new intercept and the running weighted log-loss of the epoch,
    each row's term taken at the parameters in force when its batch was seen.
    """
    n = order.size
    d = X.shape[1]
    grad = np.zeros(d)
    loss = 0.0
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        grad[:] = 0.0
        gb = 0.0
        for i in range(start, stop):
            r = order[i]
            z = intercept
            for j in range(d):
                z += X[r, j] * coef[j]
            # one exp serves both the stable sigmoid and log(1 + exp(-|z|))
            e = np.exp(-abs(z))
            p = 1.0 / (1.0 + e) if z >= 0 else e / (1.0 + e)
            s = z if y[r] == 0 else -z
            loss += w[r] * (max(s, 0.0) + np.log1p(e))
            resid = w[r] * (p - y[r])
            for j in range(d):
                grad[j] += resid * X[r, j]
            gb += resid
        m = stop - start
        for j in range(d):
            coef[j] -= lr * (grad[j] / m + l2 * coef[j])
        intercept -= lr * gb / m
    return intercept, loss / n + 0.5 * l2 * np.dot(coef, coef)


def fit_logreg(X: np.ndarray, y: np.ndarray, lr: float, l2: float, epochs: int, rng: np.random.Generator) -> dict:
    """Standardize, weight positives by n_neg/n_pos (normalized to mean weight 1) and run SGD."""
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Xs = np.ascontiguousarray((X - mean) / scale)
    yf = y.astype(np.float64)
    n_pos = float(yf.sum())
    n_neg = yf.size - n_pos
    w = np.where(yf == 1.0, n_neg / n_pos, 1.0)
    w /= w.mean()
    coef = np.zeros(X.shape[1])
    intercept = 0.0
    trace = []
    for _ in range(epochs):
        order = rng.permutation(yf.size)
        intercept, loss = sgd_epoch(Xs, yf, w, order, coef, intercept, lr, l2, BATCH_SIZE)
        trace.append(float(loss))
    converged = len(trace) >= 2 and abs(trace[-1] - trace[-2]) <= CONVERGENCE_TOL * max(abs(trace[-2]), 1e-12)
    return {
        "params": {"mean": mean, "scale": scale, "coef": coef, "intercept": np.array([intercept])},
        "iterations": epochs,
        "loss_trace": trace,
        "converged": bool(converged),
    }


def predict_logreg(params: dict, X: np.ndarray) -> np.ndarray:
    z = ((X - params["mean"]) / params["scale"]) @ params["coef"] + params["intercept"][0]
    return 0.5 * (1.0 + np.tanh(0.5 * z))
