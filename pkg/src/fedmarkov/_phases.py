"""Jitted local phases for squared-error objectives.

Both problem families reduce to the same per-sample gradient
2 (w^T x - y) x + lam * w / (1 + w^2)^2, so one set of kernels serves
synthetic and regression runs. The kernels take the round's gathered
samples x (M, K, d) and y (M, K) and return per-client displacements.

All four phases share the same scalar gradient code, which keeps the
algorithm equivalences (Local SGD with K = 1 vs Minibatch, beta = 1
momentum vs Local SGD, round-0 SCAFFOLD vs Local SGD) exact in floating
point. The pure-numpy loops in `algorithms` remain the reference path for
objectives that do not expose gathered arrays.
"""

from __future__ import annotations

import numba
import numpy as np


@numba.njit(cache=True)
def _grad_into(out, w_local, x_mk, y_mk, lam):
    """out[:] = 2 (w^T x - y) x + lam * w / (1 + w^2)^2."""
    d = w_local.shape[0]
    residual = 0.0
    for j in range(d):
        residual += w_local[j] * x_mk[j]
    residual -= y_mk
    for j in range(d):
        denom = 1.0 + w_local[j] * w_local[j]
        out[j] = 2.0 * residual * x_mk[j] + lam * (w_local[j] / (denom * denom))


@numba.njit(cache=True)
def minibatch_phase(x, y, w, gamma, lam):
    m, k, d = x.shape
    disp = np.zeros((m, d))
    grad = np.empty(d)
    frozen = np.empty(d)
    for i in range(m):
        for j in range(d):
            frozen[j] = w[j] + disp[i, j]
        acc = np.zeros(d)
        for s in range(k):
            _grad_into(grad, frozen, x[i, s], y[i, s], lam)
            for j in range(d):
                acc[j] += grad[j]
        for j in range(d):
            disp[i, j] = -gamma * (acc[j] / k)
    return disp


@numba.njit(cache=True)
def local_phase(x, y, w, eta, lam):
    m, k, d = x.shape
    disp = np.zeros((m, d))
    grad = np.empty(d)
    local = np.empty(d)
    for i in range(m):
        for s in range(k):
            for j in range(d):
                local[j] = w[j] + disp[i, j]
            _grad_into(grad, local, x[i, s], y[i, s], lam)
            for j in range(d):
                disp[i, j] = disp[i, j] - eta * grad[j]
    return disp


@numba.njit(cache=True)
def momentum_phase(x, y, w, v, eta, beta, lam):
    m, k, d = x.shape
    disp = np.zeros((m, d))
    grad = np.empty(d)
    local = np.empty(d)
    for i in range(m):
        for s in range(k):
            for j in range(d):
                local[j] = w[j] + disp[i, j]
            _grad_into(grad, local, x[i, s], y[i, s], lam)
            for j in range(d):
                v_loc = beta * grad[j] + (1.0 - beta) * v[j]
                disp[i, j] = disp[i, j] - eta * v_loc
    return disp


@numba.njit(cache=True)
def scaffold_phase(x, y, w, c_client, c_server, eta, lam):
    m, k, d = x.shape
    disp = np.zeros((m, d))
    grad = np.empty(d)
    local = np.empty(d)
    for i in range(m):
        for s in range(k):
            for j in range(d):
                local[j] = w[j] + disp[i, j]
            _grad_into(grad, local, x[i, s], y[i, s], lam)
            for j in range(d):
                corr = grad[j] - c_client[i, j] + c_server[j]
                disp[i, j] = disp[i, j] - eta * corr
    return disp
