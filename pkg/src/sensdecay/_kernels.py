"""Compiled rollout/adjoint kernels for fleets of identical drag vehicles.

States are interleaved ``(y_1, v_1, y_2, v_2, ...)`` and node ``i`` owns
control ``i``.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def _field(x, u, beta, kappa, out):
    s = u.shape[0]
    for i in range(s):
        v = x[2 * i + 1]
        out[2 * i] = v
        out[2 * i + 1] = -beta * v - kappa * v * abs(v) + u[i]


@njit(cache=True)
def _vjp(x, lam, beta, kappa, gx, gu):
    s = gu.shape[0]
    for i in range(s):
        v = x[2 * i + 1]
        lv = lam[2 * i + 1]
        gx[2 * i] = 0.0
        gx[2 * i + 1] = lam[2 * i] - lv * (beta + 2.0 * kappa * abs(v))
        gu[i] = lv


@njit(cache=True)
def fleet_objective_gradient(x0, U, h, beta, kappa, Q, R, C, w, blowup):
    """Discrete objective and its gradient w.r.t. ``U``.

    ``J = h sum_{k<H} (x_k'Q x_k + 2 x_k'c_k + u_k'R u_k) + w (x_H'Q x_H + 2 x_H'c_H)``.
    Returns ``inf`` for ``J`` if the rollout leaves the ball of radius ``blowup``.
    """
    H, m = U.shape
    n = x0.shape[0]
    X = np.empty((H + 1, n))
    Z = np.empty((H, 4, n))
    X[0] = x0
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    grad = np.zeros((H, m))
    for k in range(H):
        x = X[k]
        u = U[k]
        Z[k, 0] = x
        _field(x, u, beta, kappa, k1)
        Z[k, 1] = x + 0.5 * h * k1
        _field(Z[k, 1], u, beta, kappa, k2)
        Z[k, 2] = x + 0.5 * h * k2
        _field(Z[k, 2], u, beta, kappa, k3)
        Z[k, 3] = x + h * k3
        _field(Z[k, 3], u, beta, kappa, k4)
        X[k + 1] = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        nrm = 0.0
        for j in range(n):
            nrm += X[k + 1, j] * X[k + 1, j]
        if not (nrm <= blowup * blowup):
            return np.inf, grad
    J = 0.0
    for k in range(H):
        x = X[k]
        qx = Q @ x
        ru = R @ U[k]
        J += h * (x @ qx + 2.0 * (x @ C[k]) + U[k] @ ru)
    xH = X[H]
    qxH = Q @ xH
    J += w * (xH @ qxH + 2.0 * (xH @ C[H]))

    lam = w * (2.0 * qxH + 2.0 * C[H])
    gx = np.empty(n)
    gu = np.empty(m)
    for k in range(H - 1, -1, -1):
        # lam is dJ/dx_{k+1}; push it back through the RK4 stages
        g4 = (h / 6.0) * lam
        g3 = (h / 3.0) * lam
        g2 = (h / 3.0) * lam
        g1 = (h / 6.0) * lam
        gxk = lam.copy()
        guk = np.zeros(m)
        _vjp(Z[k, 3], g4, beta, kappa, gx, gu)
        gxk += gx
        g3 += h * gx
        guk += gu
        _vjp(Z[k, 2], g3, beta, kappa, gx, gu)
        gxk += gx
        g2 += 0.5 * h * gx
        guk += gu
        _vjp(Z[k, 1], g2, beta, kappa, gx, gu)
        gxk += gx
        g1 += 0.5 * h * gx
        guk += gu
        _vjp(Z[k, 0], g1, beta, kappa, gx, gu)
        gxk += gx
        guk += gu
        x = X[k]
        grad[k] = guk + 2.0 * h * (R @ U[k])
        lam = gxk + 2.0 * h * (Q @ x + C[k])
    return J, grad


@njit(cache=True)
def fleet_rollout(x0, U, h, beta, kappa):
    H = U.shape[0]
    n = x0.shape[0]
    X = np.empty((H + 1, n))
    X[0] = x0
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    for k in range(H):
        x = X[k]
        u = U[k]
        _field(x, u, beta, kappa, k1)
        _field(x + 0.5 * h * k1, u, beta, kappa, k2)
        _field(x + 0.5 * h * k2, u, beta, kappa, k3)
        _field(x + h * k3, u, beta, kappa, k4)
        X[k + 1] = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return X
