"""Gram-matrix kernels for the four basic covariance functions.

Each backend exposes ``gram_forward(kind, x1, x2, theta)`` and
``gram_backward(kind, x1, x2, theta, gbar)``. ``theta`` holds the
constrained values ``(sigma2, l, extra)`` where ``extra`` is the period
(PER), the offset c (LIN) or the shape a (RQ). The backward pass returns
adjoints for x1, x2 and the three *raw* parameters
``(log sigma, log l, log p | c | log a)``.
"""
from __future__ import annotations

import math

import numpy as np

from ._accel import njit, numba_enabled

SE, PER, LIN, RQ = 0, 1, 2, 3


# -- numpy path ------------------------------------------------------------
def _np_forward(kind, x1, x2, theta):
    s2, l, extra = theta
    if kind == LIN:
        return s2 * np.multiply.outer(x1 - extra, x2 - extra)
    tau = np.subtract.outer(x1, x2)
    if kind == SE:
        return s2 * np.exp(-(tau * tau) / (2.0 * l * l))
    if kind == PER:
        sn = np.sin(np.pi * tau / extra)
        return s2 * np.exp(-2.0 * sn * sn / (l * l))
    z = tau * tau / (2.0 * extra * l * l)
    return s2 * np.exp(-extra * np.log1p(z))


def _np_backward(kind, x1, x2, theta, gbar):
    s2, l, extra = theta
    draw = np.zeros(3)
    if kind == LIN:
        a1 = x1 - extra
        a2 = x2 - extra
        k = s2 * np.multiply.outer(a1, a2)
        dx1 = s2 * (gbar @ a2)
        dx2 = s2 * (gbar.T @ a1)
        draw[0] = 2.0 * np.sum(gbar * k)
        draw[2] = -s2 * (np.sum(gbar.sum(axis=1) * a1) + np.sum(gbar.sum(axis=0) * a2))
        return dx1, dx2, draw
    tau = np.subtract.outer(x1, x2)
    if kind == SE:
        k = s2 * np.exp(-(tau * tau) / (2.0 * l * l))
        dtau = -k * tau / (l * l)
        draw[1] = np.sum(gbar * k * tau * tau) / (l * l)
    elif kind == PER:
        u = np.pi * tau / extra
        sn = np.sin(u)
        k = s2 * np.exp(-2.0 * sn * sn / (l * l))
        dk_du = -k * 2.0 * np.sin(2.0 * u) / (l * l)
        dtau = dk_du * np.pi / extra
        draw[1] = np.sum(gbar * k * 4.0 * sn * sn) / (l * l)
        draw[2] = -np.sum(gbar * dk_du * u)
    else:
        z = tau * tau / (2.0 * extra * l * l)
        q = 1.0 + z
        lq = np.log1p(z)
        k = s2 * np.exp(-extra * lq)
        dtau = -k * tau / (q * l * l)
        draw[1] = np.sum(gbar * k * 2.0 * extra * z / q)
        draw[2] = np.sum(gbar * k * extra * (z / q - lq))
    draw[0] = 2.0 * np.sum(gbar * k)
    gd = gbar * dtau
    return gd.sum(axis=1), -gd.sum(axis=0), draw


# -- numba path ------------------------------------------------------------
@njit
def _nb_forward(kind, x1, x2, theta):
    s2, l, extra = theta[0], theta[1], theta[2]
    n, m = x1.shape[0], x2.shape[0]
    out = np.empty((n, m))
    inv2l2 = 1.0 / (2.0 * l * l)
    for i in range(n):
        for j in range(m):
            if kind == LIN:
                out[i, j] = s2 * ((x1[i] - extra) * (x2[j] - extra))
                continue
            tau = x1[i] - x2[j]
            if kind == SE:
                out[i, j] = s2 * math.exp(-tau * tau * inv2l2)
            elif kind == PER:
                sn = math.sin(math.pi * tau / extra)
                out[i, j] = s2 * math.exp(-2.0 * sn * sn / (l * l))
            else:
                z = tau * tau * inv2l2 / extra
                out[i, j] = s2 * math.exp(-extra * math.log1p(z))
    return out


@njit
def _nb_backward(kind, x1, x2, theta, gbar):
    s2, l, extra = theta[0], theta[1], theta[2]
    n, m = x1.shape[0], x2.shape[0]
    dx1 = np.zeros(n)
    dx2 = np.zeros(m)
    draw = np.zeros(3)
    l2 = l * l
    for i in range(n):
        for j in range(m):
            g = gbar[i, j]
            if kind == LIN:
                a1 = x1[i] - extra
                a2 = x2[j] - extra
                dx1[i] += g * s2 * a2
                dx2[j] += g * s2 * a1
                draw[0] += 2.0 * g * s2 * a1 * a2
                draw[2] -= g * s2 * (a1 + a2)
                continue
            tau = x1[i] - x2[j]
            if kind == SE:
                k = s2 * math.exp(-tau * tau / (2.0 * l2))
                dtau = -k * tau / l2
                draw[1] += g * k * tau * tau / l2
            elif kind == PER:
                u = math.pi * tau / extra
                sn = math.sin(u)
                k = s2 * math.exp(-2.0 * sn * sn / l2)
                dk_du = -k * 2.0 * math.sin(2.0 * u) / l2
                dtau = dk_du * math.pi / extra
                draw[1] += g * k * 4.0 * sn * sn / l2
                draw[2] -= g * dk_du * u
            else:
                z = tau * tau / (2.0 * extra * l2)
                q = 1.0 + z
                lq = math.log1p(z)
                k = s2 * math.exp(-extra * lq)
                dtau = -k * tau / (q * l2)
                draw[1] += g * k * 2.0 * extra * z / q
                draw[2] += g * k * extra * (z / q - lq)
            draw[0] += 2.0 * g * k
            dx1[i] += g * dtau
            dx2[j] -= g * dtau
    return dx1, dx2, draw


def gram_forward(kind: int, x1: np.ndarray, x2: np.ndarray, theta) -> np.ndarray:
    theta = np.asarray(theta, dtype=np.float64)
    if numba_enabled():
        return _nb_forward(kind, np.ascontiguousarray(x1, np.float64), np.ascontiguousarray(x2, np.float64), theta)
    return _np_forward(kind, x1, x2, theta)


def gram_backward(kind: int, x1: np.ndarray, x2: np.ndarray, theta, gbar: np.ndarray):
    theta = np.asarray(theta, dtype=np.float64)
    if numba_enabled():
        return _nb_backward(kind, np.ascontiguousarray(x1, np.float64), np.ascontiguousarray(x2, np.float64),
                            theta, np.ascontiguousarray(gbar, np.float64))
    return _np_backward(kind, x1, x2, theta, gbar)
