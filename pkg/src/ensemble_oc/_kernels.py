"""Compiled RK4 forward and reverse sweeps.

Systems may carry a :class:`Kernels` bundle of per-sample numba functions

    rhs(x, u, w, c, out)    out[:]   = f(x, u, w)
    jac(x, u, w, c, out)    out[:,:] = df/dx (x, u, w)
    ctrl(x, w, c, out)      out[i,:] = f_{i+1}(x, w)

where ``c`` is a float array of problem constants.  The drivers below
follow the same arithmetic as the numpy path in ``integrate``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

_JIT = dict(cache=True, error_model="numpy")


@dataclass(frozen=True)
class Kernels:
    rhs: object
    jac: object
    ctrl: object
    consts: np.ndarray


@njit(**_JIT)
def rk4_forward(x0, U, W, C, h, rhs):
    N, m = U.shape
    k, n = x0.shape
    states = np.empty((N + 1, k, n))
    stages = np.empty((N, 3, k, n))
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    y = np.empty(n)
    for i in range(k):
        x = x0[i].copy()
        w = W[i]
        states[0, i] = x
        for j in range(N):
            u = U[j]
            rhs(x, u, w, C, k1)
            for a in range(n):
                y[a] = x[a] + 0.5 * h * k1[a]
            stages[j, 0, i] = y
            rhs(y, u, w, C, k2)
            for a in range(n):
                y[a] = x[a] + 0.5 * h * k2[a]
            stages[j, 1, i] = y
            rhs(y, u, w, C, k3)
            for a in range(n):
                y[a] = x[a] + h * k3[a]
            stages[j, 2, i] = y
            rhs(y, u, w, C, k4)
            for a in range(n):
                x[a] = x[a] + (h / 6.0) * (k1[a] + 2.0 * k2[a] + 2.0 * k3[a] + k4[a])
            states[j + 1, i] = x
    return states, stages


@njit(**_JIT)
def _vjp_acc(A, v, out):
    n = A.shape[0]
    for b in range(n):
        s = 0.0
        for a in range(n):
            s += A[a, b] * v[a]
        out[b] = s


@njit(**_JIT)
def _ctrl_acc(F, v, ub):
    m, n = F.shape
    for i in range(m):
        s = 0.0
        for a in range(n):
            s += F[i, a] * v[a]
        ub[i] += s


@njit(**_JIT)
def rk4_adjoint(states, stages, U, W, C, h, lam_T, jac, ctrl):
    N, m = U.shape
    k, n = lam_T.shape
    costates = np.empty((N + 1, k, n))
    sens = np.empty((N, k, m))
    A = np.empty((n, n))
    F = np.empty((m, n))
    kb1 = np.empty(n)
    kb2 = np.empty(n)
    kb3 = np.empty(n)
    kb4 = np.empty(n)
    yb = np.empty(n)
    xb = np.empty(n)
    ub = np.empty(m)
    for i in range(k):
        lam = lam_T[i].copy()
        w = W[i]
        for a in range(n):
            costates[N, i, a] = -lam[a]
        for j in range(N - 1, -1, -1):
            u = U[j]
            for a in range(n):
                kb4[a] = (h / 6.0) * lam[a]
                kb3[a] = (h / 3.0) * lam[a]
                kb2[a] = (h / 3.0) * lam[a]
                kb1[a] = (h / 6.0) * lam[a]
                xb[a] = lam[a]
            ub[:] = 0.0

            y4 = stages[j, 2, i]
            jac(y4, u, w, C, A)
            _vjp_acc(A, kb4, yb)
            for a in range(n):
                xb[a] += yb[a]
                kb3[a] = kb3[a] + h * yb[a]
            ctrl(y4, w, C, F)
            _ctrl_acc(F, kb4, ub)

            y3 = stages[j, 1, i]
            jac(y3, u, w, C, A)
            _vjp_acc(A, kb3, yb)
            for a in range(n):
                xb[a] += yb[a]
                kb2[a] = kb2[a] + 0.5 * h * yb[a]
            ctrl(y3, w, C, F)
            _ctrl_acc(F, kb3, ub)

            y2 = stages[j, 0, i]
            jac(y2, u, w, C, A)
            _vjp_acc(A, kb2, yb)
            for a in range(n):
                xb[a] += yb[a]
                kb1[a] = kb1[a] + 0.5 * h * yb[a]
            ctrl(y2, w, C, F)
            _ctrl_acc(F, kb2, ub)

            y1 = states[j, i]
            jac(y1, u, w, C, A)
            _vjp_acc(A, kb1, yb)
            for a in range(n):
                xb[a] += yb[a]
            ctrl(y1, w, C, F)
            _ctrl_acc(F, kb1, ub)

            for a in range(n):
                lam[a] = xb[a]
                costates[j, i, a] = -lam[a]
            for q in range(m):
                sens[j, i, q] = ub[q]
    return costates, sens
