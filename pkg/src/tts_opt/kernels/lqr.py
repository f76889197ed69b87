"""Compiled inner loop of the online LQR actor-critic.

The critic update is written in matrix form. Because
``<phi(z), svec(Omega)> = z' Omega z`` and ``smat(phi(z)) = z z'``, the Bellman
update of ``svec(Omega)`` is ``Omega - beta * (z'Omega z - z2'Omega z2 + J - c) z z'``.
"""
import math

import numpy as np

from .._backend import njit


@njit
def simulate(A, B, Q, R, L, sigma, bellman, K, Jh, Om, x, u, alphas, betas, Z, gains):
    n_iters = alphas.shape[0]
    d1 = A.shape[0]
    d2 = B.shape[1]
    n = d1 + d2
    x2 = np.empty(d1)
    u2 = np.empty(d2)
    z = np.empty(n)
    z2 = np.empty(n)
    Knew = np.empty((d2, d1))
    for k in range(n_iters):
        for i in range(d2):
            for j in range(d1):
                gains[k, i, j] = K[i, j]
        # x_{k+1} = A x + B u + L w ;  u_{k+1} = -K x_{k+1} + sigma eps
        for i in range(d1):
            acc = 0.0
            for j in range(d1):
                acc += A[i, j] * x[j] + L[i, j] * Z[k, j]
            for j in range(d2):
                acc += B[i, j] * u[j]
            x2[i] = acc
        for i in range(d2):
            acc = 0.0
            for j in range(d1):
                acc -= K[i, j] * x2[j]
            u2[i] = acc + sigma * Z[k, d1 + i]
        # actor: K - alpha (Om22 K - Om21)
        a_k = alphas[k]
        for i in range(d2):
            for j in range(d1):
                acc = -Om[d1 + i, j]
                for l in range(d2):
                    acc += Om[d1 + i, d1 + l] * K[l, j]
                Knew[i, j] = K[i, j] - a_k * acc
        # critic
        cost = 0.0
        for i in range(d1):
            for j in range(d1):
                cost += x[i] * Q[i, j] * x[j]
        for i in range(d2):
            for j in range(d2):
                cost += u[i] * R[i, j] * u[j]
        for i in range(d1):
            z[i] = x[i]
            z2[i] = x2[i]
        for i in range(d2):
            z[d1 + i] = u[i]
            z2[d1 + i] = u2[i]
        q1 = 0.0
        q2 = 0.0
        for i in range(n):
            for j in range(n):
                q1 += z[i] * Om[i, j] * z[j]
                q2 += z2[i] * Om[i, j] * z2[j]
        resid = q1 + Jh[0] - cost
        if bellman:
            resid -= q2
        b_k = betas[k]
        Jh[0] = Jh[0] - b_k * (Jh[0] - cost)
        ok = math.isfinite(Jh[0])
        for i in range(n):
            for j in range(i, n):
                v = Om[i, j] - b_k * z[i] * z[j] * resid
                Om[i, j] = v
                Om[j, i] = v
                if not math.isfinite(v):
                    ok = False
        for i in range(d2):
            for j in range(d1):
                K[i, j] = Knew[i, j]
                if not math.isfinite(Knew[i, j]):
                    ok = False
        if not ok:
            return k
        for i in range(d1):
            x[i] = x2[i]
        for i in range(d2):
            u[i] = u2[i]
    return -1
