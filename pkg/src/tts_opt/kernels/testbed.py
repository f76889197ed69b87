"""Fused multi-seed loops for the synthetic testbeds.

Both flavours consume the same pre-drawn uniforms ``U[s, k]`` (seed ``s``,
step ``k``), which are exactly the draws the generic engine would take from
``default_rng(seed)``, so all three paths agree to rounding.
"""
import math

import numpy as np

from .._backend import njit


@njit
def _grad(code, M, shape, th, out):
    d = th.shape[0]
    m = M.shape[0]
    if code == 0:
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc += M[i, j] * th[j]
            out[i] = acc
    elif code == 1 or code == 2:
        for i in range(d):
            out[i] = 0.0
        for a in range(m):
            z = 0.0
            for j in range(d):
                z += M[a, j] * th[j]
            if code == 1:
                w = min(max(z, -shape), shape)
            else:
                w = (1.0 + shape * math.cos(z)) * (z + shape * math.sin(z))
            for j in range(d):
                out[j] += M[a, j] * w
    else:
        for i in range(d):
            out[i] = th[i] ** 3 - th[i]


@njit
def _metric(code, M, shape, th, g):
    d = th.shape[0]
    if code == 0:
        acc = 0.0
        for i in range(d):
            acc += th[i] * th[i]
        return acc
    if code == 3:
        _grad(code, M, shape, th, g)
        acc = 0.0
        for i in range(d):
            acc += g[i] * g[i]
        return acc
    acc = 0.0
    for a in range(M.shape[0]):
        z = 0.0
        for j in range(d):
            z += M[a, j] * th[j]
        if code == 1:
            az = abs(z)
            acc += 0.5 * z * z if az <= shape else shape * (az - 0.5 * shape)
        else:
            h = z + shape * math.sin(z)
            acc += 0.5 * h * h
    return acc


@njit
def run_numba(code, M, shape, W, Gamma, C, v_h, v_g, L_c, s_h, s_g, cc, q, use_abs,
              alphas, betas, theta0, omega0, x0, U, stride, metric, aux, theta_out, omega_out):
    S, n = U.shape
    d = theta0.shape[0]
    r = omega0.shape[0]
    fail = np.full(S, -1)
    g = np.empty(d)
    e = np.empty(r)
    th = np.empty(d)
    om = np.empty(r)
    for s in range(S):
        for i in range(d):
            th[i] = theta0[i]
        for i in range(r):
            om[i] = omega0[i]
        x = x0
        for k in range(n):
            if k % stride == 0:
                metric[s, k] = _metric(code, M, shape, th, g)
                acc = 0.0
                for i in range(r):
                    z = om[i]
                    for j in range(d):
                        z -= W[i, j] * th[j]
                    acc += z * z
                aux[s, k] = acc
            a_k = alphas[k]
            b_k = betas[k]
            # decision update
            _grad(code, M, shape, th, g)
            p = 1.0 / (1.0 + math.exp(-cc * th[0]))
            m0 = q / (p + q)
            nz = (1.0 - m0) if x == 0 else -m0
            for i in range(r):
                z = om[i]
                for j in range(d):
                    z -= W[i, j] * th[j]
                e[i] = abs(z) if use_abs else z
            ok = True
            for i in range(d):
                cpl = 0.0
                for j in range(r):
                    cpl += C[i, j] * e[j]
                g[i] = th[i] - a_k * (g[i] + s_h * nz * v_h[i] + L_c * cpl)
            for i in range(d):
                th[i] = g[i]
                if not math.isfinite(th[i]):
                    ok = False
            # auxiliary update at the new decision variable
            p = 1.0 / (1.0 + math.exp(-cc * th[0]))
            m0 = q / (p + q)
            nz = (1.0 - m0) if x == 0 else -m0
            for i in range(r):
                z = om[i]
                for j in range(d):
                    z -= W[i, j] * th[j]
                e[i] = z
            for i in range(r):
                acc = 0.0
                for j in range(r):
                    acc += Gamma[i, j] * e[j]
                om[i] = om[i] - b_k * (acc + s_g * nz * v_g[i])
                if not math.isfinite(om[i]):
                    ok = False
            if not ok:
                fail[s] = k
                break
            u = U[s, k]
            if x == 0:
                x = 0 if u < 1.0 - p else 1
            else:
                x = 0 if u < q else 1
        for i in range(d):
            theta_out[s, i] = th[i]
        for i in range(r):
            omega_out[s, i] = om[i]
    return fail


def _grad_batch(code, M, shape, th):
    if code == 0:
        return th @ M.T
    if code == 3:
        return th ** 3 - th
    z = th @ M.T
    if code == 1:
        w = np.clip(z, -shape, shape)
    else:
        w = (1.0 + shape * np.cos(z)) * (z + shape * np.sin(z))
    return w @ M


def _metric_batch(code, M, shape, th):
    if code == 0:
        return np.sum(th * th, axis=1)
    if code == 3:
        g = th ** 3 - th
        return np.sum(g * g, axis=1)
    z = th @ M.T
    if code == 1:
        az = np.abs(z)
        return np.sum(np.where(az <= shape, 0.5 * z * z, shape * (az - 0.5 * shape)), axis=1)
    h = z + shape * np.sin(z)
    return 0.5 * np.sum(h * h, axis=1)


def run_numpy(code, M, shape, W, Gamma, C, v_h, v_g, L_c, s_h, s_g, cc, q, use_abs,
              alphas, betas, theta0, omega0, x0, U, stride, metric, aux, theta_out, omega_out):
    S, n = U.shape
    th = np.tile(theta0, (S, 1))
    om = np.tile(omega0, (S, 1))
    x = np.full(S, x0)
    fail = np.full(S, -1)
    live = np.ones(S, dtype=bool)
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            if k % stride == 0:
                metric[live, k] = _metric_batch(code, M, shape, th[live])
                dev = om[live] - th[live] @ W.T
                aux[live, k] = np.sum(dev * dev, axis=1)
            p = 1.0 / (1.0 + np.exp(-cc * th[:, 0]))
            m0 = q / (p + q)
            nz = np.where(x == 0, 1.0 - m0, -m0)
            e = om - th @ W.T
            if use_abs:
                e = np.abs(e)
            th_new = th - alphas[k] * (_grad_batch(code, M, shape, th) + s_h * nz[:, None] * v_h
                                       + L_c * (e @ C.T))
            p = 1.0 / (1.0 + np.exp(-cc * th_new[:, 0]))
            m0 = q / (p + q)
            nz = np.where(x == 0, 1.0 - m0, -m0)
            om_new = om - betas[k] * ((om - th_new @ W.T) @ Gamma.T + s_g * nz[:, None] * v_g)
            bad = live & ~(np.all(np.isfinite(th_new), axis=1) & np.all(np.isfinite(om_new), axis=1))
            if bad.any():
                fail[bad] = k
                theta_out[bad] = th_new[bad]
                omega_out[bad] = om_new[bad]
                live &= ~bad
            th = np.where(live[:, None], th_new, th)
            om = np.where(live[:, None], om_new, om)
            u = U[:, k]
            x = np.where(x == 0, np.where(u < 1.0 - p, 0, 1), np.where(u < q, 0, 1))
            if not live.any():
                break
    theta_out[live] = th[live]
    omega_out[live] = om[live]
    return fail
