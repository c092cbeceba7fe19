"""Compiled inner loops for the monotone fixed-point iterations."""

import math

import numpy as np
from numba import njit

CONVERGED, DIVERGED, UNDETERMINED = 0, 1, 2


@njit(cache=True)
def _matvec(K, f, out):
    d = f.shape[0]
    for i in range(d):
        s = 0.0
        for j in range(d):
            s += K[i, j] * f[j]
        out[i] = s


@njit(cache=True)
def phi_iterate(K, z, tol, max_iter, diverge_threshold):
    """f <- z exp(K (f - 1)) from f = 1.

    Returns (status, f, iterations, monotone).  ``monotone`` records whether
    every step was entrywise nondecreasing up to rounding.
    """
    d = K.shape[0]
    f = np.ones(d)
    g = np.empty(d)
    t = np.empty(d)
    fm1 = np.empty(d)
    monotone = True
    for it in range(1, max_iter + 1):
        for i in range(d):
            fm1[i] = f[i] - 1.0
        _matvec(K, fm1, t)
        step = 0.0
        blown = False
        for i in range(d):
            if t[i] > 700.0:
                blown = True
                g[i] = math.inf
            else:
                g[i] = z * math.exp(t[i])
            diff = g[i] - f[i]
            if diff < -1e-14 * g[i]:
                monotone = False
            if abs(diff) > step:
                step = abs(diff)
        if blown:
            return DIVERGED, g, it, monotone
        for i in range(d):
            f[i] = g[i]
            if g[i] > diverge_threshold:
                blown = True
        if blown:
            return DIVERGED, f, it, monotone
        if step < tol:
            return CONVERGED, f, it, monotone
    return UNDETERMINED, f, max_iter, monotone


@njit(cache=True)
def survival_iterate(K, tol, max_iter):
    """f <- 1 - exp(-K f) from f = 1; returns (converged, f, iterations, monotone)."""
    d = K.shape[0]
    f = np.ones(d)
    g = np.empty(d)
    t = np.empty(d)
    monotone = True
    for it in range(1, max_iter + 1):
        _matvec(K, f, t)
        step = 0.0
        for i in range(d):
            g[i] = -math.expm1(-t[i])
            diff = g[i] - f[i]
            if diff > 1e-15:
                monotone = False
            if abs(diff) > step:
                step = abs(diff)
        for i in range(d):
            f[i] = g[i]
        if step < tol:
            return True, f, it, monotone
    return False, f, max_iter, monotone
