"""Compiled inner loops of the particle engine."""

import math

import numpy as np
from numba import njit

OK = 0
ERR_ORDER = 1


@njit(cache=True, nogil=True)
def _pava_blocks(vals, wts, nb, pool_val, pool_w, pool_first):
    """PAVA over ``nb`` weighted blocks; ties are merged.

    Fills pools in place and returns their number; ``pool_first[q]`` is the
    first block of pool ``q`` and ``pool_first[npool] == nb``.
    """
    npool = 0
    for b in range(nb):
        pool_val[npool] = vals[b]
        pool_w[npool] = wts[b]
        pool_first[npool] = b
        npool += 1
        while npool > 1 and pool_val[npool - 2] >= pool_val[npool - 1]:
            w = pool_w[npool - 2] + pool_w[npool - 1]
            pool_val[npool - 2] = (
                pool_w[npool - 2] * pool_val[npool - 2] + pool_w[npool - 1] * pool_val[npool - 1]
            ) / w
            pool_w[npool - 2] = w
            npool -= 1
    pool_first[npool] = nb
    return npool


@njit(cache=True, nogil=True)
def advance(x0, bond0, m, xi, Z, U, dt, sticky,
            X, B, A, QV, CM, com_inc, com_var):
    """Run ``Z.shape[0]`` steps from ``(x0, bond0)``.

    Grid arrays ``X, A, QV, CM`` have shape ``(steps + 1, n)`` and ``B`` has
    shape ``(steps + 1, n - 1)``; row 0 must already hold the initial
    accumulators (A, QV).  ``CM[j, k]`` is the mass of piece ``k``'s cluster
    at grid point ``j``.  Returns an error code.
    """
    n = m.shape[0]
    steps = Z.shape[0]
    nb1 = max(n - 1, 1)
    cl_start = np.empty(n + 1, np.int64)
    cl_mass = np.empty(n)
    d = np.empty(n)
    rel = np.zeros(nb1, np.bool_)
    bval = np.empty(n)
    bw = np.empty(n)
    bfirst = np.empty(n + 1, np.int64)
    pval = np.empty(n)
    pw = np.empty(n)
    pfirst = np.empty(n + 1, np.int64)

    for k in range(n):
        X[0, k] = x0[k]
    for j in range(n - 1):
        B[0, j] = bond0[j]

    for s in range(steps + 1):
        # clusters at grid point s
        ncl = 0
        cl_start[0] = 0
        for k in range(n):
            if k == n - 1 or not B[s, k]:
                ncl += 1
                cl_start[ncl] = k + 1
        for c in range(ncl):
            mc = 0.0
            sx = 0.0
            for k in range(cl_start[c], cl_start[c + 1]):
                mc += m[k]
                sx += m[k] * xi[k]
            cl_mass[c] = mc
            mean = sx / mc
            for k in range(cl_start[c], cl_start[c + 1]):
                d[k] = xi[k] - mean
                CM[s, k] = mc
        if s == steps:
            break

        # release gates on internal bonds
        for c in range(ncl):
            a = cl_start[c]
            e = cl_start[c + 1]
            left = 0.0
            for j in range(a, e - 1):
                left += m[j]
                rel[j] = False
                gap = xi[j + 1] - xi[j]
                if gap > 0.0:
                    if sticky:
                        sig = math.sqrt(1.0 / left + 1.0 / (cl_mass[c] - left))
                        if U[s, j] < gap * math.sqrt(2.0 * dt) / sig:
                            rel[j] = True
                    else:
                        rel[j] = True

        # tentative block positions: one noise per block + block-mean drift
        cinc = 0.0
        cvar = 0.0
        nb = 0
        k = 0
        while k < n:
            bfirst[nb] = k
            w = 0.0
            md = 0.0
            while True:
                w += m[k]
                md += m[k] * d[k]
                if k == n - 1 or not B[s, k] or rel[k]:
                    break
                k += 1
            bval[nb] = X[s, bfirst[nb]] + math.sqrt(dt / w) * Z[s, nb] + (md / w) * dt
            bw[nb] = w
            cinc += math.sqrt(w * dt) * Z[s, nb]
            cvar += w * dt
            nb += 1
            k += 1
        bfirst[nb] = n
        com_inc[s] = cinc
        com_var[s] = cvar

        for k in range(n):
            A[s + 1, k] = A[s, k] + d[k] * dt
            QV[s + 1, k] = QV[s, k] + dt / CM[s, k]

        npool = _pava_blocks(bval, bw, nb, pval, pw, pfirst)
        for q in range(npool):
            a = bfirst[pfirst[q]]
            e = bfirst[pfirst[q + 1]]
            for k in range(a, e):
                X[s + 1, k] = pval[q]
                if k < e - 1:
                    B[s + 1, k] = True
            if e - 1 < n - 1:
                B[s + 1, e - 1] = False
        for k in range(n - 1):
            if not (X[s + 1, k] < X[s + 1, k + 1] or (B[s + 1, k] and X[s + 1, k] == X[s + 1, k + 1])):
                return ERR_ORDER
        if n == 1 and not math.isfinite(X[s + 1, 0]):
            return ERR_ORDER
    return OK
