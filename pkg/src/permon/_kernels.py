"""Fixed-step RK4 kernels for the rescaled Riccati and variational systems.

The grid never steps across an observation-gain breakpoint, so the gain is
linear on every interval and its value at the three RK4 stage abscissae is
supplied per interval (left end, midpoint, right end).
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _riccati_rhs(om, eta_v, A, Q, G, T):
    M = A @ om
    N = om @ G @ om
    return T * (M + M.T + Q - eta_v * N)


@njit(cache=True, nogil=True)
def rk4_riccati(nodes, eta_l, eta_m, eta_r, A, Q, G, T, om0):
    K = nodes.shape[0] - 1
    L = A.shape[0]
    out = np.empty((K + 1, L, L))
    om = om0.copy()
    out[0] = om
    for k in range(K):
        h = nodes[k + 1] - nodes[k]
        k1 = _riccati_rhs(om, eta_l[k], A, Q, G, T)
        k2 = _riccati_rhs(om + 0.5 * h * k1, eta_m[k], A, Q, G, T)
        k3 = _riccati_rhs(om + 0.5 * h * k2, eta_m[k], A, Q, G, T)
        k4 = _riccati_rhs(om + h * k3, eta_r[k], A, Q, G, T)
        om = om + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        om = 0.5 * (om + om.T)
        out[k + 1] = om
    return out


@njit(cache=True, nogil=True)
def _aug_rhs(om, sh, sz, eta_v, deta, t_mask, A, Q, G, T):
    M = A @ om
    lyap = M + M.T + Q
    OG = om @ G
    OGO = OG @ om
    dom = T * (lyap - eta_v * OGO)
    F = T * (A - eta_v * OG)
    dsh = F @ sh
    n = sz.shape[0]
    dsz = np.empty_like(sz)
    for j in range(n):
        FS = F @ sz[j]
        if t_mask[j]:
            dsz[j] = FS + FS.T + lyap - (eta_v + T * deta[j]) * OGO
        else:
            dsz[j] = FS + FS.T - T * deta[j] * OGO
    return dom, dsh, dsz


@njit(cache=True, nogil=True)
def rk4_augmented(nodes, eta_l, eta_m, eta_r, deta_l, deta_m, deta_r,
                  t_mask, A, Q, G, T, om0):
    """Joint propagation of the covariance, the homogeneous transition, and
    one zero-initial-condition particular solution per parameter column."""
    K = nodes.shape[0] - 1
    L = A.shape[0]
    n = t_mask.shape[0]
    om_tr = np.empty((K + 1, L, L))
    sh_tr = np.empty((K + 1, L, L))
    sz_tr = np.empty((K + 1, n, L, L))
    om = om0.copy()
    sh = np.eye(L)
    sz = np.zeros((n, L, L))
    om_tr[0] = om
    sh_tr[0] = sh
    sz_tr[0] = sz
    for k in range(K):
        h = nodes[k + 1] - nodes[k]
        a1, b1, c1 = _aug_rhs(om, sh, sz, eta_l[k], deta_l[k], t_mask, A, Q, G, T)
        a2, b2, c2 = _aug_rhs(om + 0.5 * h * a1, sh + 0.5 * h * b1,
                              sz + 0.5 * h * c1, eta_m[k], deta_m[k],
                              t_mask, A, Q, G, T)
        a3, b3, c3 = _aug_rhs(om + 0.5 * h * a2, sh + 0.5 * h * b2,
                              sz + 0.5 * h * c2, eta_m[k], deta_m[k],
                              t_mask, A, Q, G, T)
        a4, b4, c4 = _aug_rhs(om + h * a3, sh + h * b3, sz + h * c3,
                              eta_r[k], deta_r[k], t_mask, A, Q, G, T)
        om = om + (h / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
        sh = sh + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
        sz = sz + (h / 6.0) * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
        om = 0.5 * (om + om.T)
        for j in range(n):
            sz[j] = 0.5 * (sz[j] + sz[j].T)
        om_tr[k + 1] = om
        sh_tr[k + 1] = sh
        sz_tr[k + 1] = sz
    return om_tr, sh_tr, sz_tr
