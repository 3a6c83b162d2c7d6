"""Pure-numpy fused recurrent kernels (fallback for the compiled ``_ckernels``).

Every function here has a twin with the identical signature in
``_ckernels.pyx``. Forward functions fill caller-allocated output arrays;
backward functions *accumulate* into caller-allocated gradient arrays.

Stacked weight layout:

* LSTM family: ``Wx`` (4p, M), ``Wh`` (4p, p), ``b`` (4p,) in gate order
  forget, input, candidate, output; ``Wt`` (3p, T) modulation rows in order
  forget, input, output, or shape (0, T) for no modulation.
* M-RNN: ``Wx`` (p, M), ``Wh`` (p, p), ``b`` (p,), ``Wt`` (p, T).
* M-GRU: ``Wx`` (2p, M) and ``Wh`` (2p, p) and ``b`` (2p,) for update/reset,
  ``Whh`` (p, p), ``Whx`` (p, M) for the candidate, ``Wt`` (2p, T) for the
  state/candidate modulations.
"""

from __future__ import annotations

import numpy as np

BACKEND = "python"


def _sig(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def lstm_forward(Wx, Wh, b, Wt, X, F, dh, dc, H, C, A, Mo):
    K = X.shape[0]
    p = Wh.shape[1]
    modulate = Wt.shape[0] > 0
    h = np.zeros(p)
    c = np.zeros(p)
    for k in range(K):
        hp = h * dh[k]
        cp = c * dc[k]
        a = Wx @ X[k] + Wh @ hp + b
        f = _sig(a[:p])
        i = _sig(a[p:2 * p])
        g = np.tanh(a[2 * p:3 * p])
        o = _sig(a[3 * p:])
        if modulate:
            m = _sig(Wt @ F[k])
            mf, mi, mo = m[:p], m[p:2 * p], m[2 * p:]
            Mo[k] = m
        else:
            mf = mi = mo = 1.0
        c = cp * f * mf + g * i * mi
        h = np.tanh(c) * o * mo
        A[k, :p] = f
        A[k, p:2 * p] = i
        A[k, 2 * p:3 * p] = g
        A[k, 3 * p:] = o
        H[k] = h
        C[k] = c


def lstm_backward(Wx, Wh, Wt, X, F, dh, dc, H, C, A, Mo, dH, gWx, gWh, gb, gWt):
    K = X.shape[0]
    p = Wh.shape[1]
    modulate = Wt.shape[0] > 0
    dh_next = np.zeros(p)
    dc_next = np.zeros(p)
    ones = np.ones(p)
    for k in range(K - 1, -1, -1):
        if k > 0:
            hp = H[k - 1] * dh[k]
            cp = C[k - 1] * dc[k]
        else:
            hp = np.zeros(p)
            cp = np.zeros(p)
        f = A[k, :p]
        i = A[k, p:2 * p]
        g = A[k, 2 * p:3 * p]
        o = A[k, 3 * p:]
        if modulate:
            mf, mi, mo = Mo[k, :p], Mo[k, p:2 * p], Mo[k, 2 * p:]
        else:
            mf = mi = mo = ones
        tc = np.tanh(C[k])
        dhk = dH[k] + dh_next
        do = dhk * tc * mo
        dcur = dc_next + dhk * o * mo * (1.0 - tc * tc)
        df = dcur * cp * mf
        di = dcur * g * mi
        dg = dcur * i * mi
        da = np.concatenate([
            df * f * (1.0 - f),
            di * i * (1.0 - i),
            dg * (1.0 - g * g),
            do * o * (1.0 - o),
        ])
        gWx += np.outer(da, X[k])
        gWh += np.outer(da, hp)
        gb += da
        if modulate:
            dm = np.concatenate([dcur * cp * f, dcur * g * i, dhk * tc * o])
            m = Mo[k]
            gWt += np.outer(dm * m * (1.0 - m), F[k])
        dhp = Wh.T @ da
        dh_next = dhp * dh[k]
        dc_next = dcur * f * mf * dc[k]


def rnn_forward(Wx, Wh, b, Wt, X, F, H, U, Mo):
    K = X.shape[0]
    p = Wh.shape[1]
    h = np.zeros(p)
    for k in range(K):
        u = np.tanh(Wx @ X[k] + Wh @ h + b)
        m = _sig(Wt @ F[k])
        h = u * m
        U[k] = u
        Mo[k] = m
        H[k] = h


def rnn_backward(Wx, Wh, Wt, X, F, H, U, Mo, dH, gWx, gWh, gb, gWt):
    K = X.shape[0]
    p = Wh.shape[1]
    dh_next = np.zeros(p)
    for k in range(K - 1, -1, -1):
        hp = H[k - 1] if k > 0 else np.zeros(p)
        u, m = U[k], Mo[k]
        dhk = dH[k] + dh_next
        da = dhk * m * (1.0 - u * u)
        dz = dhk * u * m * (1.0 - m)
        gWx += np.outer(da, X[k])
        gWh += np.outer(da, hp)
        gb += da
        gWt += np.outer(dz, F[k])
        dh_next = Wh.T @ da


def gru_forward(Wx, Wh, b, Whh, Whx, Wt, X, F, H, Z, Hc, Mo):
    K = X.shape[0]
    p = Whh.shape[0]
    h = np.zeros(p)
    for k in range(K):
        zr = _sig(Wx @ X[k] + Wh @ h + b)
        z, r = zr[:p], zr[p:]
        cand = np.tanh(Whh @ (r * h) + Whx @ X[k])
        m = _sig(Wt @ F[k])
        th, ti = m[:p], m[p:]
        h = (1.0 - z) * h * th + z * cand * ti
        Z[k] = zr
        Hc[k] = cand
        Mo[k] = m
        H[k] = h


def gru_backward(Wx, Wh, Whh, Whx, Wt, X, F, H, Z, Hc, Mo, dH, gWx, gWh, gb, gWhh, gWhx, gWt):
    K = X.shape[0]
    p = Whh.shape[0]
    dh_next = np.zeros(p)
    for k in range(K - 1, -1, -1):
        hp = H[k - 1] if k > 0 else np.zeros(p)
        z, r = Z[k, :p], Z[k, p:]
        cand = Hc[k]
        th, ti = Mo[k, :p], Mo[k, p:]
        dhk = dH[k] + dh_next
        dz = dhk * (cand * ti - hp * th)
        dcand = dhk * z * ti
        dth = dhk * (1.0 - z) * hp
        dti = dhk * z * cand
        dhp = dhk * (1.0 - z) * th
        dac = dcand * (1.0 - cand * cand)
        rh = r * hp
        gWhh += np.outer(dac, rh)
        gWhx += np.outer(dac, X[k])
        drh = Whh.T @ dac
        dr = drh * hp
        dhp = dhp + drh * r
        dazr = np.concatenate([dz * z * (1.0 - z), dr * r * (1.0 - r)])
        gWx += np.outer(dazr, X[k])
        gWh += np.outer(dazr, hp)
        gb += dazr
        dhp = dhp + Wh.T @ dazr
        dm = np.concatenate([dth, dti])
        m = Mo[k]
        gWt += np.outer(dm * m * (1.0 - m), F[k])
        dh_next = dhp
