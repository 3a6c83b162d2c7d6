# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fused recurrent kernels.

Same signatures and array layouts as ``irregad._pykernels``; see that
module for the stacked weight layout. Forward kernels fill caller-allocated
outputs, backward kernels accumulate into caller-allocated gradients.
"""

from libc.math cimport exp, tanh
from libc.stdlib cimport calloc, free

BACKEND = "compiled"


cdef inline double sig(double z) noexcept nogil:
    return 0.5 * (1.0 + tanh(0.5 * z))


cdef inline void matvec_add(const double[:, ::1] W, const double* v, double* out,
                            Py_ssize_t rows, Py_ssize_t cols) noexcept nogil:
    cdef Py_ssize_t r, j
    cdef double acc
    for r in range(rows):
        acc = 0.0
        for j in range(cols):
            acc = acc + W[r, j] * v[j]
        out[r] = out[r] + acc


cdef inline void matTvec_add(const double[:, ::1] W, const double* v, double* out,
                             Py_ssize_t rows, Py_ssize_t cols) noexcept nogil:
    # out[cols] += W[rows, cols].T @ v[rows]
    cdef Py_ssize_t r, j
    cdef double vr
    for r in range(rows):
        vr = v[r]
        if vr != 0.0:
            for j in range(cols):
                out[j] = out[j] + W[r, j] * vr


cdef inline void outer_add(double[:, ::1] G, const double* u, const double* v,
                           Py_ssize_t rows, Py_ssize_t cols) noexcept nogil:
    cdef Py_ssize_t r, j
    cdef double ur
    for r in range(rows):
        ur = u[r]
        if ur != 0.0:
            for j in range(cols):
                G[r, j] = G[r, j] + ur * v[j]


def lstm_forward(const double[:, ::1] Wx, const double[:, ::1] Wh, const double[::1] b,
                 const double[:, ::1] Wt, const double[:, ::1] X, const double[:, ::1] F,
                 const double[::1] dh, const double[::1] dc,
                 double[:, ::1] H, double[:, ::1] C, double[:, ::1] A, double[:, ::1] Mo):
    cdef Py_ssize_t K = X.shape[0], M = X.shape[1], T = F.shape[1]
    cdef Py_ssize_t p = Wh.shape[1]
    cdef bint modulate = Wt.shape[0] > 0
    cdef Py_ssize_t k, j
    cdef double f, i, g, o, mf, mi, mo, cval
    cdef double* hp = <double*> calloc(p, sizeof(double))
    cdef double* cp = <double*> calloc(p, sizeof(double))
    cdef double* a = <double*> calloc(4 * p, sizeof(double))
    cdef double* m = <double*> calloc(3 * p, sizeof(double))
    if hp == NULL or cp == NULL or a == NULL or m == NULL:
        free(hp); free(cp); free(a); free(m)
        raise MemoryError()
    with nogil:
        for k in range(K):
            for j in range(p):
                if k > 0:
                    hp[j] = H[k - 1, j] * dh[k]
                    cp[j] = C[k - 1, j] * dc[k]
                else:
                    hp[j] = 0.0
                    cp[j] = 0.0
            for j in range(4 * p):
                a[j] = b[j]
            matvec_add(Wx, &X[k, 0], a, 4 * p, M)
            matvec_add(Wh, hp, a, 4 * p, p)
            if modulate:
                for j in range(3 * p):
                    m[j] = 0.0
                matvec_add(Wt, &F[k, 0], m, 3 * p, T)
                for j in range(3 * p):
                    m[j] = sig(m[j])
                    Mo[k, j] = m[j]
            for j in range(p):
                f = sig(a[j])
                i = sig(a[p + j])
                g = tanh(a[2 * p + j])
                o = sig(a[3 * p + j])
                if modulate:
                    mf = m[j]; mi = m[p + j]; mo = m[2 * p + j]
                else:
                    mf = 1.0; mi = 1.0; mo = 1.0
                cval = cp[j] * f * mf + g * i * mi
                C[k, j] = cval
                H[k, j] = tanh(cval) * o * mo
                A[k, j] = f
                A[k, p + j] = i
                A[k, 2 * p + j] = g
                A[k, 3 * p + j] = o
    free(hp); free(cp); free(a); free(m)


def lstm_backward(const double[:, ::1] Wx, const double[:, ::1] Wh, const double[:, ::1] Wt,
                  const double[:, ::1] X, const double[:, ::1] F,
                  const double[::1] dh, const double[::1] dc,
                  const double[:, ::1] H, const double[:, ::1] C, const double[:, ::1] A,
                  const double[:, ::1] Mo, const double[:, ::1] dH,
                  double[:, ::1] gWx, double[:, ::1] gWh, double[::1] gb, double[:, ::1] gWt):
    cdef Py_ssize_t K = X.shape[0], M = X.shape[1], T = F.shape[1]
    cdef Py_ssize_t p = Wh.shape[1]
    cdef bint modulate = Wt.shape[0] > 0
    cdef Py_ssize_t k, j
    cdef double f, i, g, o, mf, mi, mo, tc, dhk, dcur, dov, mm
    cdef double* hp = <double*> calloc(p, sizeof(double))
    cdef double* cp = <double*> calloc(p, sizeof(double))
    cdef double* dh_next = <double*> calloc(p, sizeof(double))
    cdef double* dc_next = <double*> calloc(p, sizeof(double))
    cdef double* dhp = <double*> calloc(p, sizeof(double))
    cdef double* da = <double*> calloc(4 * p, sizeof(double))
    cdef double* dz = <double*> calloc(3 * p, sizeof(double))
    if (hp == NULL or cp == NULL or dh_next == NULL or dc_next == NULL
            or dhp == NULL or da == NULL or dz == NULL):
        free(hp); free(cp); free(dh_next); free(dc_next); free(dhp); free(da); free(dz)
        raise MemoryError()
    with nogil:
        for k in range(K - 1, -1, -1):
            for j in range(p):
                if k > 0:
                    hp[j] = H[k - 1, j] * dh[k]
                    cp[j] = C[k - 1, j] * dc[k]
                else:
                    hp[j] = 0.0
                    cp[j] = 0.0
            for j in range(p):
                f = A[k, j]; i = A[k, p + j]; g = A[k, 2 * p + j]; o = A[k, 3 * p + j]
                if modulate:
                    mf = Mo[k, j]; mi = Mo[k, p + j]; mo = Mo[k, 2 * p + j]
                else:
                    mf = 1.0; mi = 1.0; mo = 1.0
                tc = tanh(C[k, j])
                dhk = dH[k, j] + dh_next[j]
                dov = dhk * tc * mo
                dcur = dc_next[j] + dhk * o * mo * (1.0 - tc * tc)
                da[j] = dcur * cp[j] * mf * f * (1.0 - f)
                da[p + j] = dcur * g * mi * i * (1.0 - i)
                da[2 * p + j] = dcur * i * mi * (1.0 - g * g)
                da[3 * p + j] = dov * o * (1.0 - o)
                if modulate:
                    mm = Mo[k, j]
                    dz[j] = dcur * cp[j] * f * mm * (1.0 - mm)
                    mm = Mo[k, p + j]
                    dz[p + j] = dcur * g * i * mm * (1.0 - mm)
                    mm = Mo[k, 2 * p + j]
                    dz[2 * p + j] = dhk * tc * o * mm * (1.0 - mm)
                dc_next[j] = dcur * f * mf * dc[k]
            outer_add(gWx, da, &X[k, 0], 4 * p, M)
            outer_add(gWh, da, hp, 4 * p, p)
            for j in range(4 * p):
                gb[j] = gb[j] + da[j]
            if modulate:
                outer_add(gWt, dz, &F[k, 0], 3 * p, T)
            for j in range(p):
                dhp[j] = 0.0
            matTvec_add(Wh, da, dhp, 4 * p, p)
            for j in range(p):
                dh_next[j] = dhp[j] * dh[k]
    free(hp); free(cp); free(dh_next); free(dc_next); free(dhp); free(da); free(dz)


def rnn_forward(const double[:, ::1] Wx, const double[:, ::1] Wh, const double[::1] b,
                const double[:, ::1] Wt, const double[:, ::1] X, const double[:, ::1] F,
                double[:, ::1] H, double[:, ::1] U, double[:, ::1] Mo):
    cdef Py_ssize_t K = X.shape[0], M = X.shape[1], T = F.shape[1]
    cdef Py_ssize_t p = Wh.shape[1]
    cdef Py_ssize_t k, j
    cdef double* a = <double*> calloc(p, sizeof(double))
    cdef double* m = <double*> calloc(p, sizeof(double))
    cdef double* hp = <double*> calloc(p, sizeof(double))
    if a == NULL or m == NULL or hp == NULL:
        free(a); free(m); free(hp)
        raise MemoryError()
    with nogil:
        for k in range(K):
            for j in range(p):
                a[j] = b[j]
                m[j] = 0.0
                hp[j] = H[k - 1, j] if k > 0 else 0.0
            matvec_add(Wx, &X[k, 0], a, p, M)
            matvec_add(Wh, hp, a, p, p)
            matvec_add(Wt, &F[k, 0], m, p, T)
            for j in range(p):
                U[k, j] = tanh(a[j])
                Mo[k, j] = sig(m[j])
                H[k, j] = U[k, j] * Mo[k, j]
    free(a); free(m); free(hp)


def rnn_backward(const double[:, ::1] Wx, const double[:, ::1] Wh, const double[:, ::1] Wt,
                 const double[:, ::1] X, const double[:, ::1] F,
                 const double[:, ::1] H, const double[:, ::1] U, const double[:, ::1] Mo,
                 const double[:, ::1] dH,
                 double[:, ::1] gWx, double[:, ::1] gWh, double[::1] gb, double[:, ::1] gWt):
    cdef Py_ssize_t K = X.shape[0], M = X.shape[1], T = F.shape[1]
    cdef Py_ssize_t p = Wh.shape[1]
    cdef Py_ssize_t k, j
    cdef double u, mm, dhk
    cdef double* da = <double*> calloc(p, sizeof(double))
    cdef double* dz = <double*> calloc(p, sizeof(double))
    cdef double* hp = <double*> calloc(p, sizeof(double))
    cdef double* dh_next = <double*> calloc(p, sizeof(double))
    if da == NULL or dz == NULL or hp == NULL or dh_next == NULL:
        free(da); free(dz); free(hp); free(dh_next)
        raise MemoryError()
    with nogil:
        for k in range(K - 1, -1, -1):
            for j in range(p):
                hp[j] = H[k - 1, j] if k > 0 else 0.0
                u = U[k, j]
                mm = Mo[k, j]
                dhk = dH[k, j] + dh_next[j]
                da[j] = dhk * mm * (1.0 - u * u)
                dz[j] = dhk * u * mm * (1.0 - mm)
            outer_add(gWx, da, &X[k, 0], p, M)
            outer_add(gWh, da, hp, p, p)
            outer_add(gWt, dz, &F[k, 0], p, T)
            for j in range(p):
                gb[j] = gb[j] + da[j]
                dh_next[j] = 0.0
            matTvec_add(Wh, da, dh_next, p, p)
    free(da); free(dz); free(hp); free(dh_next)


def gru_forward(const double[:, ::1] Wx, const double[:, ::1] Wh, const double[::1] b,
                const double[:, ::1] Whh, const double[:, ::1] Whx, const double[:, ::1] Wt,
                const double[:, ::1] X, const double[:, ::1] F,
                double[:, ::1] H, double[:, ::1] Z, double[:, ::1] Hc, double[:, ::1] Mo):
    cdef Py_ssize_t K = X.shape[0], M = X.shape[1], T = F.shape[1]
    cdef Py_ssize_t p = Whh.shape[0]
    cdef Py_ssize_t k, j
    cdef double z, th, ti
    cdef double* hp = <double*> calloc(p, sizeof(double))
    cdef double* zr = <double*> calloc(2 * p, sizeof(double))
    cdef double* rh = <double*> calloc(p, sizeof(double))
    cdef double* ac = <double*> calloc(p, sizeof(double))
    cdef double* m = <double*> calloc(2 * p, sizeof(double))
    if hp == NULL or zr == NULL or rh == NULL or ac == NULL or m == NULL:
        free(hp); free(zr); free(rh); free(ac); free(m)
        raise MemoryError()
    with nogil:
        for k in range(K):
            for j in range(p):
                hp[j] = H[k - 1, j] if k > 0 else 0.0
                ac[j] = 0.0
            for j in range(2 * p):
                zr[j] = b[j]
                m[j] = 0.0
            matvec_add(Wx, &X[k, 0], zr, 2 * p, M)
            matvec_add(Wh, hp, zr, 2 * p, p)
            for j in range(2 * p):
                zr[j] = sig(zr[j])
                Z[k, j] = zr[j]
            for j in range(p):
                rh[j] = zr[p + j] * hp[j]
            matvec_add(Whh, rh, ac, p, p)
            matvec_add(Whx, &X[k, 0], ac, p, M)
            matvec_add(Wt, &F[k, 0], m, 2 * p, T)
            for j in range(2 * p):
                m[j] = sig(m[j])
                Mo[k, j] = m[j]
            for j in range(p):
                Hc[k, j] = tanh(ac[j])
                z = zr[j]
                th = m[j]
                ti = m[p + j]
                H[k, j] = (1.0 - z) * hp[j] * th + z * Hc[k, j] * ti
    free(hp); free(zr); free(rh); free(ac); free(m)


def gru_backward(const double[:, ::1] Wx, const double[:, ::1] Wh, const double[:, ::1] Whh,
                 const double[:, ::1] Whx, const double[:, ::1] Wt,
                 const double[:, ::1] X, const double[:, ::1] F,
                 const double[:, ::1] H, const double[:, ::1] Z, const double[:, ::1] Hc,
                 const double[:, ::1] Mo, const double[:, ::1] dH,
                 double[:, ::1] gWx, double[:, ::1] gWh, double[::1] gb,
                 double[:, ::1] gWhh, double[:, ::1] gWhx, double[:, ::1] gWt):
    cdef Py_ssize_t K = X.shape[0], M = X.shape[1], T = F.shape[1]
    cdef Py_ssize_t p = Whh.shape[0]
    cdef Py_ssize_t k, j
    cdef double z, r, cand, th, ti, dhk, dz, dr
    cdef double* hp = <double*> calloc(p, sizeof(double))
    cdef double* rh = <double*> calloc(p, sizeof(double))
    cdef double* dac = <double*> calloc(p, sizeof(double))
    cdef double* drh = <double*> calloc(p, sizeof(double))
    cdef double* dhp = <double*> calloc(p, sizeof(double))
    cdef double* dh_next = <double*> calloc(p, sizeof(double))
    cdef double* dazr = <double*> calloc(2 * p, sizeof(double))
    cdef double* dm = <double*> calloc(2 * p, sizeof(double))
    if (hp == NULL or rh == NULL or dac == NULL or drh == NULL or dhp == NULL
            or dh_next == NULL or dazr == NULL or dm == NULL):
        free(hp); free(rh); free(dac); free(drh); free(dhp); free(dh_next); free(dazr); free(dm)
        raise MemoryError()
    with nogil:
        for k in range(K - 1, -1, -1):
            for j in range(p):
                hp[j] = H[k - 1, j] if k > 0 else 0.0
                rh[j] = Z[k, p + j] * hp[j]
                drh[j] = 0.0
            for j in range(p):
                z = Z[k, j]
                cand = Hc[k, j]
                th = Mo[k, j]
                ti = Mo[k, p + j]
                dhk = dH[k, j] + dh_next[j]
                dazr[j] = dhk * (cand * ti - hp[j] * th) * z * (1.0 - z)
                dac[j] = dhk * z * ti * (1.0 - cand * cand)
                dm[j] = dhk * (1.0 - z) * hp[j] * th * (1.0 - th)
                dm[p + j] = dhk * z * cand * ti * (1.0 - ti)
                dhp[j] = dhk * (1.0 - z) * th
            outer_add(gWhh, dac, rh, p, p)
            outer_add(gWhx, dac, &X[k, 0], p, M)
            matTvec_add(Whh, dac, drh, p, p)
            for j in range(p):
                r = Z[k, p + j]
                dr = drh[j] * hp[j]
                dazr[p + j] = dr * r * (1.0 - r)
                dhp[j] = dhp[j] + drh[j] * r
            outer_add(gWx, dazr, &X[k, 0], 2 * p, M)
            outer_add(gWh, dazr, hp, 2 * p, p)
            for j in range(2 * p):
                gb[j] = gb[j] + dazr[j]
            outer_add(gWt, dm, &F[k, 0], 2 * p, T)
            matTvec_add(Wh, dazr, dhp, 2 * p, p)
            for j in range(p):
                dh_next[j] = dhp[j]
    free(hp); free(rh); free(dac); free(drh); free(dhp); free(dh_next); free(dazr); free(dm)
