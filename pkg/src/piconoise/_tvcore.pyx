# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled anisotropic-TV dual projection loops.

Arrays use the real view of complex images: ``z`` is ``(B, rows, cols, 2)``
and the dual ``q`` is ``(B, 2, rows, cols, 2)`` with axis 1 selecting the
row / column forward difference. Every element sees exactly the operations
of ``_tvpy`` in the same order, so both backends agree bitwise.
"""

import numpy as np

ctypedef double f64
ctypedef unsigned char u8


cdef extern from "tvkernel.h":
    void _neg_div "tv_neg_div"(const f64* z, const f64* qr, const f64* qc, f64* out,
                               Py_ssize_t rows, Py_ssize_t cols) nogil
    void _dual_step "tv_dual_step"(f64* qr, f64* qc, const f64* w, Py_ssize_t rows, Py_ssize_t cols,
                                   f64 tau, f64 lo, f64 hi, u8* mr, u8* mc) nogil
    void _tangent_step "tv_tangent_step"(f64* dqr, f64* dqc, const f64* w, Py_ssize_t rows,
                                         Py_ssize_t cols, f64 tau, const u8* mr, const u8* mc) nogil


def prox_forward(f64[:, :, :, ::1] z, f64[:, :, :, :, ::1] q, double thresh,
                 int n_inner, double tau, masks=None):
    """Run ``n_inner`` projected dual steps in place on ``q``; return the primal image.

    When ``masks`` (uint8, ``(B, n_inner, 2, rows, cols, 2)``) is given, entry
    ``[b, it, ...]`` records whether the pre-clip dual value lay strictly
    inside ``(-thresh, thresh)`` at inner step ``it``.
    """
    cdef Py_ssize_t B = z.shape[0], rows = z.shape[1], cols = z.shape[2]
    cdef Py_ssize_t n = rows * cols * 2, b, it
    cdef u8[:, :, :, :, :, ::1] mview
    cdef bint record = masks is not None
    if record:
        mview = masks
    scratch_arr = np.empty(2 * rows * cols * 2, dtype=np.uint8)
    cdef u8[::1] scratch = scratch_arr
    cdef u8* mr = &scratch[0]
    cdef u8* mc = &scratch[rows * cols * 2]
    out_arr = np.empty((B, rows, cols, 2), dtype=np.float64)
    cdef f64[:, :, :, ::1] out = out_arr
    w_arr = np.empty(n, dtype=np.float64)
    cdef f64[::1] w = w_arr
    if B == 0:
        return out_arr
    with nogil:
        for b in range(B):
            for it in range(n_inner):
                _neg_div(&z[b, 0, 0, 0], &q[b, 0, 0, 0, 0], &q[b, 1, 0, 0, 0], &w[0], rows, cols)
                if record:
                    mr = &mview[b, it, 0, 0, 0, 0]
                    mc = &mview[b, it, 1, 0, 0, 0]
                _dual_step(&q[b, 0, 0, 0, 0], &q[b, 1, 0, 0, 0], &w[0], rows, cols,
                           tau, -thresh, thresh, mr, mc)
            _neg_div(&z[b, 0, 0, 0], &q[b, 0, 0, 0, 0], &q[b, 1, 0, 0, 0], &out[b, 0, 0, 0], rows, cols)
    return out_arr


def prox_tangent(f64[:, :, :, ::1] dz, f64[:, :, :, :, ::1] dq,
                 const u8[:, :, :, :, ::1] masks, double tau):
    """Linearized dual loop: ``dq <- mask * (dq + tau D (dz - D^T dq))``.

    ``masks`` is ``(n_inner, 2, rows, cols, 2)`` and shared by the whole batch.
    """
    cdef Py_ssize_t B = dz.shape[0], rows = dz.shape[1], cols = dz.shape[2]
    cdef Py_ssize_t n_inner = masks.shape[0], n = rows * cols * 2, b, it
    out_arr = np.empty((B, rows, cols, 2), dtype=np.float64)
    cdef f64[:, :, :, ::1] out = out_arr
    w_arr = np.empty(n, dtype=np.float64)
    cdef f64[::1] w = w_arr
    if B == 0:
        return out_arr
    with nogil:
        for b in range(B):
            for it in range(n_inner):
                _neg_div(&dz[b, 0, 0, 0], &dq[b, 0, 0, 0, 0], &dq[b, 1, 0, 0, 0], &w[0], rows, cols)
                _tangent_step(&dq[b, 0, 0, 0, 0], &dq[b, 1, 0, 0, 0], &w[0], rows, cols,
                              tau, &masks[it, 0, 0, 0, 0], &masks[it, 1, 0, 0, 0])
            _neg_div(&dz[b, 0, 0, 0], &dq[b, 0, 0, 0, 0], &dq[b, 1, 0, 0, 0], &out[b, 0, 0, 0], rows, cols)
    return out_arr
