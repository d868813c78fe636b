/* Inner loops of the TV dual projection on real views (rows, cols, 2).
 * Element-wise operation order matches the numpy fallback exactly; build
 * without FP contraction so no fused multiply-add changes rounding. */
#ifndef PICONOISE_TVKERNEL_H
#define PICONOISE_TVKERNEL_H

#include <stddef.h>

/* out = z - (((q_r[i-1] - q_r[i]) + q_c[j-1]) - q_c[j]) */
static void tv_neg_div(const double *restrict z, const double *restrict qr,
                       const double *restrict qc, double *restrict out,
                       ptrdiff_t rows, ptrdiff_t cols)
{
    ptrdiff_t rs = 2 * cols;
    for (ptrdiff_t i = 0; i < rows; ++i) {
        const double *zr = z + i * rs, *q0 = qr + i * rs, *c0 = qc + i * rs;
        const double *qu = qr + (i > 0 ? i - 1 : rows - 1) * rs;
        double *o = out + i * rs;
        o[0] = zr[0] - (((qu[0] - q0[0]) + c0[rs - 2]) - c0[0]);
        o[1] = zr[1] - (((qu[1] - q0[1]) + c0[rs - 1]) - c0[1]);
        for (ptrdiff_t k = 2; k < rs; ++k)
            o[k] = zr[k] - (((qu[k] - q0[k]) + c0[k - 2]) - c0[k]);
    }
}

static inline double tv_clip(double v, double lo, double hi)
{
    v = v < lo ? lo : v;
    return v > hi ? hi : v;
}

static void tv_dual_step(double *restrict qr, double *restrict qc, const double *restrict w,
                         ptrdiff_t rows, ptrdiff_t cols, double tau, double lo, double hi,
                         unsigned char *restrict mr, unsigned char *restrict mc)
{
    ptrdiff_t rs = 2 * cols;
    for (ptrdiff_t i = 0; i < rows; ++i) {
        const double *w0 = w + i * rs, *wd = w + (i < rows - 1 ? i + 1 : 0) * rs;
        double *a = qr + i * rs, *c = qc + i * rs;
        unsigned char *ma = mr + i * rs, *mcr = mc + i * rs;
        for (ptrdiff_t k = 0; k < rs; ++k) {
            double v = a[k] + tau * (wd[k] - w0[k]);
            ma[k] = (v > lo) & (v < hi);
            a[k] = tv_clip(v, lo, hi);
        }
        for (ptrdiff_t k = 0; k < rs - 2; ++k) {
            double v = c[k] + tau * (w0[k + 2] - w0[k]);
            mcr[k] = (v > lo) & (v < hi);
            c[k] = tv_clip(v, lo, hi);
        }
        for (ptrdiff_t k = rs - 2; k < rs; ++k) {
            double v = c[k] + tau * (w0[k - rs + 2] - w0[k]);
            mcr[k] = (v > lo) & (v < hi);
            c[k] = tv_clip(v, lo, hi);
        }
    }
}

static void tv_tangent_step(double *restrict dqr, double *restrict dqc, const double *restrict w,
                            ptrdiff_t rows, ptrdiff_t cols, double tau,
                            const unsigned char *restrict mr, const unsigned char *restrict mc)
{
    ptrdiff_t rs = 2 * cols;
    for (ptrdiff_t i = 0; i < rows; ++i) {
        const double *w0 = w + i * rs, *wd = w + (i < rows - 1 ? i + 1 : 0) * rs;
        double *a = dqr + i * rs, *c = dqc + i * rs;
        const unsigned char *ma = mr + i * rs, *mcr = mc + i * rs;
        for (ptrdiff_t k = 0; k < rs; ++k) {
            double v = a[k] + tau * (wd[k] - w0[k]);
            a[k] = ma[k] ? v : 0.0;
        }
        for (ptrdiff_t k = 0; k < rs - 2; ++k) {
            double v = c[k] + tau * (w0[k + 2] - w0[k]);
            c[k] = mcr[k] ? v : 0.0;
        }
        for (ptrdiff_t k = rs - 2; k < rs; ++k) {
            double v = c[k] + tau * (w0[k - rs + 2] - w0[k]);
            c[k] = mcr[k] ? v : 0.0;
        }
    }
}

#endif
