/* SiLU loops kept in C so the compiler can vectorize exp().
 *
 * When LCMLORA_VEXP is defined (x86-64 glibc builds), exp is declared with
 * a SIMD variant, which gcc maps onto libmvec. IEEE semantics are kept:
 * no -ffast-math is involved.
 */
#ifndef LCMLORA_SILU_H
#define LCMLORA_SILU_H

#include <math.h>

#ifdef LCMLORA_VEXP
__attribute__((simd("notinbranch"))) extern double exp(double);
#define LCMLORA_SIMD _Pragma("omp simd")
#else
#define LCMLORA_SIMD
#endif

static void silu_fwd_loop(const float *x, float *out, long n)
{
    LCMLORA_SIMD
    for (long i = 0; i < n; i++) {
        double v = x[i];
        out[i] = (float)(v / (1.0 + exp(-v)));
    }
}

static void silu_bwd_loop(const float *x, const float *grad, float *out, long n)
{
    LCMLORA_SIMD
    for (long i = 0; i < n; i++) {
        double v = x[i];
        double s = 1.0 / (1.0 + exp(-v));
        out[i] = (float)(grad[i] * s * (1.0 + v * (1.0 - s)));
    }
}

#endif
