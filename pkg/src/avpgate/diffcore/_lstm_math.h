/* Gate activations over contiguous blocks, written as plain loops so the
   compiler can substitute vector exp from libmvec. */
#ifndef AVPGATE_LSTM_MATH_H
#define AVPGATE_LSTM_MATH_H

#include <math.h>

static inline void avp_sig_block(double *restrict x, int n)
{
    for (int j = 0; j < n; j++)
        x[j] = 1.0 / (1.0 + exp(-x[j]));
}

static inline void avp_tanh_block(const double *restrict x, double *restrict out, int n)
{
    for (int j = 0; j < n; j++)
        out[j] = 2.0 / (1.0 + exp(-2.0 * x[j])) - 1.0;
}

static inline void avp_tanh_inplace(double *restrict x, int n)
{
    for (int j = 0; j < n; j++)
        x[j] = 2.0 / (1.0 + exp(-2.0 * x[j])) - 1.0;
}

#endif
