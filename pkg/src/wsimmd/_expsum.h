#ifndef WSIMMD_EXPSUM_H
#define WSIMMD_EXPSUM_H
#include <stddef.h>

void wsimmd_exp_row_sums(const double *g, const double *norm_a, const double *norm_b,
                         size_t rows, size_t cols, double scale, double *out);

#endif
