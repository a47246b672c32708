/* Fused clamp/exp/row-sum over one Gram block.
 *
 * Built separately with -ffast-math so the compiler can vectorize exp()
 * through the C library's SIMD variants; the caller keeps the compensated
 * sum across rows in code compiled without it.
 */
#include <math.h>

#include "_expsum.h"

void wsimmd_exp_row_sums(const double *g, const double *norm_a, const double *norm_b,
                         size_t rows, size_t cols, double scale, double *out)
{
    for (size_t i = 0; i < rows; ++i) {
        const double *gi = g + i * cols;
        const double ai = norm_a[i];
        double s = 0.0;
        for (size_t j = 0; j < cols; ++j) {
            double sq = ai + norm_b[j] - 2.0 * gi[j];
            sq = sq < 0.0 ? 0.0 : sq;
            s += exp(-scale * sq);
        }
        out[i] = s;
    }
}
