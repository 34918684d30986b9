#include "curvprobe/gemm.hpp"

#include <algorithm>
#include <cstring>
#include <vector>

#ifdef CURVPROBE_WITH_OPENBLAS
#include <cblas.h>
#endif

namespace curvprobe {

#ifdef CURVPROBE_WITH_OPENBLAS

extern "C" void openblas_set_num_threads(int);

namespace {
// Pin the BLAS to one thread: keeps results bit-reproducible and keeps the
// library safe to call from per-sample worker threads.
const bool g_blas_pinned = [] {
    openblas_set_num_threads(1);
    return true;
}();
}  // namespace

void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans,
                trans_b ? CblasTrans : CblasNoTrans, m, n, k, alpha, a, lda, b,
                ldb, beta, c, ldc);
}

#else

// Portable fallback: pack nothing, just block the loops so the inner kernel
// stays in cache and auto-vectorizes over n.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc) {
    constexpr int MB = 64, NB = 256, KB = 128;
    if (beta == 0.0f) {
        for (int i = 0; i < m; ++i) std::memset(c + size_t(i) * ldc, 0, sizeof(float) * n);
    } else if (beta != 1.0f) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) c[size_t(i) * ldc + j] *= beta;
    }
    auto at = [&](int i, int p) { return trans_a ? a[size_t(p) * lda + i] : a[size_t(i) * lda + p]; };
    auto bt = [&](int p, int j) { return trans_b ? b[size_t(j) * ldb + p] : b[size_t(p) * ldb + j]; };
    for (int i0 = 0; i0 < m; i0 += MB)
        for (int p0 = 0; p0 < k; p0 += KB)
            for (int j0 = 0; j0 < n; j0 += NB) {
                const int i1 = std::min(i0 + MB, m);
                const int p1 = std::min(p0 + KB, k);
                const int j1 = std::min(j0 + NB, n);
                for (int i = i0; i < i1; ++i) {
                    float* crow = c + size_t(i) * ldc;
                    for (int p = p0; p < p1; ++p) {
                        const float av = alpha * at(i, p);
                        if (!trans_b) {
                            const float* brow = b + size_t(p) * ldb;
                            for (int j = j0; j < j1; ++j) crow[j] += av * brow[j];
                        } else {
                            for (int j = j0; j < j1; ++j) crow[j] += av * bt(p, j);
                        }
                    }
                }
            }
}

#endif

}  // namespace curvprobe
