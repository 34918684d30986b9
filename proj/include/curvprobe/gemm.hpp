#pragma once

namespace curvprobe {

// Row-major single-precision GEMM: C = alpha * op(A) * op(B) + beta * C.
// Backed by OpenBLAS when built with CURVPROBE_WITH_OPENBLAS, otherwise a
// blocked portable kernel. Accumulation order per output element is fixed,
// so results are deterministic for a given build.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
          const float* a, int lda, const float* b, int ldb, float beta,
          float* c, int ldc);

}  // namespace curvprobe
