#pragma once

#include <Eigen/Core>
#ifdef _OPENMP
#include <omp.h>
#endif

namespace ocr {

// Caps both the OpenMP pool and Eigen's GEMM threading. 1 is the
// deterministic sequential mode used by the tests; the parallel mode only
// changes results within floating-point reduction-order tolerance (Eigen
// partitions GEMM output rows, never the accumulation axis).
inline void set_num_threads(int n) {
#ifdef _OPENMP
  omp_set_num_threads(n > 0 ? n : 1);
#endif
  Eigen::setNbThreads(n > 0 ? n : 1);
}

}  // namespace ocr
