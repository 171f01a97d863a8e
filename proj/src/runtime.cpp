#include "pflab/runtime.hpp"

extern "C" void openblas_set_num_threads(int) __attribute__((weak));

namespace pflab {

void runtime_init() {
  // Process-level parallelism only; threaded BLAS would oversubscribe the
  // experiment matrix and make reduction order a scheduling artifact.
  if (openblas_set_num_threads) openblas_set_num_threads(1);
}

}  // namespace pflab
