#pragma once

namespace pflab {

// Call once at process start (pins BLAS to one thread).
void runtime_init();

}  // namespace pflab
