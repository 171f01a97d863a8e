#include "pflab/rng.hpp"

#include <algorithm>
#include <numeric>

#include "pflab/common.hpp"

namespace pflab {

std::vector<int> Rng::sample_indices(int n, int k) {
  check(k >= 0 && k <= n, "Rng::sample_indices: k out of range");
  std::vector<int> pool(static_cast<size_t>(n));
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < k; ++i) {
    int j = i + uniform_int(n - i);
    std::swap(pool[static_cast<size_t>(i)], pool[static_cast<size_t>(j)]);
  }
  pool.resize(static_cast<size_t>(k));
  std::sort(pool.begin(), pool.end());
  return pool;
}

}  // namespace pflab
