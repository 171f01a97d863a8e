#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace pflab {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

// Derives an independent substream seed from a master seed and a tag, so the
// env, policy sampling, shuffling, poisoning and eval streams never collide.
inline uint64_t stream_seed(uint64_t master, std::string_view tag) {
  uint64_t h = 1469598103934665603ull;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  return splitmix64(master ^ h);
}

// mt19937_64 with hand-rolled distribution helpers. stdlib distributions are
// implementation-defined; these are not, which keeps runs reproducible.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  // [0, 1)
  double uniform01() { return (next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // [0, n)
  int uniform_int(int n) {
    return static_cast<int>((static_cast<__uint128_t>(next_u64()) *
                             static_cast<__uint128_t>(n)) >> 64);
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Sorted sample of k distinct values from [0, n).
  std::vector<int> sample_indices(int n, int k);

 private:
  std::mt19937_64 gen_;
};

}  // namespace pflab
