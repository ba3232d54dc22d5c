#pragma once

#include <cstdint>
#include <vector>

namespace sonetlab {

// Deterministic random stream (xoshiro256++ seeded via splitmix64). All
// randomness in the project flows from one of these so that runs are
// reproducible bit-for-bit from a single seed, independent of the platform's
// std::*_distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi)
  double normal();                         // standard normal (Box-Muller)
  int uniform_int(int n);                  // {0, ..., n-1}
  double rademacher();                     // -1 or +1

  // Independent child stream; children with distinct tags do not collide
  // with the parent or with each other in practice.
  Rng child(std::uint64_t tag) const;

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(uniform_int(static_cast<int>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_[4];
  bool have_cached_normal_ = false;
  double cached_normal_ = 0.0;
};

}  // namespace sonetlab
