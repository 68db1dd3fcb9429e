#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <vector>

#include "dfkd/types.hpp"

namespace dfkd {

// Deterministic random stream. All randomness in the project flows through
// this class so that runs are reproducible from (seed, stream) alone:
// distribution algorithms are implemented here instead of relying on
// std::*_distribution, whose output is implementation-defined.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();

  // Uniform in [0, 1) with 53-bit resolution.
  double uniform();

  // Uniform integer in [0, n). Rejection sampling, n > 0.
  std::uint64_t uniform_int(std::uint64_t n);

  // Standard normal via Box-Muller (the spare half is cached).
  double normal();

  // Column-major fill of i.i.d. standard normals.
  Mat normal_mat(int rows, int cols);

  // Fisher-Yates.
  void shuffle(std::vector<int>& v);

  // Exact state round-trip (engine plus the Box-Muller spare).
  void save(std::ostream& os) const;
  void load(std::istream& is);

  bool operator==(const Rng& other) const;

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 finalizer; used to spread seeds into independent streams.
std::uint64_t mix64(std::uint64_t x);

}  // namespace dfkd
