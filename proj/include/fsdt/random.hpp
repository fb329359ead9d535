#ifndef FSDT_RANDOM_HPP_
#define FSDT_RANDOM_HPP_

#include <array>
#include <cstdint>

namespace fsdt {

/// splitmix64 step; also used to derive independent seeds.
std::uint64_t splitmix64(std::uint64_t& state);

/// Seed for stream `index` under `seed`. Episode i of a dataset, client n of
/// a run and so on each draw from derive_seed(seed, i).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

/// xoshiro256** generator with hand-written distributions so that every
/// platform produces the same stream.
class Rng {
 public:
  using State = std::array<std::uint64_t, 4>;

  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform01();
  double uniform(double lo, double hi);
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_int(std::uint64_t n);
  /// Standard normal via Box-Muller, one draw per call (nothing cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  const State& state() const { return s_; }
  void set_state(const State& s) { s_ = s; }

 private:
  State s_;
};

}  // namespace fsdt

#endif  // FSDT_RANDOM_HPP_
