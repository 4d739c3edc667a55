#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace turbdet {

// xoshiro256++ with splitmix64 seeding. Self-contained so that streams are
// reproducible across compilers and platforms (std::normal_distribution is
// not portable).
class Rng {
 public:
  explicit Rng(uint64_t seed = 0);

  uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);
  // Inclusive integer range.
  int64_t uniform_int(int64_t lo, int64_t hi);
  // Standard normal via Box-Muller (cached spare).
  double normal();
  double normal(double mean, double stddev);

  void fill_uniform(float* dst, int64_t n, float lo, float hi);
  void fill_normal(float* dst, int64_t n, float mean, float stddev);

  // Fisher-Yates shuffle of an index vector.
  void shuffle(std::vector<int64_t>& v);

  // Serializable state: 4 words of xoshiro state + Box-Muller spare.
  struct State {
    std::array<uint64_t, 4> s;
    bool has_spare;
    double spare;
  };
  State save() const;
  void restore(const State& st);

  // Stream derivation helpers (stable across runs).
  static uint64_t mix(uint64_t a, uint64_t b);
  static uint64_t hash_str(std::string_view s);

 private:
  std::array<uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace turbdet
