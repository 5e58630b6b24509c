#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace d3desk {

// Deterministic random source. All distributions are derived from raw
// mt19937_64 output with fixed arithmetic, so streams are identical across
// platforms and standard-library versions (std:: distributions are not).
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0,1).
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  // Inclusive integer range.
  int uniform_int(int a, int b) {
    const int span = b - a + 1;
    int k = static_cast<int>(uniform() * span);
    if (k >= span) k = span - 1;
    return a + k;
  }

  // Box-Muller, two fresh uniforms per call.
  double normal() {
    double u1 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  double normal(double mu, double sigma) { return mu + sigma * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i)
      std::swap(v[static_cast<size_t>(i)], v[static_cast<size_t>(uniform_int(0, i))]);
  }

  // pick returns an index in [0, n).
  int pick(int n) { return uniform_int(0, n - 1); }

  std::string state() const;
  void set_state(const std::string& s);

 private:
  std::mt19937_64 eng_;
};

}  // namespace d3desk
