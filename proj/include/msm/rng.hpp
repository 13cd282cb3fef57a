#ifndef MSM_RNG_HPP
#define MSM_RNG_HPP

#include <cmath>
#include <cstdint>
#include <random>

namespace msm {

// All sampling goes through this engine with hand-rolled distributions so
// results are reproducible independent of the standard library's
// implementation-defined distribution algorithms.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next() { return eng_(); }

  // uniform on (0,1): never returns 0 or 1
  double uniform() {
    return (static_cast<double>(eng_() >> 11) + 0.5) * (1.0 / 9007199254740992.0);
  }
  double uniform(double a, double b) { return a + (b - a) * uniform(); }

  double exponential(double rate) { return -std::log(uniform()) / rate; }

  double normal() {
    // Marsaglia polar method without spare caching
    for (;;) {
      double u = 2.0 * uniform() - 1.0;
      double v = 2.0 * uniform() - 1.0;
      double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  // Marsaglia-Tsang for shape >= 1, boosted for shape < 1
  double gamma(double shape, double scale = 1.0) {
    if (shape < 1.0) {
      double u = uniform();
      return gamma(shape + 1.0, scale) * std::pow(u, 1.0 / shape);
    }
    double d = shape - 1.0 / 3.0;
    double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
    }
  }

  double beta(double a, double b) {
    double x = gamma(a);
    double y = gamma(b);
    return x / (x + y);
  }

  // index in [0,n) with probability weights[i]/sum (weights need not be normalized)
  template <typename Vec>
  int categorical(const Vec& weights, int n) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += weights[i];
    double u = uniform() * total;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      acc += weights[i];
      if (u <= acc) return i;
    }
    return n - 1;
  }

 private:
  std::mt19937_64 eng_;
};

// splitmix64: derives independent stream seeds from (master, stream ids).
inline std::uint64_t mix_seed(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ull;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = mix_seed(master);
  s = mix_seed(s ^ mix_seed(a + 0x1000000001ull));
  s = mix_seed(s ^ mix_seed(b + 0x2000000003ull));
  s = mix_seed(s ^ mix_seed(c + 0x3000000005ull));
  return s;
}

}  // namespace msm

#endif
