#include "fmrifuse/common.hpp"

#include <atomic>

namespace fmrifuse {

namespace {
std::atomic<bool> g_finite_checks{true};
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  out += "]";
  return out;
}

bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }

void set_finite_checks(bool enabled) { g_finite_checks.store(enabled, std::memory_order_relaxed); }

double sorted_sum(std::span<const double> values) {
  if (values.empty()) return 0.0;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  double acc = 0.0;
  for (double v : sorted) acc += v;
  return acc;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + stream * 0x9E3779B97F4A7C15ull + 0x9E3779B97F4A7C15ull;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

}  // namespace fmrifuse
