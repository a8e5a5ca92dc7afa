#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fmrifuse {

// Row-major to match the on-disk and token layouts.
using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Shape = std::vector<Eigen::Index>;

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor/operand shapes do not conform.
struct ShapeError : Error {
  using Error::Error;
};

// Invalid configuration value (rates, dims, run configs).
struct ConfigError : Error {
  using Error::Error;
};

// An operation was called outside its contract.
struct ContractError : Error {
  using Error::Error;
};

// Malformed file content (FVOL, DICOM, JSON, checkpoints).
struct FormatError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// A public op produced NaN/Inf while finite checking was enabled.
struct NonFiniteError : Error {
  using Error::Error;
};

std::string shape_str(const Shape& s);

// Finite checking after public tensor ops. Default on; the training loop
// disables it inside the hot path.
bool finite_checks_enabled();
void set_finite_checks(bool enabled);

class FiniteCheckGuard {
 public:
  explicit FiniteCheckGuard(bool enabled) : previous_(finite_checks_enabled()) {
    set_finite_checks(enabled);
  }
  ~FiniteCheckGuard() { set_finite_checks(previous_); }
  FiniteCheckGuard(const FiniteCheckGuard&) = delete;
  FiniteCheckGuard& operator=(const FiniteCheckGuard&) = delete;

 private:
  bool previous_;
};

// Sum of a multiset of doubles that does not depend on operand order:
// addends are sorted before accumulation, so any permutation of the input
// produces bitwise-identical results.
double sorted_sum(std::span<const double> values);

// splitmix64 step; used to derive independent RNG streams from one seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace fmrifuse
