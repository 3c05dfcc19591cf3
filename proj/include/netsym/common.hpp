#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace netsym {

/// Dense row-major storage matches the on-disk tensor layout.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using IndexVector = Eigen::Matrix<Eigen::Index, Eigen::Dynamic, 1>;

enum class ErrorCode {
  InvalidSpec,
  ShapeMismatch,
  InvalidArgument,
  Format,
  Io,
  Numerical,
  Degenerate,
  Unsupported,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Deterministic stream derived from a base seed and a stream index.
inline std::mt19937_64 make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
  return std::mt19937_64(seq);
}

/// FNV-1a, stable across platforms (std::hash is not).
std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t value);

}  // namespace netsym
