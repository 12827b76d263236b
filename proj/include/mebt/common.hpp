#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace mebt {

// Row-major throughout: rows index positions/batch items, columns index features.
template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

using Index = Eigen::Index;

// Bad user input: unknown keys, out-of-range values, malformed CLI usage. CLI exit code 2.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Well-formed container, invalid content: out-of-range indices, impossible
// values arriving through data paths (files, caches) rather than config.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed serialized artifact. Carries the byte offset where parsing failed.
struct FormatError : DataError {
  std::uint64_t offset;
  FormatError(const std::string& msg, std::uint64_t off)
      : DataError(msg + " (byte offset " + std::to_string(off) + ")"), offset(off) {}
};

// Non-finite values where finite ones are required (diverged training, bad tensors).
struct NumericError : std::runtime_error {
  explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

// Internal invariant violation: a bug, not bad input.
struct LogicError : std::logic_error {
  explicit LogicError(const std::string& msg) : std::logic_error(msg) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw LogicError(msg);
}

inline Index ceil_div(Index a, Index b) { return (a + b - 1) / b; }

}  // namespace mebt
