#pragma once

#include <cstdint>
#include <numeric>
#include <vector>

#include "mebt/common.hpp"

namespace mebt {

// Dense row-major n-d array. Last dimension varies fastest.
template <typename S>
struct NdArray {
  std::vector<Index> dims;
  std::vector<S> data;

  NdArray() = default;
  explicit NdArray(std::vector<Index> d) : dims(std::move(d)) {
    data.assign(static_cast<std::size_t>(size_of(dims)), S{});
  }

  static Index size_of(const std::vector<Index>& d) {
    Index n = 1;
    for (Index x : d) {
      check(x > 0, "NdArray: dimensions must be positive");
      n *= x;
    }
    return n;
  }

  Index size() const { return static_cast<Index>(data.size()); }
  Index rank() const { return static_cast<Index>(dims.size()); }

  Index flat(const std::vector<Index>& idx) const {
    check(idx.size() == dims.size(), "NdArray::flat: rank mismatch");
    Index f = 0;
    for (std::size_t i = 0; i < idx.size(); ++i) {
      check(idx[i] >= 0 && idx[i] < dims[i], "NdArray::flat: index out of range");
      f = f * dims[i] + idx[i];
    }
    return f;
  }

  S& at(const std::vector<Index>& idx) { return data[static_cast<std::size_t>(flat(idx))]; }
  const S& at(const std::vector<Index>& idx) const {
    return data[static_cast<std::size_t>(flat(idx))];
  }
};

using VideoArray = NdArray<float>;          // (T, H, W, C), values in [0, 1]
using TokenGrid = NdArray<std::uint16_t>;   // (t, h, w), codebook indices

}  // namespace mebt
