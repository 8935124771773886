#pragma once

// Dense row-major matrix used as model input. Missing cells hold NaN; tree
// models route them by learned default directions, linear models impute.

#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace sarlab {

struct RowMatrix {
  std::vector<double> values;  // rows * cols, row-major
  std::size_t rows = 0;
  std::size_t cols = 0;

  RowMatrix() = default;
  RowMatrix(std::size_t r, std::size_t c) : values(r * c, 0.0), rows(r), cols(c) {}

  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols, cols};
  }
  bool is_missing(std::size_t r, std::size_t c) const { return std::isnan(at(r, c)); }
};

}  // namespace sarlab
