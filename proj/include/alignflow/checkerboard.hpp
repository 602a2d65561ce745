#ifndef ALIGNFLOW_CHECKERBOARD_HPP
#define ALIGNFLOW_CHECKERBOARD_HPP

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "error.hpp"
#include "random.hpp"

namespace alignflow {

/// The 4x4 board over [-2, 2]^2 with black squares where
/// floor(x + 2) + floor(y + 2) is even.
inline bool in_black_square(double x, double y) {
  if (!(x >= -2.0 && x < 2.0 && y >= -2.0 && y < 2.0)) return false;
  const auto cx = static_cast<long>(std::floor(x + 2.0));
  const auto cy = static_cast<long>(std::floor(y + 2.0));
  return (cx + cy) % 2 == 0;
}

/// Lower-left corners of the eight black squares, in row-major board order.
inline std::vector<std::pair<int, int>> black_squares() {
  std::vector<std::pair<int, int>> out;
  for (int cy = 0; cy < 4; ++cy) {
    for (int cx = 0; cx < 4; ++cx) {
      if ((cx + cy) % 2 == 0) out.emplace_back(cx - 2, cy - 2);
    }
  }
  return out;
}

/// n i.i.d. points, uniform on the union of the black squares (2 x n).
inline Eigen::MatrixXd checkerboard_points(Eigen::Index n, std::uint64_t seed) {
  require(n >= 1, "checkerboard needs n >= 1");
  const auto squares = black_squares();
  SplitMix64 rng(seed);
  Eigen::MatrixXd pts(2, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [x0, y0] = squares[rng.below(squares.size())];
    pts(0, i) = x0 + rng.uniform();
    pts(1, i) = y0 + rng.uniform();
  }
  return pts;
}

}  // namespace alignflow

#endif  // ALIGNFLOW_CHECKERBOARD_HPP
