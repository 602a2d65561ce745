#ifndef ALIGNFLOW_DENSITY_HPP
#define ALIGNFLOW_DENSITY_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "checkerboard.hpp"
#include "error.hpp"

namespace alignflow {

/// 2D histogram over [lo, hi]^2; row 0 is the top (largest y) as in images.
class DensityGrid {
 public:
  explicit DensityGrid(int size = 256, double lo = -3.0, double hi = 3.0)
      : size_(size), lo_(lo), hi_(hi), counts_(static_cast<std::size_t>(size) * size, 0) {
    require(size >= 1 && hi > lo, "density grid needs size >= 1 and hi > lo");
  }

  void add(const Eigen::MatrixXd& points) {
    require(points.rows() == 2, "density grid takes 2D points");
    for (Eigen::Index j = 0; j < points.cols(); ++j) {
      const int cx = cell(points(0, j));
      const int cy = cell(points(1, j));
      ++total_;
      if (cx < 0 || cy < 0) continue;
      ++counts_[static_cast<std::size_t>(size_ - 1 - cy) * size_ + cx];
    }
  }

  std::uint64_t count(int row, int col) const { return counts_[static_cast<std::size_t>(row) * size_ + col]; }
  std::uint64_t total() const noexcept { return total_; }
  int size() const noexcept { return size_; }

  /// Fraction of all added points whose cell center lies in a black square.
  double black_mass_fraction() const {
    if (total_ == 0) return 0.0;
    std::uint64_t black = 0;
    for (int row = 0; row < size_; ++row) {
      for (int col = 0; col < size_; ++col) {
        if (in_black_square(center(col), center(size_ - 1 - row))) black += count(row, col);
      }
    }
    return static_cast<double>(black) / static_cast<double>(total_);
  }

  /// Plain (P2) PGM, intensities scaled so the fullest cell is 255.
  void write_pgm(std::ostream& out) const {
    const std::uint64_t peak = std::max<std::uint64_t>(1, *std::max_element(counts_.begin(), counts_.end()));
    out << "P2\n" << size_ << ' ' << size_ << "\n255\n";
    for (int row = 0; row < size_; ++row) {
      for (int col = 0; col < size_; ++col) {
        const auto v = (count(row, col) * 255 + peak / 2) / peak;
        out << v << (col + 1 == size_ ? '\n' : ' ');
      }
    }
  }

  void write_pgm(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw ValidationError("cannot open " + path + " for writing");
    write_pgm(out);
  }

 private:
  int cell(double v) const {
    if (!(v >= lo_ && v < hi_)) return -1;
    return std::min(size_ - 1, static_cast<int>((v - lo_) / (hi_ - lo_) * size_));
  }

  double center(int c) const { return lo_ + (c + 0.5) * (hi_ - lo_) / size_; }

  int size_;
  double lo_;
  double hi_;
  std::vector<std::uint64_t> counts_;
  std::uint64_t total_ = 0;
};

}  // namespace alignflow

#endif  // ALIGNFLOW_DENSITY_HPP
