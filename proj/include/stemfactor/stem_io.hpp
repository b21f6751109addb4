#pragma once

// 4D scan stacks, the 2D NMF input matrix, and their on-disk formats.
//
// Layout conventions (used everywhere in the library):
//   * a stack is indexed (r, c, i, j): scan row, scan col, pattern row, pattern col;
//   * storage is row-major over all four axes;
//   * scan index j = r * n + c, pattern pixel p = i * py + j;
//   * DataMatrix column j is the flattened pattern at scan index j.

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace stemfactor {

using Matrix = Eigen::MatrixXd;
using Image = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct StackShape {
  std::size_t m = 0;   // scan rows
  std::size_t n = 0;   // scan cols
  std::size_t px = 0;  // pattern rows
  std::size_t py = 0;  // pattern cols

  std::size_t scan_count() const noexcept { return m * n; }
  std::size_t pattern_size() const noexcept { return px * py; }
  std::size_t total() const noexcept { return scan_count() * pattern_size(); }

  friend bool operator==(const StackShape&, const StackShape&) = default;
};

std::string to_string(const StackShape& shape);

/// Immutable, validated 4D dataset. Intensities are stored as f32 (the file
/// precision) and widened to f64 by every numerical consumer.
class ScanStack4D {
 public:
  /// Throws InvalidArgument (zero dims), ShapeMismatch (length),
  /// NegativeIntensity or NonFinite (first offending flat index).
  ScanStack4D(StackShape shape, std::vector<float> data, std::string provenance = "raw");

  const StackShape& shape() const noexcept { return shape_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::string& provenance() const noexcept { return provenance_; }

  std::span<const float> pattern(std::size_t scan_index) const;
  std::span<const float> pattern(std::size_t r, std::size_t c) const {
    return pattern(r * shape_.n + c);
  }
  Image pattern_image(std::size_t scan_index) const;

  /// Same data under a new provenance label.
  ScanStack4D relabeled(std::string provenance) const&;

 private:
  StackShape shape_;
  std::vector<float> data_;
  std::string provenance_;
};

/// V, shape (px*py, m*n). Non-negative, finite, non-empty.
class DataMatrix {
 public:
  explicit DataMatrix(Matrix values);

  const Matrix& values() const noexcept { return values_; }
  Eigen::Index rows() const noexcept { return values_.rows(); }
  Eigen::Index cols() const noexcept { return values_.cols(); }

 private:
  Matrix values_;
};

enum class StackFormat { Container, Interchange };

/// ".npy" selects the interchange format, anything else the native container.
StackFormat format_for_path(const std::filesystem::path& path);

ScanStack4D load_stack(const std::filesystem::path& path, StackFormat format);
inline ScanStack4D load_stack(const std::filesystem::path& path) {
  return load_stack(path, format_for_path(path));
}

void save_stack(const ScanStack4D& stack, const std::filesystem::path& path, StackFormat format);
inline void save_stack(const ScanStack4D& stack, const std::filesystem::path& path) {
  save_stack(stack, path, format_for_path(path));
}

DataMatrix reshape_4d_to_2d(const ScanStack4D& stack);

/// Exact inverse of reshape_4d_to_2d for matrices whose values are f32-representable.
ScanStack4D reshape_2d_to_4d(const DataMatrix& matrix, std::size_t m, std::size_t n,
                             std::size_t px, std::size_t py);

/// Column `col` of a matrix reshaped row-major to (px, py).
Image column_image(const Matrix& matrix, Eigen::Index col, std::size_t px, std::size_t py);

}  // namespace stemfactor
