#pragma once

// Reader/writer for the NumPy array file format, version 1.0.
// Only little-endian, C-order f32/f64 arrays of rank 2 or 4 are supported.

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "stemfactor/stem_io.hpp"

namespace stemfactor::npy {

enum class Dtype { F32, F64 };

struct Array {
  std::vector<std::size_t> shape;
  Dtype dtype = Dtype::F64;
  std::vector<double> data;  // widened; f32 values round-trip exactly

  std::size_t size() const noexcept;
};

Array read(const std::filesystem::path& path);

void write(const std::filesystem::path& path, std::span<const std::size_t> shape,
           std::span<const float> data);
void write(const std::filesystem::path& path, std::span<const std::size_t> shape,
           std::span<const double> data);

/// Matrices are written row-major, shape (rows, cols), f64.
void write_matrix(const std::filesystem::path& path, const Matrix& matrix);
Matrix read_matrix(const std::filesystem::path& path);

}  // namespace stemfactor::npy
