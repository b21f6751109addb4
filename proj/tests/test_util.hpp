#pragma once

#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>

#include "stemfactor/error.hpp"
#include "stemfactor/stem_io.hpp"

namespace testutil {

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("stemfactor_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline stemfactor::Image random_image(std::mt19937_64& rng, int rows, int cols, double hi = 1.0) {
  std::uniform_real_distribution<double> u(0.0, hi);
  stemfactor::Image img(rows, cols);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = u(rng);
  return img;
}

template <typename F>
stemfactor::ErrorCode error_code_of(F&& f) {
  try {
    f();
  } catch (const stemfactor::Error& e) {
    return e.code();
  }
  throw std::runtime_error("expected a stemfactor::Error");
}

}  // namespace testutil
