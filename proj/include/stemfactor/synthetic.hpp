#pragma once

// Seeded synthetic 4D stacks with known cluster structure, used as the test
// oracle for the whole pipeline. Not a physics model: each basis pattern is a
// set of Gaussian "Bragg" spots drawn without replacement from a shared
// lattice, so spot sets of different bases never overlap.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "stemfactor/stem_io.hpp"

namespace stemfactor {

/// Rectangle in scan coordinates whose patterns blend two bases:
/// value = (1 - mix) * A + mix * B.
struct OverlapRegion {
  std::size_t row0 = 0;
  std::size_t col0 = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t cluster_a = 0;
  std::size_t cluster_b = 0;
  double mix = 0.5;
};

struct SyntheticSpec {
  std::size_t m = 32;
  std::size_t n = 32;
  std::size_t px = 64;
  std::size_t py = 64;
  std::size_t k_true = 8;
  double noise_sigma = 0.0;  // absolute; the brightest basis pixel is 1.0
  std::vector<OverlapRegion> overlaps;
  std::uint64_t seed = 0;

  std::size_t spots_per_pattern = 8;
  bool direct_beam = false;  // optional shared central spot, present in every basis

  void validate() const;
};

struct GroundTruth {
  std::size_t m = 0;
  std::size_t n = 0;
  std::size_t k_true = 0;
  std::vector<int> labels;     // row-major (m, n): dominant basis per position
  std::vector<int> secondary;  // row-major (m, n): blended-in basis, -1 if none
  std::vector<double> mix;     // row-major (m, n): weight of `secondary`, 0 if none
  std::vector<Image> bases;    // k_true images (px, py), max pixel over all bases = 1
};

struct SyntheticDataset {
  ScanStack4D stack;
  GroundTruth truth;
};

/// Throws InvalidSpec on inconsistent parameters. Bit-identical for equal specs.
SyntheticDataset generate_synthetic(const SyntheticSpec& spec);

void save_ground_truth(const GroundTruth& truth, const std::filesystem::path& path);
GroundTruth load_ground_truth(const std::filesystem::path& path);

}  // namespace stemfactor
