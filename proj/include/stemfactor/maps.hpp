#pragma once

// Cluster assignment, representative and mean patterns, and overlap maps
// derived from a factorization.

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "stemfactor/stem_io.hpp"

namespace stemfactor {

/// {0.75, 0.80, 0.85, 0.90, 0.95}
std::vector<double> default_thresholds();

/// Throws BadThresholds unless non-empty, strictly increasing and inside (0, 1].
void validate_thresholds(const std::vector<double>& thresholds);

/// Columns scaled to unit sum; all-zero columns stay zero.
Matrix normalize_columns(const Matrix& H);

/// Row index of the largest entry of each column, smallest index on ties.
/// Throws EmptyMatrix.
std::vector<int> assign_clusters(const Matrix& H);

/// second largest / largest per column, 0 for all-zero columns.
/// Throws NeedTwoClusters when H has fewer than two rows.
std::vector<double> weight_ratio(const Matrix& H);

/// Number of thresholds t with ratio >= t.
std::vector<int> overlap_classes(const std::vector<double>& ratio, const std::vector<double>& thresholds);

/// W column c times max_j H(c, j), reshaped to (px, py).
std::vector<Image> representative_patterns(const Matrix& W, const Matrix& H, std::size_t px, std::size_t py);

struct RawMeans {
  std::vector<Image> means;
  std::vector<std::size_t> counts;
  std::vector<std::string> warnings;  // one per empty cluster
};

/// Per-cluster elementwise mean of member patterns. Labels must lie in [0, k).
/// Throws LengthMismatch or InvalidArgument (label out of range).
RawMeans raw_mean_patterns(const ScanStack4D& stack, const std::vector<int>& labels, int k);
/// Same on the columns of a pattern matrix (px*py, m*n).
RawMeans raw_mean_patterns(const Matrix& V, const std::vector<int>& labels, int k, std::size_t px,
                           std::size_t py);

struct ClusterMaps {
  std::size_t m = 0;
  std::size_t n = 0;
  int k = 0;
  std::vector<int> labels;             // m*n, row-major
  std::vector<double> ratio;           // m*n
  std::vector<int> overlap_classes;    // m*n
  std::vector<double> thresholds;
  std::vector<std::string> warnings;
};

/// Labels and ratios from the column-normalized H. With k = 1 the ratio map is
/// all zero and a warning is recorded.
ClusterMaps build_cluster_maps(const Matrix& H, std::size_t m, std::size_t n,
                               const std::vector<double>& thresholds);

struct ClusterPatterns {
  std::vector<Image> representatives;
  std::vector<Image> raw_means;
  std::vector<std::size_t> member_counts;
};

/// Writes <prefix>labels.png, <prefix>ratio.png, <prefix>overlap.png and
/// <prefix>legend.json. Returns the written paths. Throws IoFailure.
std::vector<std::filesystem::path> render_maps(const ClusterMaps& maps, const std::string& path_prefix);

/// RGBA of the fixed 16-entry label palette and of overlap class c.
std::array<unsigned char, 4> label_color(int label);
std::array<unsigned char, 4> overlap_color(int cls);

/// Decoded 8-bit RGBA pixels of a PNG file, row-major. Throws IoFailure.
struct RgbaImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::array<unsigned char, 4>> pixels;
};
RgbaImage read_png_rgba(const std::filesystem::path& path);
/// 16-bit grayscale samples of a PNG file, row-major. Throws IoFailure.
std::vector<std::uint16_t> read_png_gray16(const std::filesystem::path& path, std::size_t& width, std::size_t& height);

}  // namespace stemfactor
