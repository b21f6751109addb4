#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "stemfactor/stem_io.hpp"

namespace stemfactor {

enum class EdgePolicy { ValidNeighborMean };

/// Scan-space box filter. Only the 3x3 neighborhood is supported.
struct FilterConfig {
  static constexpr int kernel = 3;
  EdgePolicy edge_policy = EdgePolicy::ValidNeighborMean;
};

/// Each output pattern is the elementwise mean of the in-bounds patterns of
/// the 3x3 scan neighborhood (center included). Shape is unchanged.
ScanStack4D mean_filter(const ScanStack4D& stack, const FilterConfig& config = {});

/// Population standard deviation of the pixel values (noise standard deviation).
double nsd(const Image& pattern);

/// Dataset x cluster table of NSD values. Rows may have different lengths.
struct NsdTable {
  std::vector<std::string> datasets;
  std::vector<std::vector<double>> values;

  std::string to_csv() const;
};

/// `representatives[d]` holds the cluster representatives of dataset `d`.
/// Throws EmptyInput when there are no datasets or a dataset has no images,
/// LengthMismatch when labels and datasets differ in count.
NsdTable nsd_matrix(const std::vector<std::vector<Image>>& representatives,
                    const std::vector<std::string>& labels);

}  // namespace stemfactor
