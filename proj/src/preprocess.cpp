#include "stemfactor/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "stemfactor/error.hpp"

namespace stemfactor {

ScanStack4D mean_filter(const ScanStack4D& stack, const FilterConfig&) {
  const auto& s = stack.shape();
  const std::size_t pattern_size = s.pattern_size();
  std::vector<float> out(s.total());
  std::vector<double> acc(pattern_size);
  for (std::size_t r = 0; r < s.m; ++r) {
    for (std::size_t c = 0; c < s.n; ++c) {
      std::fill(acc.begin(), acc.end(), 0.0);
      std::size_t count = 0;
      const std::size_t r_lo = r == 0 ? 0 : r - 1;
      const std::size_t c_lo = c == 0 ? 0 : c - 1;
      for (std::size_t rr = r_lo; rr <= std::min(r + 1, s.m - 1); ++rr) {
        for (std::size_t cc = c_lo; cc <= std::min(c + 1, s.n - 1); ++cc) {
          const auto p = stack.pattern(rr, cc);
          for (std::size_t i = 0; i < pattern_size; ++i) acc[i] += p[i];
          ++count;
        }
      }
      float* dst = out.data() + (r * s.n + c) * pattern_size;
      for (std::size_t i = 0; i < pattern_size; ++i) dst[i] = static_cast<float>(acc[i] / static_cast<double>(count));
    }
  }
  return ScanStack4D(s, std::move(out), "mean-filtered");
}

double nsd(const Image& pattern) {
  if (pattern.size() == 0) fail(ErrorCode::EmptyInput, "nsd of an empty image");
  const double mu = pattern.mean();
  return std::sqrt((pattern - mu).square().mean());
}

NsdTable nsd_matrix(const std::vector<std::vector<Image>>& representatives,
                    const std::vector<std::string>& labels) {
  if (representatives.empty()) fail(ErrorCode::EmptyInput, "no datasets given");
  if (labels.size() != representatives.size())
    fail(ErrorCode::LengthMismatch, std::to_string(labels.size()) + " labels for " +
                                        std::to_string(representatives.size()) + " datasets");
  NsdTable table;
  table.datasets = labels;
  for (const auto& dataset : representatives) {
    if (dataset.empty()) fail(ErrorCode::EmptyInput, "dataset without representatives");
    std::vector<double> row;
    row.reserve(dataset.size());
    for (const auto& img : dataset) row.push_back(nsd(img));
    table.values.push_back(std::move(row));
  }
  return table;
}

std::string NsdTable::to_csv() const {
  std::size_t width = 0;
  for (const auto& row : values) width = std::max(width, row.size());
  std::ostringstream os;
  os << "dataset";
  for (std::size_t c = 0; c < width; ++c) os << ",cluster_" << c;
  os << "\n";
  char buf[32];
  for (std::size_t d = 0; d < values.size(); ++d) {
    os << datasets[d];
    for (std::size_t c = 0; c < width; ++c) {
      os << ",";
      if (c < values[d].size()) {
        std::snprintf(buf, sizeof buf, "%.6g", values[d][c]);
        os << buf;
      }
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace stemfactor
