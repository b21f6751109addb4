#include "stemfactor/maps.hpp"

#include <algorithm>

#include "stemfactor/error.hpp"

namespace stemfactor {

std::vector<double> default_thresholds() { return {0.75, 0.80, 0.85, 0.90, 0.95}; }

void validate_thresholds(const std::vector<double>& thresholds) {
  if (thresholds.empty()) fail(ErrorCode::BadThresholds, "threshold list is empty");
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    const double t = thresholds[i];
    if (!(t > 0.0 && t <= 1.0))
      fail(ErrorCode::BadThresholds, "threshold " + std::to_string(t) + " outside (0, 1]");
    if (i > 0 && !(t > thresholds[i - 1])) fail(ErrorCode::BadThresholds, "thresholds must be strictly increasing");
  }
}

Matrix normalize_columns(const Matrix& H) {
  Matrix out = H;
  for (Eigen::Index j = 0; j < out.cols(); ++j) {
    const double s = out.col(j).sum();
    if (s > 0.0) out.col(j) /= s;
  }
  return out;
}

std::vector<int> assign_clusters(const Matrix& H) {
  if (H.size() == 0) fail(ErrorCode::EmptyMatrix, "H is empty");
  std::vector<int> labels(static_cast<std::size_t>(H.cols()));
  for (Eigen::Index j = 0; j < H.cols(); ++j) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < H.rows(); ++i)
      if (H(i, j) > H(best, j)) best = i;
    labels[static_cast<std::size_t>(j)] = static_cast<int>(best);
  }
  return labels;
}

std::vector<double> weight_ratio(const Matrix& H) {
  if (H.rows() < 2) fail(ErrorCode::NeedTwoClusters, "weight ratio needs k >= 2, got k = " + std::to_string(H.rows()));
  std::vector<double> ratio(static_cast<std::size_t>(H.cols()));
  for (Eigen::Index j = 0; j < H.cols(); ++j) {
    double first = 0.0;
    double second = 0.0;
    for (Eigen::Index i = 0; i < H.rows(); ++i) {
      const double v = H(i, j);
      if (v > first) {
        second = first;
        first = v;
      } else if (v > second) {
        second = v;
      }
    }
    ratio[static_cast<std::size_t>(j)] = first > 0.0 ? second / first : 0.0;
  }
  return ratio;
}

std::vector<int> overlap_classes(const std::vector<double>& ratio, const std::vector<double>& thresholds) {
  validate_thresholds(thresholds);
  std::vector<int> classes(ratio.size());
  for (std::size_t j = 0; j < ratio.size(); ++j) {
    const auto above = std::upper_bound(thresholds.begin(), thresholds.end(), ratio[j]);
    classes[j] = static_cast<int>(above - thresholds.begin());
  }
  return classes;
}

std::vector<Image> representative_patterns(const Matrix& W, const Matrix& H, std::size_t px, std::size_t py) {
  if (W.cols() != H.rows() || static_cast<std::size_t>(W.rows()) != px * py)
    fail(ErrorCode::ShapeMismatch, "W (" + std::to_string(W.rows()) + " x " + std::to_string(W.cols()) +
                                       ") and H rows " + std::to_string(H.rows()) + " do not match pattern " +
                                       std::to_string(px) + " x " + std::to_string(py));
  std::vector<Image> reps;
  reps.reserve(static_cast<std::size_t>(W.cols()));
  for (Eigen::Index c = 0; c < W.cols(); ++c) {
    const double scale = H.cols() > 0 ? H.row(c).maxCoeff() : 0.0;
    reps.push_back(column_image(W, c, px, py) * scale);
  }
  return reps;
}

namespace {

template <typename PatternAt>
RawMeans accumulate_means(std::size_t count, const std::vector<int>& labels, int k, std::size_t px, std::size_t py,
                          PatternAt pattern_at) {
  if (labels.size() != count)
    fail(ErrorCode::LengthMismatch, std::to_string(labels.size()) + " labels for " + std::to_string(count) +
                                        " patterns");
  if (k < 1) fail(ErrorCode::InvalidArgument, "k must be >= 1");
  RawMeans out;
  out.means.assign(static_cast<std::size_t>(k), Image::Zero(static_cast<Eigen::Index>(px), static_cast<Eigen::Index>(py)));
  out.counts.assign(static_cast<std::size_t>(k), 0);
  for (std::size_t j = 0; j < count; ++j) {
    const int c = labels[j];
    if (c < 0 || c >= k)
      fail(ErrorCode::InvalidArgument, "label " + std::to_string(c) + " at " + std::to_string(j) + " outside [0, " +
                                           std::to_string(k) + ")");
    pattern_at(j, out.means[static_cast<std::size_t>(c)]);
    ++out.counts[static_cast<std::size_t>(c)];
  }
  for (int c = 0; c < k; ++c) {
    const auto n = out.counts[static_cast<std::size_t>(c)];
    if (n > 0)
      out.means[static_cast<std::size_t>(c)] /= static_cast<double>(n);
    else
      out.warnings.push_back("cluster " + std::to_string(c) + " has no members");
  }
  return out;
}

}  // namespace

RawMeans raw_mean_patterns(const ScanStack4D& stack, const std::vector<int>& labels, int k) {
  const auto& s = stack.shape();
  return accumulate_means(s.scan_count(), labels, k, s.px, s.py, [&](std::size_t j, Image& sum) {
    const auto p = stack.pattern(j);
    for (Eigen::Index i = 0; i < sum.size(); ++i) sum.data()[i] += static_cast<double>(p[static_cast<std::size_t>(i)]);
  });
}

RawMeans raw_mean_patterns(const Matrix& V, const std::vector<int>& labels, int k, std::size_t px, std::size_t py) {
  if (static_cast<std::size_t>(V.rows()) != px * py)
    fail(ErrorCode::ShapeMismatch, "matrix rows do not match pattern size");
  return accumulate_means(static_cast<std::size_t>(V.cols()), labels, k, px, py, [&](std::size_t j, Image& sum) {
    const auto col = V.col(static_cast<Eigen::Index>(j));
    for (Eigen::Index i = 0; i < sum.size(); ++i) sum.data()[i] += col(i);
  });
}

ClusterMaps build_cluster_maps(const Matrix& H, std::size_t m, std::size_t n, const std::vector<double>& thresholds) {
  validate_thresholds(thresholds);
  if (static_cast<std::size_t>(H.cols()) != m * n)
    fail(ErrorCode::ShapeMismatch, "H has " + std::to_string(H.cols()) + " columns, scan has " +
                                       std::to_string(m * n) + " positions");
  ClusterMaps maps;
  maps.m = m;
  maps.n = n;
  maps.k = static_cast<int>(H.rows());
  maps.thresholds = thresholds;

  const Matrix normalized = normalize_columns(H);
  maps.labels = assign_clusters(normalized);
  const auto zero_columns = (normalized.colwise().sum().array() == 0.0).count();
  if (zero_columns > 0)
    maps.warnings.push_back(std::to_string(zero_columns) + " scan positions have all-zero weights");
  if (maps.k >= 2) {
    maps.ratio = weight_ratio(normalized);
  } else {
    maps.ratio.assign(m * n, 0.0);
    maps.warnings.push_back("k = 1: ratio map is zero");
  }
  maps.overlap_classes = overlap_classes(maps.ratio, thresholds);
  return maps;
}

}  // namespace stemfactor
