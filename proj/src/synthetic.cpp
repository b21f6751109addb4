#include "stemfactor/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "json.hpp"

#include "stemfactor/error.hpp"

namespace stemfactor {
namespace {

struct SpotGeometry {
  int radius;         // support radius of one Bragg spot (pixels)
  double width;       // Gaussian sigma of one Bragg spot
  int spacing;        // lattice pitch; 2 * radius + 1 keeps supports disjoint
  int beam_radius;    // support radius of the shared central spot
  double beam_width;
};

SpotGeometry geometry_for(std::size_t px, std::size_t py) {
  if (std::min(px, py) >= 32) return {3, 1.2, 7, 4, 1.8};
  if (std::min(px, py) >= 8) return {1, 0.8, 3, 2, 1.0};
  return {0, 1.0, 1, 0, 1.0};  // tiny patterns: single-pixel spots
}

void add_blob(Image& img, int r0, int c0, int radius, double width, double amplitude) {
  for (int r = std::max(0, r0 - radius); r <= std::min<int>(static_cast<int>(img.rows()) - 1, r0 + radius); ++r) {
    for (int c = std::max(0, c0 - radius); c <= std::min<int>(static_cast<int>(img.cols()) - 1, c0 + radius); ++c) {
      const int d2 = (r - r0) * (r - r0) + (c - c0) * (c - c0);
      if (d2 > radius * radius) continue;
      img(r, c) += amplitude * std::exp(-d2 / (2.0 * width * width));
    }
  }
}

/// Near-square block partition of the scan grid, falling back to a
/// boustrophedon split when k has no factorization that fits the grid.
std::vector<int> region_labels(std::size_t m, std::size_t n, std::size_t k) {
  std::vector<int> labels(m * n);
  auto rows_of_blocks = static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(k))));
  while (rows_of_blocks > 1 && k % rows_of_blocks != 0) --rows_of_blocks;
  std::size_t a = rows_of_blocks;
  std::size_t b = k / a;
  if (a > m || b > n) std::swap(a, b);
  if (a <= m && b <= n) {
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c)
        labels[r * n + c] = static_cast<int>((r * a / m) * b + (c * b / n));
    return labels;
  }
  const std::size_t total = m * n;
  for (std::size_t t = 0; t < total; ++t) {
    const std::size_t r = t / n;
    const std::size_t c = (r % 2 == 0) ? t % n : n - 1 - t % n;
    labels[r * n + c] = static_cast<int>(t * k / total);
  }
  return labels;
}

template <typename T>
nlohmann::json grid_json(const std::vector<T>& values, std::size_t m, std::size_t n) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t r = 0; r < m; ++r)
    rows.push_back(std::vector<T>(values.begin() + static_cast<std::ptrdiff_t>(r * n),
                                  values.begin() + static_cast<std::ptrdiff_t>((r + 1) * n)));
  return rows;
}

template <typename T>
std::vector<T> grid_from_json(const nlohmann::json& rows, std::size_t m, std::size_t n, const char* name) {
  if (!rows.is_array() || rows.size() != m)
    fail(ErrorCode::MalformedHeader, std::string("ground truth '") + name + "' has wrong row count");
  std::vector<T> out;
  out.reserve(m * n);
  for (const auto& row : rows) {
    if (!row.is_array() || row.size() != n)
      fail(ErrorCode::MalformedHeader, std::string("ground truth '") + name + "' has wrong column count");
    for (const auto& v : row) out.push_back(v.get<T>());
  }
  return out;
}

}  // namespace

void SyntheticSpec::validate() const {
  auto invalid = [](const std::string& msg) { fail(ErrorCode::InvalidSpec, msg); };
  if (m == 0 || n == 0 || px == 0 || py == 0) invalid("all dimensions must be >= 1");
  if (k_true == 0) invalid("k_true must be >= 1");
  if (k_true > m * n) invalid("k_true exceeds the number of scan positions");
  if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) invalid("noise_sigma must be finite and >= 0");
  if (spots_per_pattern == 0) invalid("spots_per_pattern must be >= 1");
  for (const auto& o : overlaps) {
    if (o.rows == 0 || o.cols == 0 || o.row0 + o.rows > m || o.col0 + o.cols > n)
      invalid("overlap region outside the scan grid");
    if (o.cluster_a >= k_true || o.cluster_b >= k_true || o.cluster_a == o.cluster_b)
      invalid("overlap clusters must be two distinct indices below k_true");
    if (!(o.mix > 0.0 && o.mix < 1.0)) invalid("overlap mix must lie strictly between 0 and 1");
  }
}

SyntheticDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const auto px = static_cast<int>(spec.px);
  const auto py = static_cast<int>(spec.py);
  const SpotGeometry geo = geometry_for(spec.px, spec.py);
  const int cy = px / 2;
  const int cx = py / 2;

  std::vector<std::pair<int, int>> lattice;
  const int first = geo.radius == 0 ? 0 : geo.radius + 1;
  for (int r = first; r + geo.radius <= px - 1; r += geo.spacing) {
    for (int c = first; c + geo.radius <= py - 1; c += geo.spacing) {
      if (spec.direct_beam) {
        const int reach = geo.beam_radius + geo.radius + 1;
        if ((r - cy) * (r - cy) + (c - cx) * (c - cx) < reach * reach) continue;
      }
      lattice.emplace_back(r, c);
    }
  }
  const std::size_t spots = std::min(spec.spots_per_pattern, lattice.size() / spec.k_true);
  if (spots == 0)
    fail(ErrorCode::InvalidSpec, "patterns of " + std::to_string(spec.px) + "x" + std::to_string(spec.py) +
                                     " cannot hold " + std::to_string(spec.k_true) + " disjoint spot sets");

  std::mt19937_64 rng(spec.seed);
  std::shuffle(lattice.begin(), lattice.end(), rng);
  std::uniform_real_distribution<double> amplitude(0.5, 1.0);

  GroundTruth truth;
  truth.m = spec.m;
  truth.n = spec.n;
  truth.k_true = spec.k_true;
  for (std::size_t b = 0; b < spec.k_true; ++b) {
    Image spots_img = Image::Zero(px, py);
    for (std::size_t s = 0; s < spots; ++s) {
      const auto [r, c] = lattice[b * spots + s];
      add_blob(spots_img, r, c, geo.radius, geo.width, amplitude(rng));
    }
    // Equal spot mass for every basis keeps H weights comparable across clusters.
    spots_img /= spots_img.sum();
    truth.bases.push_back(std::move(spots_img));
  }
  double spot_peak = 0.0;
  for (const auto& b : truth.bases) spot_peak = std::max(spot_peak, b.maxCoeff());
  for (auto& b : truth.bases) {
    b /= spot_peak;
    if (spec.direct_beam) add_blob(b, cy, cx, geo.beam_radius, geo.beam_width, 1.0);
  }
  double peak = 0.0;
  for (const auto& b : truth.bases) peak = std::max(peak, b.maxCoeff());
  for (auto& b : truth.bases) b /= peak;

  truth.labels = region_labels(spec.m, spec.n, spec.k_true);
  truth.secondary.assign(spec.m * spec.n, -1);
  truth.mix.assign(spec.m * spec.n, 0.0);
  for (const auto& o : spec.overlaps) {
    for (std::size_t r = o.row0; r < o.row0 + o.rows; ++r) {
      for (std::size_t c = o.col0; c < o.col0 + o.cols; ++c) {
        const std::size_t j = r * spec.n + c;
        const bool b_dominant = o.mix > 0.5;
        truth.labels[j] = static_cast<int>(b_dominant ? o.cluster_b : o.cluster_a);
        truth.secondary[j] = static_cast<int>(b_dominant ? o.cluster_a : o.cluster_b);
        truth.mix[j] = b_dominant ? 1.0 - o.mix : o.mix;
      }
    }
  }

  const StackShape shape{spec.m, spec.n, spec.px, spec.py};
  std::vector<float> data(shape.total());
  std::normal_distribution<double> noise(0.0, spec.noise_sigma > 0.0 ? spec.noise_sigma : 1.0);
  const std::size_t pattern_size = shape.pattern_size();
  for (std::size_t j = 0; j < shape.scan_count(); ++j) {
    const Image& primary = truth.bases[static_cast<std::size_t>(truth.labels[j])];
    const double w = truth.mix[j];
    const Image* other = truth.secondary[j] >= 0 ? &truth.bases[static_cast<std::size_t>(truth.secondary[j])] : nullptr;
    for (std::size_t p = 0; p < pattern_size; ++p) {
      double v = primary.data()[p];
      if (other) v = (1.0 - w) * v + w * other->data()[p];
      if (spec.noise_sigma > 0.0) v = std::max(0.0, v + noise(rng));
      data[j * pattern_size + p] = static_cast<float>(v);
    }
  }
  return {ScanStack4D(shape, std::move(data), "synthetic"), std::move(truth)};
}

void save_ground_truth(const GroundTruth& truth, const std::filesystem::path& path) {
  nlohmann::ordered_json j;
  j["k_true"] = truth.k_true;
  j["m"] = truth.m;
  j["n"] = truth.n;
  j["labels"] = grid_json(truth.labels, truth.m, truth.n);
  j["secondary"] = grid_json(truth.secondary, truth.m, truth.n);
  j["mix"] = grid_json(truth.mix, truth.m, truth.n);
  nlohmann::json bases = nlohmann::json::array();
  for (const auto& b : truth.bases) {
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index r = 0; r < b.rows(); ++r) {
      std::vector<double> row(static_cast<std::size_t>(b.cols()));
      for (Eigen::Index c = 0; c < b.cols(); ++c) row[static_cast<std::size_t>(c)] = b(r, c);
      rows.push_back(std::move(row));
    }
    bases.push_back(std::move(rows));
  }
  j["bases"] = std::move(bases);
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::IoFailure, "cannot open " + path.string() + " for writing");
  out << j.dump() << "\n";
  if (!out) fail(ErrorCode::IoFailure, "write failed for " + path.string());
}

GroundTruth load_ground_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
  }
  GroundTruth truth;
  try {
    truth.k_true = j.at("k_true").get<std::size_t>();
    truth.m = j.at("m").get<std::size_t>();
    truth.n = j.at("n").get<std::size_t>();
    truth.labels = grid_from_json<int>(j.at("labels"), truth.m, truth.n, "labels");
    truth.secondary = grid_from_json<int>(j.at("secondary"), truth.m, truth.n, "secondary");
    truth.mix = grid_from_json<double>(j.at("mix"), truth.m, truth.n, "mix");
    for (const auto& b : j.at("bases")) {
      const auto rows = static_cast<Eigen::Index>(b.size());
      const auto cols = rows ? static_cast<Eigen::Index>(b[0].size()) : 0;
      Image img(rows, cols);
      for (Eigen::Index r = 0; r < rows; ++r)
        for (Eigen::Index c = 0; c < cols; ++c) img(r, c) = b[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
      truth.bases.push_back(std::move(img));
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedHeader, path.string() + ": " + e.what());
  }
  return truth;
}

}  // namespace stemfactor
