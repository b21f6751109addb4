#include "stemfactor/iqa.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "json.hpp"

#include "stemfactor/error.hpp"

namespace stemfactor {
namespace {

void require_same_shape(const Image& a, const Image& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    fail(ErrorCode::ShapeMismatch, "image shapes differ: (" + std::to_string(a.rows()) + ", " +
                                       std::to_string(a.cols()) + ") vs (" + std::to_string(b.rows()) + ", " +
                                       std::to_string(b.cols()) + ")");
}

void require_3x3(const Image& a) {
  if (a.rows() < 3 || a.cols() < 3)
    fail(ErrorCode::TooSmall, "gradient metrics need at least 3x3 pixels");
}

double population_std(const Image& map) {
  return std::sqrt((map - map.mean()).square().mean());
}

double range_scale(double max_value) {
  const double r = max_value / 255.0;
  return r * r;
}

/// Keeps the sign so a negative structure term stays meaningful for
/// non-integer exponents.
double signed_pow(double base, double exponent) {
  if (exponent == 1.0) return base;
  return std::copysign(std::pow(std::abs(base), exponent), base);
}

Image similarity(const Image& x, const Image& y, double c) {
  return (2.0 * x * y + c) / (x.square() + y.square() + c);
}

std::string format_value(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

}  // namespace

std::string_view to_string(Metric metric) noexcept {
  switch (metric) {
    case Metric::Ssim: return "ssim";
    case Metric::Psnr: return "psnr";
    case Metric::Gmsd: return "gmsd";
    case Metric::Mdsi: return "mdsi";
  }
  return "unknown";
}

Metric metric_from_string(std::string_view name) {
  for (Metric m : {Metric::Ssim, Metric::Psnr, Metric::Gmsd, Metric::Mdsi})
    if (to_string(m) == name) return m;
  fail(ErrorCode::InvalidArgument, "unknown metric '" + std::string(name) + "'");
}

void IqaParams::validate() const {
  auto positive = [](const std::optional<double>& v, const char* name) {
    if (v && !(*v > 0.0)) fail(ErrorCode::InvalidArgument, std::string(name) + " must be > 0");
  };
  positive(max_value, "max_value");
  positive(ssim_c1, "ssim_C1");
  positive(ssim_c2, "ssim_C2");
  positive(ssim_c3, "ssim_C3");
  positive(gmsd_c, "gmsd_C");
  positive(mdsi_c1, "mdsi_C1");
  positive(mdsi_c2, "mdsi_C2");
  positive(mdsi_c3, "mdsi_C3");
  if (!(ssim_alpha > 0.0 && ssim_beta > 0.0 && ssim_gamma > 0.0))
    fail(ErrorCode::InvalidArgument, "SSIM exponents must be > 0");
  if (!(mdsi_alpha >= 0.0 && mdsi_alpha <= 1.0)) fail(ErrorCode::InvalidArgument, "mdsi_alpha must lie in [0, 1]");
}

double IqaParams::dynamic_range(const Image& a, const Image& b) const {
  if (max_value) return *max_value;
  const double m = std::max(a.maxCoeff(), b.maxCoeff());
  return m > 0.0 ? m : 1.0;
}

double mse(const Image& a, const Image& b) {
  require_same_shape(a, b);
  if (a.size() == 0) fail(ErrorCode::TooFewPixels, "mse of empty images");
  return (a - b).square().mean();
}

double psnr(const Image& a, const Image& b, const IqaParams& params) {
  const double e = mse(a, b);
  if (e == 0.0) return std::numeric_limits<double>::infinity();
  const double max = params.dynamic_range(a, b);
  return 10.0 * std::log10(max * max / e);
}

PsnrBand psnr_band(double db) noexcept {
  if (db > 40.0) return PsnrBand::Excellent;
  if (db < 20.0) return PsnrBand::Unacceptable;
  return PsnrBand::Acceptable;
}

std::string_view to_string(PsnrBand band) noexcept {
  switch (band) {
    case PsnrBand::Excellent: return "excellent";
    case PsnrBand::Acceptable: return "acceptable";
    case PsnrBand::Unacceptable: return "unacceptable";
  }
  return "unknown";
}

double ssim(const Image& a, const Image& b, const IqaParams& params) {
  require_same_shape(a, b);
  if (a.size() < 2) fail(ErrorCode::TooFewPixels, "ssim needs at least 2 pixels");
  const double max = params.dynamic_range(a, b);
  const double c1 = params.ssim_c1.value_or((0.01 * max) * (0.01 * max));
  const double c2 = params.ssim_c2.value_or((0.03 * max) * (0.03 * max));
  const double c3 = params.ssim_c3.value_or(c2 / 2.0);

  const double mu_a = a.mean();
  const double mu_b = b.mean();
  const double var_a = (a - mu_a).square().mean();
  const double var_b = (b - mu_b).square().mean();
  const double cov = ((a - mu_a) * (b - mu_b)).mean();
  const double sd_a = std::sqrt(var_a);
  const double sd_b = std::sqrt(var_b);

  const double luminance = (2.0 * mu_a * mu_b + c1) / (mu_a * mu_a + mu_b * mu_b + c1);
  const double contrast = (2.0 * sd_a * sd_b + c2) / (var_a + var_b + c2);
  const double structure = (cov + c3) / (sd_a * sd_b + c3);
  return signed_pow(luminance, params.ssim_alpha) * signed_pow(contrast, params.ssim_beta) *
         signed_pow(structure, params.ssim_gamma);
}

Image gradient_magnitude(const Image& img) {
  require_3x3(img);
  const Eigen::Index rows = img.rows();
  const Eigen::Index cols = img.cols();
  auto at = [&](Eigen::Index r, Eigen::Index c) {
    return img(std::clamp<Eigen::Index>(r, 0, rows - 1), std::clamp<Eigen::Index>(c, 0, cols - 1));
  };
  Image out(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) {
      const double gx = (at(r - 1, c + 1) + 2.0 * at(r, c + 1) + at(r + 1, c + 1)) -
                        (at(r - 1, c - 1) + 2.0 * at(r, c - 1) + at(r + 1, c - 1));
      const double gy = (at(r + 1, c - 1) + 2.0 * at(r + 1, c) + at(r + 1, c + 1)) -
                        (at(r - 1, c - 1) + 2.0 * at(r - 1, c) + at(r - 1, c + 1));
      out(r, c) = std::sqrt(gx * gx + gy * gy);
    }
  }
  return out;
}

Image gms_map(const Image& ref, const Image& dist, const IqaParams& params) {
  require_same_shape(ref, dist);
  require_3x3(ref);
  const double c = params.gmsd_c.value_or(170.0 * range_scale(params.dynamic_range(ref, dist)));
  return similarity(gradient_magnitude(ref), gradient_magnitude(dist), c);
}

double gmsd(const Image& ref, const Image& dist, const IqaParams& params) {
  return population_std(gms_map(ref, dist, params));
}

Image mdsi_map(const Image& ref, const Image& dist, const IqaParams& params) {
  require_same_shape(ref, dist);
  require_3x3(ref);
  const double scale = range_scale(params.dynamic_range(ref, dist));
  const double c1 = params.mdsi_c1.value_or(140.0 * scale);
  const double c2 = params.mdsi_c2.value_or(55.0 * scale);
  const double c3 = params.mdsi_c3.value_or(550.0 * scale);
  const double alpha = params.mdsi_alpha;

  // R = G = B = I for single-channel input.
  constexpr double kLuma = 0.2989 + 0.5870 + 0.1140;
  constexpr double kChromaH = 0.30 + 0.04 - 0.35;
  constexpr double kChromaM = 0.34 - 0.60 + 0.17;
  const Image l_ref = kLuma * ref;
  const Image l_dist = kLuma * dist;
  const Image fused = 0.5 * (l_ref + l_dist);

  const Image g_ref = gradient_magnitude(l_ref);
  const Image g_dist = gradient_magnitude(l_dist);
  const Image g_fused = gradient_magnitude(fused);

  const Image gs = similarity(g_ref, g_dist, c1);
  const Image gs_rf = similarity(g_ref, g_fused, c2);
  const Image gs_df = similarity(g_dist, g_fused, c2);
  const Image gs_hat = gs + (gs_df - gs_rf);

  const Image h_ref = kChromaH * ref;
  const Image h_dist = kChromaH * dist;
  const Image m_ref = kChromaM * ref;
  const Image m_dist = kChromaM * dist;
  const Image cs_hat = (2.0 * h_ref * h_dist + 2.0 * m_ref * m_dist + c3) /
                       (h_ref.square() + h_dist.square() + m_ref.square() + m_dist.square() + c3);

  return alpha * gs_hat + (1.0 - alpha) * cs_hat;
}

double mdsi(const Image& ref, const Image& dist, const IqaParams& params) {
  return population_std(mdsi_map(ref, dist, params));
}

double evaluate(Metric metric, const Image& ref, const Image& dist, const IqaParams& params) {
  switch (metric) {
    case Metric::Ssim: return ssim(ref, dist, params);
    case Metric::Psnr: return psnr(ref, dist, params);
    case Metric::Gmsd: return gmsd(ref, dist, params);
    case Metric::Mdsi: return mdsi(ref, dist, params);
  }
  return 0.0;
}

double self_value(Metric metric) noexcept {
  switch (metric) {
    case Metric::Ssim: return 1.0;
    case Metric::Psnr: return std::numeric_limits<double>::infinity();
    case Metric::Gmsd: return 0.0;
    case Metric::Mdsi: return 0.0;
  }
  return 0.0;
}

IqaMatrix pairwise_matrix(const std::vector<Image>& reps, Metric metric, const IqaParams& params) {
  params.validate();
  if (reps.empty()) fail(ErrorCode::EmptyInput, "no representatives");
  for (const auto& r : reps) require_same_shape(reps.front(), r);
  const auto k = static_cast<Eigen::Index>(reps.size());
  IqaMatrix out;
  out.metric = metric;
  out.values = Matrix::Constant(k, k, self_value(metric));
  const bool symmetric = metric != Metric::Mdsi;
  for (Eigen::Index i = 0; i < k; ++i) {
    for (Eigen::Index j = symmetric ? i + 1 : 0; j < k; ++j) {
      if (i == j) continue;
      const double v = evaluate(metric, reps[static_cast<std::size_t>(i)], reps[static_cast<std::size_t>(j)], params);
      out.values(i, j) = v;
      if (symmetric) out.values(j, i) = v;
    }
  }
  return out;
}

std::optional<double> mean_off_diagonal(const IqaMatrix& matrix) {
  const Eigen::Index k = matrix.values.rows();
  if (k < 2) return std::nullopt;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = 0; j < k; ++j)
      if (i != j) sum += matrix.values(i, j);
  return sum / static_cast<double>(k * (k - 1));
}

std::string IqaMatrix::to_csv() const {
  std::ostringstream os;
  os << to_string(metric);
  for (int j = 0; j < k(); ++j) os << "," << j;
  os << "\n";
  for (int i = 0; i < k(); ++i) {
    os << i;
    for (int j = 0; j < k(); ++j) os << "," << format_value(values(i, j));
    os << "\n";
  }
  return os.str();
}

std::string IqaMatrix::to_json() const {
  nlohmann::ordered_json j;
  j["metric"] = to_string(metric);
  j["k"] = k();
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < k(); ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < k(); ++c) {
      const double v = values(r, c);
      if (std::isinf(v)) row.push_back(v > 0 ? "inf" : "-inf");
      else row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  j["values"] = std::move(rows);
  return j.dump(2) + "\n";
}

}  // namespace stemfactor
