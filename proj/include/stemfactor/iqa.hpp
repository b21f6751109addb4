#pragma once

// Full-reference image quality metrics on single-channel images.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stemfactor/stem_io.hpp"

namespace stemfactor {

enum class Metric { Ssim, Psnr, Gmsd, Mdsi };

std::string_view to_string(Metric metric) noexcept;
/// Throws InvalidArgument for unknown names.
Metric metric_from_string(std::string_view name);

/// Unset constants are derived from the dynamic range MAX of each image pair:
///   SSIM  C1 = (0.01 MAX)^2, C2 = (0.03 MAX)^2, C3 = C2 / 2
///   GMSD  C  = 170 (MAX / 255)^2
///   MDSI  C1 = 140, C2 = 55, C3 = 550, each times (MAX / 255)^2
/// MAX itself defaults to the largest pixel of the pair (1 if both are all zero).
struct IqaParams {
  std::optional<double> max_value;
  std::optional<double> ssim_c1;
  std::optional<double> ssim_c2;
  std::optional<double> ssim_c3;
  double ssim_alpha = 1.0;
  double ssim_beta = 1.0;
  double ssim_gamma = 1.0;
  std::optional<double> gmsd_c;
  std::optional<double> mdsi_c1;
  std::optional<double> mdsi_c2;
  std::optional<double> mdsi_c3;
  double mdsi_alpha = 0.6;

  void validate() const;
  double dynamic_range(const Image& a, const Image& b) const;
};

double mse(const Image& a, const Image& b);

/// 10 log10(MAX^2 / MSE); +infinity when MSE == 0.
double psnr(const Image& a, const Image& b, const IqaParams& params = {});

enum class PsnrBand { Unacceptable, Acceptable, Excellent };
/// > 40 dB excellent, < 20 dB unacceptable.
PsnrBand psnr_band(double db) noexcept;
std::string_view to_string(PsnrBand band) noexcept;

/// Whole-image SSIM from population moments (no sliding window).
double ssim(const Image& a, const Image& b, const IqaParams& params = {});

/// Sobel magnitude sqrt(Gx^2 + Gy^2), replicate-edge padding. Needs >= 3x3.
Image gradient_magnitude(const Image& img);

/// Per-pixel gradient magnitude similarity, values in (0, 1].
Image gms_map(const Image& ref, const Image& dist, const IqaParams& params = {});
/// Population standard deviation of the GMS map; 0 = identical structure.
double gmsd(const Image& ref, const Image& dist, const IqaParams& params = {});

/// Combined gradient/chromaticity similarity map before deviation pooling.
/// Grayscale inputs are treated as R = G = B. Not symmetric in its arguments.
Image mdsi_map(const Image& ref, const Image& dist, const IqaParams& params = {});
/// Population standard deviation of mdsi_map; 0 = identical.
double mdsi(const Image& ref, const Image& dist, const IqaParams& params = {});

double evaluate(Metric metric, const Image& ref, const Image& dist, const IqaParams& params = {});

/// Value a metric takes on an image compared with itself.
double self_value(Metric metric) noexcept;

struct IqaMatrix {
  Metric metric = Metric::Ssim;
  Matrix values;  // (k, k); entry (i, j) = metric(ref = i, dist = j)

  int k() const noexcept { return static_cast<int>(values.rows()); }
  std::string to_csv() const;
  std::string to_json() const;
};

/// Symmetric metrics are evaluated once per unordered pair; MDSI is evaluated
/// for both orders. The diagonal is the metric's self value.
IqaMatrix pairwise_matrix(const std::vector<Image>& representatives, Metric metric, const IqaParams& params = {});

/// Mean over off-diagonal entries; nullopt when k < 2.
std::optional<double> mean_off_diagonal(const IqaMatrix& matrix);

}  // namespace stemfactor
