#pragma once

// Two-level choice of the component count: a knee on the K-component loss
// curve bounds a range of candidates, then candidates are ranked by how
// distinct their representative patterns are.

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "stemfactor/iqa.hpp"
#include "stemfactor/nmf.hpp"

namespace stemfactor {

/// Smallest k whose relative improvement (L(k) - L(k+1)) / max(L(k), eps)
/// is below tau. Throws TooFewPoints (< 3 points), LengthMismatch,
/// InvalidArgument (k values not consecutive) or KneeNotFound.
int find_knee(const std::vector<int>& k_values, const std::vector<double>& losses, double tau = 0.05,
              double epsilon = 1e-12);

/// [max(knee - half_width, floor, 2), min(knee + half_width, ceil)], with the
/// lower end never above the knee. Throws InvalidArgument for half_width < 0.
std::pair<int, int> range_of_interest(int knee, int half_width = 4, int k_min_floor = 2, int k_max_ceil = 1 << 30);

/// How per-cluster fidelity PSNR values are reduced before the floor test.
enum class PsnrGate { Mean, Min };
std::string_view to_string(PsnrGate gate) noexcept;
PsnrGate psnr_gate_from_string(std::string_view name);

struct CandidateScore {
  int k = 0;
  std::optional<double> ssim_mean;  // unset for k = 1
  std::optional<double> gmsd_mean;
  std::optional<double> mdsi_mean;
  double psnr_mean = 0.0;
  double psnr_min = 0.0;
  std::vector<double> psnr;  // per cluster: representative vs raw mean
  std::vector<std::size_t> member_counts;
  IqaMatrix ssim;
  IqaMatrix gmsd;
  IqaMatrix mdsi;
};

/// Pairwise SSIM/GMSD/MDSI over the candidate's representatives and
/// per-cluster PSNR of each representative against its cluster mean of V.
CandidateScore score_candidate(const DataMatrix& V, const Factorization& fac, std::size_t px, std::size_t py,
                               const IqaParams& params = {});

struct Choice {
  int k = 0;
  bool floor_relaxed = false;
};

/// Among candidates whose gated PSNR is >= psnr_floor, the one with the
/// smallest mean off-diagonal SSIM (ties: smaller k). Candidates without
/// an SSIM value are only chosen if no gated candidate has one. When none
/// pass, the candidate with the highest gated PSNR wins and floor_relaxed is
/// set. Throws EmptyCandidates.
Choice choose_k(const std::vector<CandidateScore>& candidates, double psnr_floor = 40.0,
                PsnrGate gate = PsnrGate::Mean);

struct DecisionReport {
  int knee_k = 0;
  int range_lo = 0;
  int range_hi = 0;
  std::vector<CandidateScore> candidates;
  int chosen_k = 0;
  std::string rule;
  std::vector<std::string> flags;

  std::string to_json() const;
  /// Reads the fields written by to_json (matrices are not restored).
  static DecisionReport from_json(const std::string& text);
};

std::string describe_rule(double tau, int half_width, double psnr_floor, PsnrGate gate);

}  // namespace stemfactor
