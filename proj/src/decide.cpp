#include "stemfactor/decide.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>

#include "json.hpp"

#include "stemfactor/error.hpp"
#include "stemfactor/maps.hpp"

namespace stemfactor {
namespace {

nlohmann::ordered_json number_or_null(const std::optional<double>& v) {
  if (!v) return nullptr;
  if (std::isinf(*v)) return *v > 0 ? "inf" : "-inf";
  return *v;
}

nlohmann::ordered_json number(double v) { return number_or_null(v); }

std::optional<double> read_number(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    fail(ErrorCode::MalformedHeader, "unexpected string value '" + s + "' in decision report");
  }
  return j.get<double>();
}

double gated_psnr(const CandidateScore& c, PsnrGate gate) {
  return gate == PsnrGate::Min ? c.psnr_min : c.psnr_mean;
}

std::string format_number(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

}  // namespace

int find_knee(const std::vector<int>& k_values, const std::vector<double>& losses, double tau, double epsilon) {
  if (k_values.size() != losses.size())
    fail(ErrorCode::LengthMismatch, std::to_string(k_values.size()) + " k values but " +
                                        std::to_string(losses.size()) + " losses");
  if (losses.size() < 3)
    fail(ErrorCode::TooFewPoints, "knee detection needs at least 3 points, got " + std::to_string(losses.size()));
  for (std::size_t i = 1; i < k_values.size(); ++i)
    if (k_values[i] != k_values[i - 1] + 1) fail(ErrorCode::InvalidArgument, "k values must be consecutive");
  for (std::size_t i = 0; i + 1 < losses.size(); ++i) {
    const double improvement = (losses[i] - losses[i + 1]) / std::max(losses[i], epsilon);
    if (improvement < tau) return k_values[i];
  }
  fail(ErrorCode::KneeNotFound, "loss still improves by >= " + format_number(tau) + " at k = " +
                                    std::to_string(k_values[k_values.size() - 2]));
}

std::pair<int, int> range_of_interest(int knee, int half_width, int k_min_floor, int k_max_ceil) {
  if (half_width < 0) fail(ErrorCode::InvalidArgument, "half_width must be >= 0");
  int lo = std::max({knee - half_width, k_min_floor, 2});
  int hi = std::min(knee + half_width, k_max_ceil);
  lo = std::min(lo, knee);
  hi = std::max(hi, knee);
  return {lo, hi};
}

std::string_view to_string(PsnrGate gate) noexcept { return gate == PsnrGate::Min ? "min" : "mean"; }

PsnrGate psnr_gate_from_string(std::string_view name) {
  if (name == "mean") return PsnrGate::Mean;
  if (name == "min") return PsnrGate::Min;
  fail(ErrorCode::InvalidArgument, "psnr gate must be 'mean' or 'min', got '" + std::string(name) + "'");
}

CandidateScore score_candidate(const DataMatrix& V, const Factorization& fac, std::size_t px, std::size_t py,
                               const IqaParams& params) {
  CandidateScore score;
  score.k = fac.k();
  const auto reps = representative_patterns(fac.W, fac.H, px, py);
  const auto labels = assign_clusters(normalize_columns(fac.H));
  const auto raw = raw_mean_patterns(V.values(), labels, score.k, px, py);
  score.member_counts = raw.counts;

  score.ssim = pairwise_matrix(reps, Metric::Ssim, params);
  score.gmsd = pairwise_matrix(reps, Metric::Gmsd, params);
  score.mdsi = pairwise_matrix(reps, Metric::Mdsi, params);
  score.ssim_mean = mean_off_diagonal(score.ssim);
  score.gmsd_mean = mean_off_diagonal(score.gmsd);
  score.mdsi_mean = mean_off_diagonal(score.mdsi);

  double sum = 0.0;
  double lowest = std::numeric_limits<double>::infinity();
  for (int c = 0; c < score.k; ++c) {
    const double p = psnr(reps[static_cast<std::size_t>(c)], raw.means[static_cast<std::size_t>(c)], params);
    score.psnr.push_back(p);
    sum += p;
    lowest = std::min(lowest, p);
  }
  score.psnr_mean = sum / score.k;
  score.psnr_min = lowest;
  return score;
}

Choice choose_k(const std::vector<CandidateScore>& candidates, double psnr_floor, PsnrGate gate) {
  if (candidates.empty()) fail(ErrorCode::EmptyCandidates, "no candidates to choose from");

  const CandidateScore* best = nullptr;
  const CandidateScore* fallback = nullptr;  // passes the floor but has no SSIM
  for (const auto& c : candidates) {
    if (!(gated_psnr(c, gate) >= psnr_floor)) continue;
    if (!c.ssim_mean) {
      if (!fallback || c.k < fallback->k) fallback = &c;
      continue;
    }
    if (!best || *c.ssim_mean < *best->ssim_mean || (*c.ssim_mean == *best->ssim_mean && c.k < best->k)) best = &c;
  }
  if (best) return {best->k, false};
  if (fallback) return {fallback->k, false};

  const CandidateScore* top = &candidates.front();
  for (const auto& c : candidates) {
    const double p = gated_psnr(c, gate);
    const double t = gated_psnr(*top, gate);
    if (p > t || (p == t && c.k < top->k)) top = &c;
  }
  return {top->k, true};
}

std::string describe_rule(double tau, int half_width, double psnr_floor, PsnrGate gate) {
  return "knee: smallest k with (L(k) - L(k+1)) / L(k) < " + format_number(tau) + "; range: knee -/+ " +
         std::to_string(half_width) + " (lo >= 2); choice: minimum mean off-diagonal SSIM among candidates with " +
         std::string(to_string(gate)) + " cluster PSNR >= " + format_number(psnr_floor) +
         " dB, ties to smaller k; if none pass, maximum " + std::string(to_string(gate)) +
         " PSNR (flag floor-relaxed)";
}

std::string DecisionReport::to_json() const {
  nlohmann::ordered_json j;
  j["knee_k"] = knee_k;
  j["range"] = {range_lo, range_hi};
  j["candidates"] = nlohmann::ordered_json::array();
  for (const auto& c : candidates) {
    nlohmann::ordered_json e;
    e["k"] = c.k;
    e["ssim_mean"] = number_or_null(c.ssim_mean);
    e["gmsd_mean"] = number_or_null(c.gmsd_mean);
    e["mdsi_mean"] = number_or_null(c.mdsi_mean);
    e["psnr_mean"] = number(c.psnr_mean);
    e["psnr_min"] = number(c.psnr_min);
    e["member_counts"] = c.member_counts;
    j["candidates"].push_back(std::move(e));
  }
  j["chosen_k"] = chosen_k;
  j["rule"] = rule;
  j["flags"] = flags;
  return j.dump(2) + "\n";
}

DecisionReport DecisionReport::from_json(const std::string& text) {
  DecisionReport r;
  try {
    const auto j = nlohmann::json::parse(text);
    r.knee_k = j.at("knee_k").get<int>();
    r.range_lo = j.at("range").at(0).get<int>();
    r.range_hi = j.at("range").at(1).get<int>();
    for (const auto& e : j.at("candidates")) {
      CandidateScore c;
      c.k = e.at("k").get<int>();
      c.ssim_mean = read_number(e.at("ssim_mean"));
      c.gmsd_mean = read_number(e.at("gmsd_mean"));
      c.mdsi_mean = read_number(e.at("mdsi_mean"));
      c.psnr_mean = read_number(e.at("psnr_mean")).value_or(0.0);
      if (e.contains("psnr_min")) c.psnr_min = read_number(e.at("psnr_min")).value_or(0.0);
      if (e.contains("member_counts")) c.member_counts = e.at("member_counts").get<std::vector<std::size_t>>();
      r.candidates.push_back(std::move(c));
    }
    r.chosen_k = j.at("chosen_k").get<int>();
    r.rule = j.at("rule").get<std::string>();
    r.flags = j.at("flags").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::MalformedHeader, std::string("decision report: ") + e.what());
  }
  return r;
}

}  // namespace stemfactor
