// Acceptance suite: one PASS/FAIL/SKIP line per criterion. Exits non-zero
// only when a mandatory criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "stemfactor/csv.hpp"
#include "stemfactor/decide.hpp"
#include "stemfactor/error.hpp"
#include "stemfactor/iqa.hpp"
#include "stemfactor/maps.hpp"
#include "stemfactor/nmf.hpp"
#include "stemfactor/pipeline.hpp"
#include "stemfactor/preprocess.hpp"
#include "stemfactor/synthetic.hpp"

using namespace stemfactor;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct Outcome {
  enum Kind { Pass, Fail, Skip, Warn } kind;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path work_dir() {
  const auto dir = fs::temp_directory_path() / "stemfactor_acceptance";
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Image random_image(std::mt19937_64& rng, int rows, int cols) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(rows, cols);
  for (Eigen::Index i = 0; i < img.size(); ++i) img.data()[i] = u(rng);
  return img;
}

SyntheticSpec criterion3_spec(std::uint64_t seed) {
  SyntheticSpec spec;  // 32x32 scan, 64x64 patterns, k_true = 8
  spec.noise_sigma = 0.05;
  spec.seed = seed;
  return spec;
}

// ---------------------------------------------------------------------------

Outcome mu_monotonicity() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> dim(5, 50), rank(1, 5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int s = 0; s < 20; ++s) {
    Matrix V(dim(rng), dim(rng));
    for (Eigen::Index i = 0; i < V.size(); ++i) V.data()[i] = u(rng);
    NmfConfig c;
    c.k = rank(rng);
    c.seed = static_cast<std::uint64_t>(s);
    c.tol = 0.0;
    c.max_iter = 300;
    const auto fac = nmf_factorize(DataMatrix(V), c);
    double prev = fac.initial_loss;
    for (double l : fac.loss_history) {
      worst = std::max(worst, (l - prev) / prev);
      prev = l;
    }
  }
  const double t = seconds_since(t0);
  char buf[128];
  std::snprintf(buf, sizeof buf, "max relative increase %.3g (limit 1e-10), %.2f s (limit 5 s)", worst, t);
  return {worst <= 1e-10 && t < 5.0 ? Outcome::Pass : Outcome::Fail, buf};
}

Outcome rank_one_recovery() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.1, 1.0);
  Eigen::VectorXd a(64);
  Eigen::RowVectorXd b(100);
  for (auto& v : a) v = u(rng);
  for (auto& v : b) v = u(rng);
  const Matrix V = a * b;
  NmfConfig c;
  c.k = 1;
  c.max_iter = 500;
  c.tol = 0.0;
  c.seed = 1;
  const auto fac = nmf_factorize(DataMatrix(V), c);
  const double rel = (V - fac.W * fac.H).norm() / V.norm();
  const double t = seconds_since(t0);
  char buf[128];
  std::snprintf(buf, sizeof buf, "relative loss %.3g (limit 1e-6), %.3f s (limit 1 s)", rel, t);
  return {rel < 1e-6 && t < 1.0 ? Outcome::Pass : Outcome::Fail, buf};
}

struct RecoveryRun {
  int chosen = 0;
  int knee = 0;
  double seconds = 0.0;
  std::vector<int> k_values;
  std::vector<double> losses;
};

std::vector<RecoveryRun> recovery_runs;

Outcome end_to_end_recovery(int threads) {
  const auto dir = work_dir() / "recovery";
  int hits = 0;
  double slowest = 0.0;
  std::string ks;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto case_dir = dir / ("seed" + std::to_string(seed));
    fs::remove_all(case_dir);
    fs::create_directories(case_dir);
    const auto stack = case_dir / "input.stem4d";
    cmd_generate(criterion3_spec(seed), stack);

    PipelineConfig config;
    config.input = stack;
    config.output_dir = case_dir / "out";
    const auto t0 = Clock::now();
    const auto summary = cmd_run(config, threads);
    RecoveryRun run;
    run.seconds = seconds_since(t0);
    run.chosen = summary.chosen_k;
    run.knee = summary.knee_k;
    const auto curve = read_loss_curve(config.output_dir / "loss_curve.csv");
    run.k_values = curve.k_values;
    run.losses = curve.losses;
    recovery_runs.push_back(run);

    hits += run.chosen >= 7 && run.chosen <= 9;
    slowest = std::max(slowest, run.seconds);
    ks += (ks.empty() ? "" : ",") + std::to_string(run.chosen);
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "chosen_k = [%s], %d/5 in [7,9] (need 4), slowest run %.1f s (limit 120 s)",
                ks.c_str(), hits, slowest);
  return {hits >= 4 && slowest < 120.0 ? Outcome::Pass : Outcome::Fail, buf};
}

Outcome loss_curve_shape() {
  if (recovery_runs.empty()) return {Outcome::Fail, "no criterion-3 runs available"};
  std::string detail;
  bool ok = true;
  for (std::size_t r = 0; r < recovery_runs.size(); ++r) {
    const auto& run = recovery_runs[r];
    double max_after = 0.0;
    bool decreasing = true;
    for (std::size_t i = 0; i + 1 < run.k_values.size(); ++i) {
      const double drop = (run.losses[i] - run.losses[i + 1]) / run.losses[i];
      if (run.k_values[i + 1] <= run.knee)
        decreasing = decreasing && run.losses[i + 1] < run.losses[i];
      else if (run.k_values[i] >= run.knee)
        max_after = std::max(max_after, drop);
    }
    ok = ok && decreasing && max_after < 0.02;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%sseed %zu: knee %d, decreasing %s, max drop after %.4f", r ? "; " : "", r + 1,
                  run.knee, decreasing ? "yes" : "no", max_after);
    detail += buf;
  }
  return {ok ? Outcome::Pass : Outcome::Fail, detail + " (limit 0.02)"};
}

Outcome iqa_identities() {
  std::mt19937_64 rng(50);
  double worst = 0.0;
  for (int i = 0; i < 50; ++i) {
    const Image x = random_image(rng, 24, 24);
    worst = std::max({worst, std::abs(ssim(x, x) - 1.0), std::abs(gmsd(x, x)), std::abs(mdsi(x, x)),
                      std::abs(mse(x, x))});
  }
  bool ranges = true;
  for (int i = 0; i < 50; ++i) {
    const Image a = random_image(rng, 24, 24);
    const Image b = random_image(rng, 24, 24);
    const double s = ssim(a, b);
    const Image g = gms_map(a, b);
    ranges = ranges && s >= -1.0 && s <= 1.0 && (g > 0.0).all() && (g <= 1.0).all();
  }
  char buf[128];
  std::snprintf(buf, sizeof buf, "max identity deviation %.3g (limit 1e-9), ranges %s", worst, ranges ? "ok" : "violated");
  return {worst <= 1e-9 && ranges ? Outcome::Pass : Outcome::Fail, buf};
}

Outcome hand_oracles() {
  IqaParams p;
  p.max_value = 2.0;
  const double db = psnr(Image::Zero(4, 4), Image::Constant(4, 4, 2.0), p);  // MSE = MAX^2

  const double max = 0.8;
  const double c1 = (0.01 * max) * (0.01 * max);
  const double s = ssim(Image::Zero(5, 5), Image::Constant(5, 5, max));
  const double s_expected = c1 / (max * max + c1);

  Image step = Image::Zero(6, 8);
  step.rightCols(4) = 1.0;
  const Image g = gradient_magnitude(step);
  const double at_step = std::max(std::abs(g(3, 3) - 4.0), std::abs(g(3, 4) - 4.0));

  const bool ok = db == 0.0 && std::abs(s - s_expected) <= 1e-12 && at_step <= 1e-12;
  char buf[160];
  std::snprintf(buf, sizeof buf, "PSNR %.3g dB (exact 0), SSIM error %.3g (limit 1e-12), Sobel error %.3g", db,
                std::abs(s - s_expected), at_step);
  return {ok ? Outcome::Pass : Outcome::Fail, buf};
}

Outcome overlap_detection() {
  SyntheticSpec spec;
  spec.noise_sigma = 0.02;
  spec.seed = 11;
  spec.overlaps.push_back({14, 0, 4, 32, 0, 1, 0.45});
  const auto ds = generate_synthetic(spec);
  const auto V = reshape_4d_to_2d(ds.stack);
  NmfConfig c;
  c.k = 8;
  c.seed = sweep_seed(0, 8);
  const auto fac = nmf_factorize(V, c);
  const auto maps = build_cluster_maps(fac.H, spec.m, spec.n, default_thresholds());
  std::size_t band = 0, band_hit = 0, pure = 0, pure_hit = 0;
  for (std::size_t j = 0; j < maps.labels.size(); ++j) {
    if (ds.truth.secondary[j] >= 0) {
      ++band;
      band_hit += maps.overlap_classes[j] >= 2;
    } else {
      ++pure;
      pure_hit += maps.overlap_classes[j] == 0;
    }
  }
  const double band_frac = static_cast<double>(band_hit) / static_cast<double>(band);
  const double pure_frac = static_cast<double>(pure_hit) / static_cast<double>(pure);
  char buf[128];
  std::snprintf(buf, sizeof buf, "band class>=2: %.3f, pure class 0: %.3f (limits 0.90)", band_frac, pure_frac);
  return {band_frac >= 0.9 && pure_frac >= 0.9 ? Outcome::Pass : Outcome::Fail, buf};
}

Outcome elbow_oracle() {
  const int knee = find_knee({1, 2, 3, 4, 5}, {10, 5, 2.5, 2.4, 2.3}, 0.05);
  std::vector<int> ks;
  std::vector<double> linear;
  for (int k = 1; k <= 12; ++k) {
    ks.push_back(k);
    linear.push_back(std::pow(0.7, k - 1));
  }
  bool not_found = false;
  try {
    find_knee(ks, linear, 0.05);
  } catch (const Error& e) {
    not_found = e.code() == ErrorCode::KneeNotFound;
  }
  const auto range = range_of_interest(10, 4);
  const bool ok = knee == 3 && not_found && range == std::pair{6, 14};
  char buf[128];
  std::snprintf(buf, sizeof buf, "knee %d (want 3), 30%%-drop curve KneeNotFound %s, range [%d,%d] (want [6,14])", knee,
                not_found ? "yes" : "no", range.first, range.second);
  return {ok ? Outcome::Pass : Outcome::Fail, buf};
}

Outcome determinism() {
  const auto dir = work_dir() / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  SyntheticSpec spec;
  spec.m = 16;
  spec.n = 16;
  spec.px = 32;
  spec.py = 32;
  spec.k_true = 4;
  spec.noise_sigma = 0.03;
  spec.seed = 9;
  const auto stack = dir / "input.stem4d";
  cmd_generate(spec, stack);

  PipelineConfig config;
  config.input = stack;
  config.output_dir = dir / "run";
  config.k_max = 8;
  cmd_run(config, 1);
  const auto manifest_path = dir / "manifest.json";
  fs::copy_file(config.output_dir / "run_manifest.json", manifest_path);

  auto snapshot = [&] {
    std::vector<std::pair<std::string, std::string>> files;
    for (const auto& e : fs::directory_iterator(config.output_dir)) {
      const auto ext = e.path().extension();
      if (ext == ".csv" || ext == ".json") files.emplace_back(e.path().filename().string(), slurp(e.path()));
    }
    std::sort(files.begin(), files.end());
    return files;
  };

  // Two more runs from the saved manifest with different thread counts.
  const auto replay = PipelineConfig::from_json(slurp(manifest_path));
  fs::remove_all(config.output_dir);
  cmd_run(replay, 1);
  const auto first = snapshot();
  fs::remove_all(config.output_dir);
  cmd_run(replay, 2);
  const auto second = snapshot();

  std::string differing;
  if (first.size() != second.size()) differing = "file sets differ";
  for (std::size_t i = 0; i < std::min(first.size(), second.size()); ++i)
    if (first[i] != second[i]) differing += (differing.empty() ? "" : ",") + first[i].first;
  const bool manifest_same = slurp(manifest_path) == slurp(config.output_dir / "run_manifest.json");
  const bool ok = differing.empty() && manifest_same && !first.empty();
  std::string detail = std::to_string(first.size()) + " CSV/JSON files compared at threads 1 vs 2";
  if (!differing.empty()) detail += "; differing: " + differing;
  if (!manifest_same) detail += "; manifest changed on replay";
  return {ok ? Outcome::Pass : Outcome::Fail, detail};
}

// The published dataset is not bundled; point STEMFACTOR_DATASET at a stack
// file to enable this check. A failure is reported as a warning only.
Outcome published_dataset(int threads) {
  const char* path = std::getenv("STEMFACTOR_DATASET");
  if (!path || !fs::exists(path)) return {Outcome::Skip, "STEMFACTOR_DATASET not set or missing"};
  PipelineConfig config;
  config.input = path;
  config.output_dir = work_dir() / "published";
  config.k_min = 2;
  config.k_max = 14;
  try {
    const auto summary = cmd_run(config, threads);
    const auto report = DecisionReport::from_json(slurp(config.output_dir / "decision.json"));
    const CandidateScore* chosen = nullptr;
    for (const auto& c : report.candidates)
      if (c.k == summary.chosen_k) chosen = &c;
    const bool ok = summary.chosen_k == 8 && chosen && chosen->ssim_mean && chosen->gmsd_mean && chosen->mdsi_mean &&
                    std::abs(*chosen->ssim_mean - 0.718) <= 0.05 && std::abs(*chosen->gmsd_mean - 0.1139) <= 0.02 &&
                    std::abs(*chosen->mdsi_mean - 0.3062) <= 0.05;
    char buf[192];
    std::snprintf(buf, sizeof buf, "chosen_k %d, SSIM %.4f, GMSD %.4f, MDSI %.4f", summary.chosen_k,
                  chosen && chosen->ssim_mean ? *chosen->ssim_mean : NAN,
                  chosen && chosen->gmsd_mean ? *chosen->gmsd_mean : NAN,
                  chosen && chosen->mdsi_mean ? *chosen->mdsi_mean : NAN);
    return {ok ? Outcome::Pass : Outcome::Warn, buf};
  } catch (const std::exception& e) {
    return {Outcome::Warn, e.what()};
  }
}

}  // namespace

int main() {
  const int threads = resolve_threads(std::nullopt);
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria{
      {1, "MU monotonicity", mu_monotonicity},
      {2, "rank-1 exact recovery", rank_one_recovery},
      {3, "end-to-end k recovery", [&] { return end_to_end_recovery(threads); }},
      {4, "loss-curve shape", loss_curve_shape},
      {5, "IQA identities and ranges", iqa_identities},
      {6, "hand oracles", hand_oracles},
      {7, "overlap detection", overlap_detection},
      {8, "elbow oracle", elbow_oracle},
      {9, "determinism across threads", determinism},
      {10, "published dataset (optional)", [&] { return published_dataset(threads); }},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {Outcome::Fail, std::string("exception: ") + e.what()};
    }
    static const char* kLabel[] = {"PASS", "FAIL", "SKIP", "WARN"};
    std::printf("%s criterion %d (%s): %s\n", kLabel[o.kind], c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
    failures += o.kind == Outcome::Fail;
  }
  return failures == 0 ? 0 : 1;
}
