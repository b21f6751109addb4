#include "stemfactor/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <sstream>
#include <thread>

#include <toml.hpp>

#include "json.hpp"

#include "stemfactor/csv.hpp"
#include "stemfactor/error.hpp"
#include "stemfactor/maps.hpp"
#include "stemfactor/npy.hpp"
#include "stemfactor/preprocess.hpp"

namespace stemfactor {
namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

template <typename F>
auto tagged(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const StageError&) {
    throw;
  } catch (const Error& e) {
    throw StageError(stage, e);
  } catch (const fs::filesystem_error& e) {
    throw StageError(stage, Error(ErrorCode::IoFailure, e.what()));
  }
}

std::string format_value(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

ojson optional_json(const std::optional<double>& v) {
  if (!v) return nullptr;
  return *v;
}

// ---- configuration -------------------------------------------------------

const nlohmann::json* child(const nlohmann::json& j, const char* key) {
  const auto it = j.find(key);
  return it == j.end() ? nullptr : &*it;
}

void check_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) fail(ErrorCode::ConfigError, where + " must be a table");
  for (const auto& [key, value] : j.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      fail(ErrorCode::ConfigError, "unknown key '" + (where.empty() ? key : where + "." + key) + "'");
  }
}

template <typename T>
void read_into(const nlohmann::json& j, const char* key, T& out, const std::string& where) {
  const auto* v = child(j, key);
  if (!v || v->is_null()) return;
  try {
    if constexpr (std::is_same_v<T, double>) {
      if (!v->is_number()) throw std::invalid_argument("not a number");
    }
    if constexpr (std::is_integral_v<T> && !std::is_same_v<T, bool>) {
      if (!v->is_number_integer()) throw std::invalid_argument("not an integer");
    }
    out = v->get<T>();
  } catch (const std::exception& e) {
    fail(ErrorCode::ConfigError, "bad value for '" + where + key + "': " + e.what());
  }
}

void read_optional(const nlohmann::json& j, const char* key, std::optional<double>& out, const std::string& where) {
  const auto* v = child(j, key);
  if (!v) return;
  if (v->is_null()) {
    out.reset();
    return;
  }
  double d = 0.0;
  read_into(j, key, d, where);
  out = d;
}

void apply_config_json(PipelineConfig& c, const nlohmann::json& j) {
  check_keys(j, {"input", "output", "filter", "k_min", "k_max", "thresholds", "nmf", "decide", "iqa", "generate"}, "");
  if (const auto* v = child(j, "input"); v && !v->is_null()) c.input = v->get<std::string>();
  if (const auto* v = child(j, "output"); v && !v->is_null()) c.output_dir = v->get<std::string>();
  if (const auto* v = child(j, "filter"); v && !v->is_null()) c.filter = filter_mode_from_string(v->get<std::string>());
  read_into(j, "k_min", c.k_min, "");
  read_into(j, "k_max", c.k_max, "");
  read_into(j, "thresholds", c.thresholds, "");
  if (const auto* nmf = child(j, "nmf")) {
    check_keys(*nmf, {"max_iter", "tol", "epsilon", "seed", "init"}, "nmf");
    read_into(*nmf, "max_iter", c.nmf.max_iter, "nmf.");
    read_into(*nmf, "tol", c.nmf.tol, "nmf.");
    read_into(*nmf, "epsilon", c.nmf.epsilon, "nmf.");
    read_into(*nmf, "seed", c.nmf.seed, "nmf.");
    if (const auto* v = child(*nmf, "init"); v && v->get<std::string>() != "uniform")
      fail(ErrorCode::ConfigError, "nmf.init must be 'uniform'");
  }
  if (const auto* d = child(j, "decide")) {
    check_keys(*d, {"tau", "half_width", "psnr_floor", "psnr_gate"}, "decide");
    read_into(*d, "tau", c.tau, "decide.");
    read_into(*d, "half_width", c.half_width, "decide.");
    read_into(*d, "psnr_floor", c.psnr_floor, "decide.");
    if (const auto* v = child(*d, "psnr_gate")) c.psnr_gate = psnr_gate_from_string(v->get<std::string>());
  }
  if (const auto* q = child(j, "iqa")) {
    check_keys(*q, {"max_value", "ssim_c1", "ssim_c2", "ssim_c3", "ssim_alpha", "ssim_beta", "ssim_gamma", "gmsd_c",
                    "mdsi_c1", "mdsi_c2", "mdsi_c3", "mdsi_alpha"},
               "iqa");
    read_optional(*q, "max_value", c.iqa.max_value, "iqa.");
    read_optional(*q, "ssim_c1", c.iqa.ssim_c1, "iqa.");
    read_optional(*q, "ssim_c2", c.iqa.ssim_c2, "iqa.");
    read_optional(*q, "ssim_c3", c.iqa.ssim_c3, "iqa.");
    read_into(*q, "ssim_alpha", c.iqa.ssim_alpha, "iqa.");
    read_into(*q, "ssim_beta", c.iqa.ssim_beta, "iqa.");
    read_into(*q, "ssim_gamma", c.iqa.ssim_gamma, "iqa.");
    read_optional(*q, "gmsd_c", c.iqa.gmsd_c, "iqa.");
    read_optional(*q, "mdsi_c1", c.iqa.mdsi_c1, "iqa.");
    read_optional(*q, "mdsi_c2", c.iqa.mdsi_c2, "iqa.");
    read_optional(*q, "mdsi_c3", c.iqa.mdsi_c3, "iqa.");
    read_into(*q, "mdsi_alpha", c.iqa.mdsi_alpha, "iqa.");
  }
}

nlohmann::json toml_to_json(const fs::path& path) {
  try {
    const auto table = toml::parse_file(path.string());
    std::ostringstream os;
    os << toml::json_formatter{table};
    return nlohmann::json::parse(os.str());
  } catch (const toml::parse_error& e) {
    std::ostringstream os;
    os << path.string() << ":" << e.source().begin.line << ": " << e.description();
    fail(ErrorCode::ConfigError, os.str());
  }
}

// Rethrows configuration problems from the JSON layer with the right code.
template <typename F>
void as_config_error(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    if (category_of(e.code()) == ErrorCategory::Config) throw;
    fail(ErrorCode::ConfigError, e.message());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ConfigError, e.what());
  }
}

// ---- data helpers -----------------------------------------------------------

ScanStack4D load_input(const PipelineConfig& config) {
  if (config.input.empty()) fail(ErrorCode::ConfigError, "no input path given");
  if (!fs::exists(config.input)) fail(ErrorCode::IoFailure, "input " + config.input.string() + " does not exist");
  return load_stack(config.input);
}

ScanStack4D apply_filter(const PipelineConfig& config, const ScanStack4D& stack) {
  return config.filter == FilterMode::Mean ? mean_filter(stack) : stack;
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create " + dir.string() + ": " + ec.message());
}

// Factorizations come from `sweep` when given, otherwise they are recomputed
// on `fitted` with the sweep's seeds. Cluster means are taken from `raw`.
std::vector<CandidateScore> score_range(const DataMatrix& fitted, const DataMatrix& raw, const SweepResult* sweep,
                                        const PipelineConfig& config, int lo, int hi, std::size_t px, std::size_t py,
                                        int threads) {
  const auto count = static_cast<std::size_t>(hi - lo + 1);
  std::vector<CandidateScore> scores(count);
  std::vector<std::exception_ptr> errors(count);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < count; i = next++) {
      const int k = lo + static_cast<int>(i);
      try {
        if (sweep) {
          scores[i] = score_candidate(raw, sweep->at(k), px, py, config.iqa);
        } else {
          NmfConfig run = config.nmf;
          run.k = k;
          run.seed = sweep_seed(config.nmf.seed, k);
          scores[i] = score_candidate(raw, nmf_factorize(fitted, run), px, py, config.iqa);
        }
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto workers = static_cast<std::size_t>(std::clamp(threads, 1, static_cast<int>(count)));
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
  }
  for (const auto& e : errors)
    if (e) std::rethrow_exception(e);
  return scores;
}

std::string pairwise_csv(const std::vector<CandidateScore>& scores, Metric metric) {
  std::ostringstream os;
  os << "k,ref,dist," << to_string(metric) << "\n";
  for (const auto& s : scores) {
    const IqaMatrix& m = metric == Metric::Ssim ? s.ssim : metric == Metric::Gmsd ? s.gmsd : s.mdsi;
    for (int i = 0; i < m.k(); ++i)
      for (int j = 0; j < m.k(); ++j) os << s.k << "," << i << "," << j << "," << format_value(m.values(i, j)) << "\n";
  }
  return os.str();
}

std::string psnr_csv(const std::vector<CandidateScore>& scores) {
  std::ostringstream os;
  os << "k,cluster,members,psnr,band\n";
  for (const auto& s : scores)
    for (std::size_t c = 0; c < s.psnr.size(); ++c)
      os << s.k << "," << c << "," << s.member_counts[c] << "," << format_value(s.psnr[c]) << ","
         << to_string(psnr_band(s.psnr[c])) << "\n";
  return os.str();
}

struct Level1 {
  int knee = 0;
  int lo = 0;
  int hi = 0;
};

Level1 level_one(const PipelineConfig& config, const std::vector<int>& k_values, const std::vector<double>& losses) {
  Level1 l;
  l.knee = find_knee(k_values, losses, config.tau, config.nmf.epsilon);
  std::tie(l.lo, l.hi) = range_of_interest(l.knee, config.half_width, k_values.front(), k_values.back());
  return l;
}

DecisionReport make_report(const PipelineConfig& config, const Level1& l1, std::vector<CandidateScore> scores) {
  DecisionReport report;
  report.knee_k = l1.knee;
  report.range_lo = l1.lo;
  report.range_hi = l1.hi;
  report.rule = describe_rule(config.tau, config.half_width, config.psnr_floor, config.psnr_gate);
  if (scores.empty()) {
    report.chosen_k = l1.knee;
    report.flags.push_back("level-1-only");
  } else {
    const Choice choice = choose_k(scores, config.psnr_floor, config.psnr_gate);
    report.chosen_k = choice.k;
    if (choice.floor_relaxed) report.flags.push_back("floor-relaxed");
  }
  report.candidates = std::move(scores);
  return report;
}

std::vector<fs::path> write_decision(const fs::path& dir, const DecisionReport& report) {
  std::vector<fs::path> out{dir / "decision.json"};
  write_text_file(out[0], report.to_json());
  if (!report.candidates.empty()) {
    for (Metric m : {Metric::Ssim, Metric::Gmsd, Metric::Mdsi}) {
      out.push_back(dir / ("iqa_" + std::string(to_string(m)) + ".csv"));
      write_text_file(out.back(), pairwise_csv(report.candidates, m));
    }
    out.push_back(dir / "iqa_psnr.csv");
    write_text_file(out.back(), psnr_csv(report.candidates));
  }
  return out;
}

std::vector<fs::path> write_factorization(const fs::path& dir, const Factorization& fac, const NmfConfig& nmf) {
  std::vector<fs::path> out{dir / "W.npy", dir / "H.npy", dir / "loss_history.npy", dir / "factorization.json"};
  npy::write_matrix(out[0], fac.W);
  npy::write_matrix(out[1], fac.H);
  const std::vector<std::size_t> shape{fac.loss_history.size(), 1};
  npy::write(out[2], shape, std::span<const double>(fac.loss_history));

  ojson j;
  j["k"] = fac.k();
  j["seed"] = fac.seed;
  j["max_iter"] = nmf.max_iter;
  j["tol"] = nmf.tol;
  j["epsilon"] = nmf.epsilon;
  j["iterations_run"] = fac.iterations_run;
  j["converged"] = fac.converged;
  j["initial_frobenius_loss"] = fac.initial_loss;
  j["final_frobenius_loss"] = fac.loss_history.empty() ? fac.initial_loss : fac.loss_history.back();
  j["k_component_loss"] = fac.k_component_loss;
  j["gauge"] = "W columns sum to 1";
  j["warnings"] = fac.warnings;
  write_text_file(out[3], j.dump(2) + "\n");
  return out;
}

void write_images_npy(const fs::path& path, const std::vector<Image>& images, std::size_t px, std::size_t py) {
  std::vector<float> data;
  data.reserve(images.size() * px * py);
  for (const auto& img : images)
    for (Eigen::Index i = 0; i < img.size(); ++i) data.push_back(static_cast<float>(img.data()[i]));
  const std::vector<std::size_t> shape{1, images.size(), px, py};
  npy::write(path, shape, std::span<const float>(data));
}

template <typename T>
void write_map_npy(const fs::path& path, const std::vector<T>& values, std::size_t m, std::size_t n) {
  std::vector<double> data(values.begin(), values.end());
  const std::vector<std::size_t> shape{m, n};
  npy::write(path, shape, std::span<const double>(data));
}

std::vector<fs::path> write_maps(const PipelineConfig& config, const ScanStack4D& raw, const ScanStack4D& fitted,
                                 const Matrix& W, const Matrix& H, const fs::path& dir) {
  const auto& s = raw.shape();
  if (W.rows() != static_cast<Eigen::Index>(s.pattern_size()) || H.cols() != static_cast<Eigen::Index>(s.scan_count()) ||
      W.cols() != H.rows())
    fail(ErrorCode::ShapeMismatch, "factorization does not match the input stack " + to_string(s));
  const ClusterMaps maps = build_cluster_maps(H, s.m, s.n, config.thresholds);
  std::vector<fs::path> out = render_maps(maps, (dir / "").string());

  ClusterPatterns patterns;
  patterns.representatives = representative_patterns(W, H, s.px, s.py);
  const RawMeans raw_means = raw_mean_patterns(raw, maps.labels, maps.k);
  patterns.raw_means = raw_means.means;
  patterns.member_counts = raw_means.counts;

  out.push_back(dir / "labels.npy");
  write_map_npy(out.back(), maps.labels, s.m, s.n);
  out.push_back(dir / "ratio.npy");
  write_map_npy(out.back(), maps.ratio, s.m, s.n);
  out.push_back(dir / "overlap.npy");
  write_map_npy(out.back(), maps.overlap_classes, s.m, s.n);
  out.push_back(dir / "representatives.npy");
  write_images_npy(out.back(), patterns.representatives, s.px, s.py);
  out.push_back(dir / "raw_means.npy");
  write_images_npy(out.back(), patterns.raw_means, s.px, s.py);

  NsdTable table;
  table.datasets = {"representative", "raw_mean"};
  table.values.resize(2);
  for (int c = 0; c < maps.k; ++c) {
    table.values[0].push_back(nsd(patterns.representatives[static_cast<std::size_t>(c)]));
    table.values[1].push_back(nsd(patterns.raw_means[static_cast<std::size_t>(c)]));
  }
  out.push_back(dir / "nsd.csv");
  write_text_file(out.back(), table.to_csv());

  ojson j;
  j["k"] = maps.k;
  j["scan"] = {s.m, s.n};
  j["fitted_on"] = fitted.provenance();
  j["member_counts"] = patterns.member_counts;
  j["thresholds"] = maps.thresholds;
  std::vector<std::size_t> class_counts(maps.thresholds.size() + 1, 0);
  for (int c : maps.overlap_classes) ++class_counts[static_cast<std::size_t>(c)];
  j["overlap_class_counts"] = class_counts;
  std::vector<std::string> warnings = maps.warnings;
  warnings.insert(warnings.end(), raw_means.warnings.begin(), raw_means.warnings.end());
  j["warnings"] = warnings;
  out.push_back(dir / "maps.json");
  write_text_file(out.back(), j.dump(2) + "\n");
  return out;
}

}  // namespace

// ---- public API ---------------------------------------------------------------

std::string_view to_string(FilterMode mode) noexcept { return mode == FilterMode::Mean ? "mean" : "none"; }

FilterMode filter_mode_from_string(std::string_view name) {
  if (name == "mean") return FilterMode::Mean;
  if (name == "none") return FilterMode::None;
  fail(ErrorCode::ConfigError, "filter must be 'none' or 'mean', got '" + std::string(name) + "'");
}

void PipelineConfig::validate() const {
  auto check = [](bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::ConfigError, what);
  };
  check(k_min >= 1, "k_min must be >= 1");
  check(k_max >= k_min + 2, "k_max must be >= k_min + 2 (the knee rule needs three points)");
  check(tau > 0.0 && std::isfinite(tau), "decide.tau must be a positive number");
  check(half_width >= 0, "decide.half_width must be >= 0");
  check(std::isfinite(psnr_floor), "decide.psnr_floor must be finite");
  as_config_error([&] {
    NmfConfig probe = nmf;
    probe.k = 1;
    probe.validate();
    iqa.validate();
    validate_thresholds(thresholds);
  });
}

std::string PipelineConfig::to_json() const {
  ojson j;
  j["input"] = input.string();
  j["output"] = output_dir.string();
  j["filter"] = to_string(filter);
  j["k_min"] = k_min;
  j["k_max"] = k_max;
  j["nmf"] = {{"max_iter", nmf.max_iter}, {"tol", nmf.tol}, {"epsilon", nmf.epsilon}, {"seed", nmf.seed},
              {"init", "uniform"}};
  j["decide"] = {{"tau", tau}, {"half_width", half_width}, {"psnr_floor", psnr_floor},
                 {"psnr_gate", to_string(psnr_gate)}};
  ojson q;
  q["max_value"] = optional_json(iqa.max_value);
  q["ssim_c1"] = optional_json(iqa.ssim_c1);
  q["ssim_c2"] = optional_json(iqa.ssim_c2);
  q["ssim_c3"] = optional_json(iqa.ssim_c3);
  q["ssim_alpha"] = iqa.ssim_alpha;
  q["ssim_beta"] = iqa.ssim_beta;
  q["ssim_gamma"] = iqa.ssim_gamma;
  q["gmsd_c"] = optional_json(iqa.gmsd_c);
  q["mdsi_c1"] = optional_json(iqa.mdsi_c1);
  q["mdsi_c2"] = optional_json(iqa.mdsi_c2);
  q["mdsi_c3"] = optional_json(iqa.mdsi_c3);
  q["mdsi_alpha"] = iqa.mdsi_alpha;
  j["iqa"] = std::move(q);
  j["thresholds"] = thresholds;
  return j.dump(2) + "\n";
}

PipelineConfig PipelineConfig::from_json(const std::string& text) {
  PipelineConfig c;
  as_config_error([&] {
    auto j = nlohmann::json::parse(text);
    if (j.contains("config")) j = j.at("config");
    apply_config_json(c, j);
  });
  return c;
}

PipelineConfig PipelineConfig::from_toml(const fs::path& path) {
  PipelineConfig c;
  const auto j = toml_to_json(path);
  as_config_error([&] { apply_config_json(c, j); });
  return c;
}

std::optional<SyntheticSpec> synthetic_spec_from_toml(const fs::path& path) {
  const auto j = toml_to_json(path);
  const auto* g = child(j, "generate");
  if (!g) return std::nullopt;
  SyntheticSpec s;
  as_config_error([&] {
    check_keys(*g, {"m", "n", "px", "py", "k", "noise", "seed", "spots", "direct_beam", "overlaps"}, "generate");
    read_into(*g, "m", s.m, "generate.");
    read_into(*g, "n", s.n, "generate.");
    read_into(*g, "px", s.px, "generate.");
    read_into(*g, "py", s.py, "generate.");
    read_into(*g, "k", s.k_true, "generate.");
    read_into(*g, "noise", s.noise_sigma, "generate.");
    read_into(*g, "seed", s.seed, "generate.");
    read_into(*g, "spots", s.spots_per_pattern, "generate.");
    read_into(*g, "direct_beam", s.direct_beam, "generate.");
    if (const auto* ov = child(*g, "overlaps")) {
      for (const auto& o : *ov) {
        check_keys(o, {"row0", "col0", "rows", "cols", "a", "b", "mix"}, "generate.overlaps");
        OverlapRegion r;
        read_into(o, "row0", r.row0, "overlaps.");
        read_into(o, "col0", r.col0, "overlaps.");
        read_into(o, "rows", r.rows, "overlaps.");
        read_into(o, "cols", r.cols, "overlaps.");
        read_into(o, "a", r.cluster_a, "overlaps.");
        read_into(o, "b", r.cluster_b, "overlaps.");
        read_into(o, "mix", r.mix, "overlaps.");
        s.overlaps.push_back(r);
      }
    }
  });
  return s;
}

int resolve_threads(std::optional<int> flag) {
  if (flag) {
    if (*flag < 1) fail(ErrorCode::ConfigError, "--threads must be >= 1");
    return *flag;
  }
  if (const char* env = std::getenv("STEMFACTOR_THREADS"); env && *env) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) fail(ErrorCode::ConfigError, "STEMFACTOR_THREADS must be a positive integer");
    return static_cast<int>(v);
  }
  return 1;
}

GenerateOutputs cmd_generate(const SyntheticSpec& spec, const fs::path& stack_path, std::optional<fs::path> truth_path) {
  return tagged("generate", [&] {
    const SyntheticDataset ds = generate_synthetic(spec);
    GenerateOutputs out;
    out.stack = stack_path;
    out.truth = truth_path ? *truth_path : fs::path(stack_path).replace_extension(".truth.json");
    if (stack_path.has_parent_path()) ensure_dir(stack_path.parent_path());
    save_stack(ds.stack, out.stack);
    save_ground_truth(ds.truth, out.truth);
    return out;
  });
}

void cmd_convert(const fs::path& from, const fs::path& to) {
  const ScanStack4D stack = tagged("load", [&] { return load_stack(from); });
  tagged("convert", [&] { save_stack(stack, to); });
}

std::vector<fs::path> stage_filter(const PipelineConfig& config, const fs::path& out_path) {
  const ScanStack4D stack = tagged("load", [&] { return load_input(config); });
  return tagged("filter", [&] {
    save_stack(apply_filter(config, stack), out_path);
    return std::vector<fs::path>{out_path};
  });
}

std::vector<fs::path> stage_sweep(const PipelineConfig& config, int threads) {
  tagged("config", [&] { config.validate(); });
  const Matrix V = tagged("load", [&] {
    if (format_for_path(config.input) == StackFormat::Interchange && fs::exists(config.input)) {
      const npy::Array a = npy::read(config.input);
      if (a.shape.size() == 2) return npy::read_matrix(config.input);
    }
    return reshape_4d_to_2d(apply_filter(config, load_input(config))).values();
  });
  return tagged("sweep", [&] {
    const SweepResult result = sweep(DataMatrix(V), config.k_min, config.k_max, config.nmf, threads);
    ensure_dir(config.output_dir);
    const fs::path out = config.output_dir / "loss_curve.csv";
    write_text_file(out, result.loss_curve_csv());
    return std::vector<fs::path>{out};
  });
}

std::vector<fs::path> stage_decide(const PipelineConfig& config, const fs::path& loss_csv, int threads) {
  tagged("config", [&] { config.validate(); });
  const LossCurve curve = tagged("load", [&] {
    if (!fs::exists(loss_csv)) fail(ErrorCode::MissingUpstream, "loss curve " + loss_csv.string() + " not found");
    return read_loss_curve(loss_csv);
  });
  const Level1 l1 = tagged("level1", [&] { return level_one(config, curve.k_values, curve.losses); });
  std::vector<CandidateScore> scores;
  if (!config.input.empty()) {
    const ScanStack4D stack = tagged("load", [&] { return load_input(config); });
    scores = tagged("level2", [&] {
      const DataMatrix fitted = reshape_4d_to_2d(apply_filter(config, stack));
      const DataMatrix raw = reshape_4d_to_2d(stack);
      return score_range(fitted, raw, nullptr, config, l1.lo, l1.hi, stack.shape().px, stack.shape().py, threads);
    });
  }
  return tagged("decide", [&] {
    ensure_dir(config.output_dir);
    return write_decision(config.output_dir, make_report(config, l1, std::move(scores)));
  });
}

std::vector<fs::path> stage_factorize(const PipelineConfig& config, std::optional<int> k,
                                      std::optional<fs::path> decision) {
  tagged("config", [&] { config.validate(); });
  const int chosen = tagged("load", [&] {
    if (k) return *k;
    const fs::path path = decision ? *decision : config.output_dir / "decision.json";
    if (!fs::exists(path)) fail(ErrorCode::MissingUpstream, "no k given and " + path.string() + " not found");
    return DecisionReport::from_json(read_text_file(path)).chosen_k;
  });
  const ScanStack4D stack = tagged("load", [&] { return load_input(config); });
  return tagged("factorize", [&] {
    NmfConfig run = config.nmf;
    run.k = chosen;
    run.seed = sweep_seed(config.nmf.seed, chosen);
    const Factorization fac = nmf_factorize(reshape_4d_to_2d(apply_filter(config, stack)), run);
    ensure_dir(config.output_dir);
    return write_factorization(config.output_dir, fac, run);
  });
}

std::vector<fs::path> stage_maps(const PipelineConfig& config, const fs::path& factorization_dir) {
  tagged("config", [&] { config.validate(); });
  const auto [W, H] = tagged("load", [&] {
    const fs::path w = factorization_dir / "W.npy";
    const fs::path h = factorization_dir / "H.npy";
    for (const auto& p : {w, h})
      if (!fs::exists(p)) fail(ErrorCode::MissingUpstream, "factorization file " + p.string() + " not found");
    return std::pair{npy::read_matrix(w), npy::read_matrix(h)};
  });
  const ScanStack4D stack = tagged("load", [&] { return load_input(config); });
  return tagged("maps", [&] {
    ensure_dir(config.output_dir);
    return write_maps(config, stack, apply_filter(config, stack), W, H, config.output_dir);
  });
}

RunSummary cmd_run(const PipelineConfig& config, int threads) {
  const fs::path dir = config.output_dir;
  const fs::path marker = dir / "FAILED";
  RunSummary summary;
  try {
    tagged("config", [&] {
      config.validate();
      ensure_dir(dir);
      fs::remove(marker);
    });
    const ScanStack4D raw = tagged("load", [&] { return load_input(config); });
    const ScanStack4D fitted = tagged("filter", [&] { return apply_filter(config, raw); });
    const DataMatrix V = tagged("reshape", [&] { return reshape_4d_to_2d(fitted); });
    const auto& shape = raw.shape();

    const SweepResult sw = tagged("sweep", [&] {
      auto result = sweep(V, config.k_min, config.k_max, config.nmf, threads);
      summary.outputs.push_back(dir / "loss_curve.csv");
      write_text_file(summary.outputs.back(), result.loss_curve_csv());
      return result;
    });
    const Level1 l1 = tagged("level1", [&] { return level_one(config, sw.k_values, sw.losses); });
    const DecisionReport report = tagged("level2", [&] {
      const DataMatrix raw_matrix = reshape_4d_to_2d(raw);
      auto scores = score_range(V, raw_matrix, &sw, config, l1.lo, l1.hi, shape.px, shape.py, threads);
      auto r = make_report(config, l1, std::move(scores));
      const auto written = write_decision(dir, r);
      summary.outputs.insert(summary.outputs.end(), written.begin(), written.end());
      return r;
    });
    summary.knee_k = report.knee_k;
    summary.chosen_k = report.chosen_k;

    // The sweep already ran chosen_k with the same seed, so its result is
    // the final factorization.
    const Factorization& fac = sw.at(report.chosen_k);
    tagged("factorize", [&] {
      NmfConfig run = config.nmf;
      run.k = report.chosen_k;
      run.seed = sweep_seed(config.nmf.seed, report.chosen_k);
      const auto written = write_factorization(dir, fac, run);
      summary.outputs.insert(summary.outputs.end(), written.begin(), written.end());
    });
    tagged("maps", [&] {
      const auto written = write_maps(config, raw, fitted, fac.W, fac.H, dir);
      summary.outputs.insert(summary.outputs.end(), written.begin(), written.end());
    });

    tagged("manifest", [&] {
      ojson m;
      m["tool"] = "stemfactor";
      m["manifest_version"] = 1;
      m["config"] = ojson::parse(config.to_json());
      m["input"] = {{"path", config.input.string()},
                    {"shape", {shape.m, shape.n, shape.px, shape.py}},
                    {"provenance", raw.provenance()},
                    {"fitted_on", fitted.provenance()}};
      ojson seeds;
      for (int k : sw.k_values) seeds[std::to_string(k)] = sweep_seed(config.nmf.seed, k);
      m["seeds"] = {{"base", config.nmf.seed}, {"rule", "seed = base + k"}, {"per_k", seeds}};
      m["result"] = {{"knee_k", report.knee_k},
                     {"range", {report.range_lo, report.range_hi}},
                     {"chosen_k", report.chosen_k},
                     {"flags", report.flags}};
      summary.outputs.push_back(dir / "run_manifest.json");
      std::vector<std::string> names;
      for (const auto& p : summary.outputs) names.push_back(p.filename().string());
      std::sort(names.begin(), names.end());
      m["outputs"] = names;
      write_text_file(summary.outputs.back(), m.dump(2) + "\n");
    });
  } catch (const StageError& e) {
    std::error_code ec;
    if (fs::is_directory(dir, ec)) {
      try {
        write_text_file(marker, "stage: " + e.stage() + "\nerror: " + std::string(e.what()) + "\n");
      } catch (const Error&) {
      }
    }
    throw;
  }
  return summary;
}

}  // namespace stemfactor
