#pragma once

// Batch orchestration: configuration, single stages and the full run.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stemfactor/decide.hpp"
#include "stemfactor/error.hpp"
#include "stemfactor/iqa.hpp"
#include "stemfactor/nmf.hpp"
#include "stemfactor/synthetic.hpp"

namespace stemfactor {

enum class FilterMode { None, Mean };
std::string_view to_string(FilterMode mode) noexcept;
FilterMode filter_mode_from_string(std::string_view name);

struct PipelineConfig {
  std::filesystem::path input;
  std::filesystem::path output_dir = "stemfactor_out";
  FilterMode filter = FilterMode::Mean;
  int k_min = 2;
  int k_max = 12;
  NmfConfig nmf;  // `k` is ignored; per-k seeds are nmf.seed + k
  double tau = 0.05;
  int half_width = 4;
  double psnr_floor = 40.0;
  PsnrGate psnr_gate = PsnrGate::Min;
  IqaParams iqa;
  std::vector<double> thresholds = {0.75, 0.80, 0.85, 0.90, 0.95};

  /// Throws ConfigError naming the offending key.
  void validate() const;

  /// Effective configuration as JSON, in a fixed key order.
  std::string to_json() const;
  /// Inverse of to_json; also accepts a run_manifest.json (uses its "config").
  static PipelineConfig from_json(const std::string& text);
  /// Keys missing from the file keep their defaults; unknown keys are errors.
  static PipelineConfig from_toml(const std::filesystem::path& path);
};

/// Parses the [generate] table of a TOML config, if present.
std::optional<SyntheticSpec> synthetic_spec_from_toml(const std::filesystem::path& path);

/// --threads, else STEMFACTOR_THREADS, else 1.
int resolve_threads(std::optional<int> flag);

/// Error raised by a pipeline stage; the message is prefixed with the stage.
class StageError : public Error {
 public:
  StageError(std::string stage, const Error& cause)
      : Error(cause.code(), "stage '" + stage + "': " + cause.message()), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

struct GenerateOutputs {
  std::filesystem::path stack;
  std::filesystem::path truth;
};
GenerateOutputs cmd_generate(const SyntheticSpec& spec, const std::filesystem::path& stack_path,
                             std::optional<std::filesystem::path> truth_path = std::nullopt);

/// Re-encodes a stack; the format follows each path's extension.
void cmd_convert(const std::filesystem::path& from, const std::filesystem::path& to);

/// Each stage writes into `out_dir` and returns the paths it created.
std::vector<std::filesystem::path> stage_filter(const PipelineConfig& config, const std::filesystem::path& out_path);
/// Input may be a stack or a rank-2 interchange matrix (px*py, m*n).
std::vector<std::filesystem::path> stage_sweep(const PipelineConfig& config, int threads);
/// Level 1 from the loss CSV; level 2 as well when config.input names a stack.
std::vector<std::filesystem::path> stage_decide(const PipelineConfig& config, const std::filesystem::path& loss_csv,
                                                int threads);
/// k from `k` or, when unset, from the decision report in the output directory.
std::vector<std::filesystem::path> stage_factorize(const PipelineConfig& config, std::optional<int> k,
                                                   std::optional<std::filesystem::path> decision = std::nullopt);
/// Needs W.npy and H.npy in `factorization_dir`; throws MissingUpstream otherwise.
std::vector<std::filesystem::path> stage_maps(const PipelineConfig& config,
                                              const std::filesystem::path& factorization_dir);

struct RunSummary {
  int knee_k = 0;
  int chosen_k = 0;
  std::vector<std::filesystem::path> outputs;
};

/// filter, sweep, level 1, level 2, final factorization, maps and renders.
/// On failure a FAILED marker naming the stage is written to the output
/// directory and a StageError is thrown.
RunSummary cmd_run(const PipelineConfig& config, int threads);

}  // namespace stemfactor
