// stemfactor command-line front end.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "stemfactor/csv.hpp"
#include "stemfactor/error.hpp"
#include "stemfactor/pipeline.hpp"

namespace fs = std::filesystem;
using namespace stemfactor;

namespace {

struct Overrides {
  std::optional<std::string> config;
  std::optional<std::string> manifest;
  std::optional<std::string> input;
  std::optional<std::string> output;
  std::optional<std::string> filter;
  std::optional<int> k_min;
  std::optional<int> k_max;
  std::optional<int> max_iter;
  std::optional<double> tol;
  std::optional<double> epsilon;
  std::optional<std::uint64_t> seed;
  std::optional<double> tau;
  std::optional<int> half_width;
  std::optional<double> psnr_floor;
  std::optional<std::string> psnr_gate;
  std::optional<double> max_value;
  std::optional<double> ssim_c1, ssim_c2, ssim_c3;
  std::optional<double> ssim_alpha, ssim_beta, ssim_gamma;
  std::optional<double> gmsd_c;
  std::optional<double> mdsi_c1, mdsi_c2, mdsi_c3;
  std::optional<double> mdsi_alpha;
  std::vector<double> thresholds;
  std::optional<int> threads;
};

void add_config_options(CLI::App* app, Overrides& o, bool with_manifest = false) {
  app->add_option("--config", o.config, "TOML configuration file");
  if (with_manifest) app->add_option("--manifest", o.manifest, "rerun from a run_manifest.json");
  app->add_option("-i,--input", o.input, "input stack (.stem4d container or .npy)");
  app->add_option("-o,--output", o.output, "output directory");
  app->add_option("--filter", o.filter, "none | mean");
  app->add_option("--k-min", o.k_min);
  app->add_option("--k-max", o.k_max);
  app->add_option("--max-iter", o.max_iter);
  app->add_option("--tol", o.tol);
  app->add_option("--epsilon", o.epsilon);
  app->add_option("--seed", o.seed, "base seed; run k uses seed + k");
  app->add_option("--tau", o.tau, "knee threshold on relative loss improvement");
  app->add_option("--half-width", o.half_width);
  app->add_option("--psnr-floor", o.psnr_floor);
  app->add_option("--psnr-gate", o.psnr_gate, "min | mean");
  app->add_option("--max-value", o.max_value, "IQA dynamic range (default: pair maximum)");
  app->add_option("--ssim-c1", o.ssim_c1);
  app->add_option("--ssim-c2", o.ssim_c2);
  app->add_option("--ssim-c3", o.ssim_c3);
  app->add_option("--ssim-alpha", o.ssim_alpha);
  app->add_option("--ssim-beta", o.ssim_beta);
  app->add_option("--ssim-gamma", o.ssim_gamma);
  app->add_option("--gmsd-c", o.gmsd_c);
  app->add_option("--mdsi-c1", o.mdsi_c1);
  app->add_option("--mdsi-c2", o.mdsi_c2);
  app->add_option("--mdsi-c3", o.mdsi_c3);
  app->add_option("--mdsi-alpha", o.mdsi_alpha);
  app->add_option("--thresholds", o.thresholds, "overlap thresholds, e.g. 0.75,0.8,0.85")->delimiter(',');
  app->add_option("--threads", o.threads, "worker cap (default: STEMFACTOR_THREADS or 1)");
}

template <typename T>
void set_if(const std::optional<T>& v, T& out) {
  if (v) out = *v;
}

PipelineConfig effective_config(const Overrides& o) {
  PipelineConfig c;
  if (o.manifest) c = PipelineConfig::from_json(read_text_file(*o.manifest));
  else if (o.config) c = PipelineConfig::from_toml(*o.config);
  if (o.input) c.input = *o.input;
  if (o.output) c.output_dir = *o.output;
  if (o.filter) c.filter = filter_mode_from_string(*o.filter);
  set_if(o.k_min, c.k_min);
  set_if(o.k_max, c.k_max);
  set_if(o.max_iter, c.nmf.max_iter);
  set_if(o.tol, c.nmf.tol);
  set_if(o.epsilon, c.nmf.epsilon);
  set_if(o.seed, c.nmf.seed);
  set_if(o.tau, c.tau);
  set_if(o.half_width, c.half_width);
  set_if(o.psnr_floor, c.psnr_floor);
  if (o.psnr_gate) {
    try {
      c.psnr_gate = psnr_gate_from_string(*o.psnr_gate);
    } catch (const Error& e) {
      fail(ErrorCode::ConfigError, e.message());
    }
  }
  if (o.max_value) c.iqa.max_value = o.max_value;
  if (o.ssim_c1) c.iqa.ssim_c1 = o.ssim_c1;
  if (o.ssim_c2) c.iqa.ssim_c2 = o.ssim_c2;
  if (o.ssim_c3) c.iqa.ssim_c3 = o.ssim_c3;
  set_if(o.ssim_alpha, c.iqa.ssim_alpha);
  set_if(o.ssim_beta, c.iqa.ssim_beta);
  set_if(o.ssim_gamma, c.iqa.ssim_gamma);
  if (o.gmsd_c) c.iqa.gmsd_c = o.gmsd_c;
  if (o.mdsi_c1) c.iqa.mdsi_c1 = o.mdsi_c1;
  if (o.mdsi_c2) c.iqa.mdsi_c2 = o.mdsi_c2;
  if (o.mdsi_c3) c.iqa.mdsi_c3 = o.mdsi_c3;
  set_if(o.mdsi_alpha, c.iqa.mdsi_alpha);
  if (!o.thresholds.empty()) c.thresholds = o.thresholds;
  return c;
}

void print_paths(const std::vector<fs::path>& paths) {
  for (const auto& p : paths) std::cout << p.string() << "\n";
}

struct GenerateArgs {
  std::string config;
  std::string output = "synthetic.stem4d";
  std::optional<std::string> truth;
  std::optional<std::size_t> m, n, px, py, k, spots;
  std::optional<double> noise;
  std::optional<std::uint64_t> seed;
  std::optional<bool> beam;
  std::vector<std::string> overlaps;
};

OverlapRegion parse_overlap(const std::string& text) {
  const auto f = split_csv_line(text);
  if (f.size() != 7) fail(ErrorCode::ConfigError, "--overlap expects row0,col0,rows,cols,a,b,mix");
  try {
    OverlapRegion r;
    r.row0 = std::stoul(f[0]);
    r.col0 = std::stoul(f[1]);
    r.rows = std::stoul(f[2]);
    r.cols = std::stoul(f[3]);
    r.cluster_a = std::stoul(f[4]);
    r.cluster_b = std::stoul(f[5]);
    r.mix = std::stod(f[6]);
    return r;
  } catch (const std::exception&) {
    fail(ErrorCode::ConfigError, "cannot parse --overlap '" + text + "'");
  }
}

int exit_code_for(const Error& e) { return static_cast<int>(category_of(e.code())); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stemfactor: NMF clustering of 4D scanning diffraction stacks"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* generate = app.add_subcommand("generate", "write a seeded synthetic stack and its ground truth");
  generate->add_option("--config", gen.config, "TOML file with a [generate] table");
  generate->add_option("-o,--output", gen.output, "stack path (.stem4d or .npy)");
  generate->add_option("--truth", gen.truth, "ground-truth JSON path (default: <output>.truth.json)");
  generate->add_option("--m", gen.m);
  generate->add_option("--n", gen.n);
  generate->add_option("--px", gen.px);
  generate->add_option("--py", gen.py);
  generate->add_option("--k", gen.k, "number of true clusters");
  generate->add_option("--noise", gen.noise, "Gaussian noise sigma (peak = 1)");
  generate->add_option("--seed", gen.seed);
  generate->add_option("--spots", gen.spots, "spots per basis pattern");
  generate->add_option("--direct-beam", gen.beam, "shared central spot (true/false)");
  generate->add_option("--overlap", gen.overlaps, "row0,col0,rows,cols,a,b,mix (repeatable)");

  std::string convert_from, convert_to;
  auto* convert = app.add_subcommand("convert", "re-encode a stack; formats follow the extensions");
  convert->add_option("from", convert_from)->required();
  convert->add_option("to", convert_to)->required();

  Overrides o;
  std::string filter_out;
  auto* filter = app.add_subcommand("filter", "apply the configured scan-space filter to a stack");
  add_config_options(filter, o);
  filter->add_option("--to", filter_out, "output stack path")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "k sweep, writes loss_curve.csv");
  add_config_options(sweep_cmd, o);

  std::string loss_csv;
  auto* decide = app.add_subcommand("decide", "knee, range and (with --input) the level-2 choice");
  add_config_options(decide, o);
  decide->add_option("--loss", loss_csv, "loss curve CSV")->required();

  std::optional<int> fac_k;
  std::optional<std::string> decision;
  auto* factorize = app.add_subcommand("factorize", "single factorization at k (or the decision's chosen k)");
  add_config_options(factorize, o);
  factorize->add_option("--k", fac_k);
  factorize->add_option("--decision", decision, "decision.json providing chosen_k");

  std::string fac_dir;
  auto* maps = app.add_subcommand("maps", "cluster, ratio and overlap maps from W.npy / H.npy");
  add_config_options(maps, o);
  maps->add_option("--factorization", fac_dir, "directory holding W.npy and H.npy")->required();

  auto* run = app.add_subcommand("run", "full pipeline");
  add_config_options(run, o, true);

  std::string stage_name;
  auto* stage = app.add_subcommand("stage", "run one stage: filter | sweep | decide | factorize | maps");
  stage->add_option("name", stage_name)->required()->check(
      CLI::IsMember({"filter", "sweep", "decide", "factorize", "maps"}));
  add_config_options(stage, o);
  stage->add_option("--to", filter_out, "filter: output stack path");
  stage->add_option("--loss", loss_csv, "decide: loss curve CSV");
  stage->add_option("--k", fac_k, "factorize: component count");
  stage->add_option("--decision", decision, "factorize: decision.json");
  stage->add_option("--factorization", fac_dir, "maps: directory holding W.npy and H.npy");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (generate->parsed()) {
      SyntheticSpec spec;
      if (!gen.config.empty())
        if (auto s = synthetic_spec_from_toml(gen.config)) spec = *s;
      set_if(gen.m, spec.m);
      set_if(gen.n, spec.n);
      set_if(gen.px, spec.px);
      set_if(gen.py, spec.py);
      set_if(gen.k, spec.k_true);
      set_if(gen.noise, spec.noise_sigma);
      set_if(gen.seed, spec.seed);
      set_if(gen.spots, spec.spots_per_pattern);
      set_if(gen.beam, spec.direct_beam);
      for (const auto& text : gen.overlaps) spec.overlaps.push_back(parse_overlap(text));
      std::optional<fs::path> truth;
      if (gen.truth) truth = *gen.truth;
      const auto out = cmd_generate(spec, gen.output, truth);
      print_paths({out.stack, out.truth});
      return 0;
    }
    if (convert->parsed()) {
      cmd_convert(convert_from, convert_to);
      return 0;
    }

    const PipelineConfig config = effective_config(o);
    std::string which = stage->parsed() ? stage_name : "";
    if (filter->parsed()) which = "filter";
    if (sweep_cmd->parsed()) which = "sweep";
    if (decide->parsed()) which = "decide";
    if (factorize->parsed()) which = "factorize";
    if (maps->parsed()) which = "maps";

    if (run->parsed()) {
      const RunSummary s = cmd_run(config, resolve_threads(o.threads));
      std::cout << "knee_k " << s.knee_k << "\nchosen_k " << s.chosen_k << "\n";
      print_paths(s.outputs);
      return 0;
    }
    if (which == "filter") {
      if (filter_out.empty()) fail(ErrorCode::ConfigError, "filter needs --to");
      print_paths(stage_filter(config, filter_out));
    } else if (which == "sweep") {
      print_paths(stage_sweep(config, resolve_threads(o.threads)));
    } else if (which == "decide") {
      if (loss_csv.empty()) fail(ErrorCode::ConfigError, "decide needs --loss");
      print_paths(stage_decide(config, loss_csv, resolve_threads(o.threads)));
    } else if (which == "factorize") {
      std::optional<fs::path> d;
      if (decision) d = *decision;
      print_paths(stage_factorize(config, fac_k, d));
    } else if (which == "maps") {
      if (fac_dir.empty()) fail(ErrorCode::MissingUpstream, "maps needs --factorization pointing at W.npy/H.npy");
      print_paths(stage_maps(config, fac_dir));
    }
    return 0;
  } catch (const StageError& e) {
    std::cerr << "error [" << e.stage() << "] " << to_string(e.code()) << ": " << e.message() << "\n";
    return exit_code_for(e);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
