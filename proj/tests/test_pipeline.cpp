#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "test_util.hpp"

#include "stemfactor/csv.hpp"
#include "stemfactor/pipeline.hpp"
#include "stemfactor/preprocess.hpp"
#include "stemfactor/synthetic.hpp"

using namespace stemfactor;
namespace fs = std::filesystem;

namespace {

// Runs the CLI with stdout/stderr captured to `log`; returns the exit status.
int cli(const std::string& args, const fs::path& log) {
  const std::string cmd = std::string("\"") + STEMFACTOR_CLI + "\" " + args + " > \"" + log.string() + "\" 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string q(const fs::path& p) { return "\"" + p.string() + "\""; }

fs::path small_stack(const fs::path& dir) {
  const auto stack = dir / "small.stem4d";
  const int rc = cli("generate -o " + q(stack) + " --m 10 --n 10 --px 12 --py 12 --k 3 --spots 3 --noise 0.01 --seed 4",
                     dir / "generate.log");
  REQUIRE(rc == 0);
  return stack;
}

const char* kFastFlags = " --k-min 2 --k-max 6 --max-iter 150 --psnr-floor 20";

}  // namespace

TEST_CASE("generate writes a reloadable stack and truth; bad arguments fail") {
  const auto dir = testutil::scratch_dir("pipe_generate");
  const auto stack = small_stack(dir);
  const auto s = load_stack(stack);
  CHECK(s.shape() == StackShape{10, 10, 12, 12});
  const auto truth = load_ground_truth(dir / "small.truth.json");
  CHECK(truth.k_true == 3);

  CHECK(cli("generate -o " + q(dir / "bad.stem4d") + " --k 0", dir / "bad.log") == 2);
  CHECK(cli("frobnicate", dir / "bad.log") == 2);

  // Same seed, same bytes.
  REQUIRE(cli("generate -o " + q(dir / "again.stem4d") +
                  " --m 10 --n 10 --px 12 --py 12 --k 3 --spots 3 --noise 0.01 --seed 4",
              dir / "again.log") == 0);
  CHECK(slurp(stack) == slurp(dir / "again.stem4d"));
}

TEST_CASE("empty input fails in the load stage and leaves a FAILED marker") {
  const auto dir = testutil::scratch_dir("pipe_empty");
  std::ofstream(dir / "empty.stem4d").close();
  const auto out = dir / "out";
  const int rc = cli("run -i " + q(dir / "empty.stem4d") + " -o " + q(out), dir / "run.log");
  CHECK(rc == 3);
  const auto log = slurp(dir / "run.log");
  CHECK(log.find("[load]") != std::string::npos);
  CHECK(log.find("MalformedHeader") != std::string::npos);
  REQUIRE(fs::exists(out / "FAILED"));
  CHECK(slurp(out / "FAILED").rfind("stage: load\n", 0) == 0);
}

TEST_CASE("stages run independently") {
  const auto dir = testutil::scratch_dir("pipe_stages");
  const auto stack = small_stack(dir);

  SUBCASE("sweep writes only the loss curve") {
    const auto out = dir / "sweep";
    REQUIRE(cli("stage sweep -i " + q(stack) + " -o " + q(out) + kFastFlags, dir / "sweep.log") == 0);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(out)) files.push_back(e.path().filename().string());
    CHECK(files == std::vector<std::string>{"loss_curve.csv"});
    const auto curve = read_loss_curve(out / "loss_curve.csv");
    CHECK(curve.k_values == std::vector<int>{2, 3, 4, 5, 6});
  }
  SUBCASE("maps without a factorization is a missing-upstream error") {
    const auto out = dir / "maps";
    const int rc = cli("stage maps -i " + q(stack) + " -o " + q(out) + " --factorization " + q(dir / "nowhere"),
                       dir / "maps.log");
    CHECK(rc != 0);
    CHECK(slurp(dir / "maps.log").find("MissingUpstream") != std::string::npos);
  }
  SUBCASE("decide on a loss CSV alone finds the knee") {
    const auto csv = dir / "loss.csv";
    std::ofstream(csv) << "k,loss\n1,10\n2,5\n3,2.5\n4,2.4\n5,2.3\n";
    const auto out = dir / "decide";
    REQUIRE(cli("decide --loss " + q(csv) + " -o " + q(out), dir / "decide.log") == 0);
    const auto report = DecisionReport::from_json(slurp(out / "decision.json"));
    CHECK(report.knee_k == 3);
    CHECK(report.chosen_k == 3);
    CHECK(report.flags == std::vector<std::string>{"level-1-only"});
  }
  SUBCASE("filter, factorize and maps chain through files") {
    const auto out = dir / "chain";
    fs::create_directories(out);
    REQUIRE(cli("filter -i " + q(stack) + " --to " + q(out / "filtered.stem4d"), dir / "f.log") == 0);
    const auto filtered = load_stack(out / "filtered.stem4d");
    const auto expected = mean_filter(load_stack(stack));
    CHECK(std::equal(filtered.data().begin(), filtered.data().end(), expected.data().begin()));
    REQUIRE(cli("factorize -i " + q(stack) + " -o " + q(out) + " --k 3", dir / "fac.log") == 0);
    CHECK(fs::exists(out / "W.npy"));
    CHECK(fs::exists(out / "H.npy"));
    REQUIRE(cli("maps -i " + q(stack) + " -o " + q(out) + " --factorization " + q(out), dir / "maps.log") == 0);
    CHECK(fs::exists(out / "overlap.png"));
    CHECK(fs::exists(out / "maps.json"));
  }
}

TEST_CASE("TOML configuration") {
  const auto dir = testutil::scratch_dir("pipe_toml");
  const auto good = dir / "good.toml";
  std::ofstream(good) << "input = \"a.stem4d\"\nk_min = 3\nk_max = 9\n\n[decide]\ntau = 0.1\npsnr_gate = \"mean\"\n";
  const auto c = PipelineConfig::from_toml(good);
  CHECK(c.input == "a.stem4d");
  CHECK(c.k_min == 3);
  CHECK(c.k_max == 9);
  CHECK(c.tau == 0.1);
  CHECK(c.psnr_gate == PsnrGate::Mean);
  CHECK(c.half_width == 4);

  const auto round = PipelineConfig::from_json(c.to_json());
  CHECK(round.to_json() == c.to_json());

  const auto bad = dir / "bad.toml";
  std::ofstream(bad) << "k_mni = 3\n";
  CHECK(testutil::error_code_of([&] { PipelineConfig::from_toml(bad); }) == ErrorCode::ConfigError);
  CHECK(cli("run --config " + q(bad), dir / "bad.log") == 2);

  PipelineConfig narrow;
  narrow.k_min = 4;
  narrow.k_max = 5;
  CHECK(testutil::error_code_of([&] { narrow.validate(); }) == ErrorCode::ConfigError);
}

TEST_CASE("full run is reproducible and can be replayed from its manifest") {
  const auto dir = testutil::scratch_dir("pipe_run");
  const auto stack = small_stack(dir);
  const auto a = dir / "a";
  const auto b = dir / "b";
  REQUIRE(cli("run -i " + q(stack) + " -o " + q(a) + kFastFlags, dir / "a.log") == 0);
  for (const char* f : {"loss_curve.csv", "decision.json", "W.npy", "H.npy", "labels.png", "overlap.png",
                        "ratio.png", "legend.json", "run_manifest.json", "nsd.csv"})
    CHECK_MESSAGE(fs::exists(a / f), f);

  const auto manifest = nlohmann::json::parse(slurp(a / "run_manifest.json"));
  CHECK(manifest["result"]["chosen_k"].get<int>() >= 2);
  CHECK(manifest["seeds"]["per_k"].size() == 5);

  REQUIRE(cli("run --manifest " + q(a / "run_manifest.json") + " -o " + q(b), dir / "b.log") == 0);
  for (const char* f : {"loss_curve.csv", "decision.json", "W.npy", "H.npy", "overlap.png"})
    CHECK_MESSAGE(slurp(a / f) == slurp(b / f), f);
}
