#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "fedci/data.hpp"

using namespace fedci;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("fedci_test_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run(std::vector<std::string> args, std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  if (err_text) *err_text = err.str();
  return code;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

// Small sources: 3 of 30 rows, 2 covariates.
std::string small_config(const fs::path& dir) {
  const auto path = dir / "small.json";
  write(path, R"({"data":{"n":90,"m":3,"d_x":2,"split":{"train":10,"test":10,"val":10}},
                  "train":{"rounds":5,"mc_samples":2},"predict":{"draws":4}})");
  return path.string();
}

std::vector<std::string> source_files(const fs::path& dir, int m) {
  std::vector<std::string> out;
  for (int s = 0; s < m; ++s) out.push_back((dir / ("source_" + std::to_string(s) + ".csv")).string());
  return out;
}

std::vector<std::string> cat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

TEST_CASE("config defaults, round trip and unknown keys") {
  const cli::RunConfig def;
  CHECK(def.train.rounds == 500);
  CHECK(def.data.m == 5);
  const auto back = cli::RunConfig::from_json(def.to_json());
  CHECK(back.to_json() == def.to_json());
  CHECK(back.digest() == def.digest());
  CHECK(back.digest().size() == 64);

  const auto partial = cli::RunConfig::from_json(R"({"seed":4,"train":{"rounds":7}})");
  CHECK(partial.seed == 4);
  CHECK(partial.train.seed == 4);
  CHECK(partial.train.rounds == 7);
  CHECK(partial.train.mc_samples == def.train.mc_samples);
  CHECK(partial.digest() != def.digest());

  for (const char* bad : {R"({"train":{"lr_typo":1}})", R"({"extra":1})", R"({"data":{"split":{"tst":1}}})",
                          R"({"train":{"rounds":"many"}})", R"({"priors":{"v0":[1,2]}})", "{oops"}) {
    CAPTURE(bad);
    try {
      cli::RunConfig::from_json(bad);
      FAIL("expected InvalidConfig");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::InvalidConfig);
    }
  }
}

TEST_CASE("exit codes by error kind") {
  CHECK(cli::exit_code(ErrorKind::IoError) == 2);
  CHECK(cli::exit_code(ErrorKind::NonFiniteLoss) == 1);
  CHECK(cli::exit_code(ErrorKind::NotPositiveDefinite) == 1);
  CHECK(cli::exit_code(ErrorKind::MissingTruth) == 3);
  CHECK(cli::exit_code(ErrorKind::InvalidConfig) == 3);
  CHECK(cli::exit_code(ErrorKind::SchemaError) == 3);
}

TEST_CASE("generate writes byte-identical sources for a seed") {
  const auto dir = fresh_dir("generate");
  REQUIRE(run({"generate", "--seed", "0", "--out", (dir / "a").string()}) == 0);
  REQUIRE(run({"generate", "--seed", "0", "--out", (dir / "b").string()}) == 0);
  for (int s = 0; s < 5; ++s) {
    const std::string name = "source_" + std::to_string(s) + ".csv";
    const auto src = data::load_csv(dir / "a" / name);
    CHECK(src.size() == 1000);
    CHECK(src.truth.has_value());
    CHECK(slurp(dir / "a" / name) == slurp(dir / "b" / name));
  }
  CHECK(slurp(dir / "a" / "manifest.json") == slurp(dir / "b" / "manifest.json"));
  REQUIRE(run({"generate", "--seed", "1", "--out", (dir / "c").string()}) == 0);
  CHECK(slurp(dir / "a" / "source_0.csv") != slurp(dir / "c" / "source_0.csv"));

  std::string err;
  CHECK(run({"generate", "--variant", "data3", "--out", (dir / "d").string()}, &err) == 3);
  CHECK(err.find("data3") != std::string::npos);
  CHECK(run({"frobnicate"}) == 3);
  CHECK(run({}) == 3);
  CHECK(run({"--help"}) == 0);
}

TEST_CASE("flags override the config file") {
  const auto dir = fresh_dir("override");
  const auto cfg = small_config(dir);
  REQUIRE(run({"generate", "--config", cfg, "--seed", "3", "--out", (dir / "data").string()}) == 0);
  const auto files = source_files(dir / "data", 3);
  const auto manifest = nlohmann::json::parse(slurp(dir / "data" / "manifest.json"));
  CHECK(manifest["seed"] == 3);
  CHECK(manifest["m"] == 3);

  REQUIRE(run(cat({"train", "--config", cfg, "--seed", "3", "--rounds", "2", "--lr", "0.002", "--out",
                   (dir / "model").string(), "--sources"},
                  files)) == 0);
  const auto model = nlohmann::json::parse(slurp(dir / "model" / "model.json"));
  CHECK(model["config"]["train"]["rounds"] == 2);
  CHECK(model["config"]["train"]["learning_rate"] == 0.002);
  CHECK(model["config"]["train"]["mc_samples"] == 2);
  CHECK(model["ablate_g"] == false);
  CHECK(model["summaries"].size() == 3);
  std::ifstream trace(dir / "model" / "trace.csv");
  int lines = 0;
  for (std::string l; std::getline(trace, l);) ++lines;
  CHECK(lines == 3);

  REQUIRE(run(cat({"train", "--config", cfg, "--ablate-g", "--out", (dir / "ablated").string(), "--sources"},
                  files)) == 0);
  CHECK(nlohmann::json::parse(slurp(dir / "ablated" / "model.json"))["ablate_g"] == true);
}

TEST_CASE("error exits") {
  const auto dir = fresh_dir("errors");
  const auto cfg = small_config(dir);
  std::string err;
  CHECK(run({"train", "--sources", (dir / "nope.csv").string(), "--out", dir.string()}, &err) == 2);
  CHECK(err.find("IoError") != std::string::npos);
  CHECK(err.find("nope.csv") != std::string::npos);

  write(dir / "bad.json", R"({"train":{"learning_rat":1}})");
  CHECK(run({"generate", "--config", (dir / "bad.json").string(), "--out", dir.string()}) == 3);
  CHECK(run({"generate", "--config", (dir / "missing.json").string()}) == 2);
  CHECK(run({"train", "--config", cfg, "--rounds", "0", "--sources", "x.csv"}) == 3);
  CHECK(run({"train", "--config", cfg, "--transport", "udp", "--sources", "x.csv"}) == 3);

  // Sources without truth columns: train and predict work, evaluate refuses.
  REQUIRE(run({"generate", "--config", cfg, "--out", (dir / "data").string()}) == 0);
  std::vector<std::string> blind;
  for (const auto& f : source_files(dir / "data", 3)) {
    SourceData s = data::load_csv(f);
    s.truth.reset();
    const auto p = dir / ("blind_" + fs::path(f).filename().string());
    data::write_csv(p, s);
    blind.push_back(p.string());
  }
  REQUIRE(run(cat({"train", "--config", cfg, "--out", (dir / "m").string(), "--sources"}, blind)) == 0);
  REQUIRE(run(cat({"predict", "--config", cfg, "--model", (dir / "m" / "model.json").string(), "--out",
                   (dir / "p").string(), "--sources"},
                  blind)) == 0);
  CHECK(run(cat({"evaluate", "--config", cfg, "--pred", (dir / "p").string(), "--out", (dir / "p").string(),
                 "--sources"},
                blind),
            &err) == 3);
  CHECK(err.find("MissingTruth") != std::string::npos);
}

TEST_CASE("predict is deterministic and evaluate reads its output") {
  const auto dir = fresh_dir("predict");
  const auto cfg = small_config(dir);
  REQUIRE(run({"generate", "--config", cfg, "--out", (dir / "data").string()}) == 0);
  const auto files = source_files(dir / "data", 3);
  REQUIRE(run(cat({"train", "--config", cfg, "--out", (dir / "m").string(), "--sources"}, files)) == 0);
  const std::string model = (dir / "m" / "model.json").string();
  for (const char* out : {"p1", "p2"}) {
    REQUIRE(run(cat({"predict", "--config", cfg, "--model", model, "--part", "test", "--part", "val", "--out",
                     (dir / out).string(), "--sources"},
                    files)) == 0);
  }
  for (const char* f : {"effects.csv", "ate.json", "hist.csv"}) CHECK(slurp(dir / "p1" / f) == slurp(dir / "p2" / f));

  REQUIRE(run(cat({"evaluate", "--config", cfg, "--pred", (dir / "p1").string(), "--out", (dir / "p1").string(),
                   "--csv", (dir / "all.csv").string(), "--sources"},
                  files)) == 0);
  const auto metrics = nlohmann::json::parse(slurp(dir / "p1" / "metrics.json"));
  CHECK(metrics["per_split"].contains("test"));
  CHECK(metrics["per_split"].contains("val"));
  CHECK(metrics["sqrt_pehe"] == metrics["per_split"]["test"]["sqrt_pehe"]);
  CHECK(metrics["m_used"] == 3);

  // Model file missing or mangled.
  CHECK(run(cat({"predict", "--config", cfg, "--model", (dir / "none.json").string(), "--sources"}, files)) == 2);
  write(dir / "junk.json", "{}");
  CHECK(run(cat({"predict", "--config", cfg, "--model", (dir / "junk.json").string(), "--sources"}, files)) == 3);
}
