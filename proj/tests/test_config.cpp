#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "anneal/config.hpp"
#include "anneal/runner.hpp"

using namespace anneal;
namespace fs = std::filesystem;

namespace {

std::string field_of(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<accepted>";
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("anneal_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Config, DefaultsValidate) {
  const auto c = parse_config("{}");
  EXPECT_EQ(c.al.k, 40u);
  EXPECT_EQ(c.al.uncertain_pool_multiplier, 4u);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{1, 2, 3}));
}

TEST(Config, ErrorsNameTheField) {
  EXPECT_EQ(field_of(R"({"kk": 3})"), "kk");
  EXPECT_EQ(field_of(R"({"synthetic": {"clases": 3}})"), "synthetic.clases");
  EXPECT_EQ(field_of(R"({"k": "forty"})"), "k");
  EXPECT_EQ(field_of(R"({"k": -1})"), "k");
  EXPECT_EQ(field_of(R"({"beta": 1.5})"), "beta");
  EXPECT_EQ(field_of(R"({"margin": 2})"), "margin");
  EXPECT_EQ(field_of(R"({"seed_fraction": 0})"), "seed_fraction");
  EXPECT_EQ(field_of(R"({"learning_rate": 0})"), "learning_rate");
  EXPECT_EQ(field_of(R"({"strategy": "greedy"})"), "strategy");
  EXPECT_EQ(field_of(R"({"encoder_hidden": [8, 0]})"), "encoder_hidden[1]");
  EXPECT_EQ(field_of(R"({"seeds": [1, "x"]})"), "seeds[1]");
  EXPECT_EQ(field_of(R"({"tcal_rounding": "ceil"})"), "tcal_rounding");
  EXPECT_EQ(field_of(R"({"head_dims": [8]})"), "head_dims");
  EXPECT_EQ(field_of("[1, 2]"), "<root>");
  EXPECT_EQ(field_of("{not json"), "<root>");
}

TEST(Config, JsonRoundTripIsLossless) {
  auto c = parse_config(R"({"k": 12, "beta": 0.25, "strategy": "anneal-u", "seeds": [4, 5],
                            "synthetic": {"classes": 3, "stddev": 1.5}, "tcal_rounding": "floor",
                            "encoder_hidden": [7, 5], "retrain_from_scratch": true})");
  const auto j = config_to_json(c);
  const auto back = parse_config(j.dump());
  EXPECT_EQ(config_to_json(back), j);
  EXPECT_EQ(back.al.strategy, Strategy::anneal_u);
  EXPECT_EQ(back.synthetic.classes, 3);
  EXPECT_EQ(back.tcal_rounding, tcal::Rounding::floor);
}

TEST(Config, ShippedConfigsLoad) {
  for (const char* name : {"desk.json", "desk_hard.json"}) {
    const auto c = load_config(std::string(ANNEAL_SOURCE_DIR) + "/configs/" + name);
    EXPECT_EQ(c.al.k, 40u) << name;
    EXPECT_EQ(c.al.budget_bits, 400.0) << name;
  }
}

TEST(GitBlobSha1, MatchesGitHashObject) {
  EXPECT_EQ(git_blob_sha1("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
  EXPECT_EQ(git_blob_sha1(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
}

TEST(Dataset, CsvAndSyntheticHashAgree) {
  ExperimentConfig c;
  c.synthetic = {3, 10, 2, 0.5, 9};
  const auto syn = materialize_dataset(c);
  const auto dir = temp_dir("hash");
  const auto path = (dir / "d.csv").string();
  {
    std::ofstream os(path, std::ios::binary);
    os << dataset_to_csv(generate_synthetic(3, 10, 2, 0.5, 9));
  }
  c.dataset_path = path;
  const auto file = materialize_dataset(c);
  EXPECT_EQ(syn.content_hash, file.content_hash);
  EXPECT_EQ(file.source, path);
  EXPECT_EQ(file.data.size(), 30u);
  fs::remove_all(dir);
}

TEST(Manifest, RecordsConfigDatasetAndVersion) {
  ExperimentConfig c;
  c.synthetic = {3, 10, 2, 0.5, 9};
  const auto ds = materialize_dataset(c);
  const auto m = run_manifest(c, ds, "random", 4);
  EXPECT_EQ(m["strategy"], "random");
  EXPECT_EQ(m["seed"], 4);
  EXPECT_EQ(m["dataset"]["git_blob_sha1"], ds.content_hash);
  EXPECT_EQ(m["dataset"]["images"], 30);
  EXPECT_EQ(m["code_version"], kVersion);
  EXPECT_EQ(m["config"], config_to_json(c));
}

TEST(Runner, StrategyNamesChecked) {
  for (const auto& s : known_strategies()) EXPECT_NO_THROW(check_strategy_name(s));
  EXPECT_THROW(check_strategy_name("greedy"), ConfigError);
}

TEST(Runner, CombinedTableAveragesPresentCells) {
  std::map<CellKey, std::vector<HistoryRow>> cells;
  cells[{"random", 1}] = {{0, 10, "random", 1, 0.2, 10, 0}, {1, 20, "random", 1, 0.4, 20, 0}};
  cells[{"random", 2}] = {{0, 12, "random", 2, 0.6, 12, 0}};
  std::ostringstream os;
  write_combined(os, {"random"}, {1, 2}, cells);
  EXPECT_EQ(os.str(),
            "strategy,iteration,bits,map_at_5_mean,map_at_5_seed1,map_at_5_seed2,bits_seed1,bits_seed2\n"
            "random,0,11,0.4,0.2,0.6,10,12\n"
            "random,1,20,0.4,0.4,,20,\n");
}

TEST(Runner, CompareWritesCellsAndCombined) {
  ExperimentConfig c = parse_config(R"({"synthetic": {"classes": 3, "per_class": 20, "dim": 4, "stddev": 0.5},
      "k": 4, "budget_bits": 8, "iterations_max": 2, "epochs_per_iteration": 1, "seed_fraction": 0.1,
      "per_seed_similar": 2, "per_seed_dissimilar": 2, "encoder_hidden": [4], "embedding_dim": 3,
      "head_dims": [3, 3, 3]})");
  const auto ds = materialize_dataset(c);
  const auto dir = temp_dir("compare");
  const auto r = run_compare(c, ds, {"anneal", "random", "tcal"}, {1, 2}, dir.string(), 2);
  EXPECT_TRUE(r.failures.empty());
  EXPECT_EQ(r.cells.size(), 6u);
  for (const char* s : {"anneal", "random", "tcal"})
    for (const char* seed : {"seed1", "seed2"}) {
      EXPECT_TRUE(fs::exists(dir / s / seed / "results.csv"));
      EXPECT_TRUE(fs::exists(dir / s / seed / "manifest.json"));
    }
  EXPECT_TRUE(fs::exists(dir / "anneal" / "seed1" / "model.ckpt"));
  EXPECT_FALSE(fs::exists(dir / "failures.csv"));

  // combined mean equals the mean of the per-seed files
  std::ifstream a((dir / "random" / "seed1" / "results.csv").string()),
      b((dir / "random" / "seed2" / "results.csv").string());
  const auto ra = parse_results(a), rb = parse_results(b);
  std::ifstream comb(r.combined_path);
  std::string line;
  std::getline(comb, line);
  bool found = false;
  while (std::getline(comb, line))
    if (line.rfind("random,1,", 0) == 0) {
      std::vector<std::string> f;
      std::stringstream ss(line);
      for (std::string x; std::getline(ss, x, ',');) f.push_back(x);
      EXPECT_NEAR(std::stod(f[3]), (ra[1].map_at_5 + rb[1].map_at_5) / 2, 1e-8);
      found = true;
    }
  EXPECT_TRUE(found);
  fs::remove_all(dir);
}
