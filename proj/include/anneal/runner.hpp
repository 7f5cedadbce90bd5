#pragma once

// One experiment cell (strategy x seed) written to a directory, and the
// seed-averaged comparison table built from several cells.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "anneal/al_engine.hpp"
#include "anneal/config.hpp"
#include "anneal/retrieval.hpp"
#include "anneal/tcal.hpp"

namespace anneal {

namespace fs = std::filesystem;

inline const std::vector<std::string>& known_strategies() {
  static const std::vector<std::string> s{"anneal", "anneal-u", "random", "tcal"};
  return s;
}

inline void check_strategy_name(const std::string& s) {
  const auto& k = known_strategies();
  if (std::find(k.begin(), k.end(), s) == k.end())
    throw ConfigError("strategy", "unknown strategy '" + s + "' (expected anneal, anneal-u, random or tcal)");
}

struct CellOutput {
  std::vector<HistoryRow> history;
  std::string results_path;
};

inline void write_json_file(const std::string& path, const nlohmann::json& j) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("cannot write '" + path + "'");
  os << j.dump(2) << '\n';
}

/// Runs `strategy` with seed `seed` against the simulated oracle and writes
/// results.csv, manifest.json and (pair strategies) model.ckpt to `dir`.
inline CellOutput run_cell(const ExperimentConfig& cfg, const LoadedDataset& ds,
                           const std::string& strategy, std::uint64_t seed, const std::string& dir) {
  check_strategy_name(strategy);
  fs::create_directories(dir);
  const std::string results = (fs::path(dir) / "results.csv").string();
  write_json_file((fs::path(dir) / "manifest.json").string(), run_manifest(cfg, ds, strategy, seed));

  ALConfig al = cfg.al;
  al.seed = seed;
  if (strategy == "tcal") {
    tcal::SimulatedClassOracle oracle(ds.data);
    auto r = tcal::run_tcal_experiment(ds.data, al, {cfg.tcal_learning_rate, cfg.tcal_rounding}, oracle, results);
    return {std::move(r.history), results};
  }
  al.strategy = strategy_from_string(strategy);
  SimulatedOracle oracle(ds.data);
  auto r = run_experiment(ds.data, al, oracle, results);
  save_checkpoint((fs::path(dir) / "model.ckpt").string(), r.state.model);
  return {std::move(r.state.history), results};
}

struct CellKey {
  std::string strategy;
  std::uint64_t seed = 0;
  auto operator<=>(const CellKey&) const = default;
};

/// strategy,iteration,bits,map_at_5_mean,map_at_5_seed<s>...,bits_seed<s>...
/// The mean runs over seeds that reached the iteration; missing cells are
/// left empty. `bits` is the mean of the per-seed bit counts.
inline void write_combined(std::ostream& os, const std::vector<std::string>& strategies,
                           const std::vector<std::uint64_t>& seeds,
                           const std::map<CellKey, std::vector<HistoryRow>>& cells) {
  os << "strategy,iteration,bits,map_at_5_mean";
  for (auto s : seeds) os << ",map_at_5_seed" << s;
  for (auto s : seeds) os << ",bits_seed" << s;
  os << '\n';
  for (const auto& st : strategies) {
    std::size_t iters = 0;
    for (auto s : seeds)
      if (auto it = cells.find({st, s}); it != cells.end()) iters = std::max(iters, it->second.size());
    for (std::size_t i = 0; i < iters; ++i) {
      std::vector<const HistoryRow*> rows;
      for (auto s : seeds) {
        auto it = cells.find({st, s});
        rows.push_back(it != cells.end() && i < it->second.size() ? &it->second[i] : nullptr);
      }
      double map_sum = 0.0, bits_sum = 0.0;
      std::size_t n = 0;
      for (auto* r : rows)
        if (r) {
          map_sum += r->map_at_5;
          bits_sum += r->bits;
          ++n;
        }
      os << st << ',' << i << ',' << format_sig9(bits_sum / static_cast<double>(n)) << ','
         << format_sig9(map_sum / static_cast<double>(n));
      for (auto* r : rows) os << ',' << (r ? format_sig9(r->map_at_5) : "");
      for (auto* r : rows) os << ',' << (r ? format_sig9(r->bits) : "");
      os << '\n';
    }
  }
}

struct CompareResult {
  std::map<CellKey, std::vector<HistoryRow>> cells;
  std::map<CellKey, std::string> failures;
  std::string combined_path;
};

/// Runs every (strategy, seed) cell, up to `jobs` at a time, into
/// `out/<strategy>/seed<s>/`, then writes `out/combined.csv`.
inline CompareResult run_compare(const ExperimentConfig& cfg, const LoadedDataset& ds,
                                 const std::vector<std::string>& strategies,
                                 const std::vector<std::uint64_t>& seeds, const std::string& out,
                                 std::size_t jobs) {
  for (const auto& s : strategies) check_strategy_name(s);
  if (strategies.empty()) throw ConfigError("strategies", "at least one strategy required");
  if (seeds.empty()) throw ConfigError("seeds", "at least one seed required");
  std::vector<CellKey> todo;
  for (const auto& st : strategies)
    for (auto s : seeds) todo.push_back({st, s});

  CompareResult res;
  std::mutex mu;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      CellKey key;
      {
        std::lock_guard lock(mu);
        if (next == todo.size()) return;
        key = todo[next++];
      }
      const auto dir = (fs::path(out) / key.strategy / ("seed" + std::to_string(key.seed))).string();
      try {
        auto cell = run_cell(cfg, ds, key.strategy, key.seed, dir);
        std::lock_guard lock(mu);
        res.cells[key] = std::move(cell.history);
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        res.failures[key] = e.what();
        log::warn("cell " + key.strategy + "/seed" + std::to_string(key.seed) + " failed: " + e.what());
      }
    }
  };
  const std::size_t n = std::max<std::size_t>(1, std::min(jobs, todo.size()));
  std::vector<std::thread> pool;
  for (std::size_t i = 1; i < n; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  fs::create_directories(out);
  res.combined_path = (fs::path(out) / "combined.csv").string();
  std::ofstream os(res.combined_path, std::ios::trunc);
  if (!os) throw Error("cannot write '" + res.combined_path + "'");
  write_combined(os, strategies, seeds, res.cells);
  if (!res.failures.empty()) {
    std::ofstream fo((fs::path(out) / "failures.csv").string(), std::ios::trunc);
    fo << "strategy,seed,error\n";
    for (const auto& [k, msg] : res.failures) {
      std::string clean = msg;
      std::replace(clean.begin(), clean.end(), ',', ';');
      std::replace(clean.begin(), clean.end(), '\n', ' ');
      fo << k.strategy << ',' << k.seed << ',' << clean << '\n';
    }
  }
  return res;
}

}  // namespace anneal
