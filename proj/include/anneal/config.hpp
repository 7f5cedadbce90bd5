#pragma once

// Experiment configuration files (JSON), dataset materialization and run
// manifests.

#include <openssl/evp.h>

#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "anneal/al_engine.hpp"
#include "anneal/data_pool.hpp"
#include "anneal/error.hpp"
#include "anneal/tcal.hpp"
#include "json.hpp"

#ifndef ANNEAL_VERSION
#define ANNEAL_VERSION "0.0.0"
#endif

namespace anneal {

inline constexpr const char* kVersion = ANNEAL_VERSION;

struct SyntheticSpec {
  int classes = 10;
  int per_class = 100;
  int dim = 64;
  double stddev = 0.3;
  std::uint64_t seed = 7;

  friend bool operator==(const SyntheticSpec&, const SyntheticSpec&) = default;
};

struct ExperimentConfig {
  std::string dataset_path;              // empty: use `synthetic`
  SyntheticSpec synthetic;
  std::uint64_t split_seed = 0;          // only for CSV rows without a split
  ALConfig al;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  double tcal_learning_rate = 1e-3;
  tcal::Rounding tcal_rounding = tcal::Rounding::exact;
  std::string output_dir = "out";
  double oracle_timeout_seconds = 0.0;   // 0: wait indefinitely

  void validate() const {
    al.validate();
    if (dataset_path.empty()) {
      if (synthetic.classes < 2) throw ConfigError("synthetic.classes", "must be at least 2");
      if (synthetic.per_class < 1) throw ConfigError("synthetic.per_class", "must be at least 1");
      if (synthetic.dim < 1) throw ConfigError("synthetic.dim", "must be at least 1");
      if (!(synthetic.stddev >= 0) || !std::isfinite(synthetic.stddev))
        throw ConfigError("synthetic.stddev", "must be a finite value >= 0");
    }
    if (seeds.empty()) throw ConfigError("seeds", "must list at least one seed");
    if (!(tcal_learning_rate > 0) || !std::isfinite(tcal_learning_rate))
      throw ConfigError("tcal_learning_rate", "must be a finite value > 0");
    if (output_dir.empty()) throw ConfigError("output_dir", "must not be empty");
    if (!(oracle_timeout_seconds >= 0) || !std::isfinite(oracle_timeout_seconds))
      throw ConfigError("oracle_timeout_seconds", "must be a finite value >= 0");
  }
};

namespace detail {

using nlohmann::json;

template <class T>
T get_field(const json& j, const std::string& field);

template <>
inline bool get_field<bool>(const json& j, const std::string& field) {
  if (!j.is_boolean()) throw ConfigError(field, "expected true or false");
  return j.get<bool>();
}

template <>
inline double get_field<double>(const json& j, const std::string& field) {
  if (!j.is_number()) throw ConfigError(field, "expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(field, "must be finite");
  return v;
}

template <>
inline std::uint64_t get_field<std::uint64_t>(const json& j, const std::string& field) {
  if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0))
    throw ConfigError(field, "expected a non-negative integer");
  return j.get<std::uint64_t>();
}

template <>
inline int get_field<int>(const json& j, const std::string& field) {
  const auto v = get_field<std::uint64_t>(j, field);
  if (v > static_cast<std::uint64_t>(std::numeric_limits<int>::max()))
    throw ConfigError(field, "value too large");
  return static_cast<int>(v);
}

template <>
inline std::string get_field<std::string>(const json& j, const std::string& field) {
  if (!j.is_string()) throw ConfigError(field, "expected a string");
  return j.get<std::string>();
}

inline std::vector<std::size_t> get_dims(const json& j, const std::string& field) {
  if (!j.is_array()) throw ConfigError(field, "expected a list of layer widths");
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const auto v = get_field<std::uint64_t>(j[i], field + "[" + std::to_string(i) + "]");
    if (v == 0) throw ConfigError(field + "[" + std::to_string(i) + "]", "must be positive");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

inline void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& prefix) {
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError(prefix + key, "unknown key");
}

}  // namespace detail

/// Applies the keys present in `j` on top of `cfg`. Unknown keys, wrong
/// types and out-of-range values raise ConfigError naming the field.
inline void apply_config_json(ExperimentConfig& cfg, const nlohmann::json& j) {
  using detail::get_field;
  if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  static const std::set<std::string> known = {
      "dataset_path", "synthetic", "split_seed", "k", "uncertain_pool_multiplier", "beta", "margin",
      "learning_rate", "budget_bits", "iterations_max", "strategy", "seed", "epochs_per_iteration",
      "batch_size", "retrain_from_scratch", "seed_fraction", "per_seed_similar",
      "per_seed_dissimilar", "encoder_hidden", "embedding_dim", "head_dims", "eval_k", "threads",
      "seeds", "tcal_learning_rate", "tcal_rounding", "output_dir", "oracle_timeout_seconds"};
  detail::reject_unknown(j, known, "");

  auto& a = cfg.al;
  for (const auto& [key, v] : j.items()) {
    if (key == "dataset_path") cfg.dataset_path = get_field<std::string>(v, key);
    else if (key == "synthetic") {
      if (!v.is_object()) throw ConfigError(key, "expected an object");
      detail::reject_unknown(v, {"classes", "per_class", "dim", "stddev", "seed"}, "synthetic.");
      for (const auto& [sk, sv] : v.items()) {
        const std::string f = "synthetic." + sk;
        if (sk == "classes") cfg.synthetic.classes = get_field<int>(sv, f);
        else if (sk == "per_class") cfg.synthetic.per_class = get_field<int>(sv, f);
        else if (sk == "dim") cfg.synthetic.dim = get_field<int>(sv, f);
        else if (sk == "stddev") cfg.synthetic.stddev = get_field<double>(sv, f);
        else cfg.synthetic.seed = get_field<std::uint64_t>(sv, f);
      }
    }
    else if (key == "split_seed") cfg.split_seed = get_field<std::uint64_t>(v, key);
    else if (key == "k") a.k = get_field<std::uint64_t>(v, key);
    else if (key == "uncertain_pool_multiplier") a.uncertain_pool_multiplier = get_field<std::uint64_t>(v, key);
    else if (key == "beta") a.beta = get_field<double>(v, key);
    else if (key == "margin") a.margin = get_field<double>(v, key);
    else if (key == "learning_rate") a.learning_rate = get_field<double>(v, key);
    else if (key == "budget_bits") a.budget_bits = get_field<double>(v, key);
    else if (key == "iterations_max") a.iterations_max = get_field<std::uint64_t>(v, key);
    else if (key == "strategy") {
      try {
        a.strategy = strategy_from_string(get_field<std::string>(v, key));
      } catch (const ConfigError&) {
        throw;
      } catch (const Error& e) {
        throw ConfigError(key, e.what());
      }
    }
    else if (key == "seed") a.seed = get_field<std::uint64_t>(v, key);
    else if (key == "epochs_per_iteration") a.epochs_per_iteration = get_field<std::uint64_t>(v, key);
    else if (key == "batch_size") a.batch_size = get_field<std::uint64_t>(v, key);
    else if (key == "retrain_from_scratch") a.retrain_from_scratch = get_field<bool>(v, key);
    else if (key == "seed_fraction") a.seed_fraction = get_field<double>(v, key);
    else if (key == "per_seed_similar") a.per_seed_similar = get_field<std::uint64_t>(v, key);
    else if (key == "per_seed_dissimilar") a.per_seed_dissimilar = get_field<std::uint64_t>(v, key);
    else if (key == "encoder_hidden") a.encoder_hidden = detail::get_dims(v, key);
    else if (key == "embedding_dim") a.embedding_dim = get_field<std::uint64_t>(v, key);
    else if (key == "head_dims") a.head_dims = detail::get_dims(v, key);
    else if (key == "eval_k") a.eval_k = get_field<std::uint64_t>(v, key);
    else if (key == "threads") a.threads = get_field<std::uint64_t>(v, key);
    else if (key == "seeds") {
      if (!v.is_array()) throw ConfigError(key, "expected a list of seeds");
      cfg.seeds.clear();
      for (std::size_t i = 0; i < v.size(); ++i)
        cfg.seeds.push_back(get_field<std::uint64_t>(v[i], "seeds[" + std::to_string(i) + "]"));
    }
    else if (key == "tcal_learning_rate") cfg.tcal_learning_rate = get_field<double>(v, key);
    else if (key == "tcal_rounding") cfg.tcal_rounding = tcal::rounding_from_string(get_field<std::string>(v, key));
    else if (key == "output_dir") cfg.output_dir = get_field<std::string>(v, key);
    else if (key == "oracle_timeout_seconds") cfg.oracle_timeout_seconds = get_field<double>(v, key);
  }
  if (!(a.seed_fraction > 0.0 && a.seed_fraction <= 1.0))
    throw ConfigError("seed_fraction", "must be in (0, 1]");
  if (a.learning_rate <= 0.0) throw ConfigError("learning_rate", "must be > 0");
  if (a.margin < -1.0 || a.margin > 1.0) throw ConfigError("margin", "must be in [-1, 1]");
  if (a.beta < 0.0 || a.beta > 1.0) throw ConfigError("beta", "must be in [0, 1]");
  cfg.validate();
}

inline ExperimentConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  apply_config_json(cfg, j);
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

/// Full config as JSON, every key explicit. parse_config(to_json(c)) == c.
inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json j;
  if (!c.dataset_path.empty()) j["dataset_path"] = c.dataset_path;
  j["synthetic"] = {{"classes", c.synthetic.classes},
                    {"per_class", c.synthetic.per_class},
                    {"dim", c.synthetic.dim},
                    {"stddev", c.synthetic.stddev},
                    {"seed", c.synthetic.seed}};
  j["split_seed"] = c.split_seed;
  const auto& a = c.al;
  j["k"] = a.k;
  j["uncertain_pool_multiplier"] = a.uncertain_pool_multiplier;
  j["beta"] = a.beta;
  j["margin"] = a.margin;
  j["learning_rate"] = a.learning_rate;
  j["budget_bits"] = a.budget_bits;
  j["iterations_max"] = a.iterations_max;
  j["strategy"] = to_string(a.strategy);
  j["seed"] = a.seed;
  j["epochs_per_iteration"] = a.epochs_per_iteration;
  j["batch_size"] = a.batch_size;
  j["retrain_from_scratch"] = a.retrain_from_scratch;
  j["seed_fraction"] = a.seed_fraction;
  j["per_seed_similar"] = a.per_seed_similar;
  j["per_seed_dissimilar"] = a.per_seed_dissimilar;
  j["encoder_hidden"] = a.encoder_hidden;
  j["embedding_dim"] = a.embedding_dim;
  j["head_dims"] = a.head_dims;
  j["eval_k"] = a.eval_k;
  j["threads"] = a.threads;
  j["seeds"] = c.seeds;
  j["tcal_learning_rate"] = c.tcal_learning_rate;
  j["tcal_rounding"] = tcal::to_string(c.tcal_rounding);
  j["output_dir"] = c.output_dir;
  j["oracle_timeout_seconds"] = c.oracle_timeout_seconds;
  return j;
}

// --- datasets -----------------------------------------------------------------------

struct LoadedDataset {
  Dataset data;
  std::string content_hash;  // git blob SHA-1 of the CSV bytes
  std::string source;
};

/// SHA-1 of "blob <size>\0<bytes>", as `git hash-object` prints it.
inline std::string git_blob_sha1(std::string_view bytes) {
  const std::string header = "blob " + std::to_string(bytes.size()) + '\0';
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || !EVP_DigestInit_ex(ctx.get(), EVP_sha1(), nullptr) ||
      !EVP_DigestUpdate(ctx.get(), header.data(), header.size()) ||
      !EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) ||
      !EVP_DigestFinal_ex(ctx.get(), md, &len))
    throw Error("SHA-1 computation failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned char b : std::span(md, len)) {
    out += hex[b >> 4];
    out += hex[b & 15];
  }
  return out;
}

inline LoadedDataset materialize_dataset(const ExperimentConfig& cfg) {
  if (!cfg.dataset_path.empty()) {
    std::ifstream in(cfg.dataset_path, std::ios::binary);
    if (!in) throw Error("cannot open dataset '" + cfg.dataset_path + "'");
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    std::istringstream ss(bytes);
    return {Dataset(parse_dataset(ss, cfg.split_seed)), git_blob_sha1(bytes), cfg.dataset_path};
  }
  const auto& s = cfg.synthetic;
  auto records = generate_synthetic(s.classes, s.per_class, s.dim, s.stddev, s.seed);
  const auto csv = dataset_to_csv(records);
  return {Dataset(std::move(records)), git_blob_sha1(csv), "synthetic"};
}

inline nlohmann::json run_manifest(const ExperimentConfig& cfg, const LoadedDataset& ds,
                                   std::string_view strategy, std::uint64_t seed) {
  return {{"config", config_to_json(cfg)},
          {"strategy", strategy},
          {"seed", seed},
          {"dataset", {{"source", ds.source}, {"git_blob_sha1", ds.content_hash},
                       {"images", ds.data.size()}, {"classes", ds.data.num_classes()}}},
          {"code_version", kVersion}};
}

}  // namespace anneal
