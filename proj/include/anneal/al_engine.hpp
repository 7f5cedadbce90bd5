#pragma once

// Active-learning loop over image pairs: uncertainty scoring of the
// unlabeled pool, k-means diversity selection, oracle labeling, one-step
// transitive expansion, bit accounting and experiment orchestration.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <queue>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "anneal/data_pool.hpp"
#include "anneal/error.hpp"
#include "anneal/kmeans.hpp"
#include "anneal/nn.hpp"
#include "anneal/retrieval.hpp"
#include "anneal/similarity_model.hpp"
#include "json.hpp"

namespace anneal {

enum class Strategy { anneal, anneal_u, random };

inline const char* to_string(Strategy s) {
  switch (s) {
    case Strategy::anneal: return "anneal";
    case Strategy::anneal_u: return "anneal-u";
    case Strategy::random: return "random";
  }
  return "?";
}

inline Strategy strategy_from_string(std::string_view s) {
  if (s == "anneal") return Strategy::anneal;
  if (s == "anneal-u") return Strategy::anneal_u;
  if (s == "random") return Strategy::random;
  throw ConfigError("strategy", "unknown strategy '" + std::string(s) + "'");
}

struct ALConfig {
  std::size_t k = 40;                         // pairs annotated per iteration
  std::size_t uncertain_pool_multiplier = 4;  // h = multiplier * k
  double beta = 0.1;
  double margin = 0.1;
  double learning_rate = 1e-3;
  double budget_bits = 400;  // bits for queried pairs, beyond the initial set
  std::size_t iterations_max = 5;
  Strategy strategy = Strategy::anneal;
  std::uint64_t seed = 1;
  std::size_t epochs_per_iteration = 30;
  std::size_t batch_size = 32;
  bool retrain_from_scratch = false;

  double seed_fraction = 0.05;
  std::size_t per_seed_similar = 4;
  std::size_t per_seed_dissimilar = 4;

  std::vector<std::size_t> encoder_hidden{64, 32};
  std::size_t embedding_dim = 32;
  std::vector<std::size_t> head_dims{32, 32, 32};

  std::size_t eval_k = 5;
  std::size_t threads = 1;

  std::size_t h() const { return uncertain_pool_multiplier * k; }

  void validate() const {
    if (k < 1) throw ConfigError("k", "must be at least 1");
    if (uncertain_pool_multiplier < 2)
      throw ConfigError("uncertain_pool_multiplier", "must be at least 2 so that h > k");
    if (!(budget_bits >= 0) || !std::isfinite(budget_bits))
      throw ConfigError("budget_bits", "must be a finite value >= 0");
    if (batch_size < 1) throw ConfigError("batch_size", "must be at least 1");
    if (eval_k < 1) throw ConfigError("eval_k", "must be at least 1");
    if (threads < 1) throw ConfigError("threads", "must be at least 1");
    model_config(1).validate();
  }

  ModelConfig model_config(std::size_t input_dim) const {
    ModelConfig m;
    m.input_dim = input_dim;
    m.encoder_hidden = encoder_hidden;
    m.embedding_dim = embedding_dim;
    m.head_dims = head_dims;
    m.margin = margin;
    m.beta = beta;
    m.learning_rate = learning_rate;
    return m;
  }
};

// --- oracles -------------------------------------------------------------------

class Oracle {
 public:
  virtual ~Oracle() = default;
  /// One label per pair, in order. Throws OracleError when it cannot answer.
  virtual std::vector<int> label(std::span<const Pair> pairs) = 0;
  virtual Provenance provenance() const = 0;
};

/// Answers from hidden class labels: same class means similar.
class SimulatedOracle final : public Oracle {
 public:
  explicit SimulatedOracle(const Dataset& data) : data_(data) {}

  std::vector<int> label(std::span<const Pair> pairs) override {
    std::vector<int> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
      const auto& a = data_.at(p.a);
      const auto& b = data_.at(p.b);
      if (a.split != Split::train || b.split != Split::train)
        throw OracleError("pair " + pair_id(p) + " leaves the train split");
      out.push_back(a.oracle_class == b.oracle_class ? kSimilar : kDissimilar);
    }
    return out;
  }
  Provenance provenance() const override { return Provenance::simulated; }

 private:
  const Dataset& data_;
};

// --- cost model --------------------------------------------------------------------

enum class CostMode { pair, class_label };

/// n bits for n pair answers; n * log2(C) bits for n class labels.
inline double annotation_cost_bits(std::size_t n, CostMode mode, std::size_t classes = 2) {
  if (mode == CostMode::pair) return static_cast<double>(n);
  if (classes < 2) throw Error("annotation_cost_bits: need at least 2 classes");
  return static_cast<double>(n) * std::log2(static_cast<double>(classes));
}

// --- uncertainty -------------------------------------------------------------------

/// Distance of P(similar) from 0.5; lower is more uncertain.
inline double uncertainty_score(double y_hat) { return std::abs(y_hat - 0.5); }

struct ScoredPair {
  Pair pair;
  double score = 0.0;

  friend bool operator==(const ScoredPair&, const ScoredPair&) = default;
};

inline bool more_uncertain(const ScoredPair& x, const ScoredPair& y) {
  return x.score != y.score ? x.score < y.score : x.pair < y.pair;
}

namespace detail {

inline std::vector<ScoredPair> bottom_h(std::span<const ScoredPair> candidates, std::size_t h) {
  std::vector<ScoredPair> heap;  // max-heap under more_uncertain
  heap.reserve(h + 1);
  for (const auto& c : candidates) {
    if (h == 0) break;
    if (heap.size() < h) {
      heap.push_back(c);
      std::push_heap(heap.begin(), heap.end(), more_uncertain);
    } else if (more_uncertain(c, heap.front())) {
      std::pop_heap(heap.begin(), heap.end(), more_uncertain);
      heap.back() = c;
      std::push_heap(heap.begin(), heap.end(), more_uncertain);
    }
  }
  std::sort(heap.begin(), heap.end(), more_uncertain);
  return heap;
}

}  // namespace detail

/// The h most uncertain candidates, ordered by (score, pair key).
inline std::vector<ScoredPair> select_uncertain(std::span<const ScoredPair> candidates,
                                                std::size_t h) {
  if (candidates.size() < h)
    log::warn("select_uncertain: pool of " + std::to_string(candidates.size()) + " < h=" +
              std::to_string(h));
  return detail::bottom_h(candidates, h);
}

/// Embeddings of every train image under a frozen model plus the
/// classifier's first-layer partial products, so a pair's P(similar)
/// costs one hidden layer instead of two encoder passes.
class PairScorer {
 public:
  PairScorer(const SiameseModel& model, const Dataset& data)
      : model_(model), ids_(data.ids(Split::train)) {
    std::sort(ids_.begin(), ids_.end());
    const auto& first = model.classifier.layers.front();
    const std::size_t emb = model.encoder.out_dim();
    const std::size_t hidden = first.out_dim();
    emb_.resize(ids_.size());
    left_.resize(ids_.size());
    right_.resize(ids_.size());
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      emb_[i] = embed(model, data.features(ids_[i]));
      left_[i].assign(hidden, 0.0);
      right_[i].assign(hidden, 0.0);
      for (std::size_t o = 0; o < hidden; ++o) {
        const auto row = first.weights.row(o);
        double l = 0.0, r = 0.0;
        for (std::size_t d = 0; d < emb; ++d) {
          l += row[d] * emb_[i][d];
          r += row[emb + d] * emb_[i][d];
        }
        left_[i][o] = l;
        right_[i][o] = r;
      }
    }
  }

  /// Train ids in ascending order; indices below refer to this order.
  const std::vector<ImageId>& ids() const noexcept { return ids_; }
  const nn::Vector& embedding(std::size_t i) const { return emb_[i]; }

  /// P(similar) for (ids[i], ids[j]) with i < j, i.e. canonical order.
  double y_hat(std::size_t i, std::size_t j, nn::Vector& a, nn::Vector& b) const {
    const auto& layers = model_.classifier.layers;
    const auto& first = layers.front();
    const std::size_t hidden = first.out_dim();
    a.resize(hidden);
    for (std::size_t o = 0; o < hidden; ++o)
      a[o] = nn::activate(first.activation, first.bias[o] + left_[i][o] + right_[j][o]);
    nn::Vector pre;
    for (std::size_t l = 1; l < layers.size(); ++l) {
      nn::dense_apply(layers[l], a, pre, b);
      a.swap(b);
    }
    return a[0];
  }

  double y_hat(std::size_t i, std::size_t j) const {
    nn::Vector a, b;
    return y_hat(i, j, a, b);
  }

  /// [f_a || f_b] in canonical order.
  nn::Vector representation(std::size_t i, std::size_t j) const { return concat(emb_[i], emb_[j]); }

  std::size_t index_of(ImageId id) const {
    auto it = std::lower_bound(ids_.begin(), ids_.end(), id);
    if (it == ids_.end() || *it != id) throw Error("image " + std::to_string(id) + " is not in train");
    return static_cast<std::size_t>(it - ids_.begin());
  }

 private:
  const SiameseModel& model_;
  std::vector<ImageId> ids_;
  std::vector<nn::Vector> emb_, left_, right_;
};

namespace detail {

struct PairHash {
  std::size_t operator()(const Pair& p) const noexcept {
    return std::hash<std::uint64_t>{}(static_cast<std::uint64_t>(p.a) * 0x9e3779b97f4a7c15ULL ^
                                      static_cast<std::uint64_t>(p.b));
  }
};

using PairSet = std::unordered_set<Pair, PairHash>;

inline PairSet key_set(const LabeledSet& t) {
  PairSet s;
  s.reserve(t.size() * 2);
  for (const auto& kv : t) s.insert(kv.first);
  return s;
}

}  // namespace detail

/// Streams every unlabeled train pair through the scorer and keeps the h
/// most uncertain. Rows are striped across `threads` workers; the merge is
/// a total order, so the result does not depend on the thread count.
inline std::vector<ScoredPair> select_uncertain(const PairScorer& scorer, const LabeledSet& labeled,
                                                std::size_t h, std::size_t threads = 1) {
  const auto taken = detail::key_set(labeled);
  const auto& ids = scorer.ids();
  const std::size_t n = ids.size();
  threads = std::max<std::size_t>(1, threads);
  std::vector<std::vector<ScoredPair>> partial(threads);
  auto work = [&](std::size_t t) {
    std::vector<ScoredPair> block;
    std::vector<ScoredPair> best;
    nn::Vector a, b;
    for (std::size_t i = t; i < n; i += threads) {
      block.clear();
      for (std::size_t j = i + 1; j < n; ++j) {
        const Pair p{ids[i], ids[j]};
        if (taken.count(p)) continue;
        block.push_back({p, uncertainty_score(scorer.y_hat(i, j, a, b))});
      }
      best.insert(best.end(), block.begin(), block.end());
      if (best.size() > 4 * h + 1024) best = detail::bottom_h(best, h);
    }
    partial[t] = detail::bottom_h(best, h);
  };
  if (threads == 1) {
    work(0);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t);
    for (auto& th : pool) th.join();
  }
  std::vector<ScoredPair> all;
  for (auto& p : partial) all.insert(all.end(), p.begin(), p.end());
  if (all.size() < h)
    log::warn("select_uncertain: unlabeled pool of " + std::to_string(all.size()) + " < h=" +
              std::to_string(h));
  std::sort(all.begin(), all.end(), more_uncertain);
  if (all.size() > h) all.resize(h);
  return all;
}

/// Concatenated canonical-order embeddings of a pair.
inline nn::Vector pair_representation(const Pair& pair, const SiameseModel& model,
                                      const Dataset& data) {
  return concat(embed(model, data.features(pair.a)), embed(model, data.features(pair.b)));
}

struct DiversitySelection {
  std::vector<ScoredPair> selected;  // ordered by (score, key)
  KMeansResult clustering;           // empty when no clustering was needed
};

/// Clusters the uncertain pairs into k groups over `representations` and
/// keeps the most uncertain pair of each cluster, backfilling empty
/// clusters from the most uncertain leftovers.
inline DiversitySelection cluster_diversity(std::span<const ScoredPair> uncertain,
                                            std::span<const nn::Vector> representations,
                                            std::size_t k, Rng& rng) {
  if (uncertain.size() != representations.size())
    throw DimensionError("cluster_diversity: one representation per pair required");
  std::vector<double> scores;
  std::vector<Pair> keys;
  for (const auto& s : uncertain) {
    scores.push_back(s.score);
    keys.push_back(s.pair);
  }
  DiversitySelection out;
  const auto idx = select_one_per_cluster<Pair>(representations, scores, keys, k, rng, &out.clustering);
  for (auto i : idx) out.selected.push_back(uncertain[i]);
  return out;
}

/// k distinct unlabeled train pairs drawn uniformly.
inline std::vector<Pair> sample_random_pairs(std::span<const ImageId> train_ids,
                                             const LabeledSet& labeled, std::size_t k, Rng& rng) {
  std::vector<ImageId> ids(train_ids.begin(), train_ids.end());
  std::sort(ids.begin(), ids.end());
  const std::size_t n = ids.size();
  const std::size_t universe = n < 2 ? 0 : n * (n - 1) / 2;
  std::size_t labeled_train = 0;
  for (const auto& kv : labeled)
    if (std::binary_search(ids.begin(), ids.end(), kv.first.a) &&
        std::binary_search(ids.begin(), ids.end(), kv.first.b))
      ++labeled_train;
  const std::size_t available = universe - labeled_train;
  std::vector<Pair> out;
  if (available <= k) {
    if (available < k)
      log::warn("random selection: only " + std::to_string(available) + " unlabeled pairs left");
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (!labeled.contains({ids[i], ids[j]})) out.push_back({ids[i], ids[j]});
    return out;
  }
  std::set<Pair> chosen;
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  while (chosen.size() < k) {
    const std::size_t i = pick(rng), j = pick(rng);
    if (i == j) continue;
    const Pair p = canonicalize(ids[i], ids[j]);
    if (labeled.contains(p)) continue;
    if (chosen.insert(p).second) out.push_back(p);
  }
  return out;
}

// --- transitive expansion ------------------------------------------------------------

struct TransitiveResult {
  std::vector<LabeledPair> derived;  // canonical key order
  std::size_t conflicts_dropped = 0;
};

/// One transitive step over the annotated (non-transitive) pairs of T.
/// Two pairs sharing one image derive a label for the pair of their other
/// images: similar + similar gives similar, similar + dissimilar gives
/// dissimilar, dissimilar + dissimilar gives nothing. Pairs already in T
/// are skipped; pairs for which both labels are derivable are dropped.
inline TransitiveResult transitive_expand(const LabeledSet& labeled) {
  std::map<ImageId, std::vector<std::pair<ImageId, int>>> adjacency;
  for (const auto& [p, lp] : labeled) {
    if (lp.provenance == Provenance::transitive) continue;
    adjacency[p.a].push_back({p.b, lp.label});
    adjacency[p.b].push_back({p.a, lp.label});
  }
  // bit 0: dissimilar derivable, bit 1: similar derivable
  std::map<Pair, unsigned> derivable;
  for (const auto& [shared, edges] : adjacency) {
    for (std::size_t x = 0; x < edges.size(); ++x) {
      for (std::size_t y = x + 1; y < edges.size(); ++y) {
        const auto [u, lu] = edges[x];
        const auto [v, lv] = edges[y];
        if (lu == kDissimilar && lv == kDissimilar) continue;
        const Pair p = canonicalize(u, v);
        if (labeled.contains(p)) continue;
        derivable[p] |= (lu == kSimilar && lv == kSimilar) ? 2u : 1u;
      }
    }
  }
  TransitiveResult r;
  for (const auto& [p, bits] : derivable) {
    if (bits == 3u) {
      ++r.conflicts_dropped;
      continue;
    }
    r.derived.push_back({p, bits == 2u ? kSimilar : kDissimilar, Provenance::transitive});
  }
  if (r.conflicts_dropped > 0)
    log::info("transitive expansion dropped " + std::to_string(r.conflicts_dropped) +
              " contradictory derivations");
  return r;
}

// --- loop state --------------------------------------------------------------------

struct ALState {
  std::size_t iteration = 0;
  double bits_spent = 0.0;
  double initial_bits = 0.0;
  LabeledSet labeled;
  SiameseModel model;
  std::vector<HistoryRow> history;
  std::vector<ImageId> seed_images;
  Rng rng;

  double query_bits() const { return bits_spent - initial_bits; }
};

inline bool budget_exhausted(const ALState& s, const ALConfig& cfg) {
  return s.query_bits() >= cfg.budget_bits;
}

inline double evaluate_map(const SiameseModel& model, const Dataset& data, const ALConfig& cfg) {
  EvalOptions opts;
  opts.k = cfg.eval_k;
  opts.threads = cfg.threads;
  return map_at_k([&](std::span<const double> x) { return embed(model, x); }, data, opts).map;
}

namespace detail {

inline void check_train_pair(const Dataset& data, const Pair& p) {
  if (data.at(p.a).split != Split::train || data.at(p.b).split != Split::train)
    throw Error("pair " + pair_id(p) + " touches a non-train image");
}

inline void train_and_record(ALState& s, const Dataset& data, const ALConfig& cfg,
                             std::size_t transitive_added) {
  if (cfg.retrain_from_scratch && s.iteration > 0)
    s.model = SiameseModel::create(cfg.model_config(data.dim()), s.rng);
  const auto examples = training_examples(s.labeled, data);
  TrainOptions opts{cfg.epochs_per_iteration, cfg.batch_size};
  train_epochs(s.model, examples, opts, s.rng);
  HistoryRow row;
  row.iteration = s.iteration;
  row.bits = s.bits_spent;
  row.strategy = to_string(cfg.strategy);
  row.seed = cfg.seed;
  row.map_at_5 = evaluate_map(s.model, data, cfg);
  row.labeled_pairs = s.labeled.size();
  row.transitive_pairs = transitive_added;
  s.history.push_back(std::move(row));
}

inline std::size_t apply_transitive(ALState& s) {
  const auto t = transitive_expand(s.labeled);
  std::size_t added = 0;
  for (const auto& lp : t.derived)
    if (s.labeled.add(lp) == LabeledSet::AddResult::inserted) ++added;
  return added;
}

}  // namespace detail

/// Seed set, its transitive expansion, initial training and the
/// iteration-0 evaluation.
inline ALState initialize_state(const Dataset& data, const ALConfig& cfg) {
  cfg.validate();
  ALState s;
  s.rng.seed(cfg.seed);
  auto init = build_initial_set(data, cfg.seed_fraction, cfg.per_seed_similar,
                                cfg.per_seed_dissimilar, s.rng);
  s.labeled = std::move(init.pairs);
  s.seed_images = std::move(init.seed_images);
  for (const auto& kv : s.labeled) detail::check_train_pair(data, kv.first);
  s.initial_bits = annotation_cost_bits(s.labeled.size(), CostMode::pair);
  s.bits_spent = s.initial_bits;
  s.model = SiameseModel::create(cfg.model_config(data.dim()), s.rng);
  const auto added = detail::apply_transitive(s);
  if (s.labeled.empty()) throw Error("initial labeled set is empty");
  detail::train_and_record(s, data, cfg, added);
  return s;
}

/// Pairs to query next under the configured strategy. Advances only the rng.
inline std::vector<Pair> select_queries(ALState& s, const Dataset& data, const ALConfig& cfg) {
  std::vector<Pair> out;
  if (cfg.strategy == Strategy::random) {
    return sample_random_pairs(data.ids(Split::train), s.labeled, cfg.k, s.rng);
  }
  const PairScorer scorer(s.model, data);
  if (cfg.strategy == Strategy::anneal_u) {
    for (const auto& sp : select_uncertain(scorer, s.labeled, cfg.k, cfg.threads))
      out.push_back(sp.pair);
    return out;
  }
  const auto uncertain = select_uncertain(scorer, s.labeled, cfg.h(), cfg.threads);
  std::vector<nn::Vector> reps;
  reps.reserve(uncertain.size());
  for (const auto& sp : uncertain)
    reps.push_back(scorer.representation(scorer.index_of(sp.pair.a), scorer.index_of(sp.pair.b)));
  for (const auto& sp : cluster_diversity(uncertain, reps, cfg.k, s.rng).selected)
    out.push_back(sp.pair);
  return out;
}

/// Folds oracle answers for `queries` into a copy of the state, expands,
/// retrains and evaluates, then commits.
inline void complete_iteration(ALState& state, const Dataset& data, const ALConfig& cfg,
                               std::span<const Pair> queries, std::span<const int> labels,
                               Provenance provenance) {
  if (queries.size() != labels.size()) throw OracleError("oracle returned wrong number of labels");
  ALState next = state;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    detail::check_train_pair(data, queries[i]);
    if (next.labeled.contains(queries[i]) &&
        next.labeled.find(queries[i])->provenance != Provenance::transitive)
      throw Error("pair " + pair_id(queries[i]) + " was already annotated");
    next.labeled.add({queries[i], labels[i], provenance});
  }
  next.bits_spent += annotation_cost_bits(queries.size(), CostMode::pair);
  next.iteration += 1;
  const auto added = detail::apply_transitive(next);
  detail::train_and_record(next, data, cfg, added);
  state = std::move(next);
}

/// Select, query, expand, retrain, evaluate. The state is untouched when
/// the oracle or training fails.
inline void run_iteration(ALState& state, const Dataset& data, const ALConfig& cfg, Oracle& oracle) {
  Rng rng_backup = state.rng;
  try {
    const auto queries = select_queries(state, data, cfg);
    const auto labels = oracle.label(queries);
    complete_iteration(state, data, cfg, queries, labels, oracle.provenance());
  } catch (...) {
    state.rng = rng_backup;
    throw;
  }
}

struct ExperimentResult {
  ALState state;
};

inline bool should_continue(const ALState& s, const ALConfig& cfg) {
  return s.iteration < cfg.iterations_max && !budget_exhausted(s, cfg);
}

/// Runs to budget or iteration cap; writes the results CSV when a path is
/// given, including the partial history if an iteration throws.
inline ExperimentResult run_experiment(const Dataset& data, const ALConfig& cfg, Oracle& oracle,
                                       const std::string& results_path = {}) {
  ExperimentResult r{initialize_state(data, cfg)};
  try {
    while (should_continue(r.state, cfg)) run_iteration(r.state, data, cfg, oracle);
  } catch (...) {
    if (!results_path.empty() && !r.state.history.empty())
      export_curve(r.state.history, results_path);
    throw;
  }
  if (!results_path.empty()) export_curve(r.state.history, results_path);
  return r;
}

// --- snapshots ---------------------------------------------------------------------
// JSON document holding everything in ALState except the model, which is
// stored as a checkpoint next to it.

inline nlohmann::json state_to_json(const ALState& s) {
  nlohmann::json j;
  j["iteration"] = s.iteration;
  j["bits_spent"] = s.bits_spent;
  j["initial_bits"] = s.initial_bits;
  auto& pairs = j["labeled"] = nlohmann::json::array();
  for (const auto& [p, lp] : s.labeled)
    pairs.push_back({p.a, p.b, lp.label, to_string(lp.provenance)});
  auto& hist = j["history"] = nlohmann::json::array();
  for (const auto& h : s.history)
    hist.push_back({{"iteration", h.iteration},
                    {"bits", h.bits},
                    {"strategy", h.strategy},
                    {"seed", h.seed},
                    {"map_at_5", h.map_at_5},
                    {"labeled_pairs", h.labeled_pairs},
                    {"transitive_pairs", h.transitive_pairs}});
  j["seed_images"] = s.seed_images;
  std::ostringstream rng;
  rng << s.rng;
  j["rng"] = rng.str();
  return j;
}

inline ALState state_from_json(const nlohmann::json& j, SiameseModel model) {
  ALState s;
  s.iteration = j.at("iteration").get<std::size_t>();
  s.bits_spent = j.at("bits_spent").get<double>();
  s.initial_bits = j.at("initial_bits").get<double>();
  for (const auto& e : j.at("labeled"))
    s.labeled.add({{e.at(0).get<ImageId>(), e.at(1).get<ImageId>()}, e.at(2).get<int>(),
                   provenance_from_string(e.at(3).get<std::string>())});
  for (const auto& h : j.at("history"))
    s.history.push_back({h.at("iteration").get<std::size_t>(), h.at("bits").get<double>(),
                         h.at("strategy").get<std::string>(), h.at("seed").get<std::uint64_t>(),
                         h.at("map_at_5").get<double>(), h.at("labeled_pairs").get<std::size_t>(),
                         h.at("transitive_pairs").get<std::size_t>()});
  s.seed_images = j.at("seed_images").get<std::vector<ImageId>>();
  std::istringstream rng(j.at("rng").get<std::string>());
  rng >> s.rng;
  s.model = std::move(model);
  return s;
}

}  // namespace anneal
