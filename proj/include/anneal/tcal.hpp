#pragma once

// Class-label baseline: a softmax classifier over the same encoder family,
// margin-sampling uncertainty plus k-means diversity over images, charged
// log2(C) bits per labeled image.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "anneal/al_engine.hpp"
#include "anneal/data_pool.hpp"
#include "anneal/kmeans.hpp"
#include "anneal/nn.hpp"
#include "anneal/retrieval.hpp"

namespace anneal::tcal {

struct ClassifierModel {
  nn::Mlp encoder;
  nn::Mlp head;  // embedding -> class logits
  nn::AdamState adam;

  template <class R>
  static ClassifierModel create(const ModelConfig& cfg, std::size_t classes, R& rng) {
    cfg.validate();
    if (classes < 2) throw Error("classifier needs at least 2 classes");
    ClassifierModel m;
    std::vector<nn::LayerSpec> enc;
    for (auto w : cfg.encoder_hidden) enc.push_back({w, nn::Activation::relu});
    enc.push_back({cfg.embedding_dim, nn::Activation::identity});
    m.encoder = nn::Mlp::make(cfg.input_dim, enc, rng);
    const nn::LayerSpec head[] = {{classes, nn::Activation::identity}};
    m.head = nn::Mlp::make(cfg.embedding_dim, head, rng);
    m.adam = nn::AdamState::for_size(m.parameter_count(), cfg.learning_rate);
    return m;
  }

  std::size_t classes() const { return head.out_dim(); }
  std::size_t parameter_count() const { return encoder.parameter_count() + head.parameter_count(); }

  std::vector<std::span<double>> parameter_blocks() {
    auto out = encoder.parameter_blocks();
    for (auto b : head.parameter_blocks()) out.push_back(b);
    return out;
  }
};

inline nn::Vector softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  nn::Vector p(logits.size());
  double z = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) z += (p[i] = std::exp(logits[i] - mx));
  for (double& x : p) x /= z;
  return p;
}

inline nn::Vector class_probabilities(const ClassifierModel& m, std::span<const double> x) {
  return softmax(nn::predict(m.head, nn::predict(m.encoder, x)));
}

inline double cross_entropy(std::span<const double> probs, int label) {
  return -std::log(std::max(probs[static_cast<std::size_t>(label)], kProbClamp));
}

/// Gap between the two largest class probabilities; lower is more uncertain.
inline double margin_score(std::span<const double> probs) {
  if (probs.size() < 2) throw Error("margin_score: need at least 2 classes");
  double first = -1.0, second = -1.0;
  for (double p : probs) {
    if (p > first) {
      second = first;
      first = p;
    } else if (p > second) {
      second = p;
    }
  }
  return first - second;
}

struct Gradients {
  nn::MlpGradients encoder, head;

  static Gradients zeros_like(const ClassifierModel& m) {
    return {nn::MlpGradients::zeros_like(m.encoder), nn::MlpGradients::zeros_like(m.head)};
  }
  void set_zero() {
    encoder.set_zero();
    head.set_zero();
  }
  std::vector<std::span<const double>> blocks() const {
    auto out = encoder.blocks();
    for (auto b : head.blocks()) out.push_back(b);
    return out;
  }
};

/// Cross-entropy of one labeled image; adds `weight` times its gradient.
inline double accumulate_gradient(const ClassifierModel& m, std::span<const double> x, int label,
                                  Gradients& grads, double weight) {
  const auto enc = nn::forward(m.encoder, x);
  const auto head = nn::forward(m.head, enc.output);
  auto p = softmax(head.output);
  const double loss = cross_entropy(p, label);
  p[static_cast<std::size_t>(label)] -= 1.0;  // dL/dlogits
  const auto d = nn::backward_accumulate(m.head, head.tape, p, grads.head, weight);
  nn::backward_accumulate(m.encoder, enc.tape, d, grads.encoder, weight);
  return loss;
}

struct LabeledImage {
  std::span<const double> features;
  int label = 0;
};

/// Mean cross-entropy per epoch over plain shuffled batches.
inline std::vector<double> train_classifier(ClassifierModel& m, std::span<const LabeledImage> images,
                                            std::size_t epochs, std::size_t batch_size, Rng& rng) {
  if (images.empty()) throw Error("train_classifier: no labeled images");
  if (batch_size == 0) throw Error("batch_size must be positive");
  auto grads = Gradients::zeros_like(m);
  std::vector<std::size_t> order(images.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> trace;
  for (std::size_t e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t i = 0; i < order.size(); i += batch_size) {
      const std::size_t end = std::min(order.size(), i + batch_size);
      const double w = 1.0 / static_cast<double>(end - i);
      grads.set_zero();
      for (std::size_t j = i; j < end; ++j) {
        const auto& im = images[order[j]];
        const double l = accumulate_gradient(m, im.features, im.label, grads, w);
        if (!std::isfinite(l)) throw NumericError("non-finite cross-entropy");
        total += l;
      }
      const auto params = m.parameter_blocks();
      const auto g = grads.blocks();
      nn::adam_step(params, g, m.adam);
    }
    trace.push_back(total / static_cast<double>(images.size()));
  }
  return trace;
}

enum class Rounding { exact, floor };

inline Rounding rounding_from_string(std::string_view s) {
  if (s == "exact") return Rounding::exact;
  if (s == "floor") return Rounding::floor;
  throw ConfigError("tcal_rounding", "must be 'exact' or 'floor'");
}

inline const char* to_string(Rounding r) { return r == Rounding::exact ? "exact" : "floor"; }

/// Images to label per iteration for a bit budget of `k_bits`:
/// round(k / log2 C) in exact mode, round(k / floor(log2 C)) in floor mode.
inline std::size_t images_per_iteration(double k_bits, std::size_t classes, Rounding mode) {
  if (classes < 2) throw Error("images_per_iteration: need at least 2 classes");
  double per_image = std::log2(static_cast<double>(classes));
  if (mode == Rounding::floor) per_image = std::floor(per_image);
  return static_cast<std::size_t>(std::llround(k_bits / per_image));
}

struct ScoredImage {
  ImageId id = 0;
  double score = 0.0;
};

/// 4n lowest-margin images, clustered into n groups over their
/// embeddings, the lowest-margin image of each group.
inline std::vector<ImageId> tcal_select(std::span<const ScoredImage> pool,
                                        std::span<const nn::Vector> embeddings,
                                        std::size_t n_images, Rng& rng,
                                        KMeansResult* clustering = nullptr) {
  if (pool.size() != embeddings.size())
    throw DimensionError("tcal_select: one embedding per image required");
  if (pool.size() < n_images)
    log::warn("tcal_select: pool of " + std::to_string(pool.size()) + " < " +
              std::to_string(n_images));
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return pool[a].score != pool[b].score ? pool[a].score < pool[b].score : pool[a].id < pool[b].id;
  });
  order.resize(std::min(order.size(), 4 * n_images));
  std::vector<nn::Vector> pts;
  std::vector<double> scores;
  std::vector<ImageId> keys;
  for (auto i : order) {
    pts.push_back(embeddings[i]);
    scores.push_back(pool[i].score);
    keys.push_back(pool[i].id);
  }
  std::vector<ImageId> out;
  for (auto i : select_one_per_cluster<ImageId>(pts, scores, keys, n_images, rng, clustering))
    out.push_back(keys[i]);
  return out;
}

class ClassOracle {
 public:
  virtual ~ClassOracle() = default;
  virtual int label(ImageId id) = 0;
};

class SimulatedClassOracle final : public ClassOracle {
 public:
  explicit SimulatedClassOracle(const Dataset& data) : data_(data) {}
  int label(ImageId id) override {
    const auto& r = data_.at(id);
    if (r.split != Split::train) throw OracleError("image " + std::to_string(id) + " is not in train");
    return r.oracle_class;
  }

 private:
  const Dataset& data_;
};

struct TcalOptions {
  double learning_rate = 1e-3;
  Rounding rounding = Rounding::exact;
};

struct TcalResult {
  std::vector<HistoryRow> history;
  ClassifierModel model;
  std::vector<ImageId> labeled;  // in labeling order
  double bits_spent = 0.0;
  double initial_bits = 0.0;
};

inline double evaluate_map(const ClassifierModel& m, const Dataset& data, const ALConfig& cfg) {
  EvalOptions opts;
  opts.k = cfg.eval_k;
  opts.threads = cfg.threads;
  return map_at_k([&](std::span<const double> x) { return nn::predict(m.encoder, x); }, data, opts).map;
}

/// Starts from the class labels of the anneal seed images (same seed, same
/// draw), then labels images_per_iteration images per round.
inline TcalResult run_tcal_experiment(const Dataset& data, const ALConfig& cfg,
                                      const TcalOptions& topts, ClassOracle& oracle,
                                      const std::string& results_path = {}) {
  cfg.validate();
  const auto classes = static_cast<std::size_t>(data.num_classes());
  const std::size_t n_images = images_per_iteration(static_cast<double>(cfg.k), classes, topts.rounding);

  Rng rng(cfg.seed);
  const auto init = build_initial_set(data, cfg.seed_fraction, cfg.per_seed_similar,
                                      cfg.per_seed_dissimilar, rng);
  auto mcfg = cfg.model_config(data.dim());
  mcfg.learning_rate = topts.learning_rate;
  TcalResult r{{}, ClassifierModel::create(mcfg, classes, rng), {}, 0.0, 0.0};

  std::vector<int> labels_of;  // parallel to r.labeled
  std::set<ImageId> labeled_set;
  for (ImageId id : init.seed_images) {
    r.labeled.push_back(id);
    labels_of.push_back(oracle.label(id));
    labeled_set.insert(id);
  }
  r.initial_bits = annotation_cost_bits(r.labeled.size(), CostMode::class_label, classes);
  r.bits_spent = r.initial_bits;

  auto train_and_record = [&](std::size_t iteration) {
    std::vector<LabeledImage> imgs;
    for (std::size_t i = 0; i < r.labeled.size(); ++i)
      imgs.push_back({data.features(r.labeled[i]), labels_of[i]});
    train_classifier(r.model, imgs, cfg.epochs_per_iteration, cfg.batch_size, rng);
    r.history.push_back({iteration, r.bits_spent, "tcal", cfg.seed, evaluate_map(r.model, data, cfg),
                         r.labeled.size(), 0});
  };

  try {
    if (r.labeled.empty()) throw Error("tcal: no seed images");
    train_and_record(0);
    for (std::size_t it = 1; it <= cfg.iterations_max && r.bits_spent - r.initial_bits < cfg.budget_bits;
         ++it) {
      std::vector<ScoredImage> pool;
      std::vector<nn::Vector> emb;
      for (ImageId id : data.ids(Split::train)) {
        if (labeled_set.count(id)) continue;
        const auto f = nn::predict(r.model.encoder, data.features(id));
        pool.push_back({id, margin_score(softmax(nn::predict(r.model.head, f)))});
        emb.push_back(f);
      }
      const auto picked = tcal_select(pool, emb, n_images, rng);
      for (ImageId id : picked) {
        r.labeled.push_back(id);
        labels_of.push_back(oracle.label(id));
        labeled_set.insert(id);
      }
      r.bits_spent += annotation_cost_bits(picked.size(), CostMode::class_label, classes);
      train_and_record(it);
    }
  } catch (...) {
    if (!results_path.empty() && !r.history.empty()) export_curve(r.history, results_path);
    throw;
  }
  if (!results_path.empty()) export_curve(r.history, results_path);
  return r;
}

}  // namespace anneal::tcal
