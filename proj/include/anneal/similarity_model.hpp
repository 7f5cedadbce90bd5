#pragma once

// Siamese pair model: a shared encoder produces features f for both pair
// members; the similarity head G maps them into the space where the
// contrastive term compares cosine similarity, and the binary classifier
// reads the concatenated features [f1 || f2] and emits P(similar).

#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "anneal/data_pool.hpp"
#include "anneal/error.hpp"
#include "anneal/nn.hpp"

namespace anneal {

struct ModelConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> encoder_hidden{64, 32};
  std::size_t embedding_dim = 32;
  // Widths of G's three layers; the classifier uses all but the last as
  // hidden widths and ends in a single sigmoid unit.
  std::vector<std::size_t> head_dims{32, 32, 32};
  double margin = 0.1;
  double beta = 0.1;
  double learning_rate = 1e-3;

  void validate() const {
    if (input_dim == 0) throw ConfigError("input_dim", "must be positive");
    if (embedding_dim == 0) throw ConfigError("embedding_dim", "must be positive");
    if (head_dims.size() < 2) throw ConfigError("head_dims", "need at least two layers");
    for (auto d : encoder_hidden)
      if (d == 0) throw ConfigError("encoder_hidden", "widths must be positive");
    for (auto d : head_dims)
      if (d == 0) throw ConfigError("head_dims", "widths must be positive");
    if (!(margin >= 0.0 && margin <= 2.0)) throw ConfigError("margin", "must lie in [0, 2]");
    if (!(beta >= 0.0 && beta <= 1.0)) throw ConfigError("beta", "must lie in [0, 1]");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("learning_rate", "must be a finite value >= 0");
  }
};

struct SiameseModel {
  ModelConfig config;
  nn::Mlp encoder;
  nn::Mlp similarity_head;  // G
  nn::Mlp classifier;       // BC
  nn::AdamState adam;

  template <class R>
  static SiameseModel create(const ModelConfig& cfg, R& rng) {
    cfg.validate();
    using nn::Activation;
    SiameseModel m;
    m.config = cfg;
    std::vector<nn::LayerSpec> enc;
    for (auto w : cfg.encoder_hidden) enc.push_back({w, Activation::relu});
    enc.push_back({cfg.embedding_dim, Activation::identity});
    m.encoder = nn::Mlp::make(cfg.input_dim, enc, rng);

    std::vector<nn::LayerSpec> g;
    for (std::size_t i = 0; i < cfg.head_dims.size(); ++i)
      g.push_back({cfg.head_dims[i],
                   i + 1 < cfg.head_dims.size() ? Activation::relu : Activation::identity});
    m.similarity_head = nn::Mlp::make(cfg.embedding_dim, g, rng);

    std::vector<nn::LayerSpec> bc;
    for (std::size_t i = 0; i + 1 < cfg.head_dims.size(); ++i)
      bc.push_back({cfg.head_dims[i], Activation::relu});
    bc.push_back({1, Activation::sigmoid});
    m.classifier = nn::Mlp::make(2 * cfg.embedding_dim, bc, rng);

    m.reset_optimizer();
    return m;
  }

  void reset_optimizer() {
    adam = nn::AdamState::for_size(parameter_count(), config.learning_rate);
  }

  std::size_t parameter_count() const {
    return encoder.parameter_count() + similarity_head.parameter_count() +
           classifier.parameter_count();
  }

  /// Encoder, G, classifier blocks, in that order.
  std::vector<std::span<double>> parameter_blocks() {
    auto out = encoder.parameter_blocks();
    for (auto b : similarity_head.parameter_blocks()) out.push_back(b);
    for (auto b : classifier.parameter_blocks()) out.push_back(b);
    return out;
  }

  void validate() const {
    encoder.validate();
    similarity_head.validate();
    classifier.validate();
    if (similarity_head.in_dim() != encoder.out_dim())
      throw DimensionError("G input dim must equal encoder output dim");
    if (classifier.in_dim() != 2 * encoder.out_dim())
      throw DimensionError("classifier input dim must be twice the encoder output dim");
    if (classifier.out_dim() != 1) throw DimensionError("classifier must emit one unit");
    if (classifier.layers.back().activation != nn::Activation::sigmoid)
      throw DimensionError("classifier must end in a sigmoid");
  }
};

struct PairPrediction {
  double s = 0.0;      // cosine of G(f1), G(f2)
  double y_hat = 0.5;  // classifier output
};

inline nn::Vector embed(const SiameseModel& model, std::span<const double> features) {
  return nn::predict(model.encoder, features);
}

inline nn::Vector concat(std::span<const double> a, std::span<const double> b) {
  nn::Vector out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

inline PairPrediction predict_from_embeddings(const SiameseModel& model, std::span<const double> f1,
                                              std::span<const double> f2) {
  const auto g1 = nn::predict(model.similarity_head, f1);
  const auto g2 = nn::predict(model.similarity_head, f2);
  const auto y = nn::predict(model.classifier, concat(f1, f2));
  return {nn::cosine_similarity(g1, g2), y[0]};
}

/// Callers pass the pair in canonical order; the classifier is order-sensitive.
inline PairPrediction predict_pair(const SiameseModel& model, std::span<const double> x1,
                                   std::span<const double> x2) {
  return predict_from_embeddings(model, embed(model, x1), embed(model, x2));
}

// --- losses --------------------------------------------------------------------

constexpr double kProbClamp = 1e-12;

inline double contrastive_loss(double s, int y, double margin) {
  return y == kSimilar ? 1.0 - s : std::max(0.0, s - margin);
}

/// d(contrastive)/ds; the hinge takes derivative 0 at s == margin.
inline double contrastive_loss_ds(double s, int y, double margin) {
  return y == kSimilar ? -1.0 : (s > margin ? 1.0 : 0.0);
}

/// Negative log-likelihood of label y under P(similar) = y_hat.
inline double bce_loss(double y_hat, int y) {
  const double p = std::clamp(y_hat, kProbClamp, 1.0 - kProbClamp);
  return -(y * std::log(p) + (1 - y) * std::log(1.0 - p));
}

inline double bce_loss_dyhat(double y_hat, int y) {
  if (y_hat < kProbClamp || y_hat > 1.0 - kProbClamp) return 0.0;
  return -(y / y_hat) + (1 - y) / (1.0 - y_hat);
}

inline double combined_loss(double l_cl, double l_bce, double beta) {
  return (1.0 - beta) * l_cl + beta * l_bce;
}

struct PairLoss {
  double contrastive = 0.0;
  double bce = 0.0;
  double total = 0.0;
};

struct ModelGradients {
  nn::MlpGradients encoder, similarity_head, classifier;

  static ModelGradients zeros_like(const SiameseModel& m) {
    return {nn::MlpGradients::zeros_like(m.encoder),
            nn::MlpGradients::zeros_like(m.similarity_head),
            nn::MlpGradients::zeros_like(m.classifier)};
  }
  void set_zero() {
    encoder.set_zero();
    similarity_head.set_zero();
    classifier.set_zero();
  }
  std::vector<std::span<const double>> blocks() const {
    auto out = encoder.blocks();
    for (auto b : similarity_head.blocks()) out.push_back(b);
    for (auto b : classifier.blocks()) out.push_back(b);
    return out;
  }
};

inline PairLoss pair_loss(const SiameseModel& model, std::span<const double> x1,
                          std::span<const double> x2, int y) {
  const auto p = predict_pair(model, x1, x2);
  PairLoss l;
  l.contrastive = contrastive_loss(p.s, y, model.config.margin);
  l.bce = bce_loss(p.y_hat, y);
  l.total = combined_loss(l.contrastive, l.bce, model.config.beta);
  return l;
}

/// Adds `weight` times the gradient of the combined pair loss into `grads`.
inline PairLoss accumulate_pair_gradient(const SiameseModel& model, std::span<const double> x1,
                                         std::span<const double> x2, int y, ModelGradients& grads,
                                         double weight) {
  const double beta = model.config.beta;
  const auto e1 = nn::forward(model.encoder, x1);
  const auto e2 = nn::forward(model.encoder, x2);
  const auto g1 = nn::forward(model.similarity_head, e1.output);
  const auto g2 = nn::forward(model.similarity_head, e2.output);
  const auto bc = nn::forward(model.classifier, concat(e1.output, e2.output));

  const double s = nn::cosine_similarity(g1.output, g2.output);
  const double y_hat = bc.output[0];
  PairLoss l;
  l.contrastive = contrastive_loss(s, y, model.config.margin);
  l.bce = bce_loss(y_hat, y);
  l.total = combined_loss(l.contrastive, l.bce, beta);

  const std::size_t emb = e1.output.size();
  nn::Vector df1(emb, 0.0), df2(emb, 0.0);

  const double ds = (1.0 - beta) * contrastive_loss_ds(s, y, model.config.margin);
  if (ds != 0.0) {
    nn::Vector ga, gb;
    nn::cosine_similarity_gradient(g1.output, g2.output, ga, gb);
    for (auto& v : ga) v *= ds;
    for (auto& v : gb) v *= ds;
    const auto d1 = nn::backward_accumulate(model.similarity_head, g1.tape, ga,
                                            grads.similarity_head, weight);
    const auto d2 = nn::backward_accumulate(model.similarity_head, g2.tape, gb,
                                            grads.similarity_head, weight);
    for (std::size_t i = 0; i < emb; ++i) {
      df1[i] += d1[i];
      df2[i] += d2[i];
    }
  }
  const double dy = beta * bce_loss_dyhat(y_hat, y);
  if (dy != 0.0) {
    const nn::Vector up{dy};
    const auto dcat =
        nn::backward_accumulate(model.classifier, bc.tape, up, grads.classifier, weight);
    for (std::size_t i = 0; i < emb; ++i) {
      df1[i] += dcat[i];
      df2[i] += dcat[emb + i];
    }
  }
  nn::backward_accumulate(model.encoder, e1.tape, df1, grads.encoder, weight);
  nn::backward_accumulate(model.encoder, e2.tape, df2, grads.encoder, weight);
  return l;
}

// --- training ------------------------------------------------------------------

struct TrainingExample {
  std::span<const double> a;
  std::span<const double> b;
  int label = kDissimilar;
};

struct TrainOptions {
  std::size_t epochs = 30;
  std::size_t batch_size = 32;
};

/// Resolves T's pairs (canonical order) to feature views into `data`.
inline std::vector<TrainingExample> training_examples(const LabeledSet& set, const Dataset& data) {
  std::vector<TrainingExample> out;
  out.reserve(set.size());
  for (const auto& [pair, lp] : set)
    out.push_back({data.features(pair.a), data.features(pair.b), lp.label});
  return out;
}

/// Mean combined loss over a batch, averaged per pair, with its gradient.
inline double batch_loss_and_gradient(const SiameseModel& model,
                                      std::span<const TrainingExample> examples,
                                      std::span<const std::size_t> batch, ModelGradients& grads,
                                      std::vector<double>* per_example = nullptr) {
  grads.set_zero();
  const double w = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (std::size_t idx : batch) {
    const auto& ex = examples[idx];
    const auto l = accumulate_pair_gradient(model, ex.a, ex.b, ex.label, grads, w);
    if (!std::isfinite(l.total))
      throw NumericError("non-finite loss on training example " + std::to_string(idx) +
                         " (contrastive " + std::to_string(l.contrastive) + ", bce " +
                         std::to_string(l.bce) + ")");
    if (per_example && std::isnan((*per_example)[idx])) (*per_example)[idx] = l.total;
    total += l.total;
  }
  return total * w;
}

/// Adam over oversampled batches. Each epoch's trace entry is the mean,
/// over the distinct pairs of T, of the loss observed at a pair's first
/// appearance in that epoch.
inline std::vector<double> train_epochs(SiameseModel& model,
                                        std::span<const TrainingExample> examples,
                                        const TrainOptions& opts, Rng& rng) {
  if (examples.empty()) throw Error("train_epochs: labeled set is empty");
  std::vector<int> labels;
  labels.reserve(examples.size());
  for (const auto& e : examples) labels.push_back(e.label);
  if (model.adam.first_moment.size() != model.parameter_count()) model.reset_optimizer();
  model.adam.learning_rate = model.config.learning_rate;

  auto grads = ModelGradients::zeros_like(model);
  std::vector<double> trace;
  std::vector<double> first_seen(examples.size());
  for (std::size_t epoch = 0; epoch < opts.epochs; ++epoch) {
    std::fill(first_seen.begin(), first_seen.end(), std::nan(""));
    const auto batches = oversample_batches(labels, opts.batch_size, rng);
    for (const auto& batch : batches) {
      batch_loss_and_gradient(model, examples, batch, grads, &first_seen);
      const auto params = model.parameter_blocks();
      const auto gblocks = grads.blocks();
      nn::adam_step(params, gblocks, model.adam);
    }
    double sum = 0.0;
    std::size_t n = 0;
    for (double v : first_seen)
      if (!std::isnan(v)) {
        sum += v;
        ++n;
      }
    trace.push_back(n ? sum / static_cast<double>(n) : 0.0);
  }
  return trace;
}

// --- checkpoints -----------------------------------------------------------------
//
// Text format, one token group per line, all reals as C99 hex floats so a
// save/load round trip is bit-exact:
//
//   anneal-checkpoint 1
//   config_hash <16 hex digits>
//   input_dim <n>
//   encoder_hidden <w...>
//   embedding_dim <n>
//   head_dims <w...>
//   margin <x>
//   beta <x>
//   learning_rate <x>
//   mlp <name> <layer count>
//   layer <out> <in> <activation>
//   w <out*in values, row-major>
//   b <out values>
//   ... (layers, then the next mlp: encoder, similarity_head, classifier)
//   adam <step> <learning_rate> <beta1> <beta2> <epsilon> <n>
//   m <n values>
//   v <n values>
//   end

namespace detail {

inline std::string hexfloat(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline std::string config_text(const ModelConfig& c) {
  std::ostringstream os;
  os << "input_dim " << c.input_dim << "\nencoder_hidden";
  for (auto w : c.encoder_hidden) os << ' ' << w;
  os << "\nembedding_dim " << c.embedding_dim << "\nhead_dims";
  for (auto w : c.head_dims) os << ' ' << w;
  os << "\nmargin " << hexfloat(c.margin) << "\nbeta " << hexfloat(c.beta)
     << "\nlearning_rate " << hexfloat(c.learning_rate) << '\n';
  return os.str();
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline void write_values(std::ostream& os, const char* tag, std::span<const double> v) {
  os << tag;
  for (double x : v) os << ' ' << hexfloat(x);
  os << '\n';
}

inline void write_mlp(std::ostream& os, const char* name, const nn::Mlp& mlp) {
  os << "mlp " << name << ' ' << mlp.layers.size() << '\n';
  for (const auto& l : mlp.layers) {
    os << "layer " << l.out_dim() << ' ' << l.in_dim() << ' ' << nn::to_string(l.activation) << '\n';
    write_values(os, "w", l.weights.data());
    write_values(os, "b", l.bias);
  }
}

class TokenReader {
 public:
  explicit TokenReader(std::istream& in) : in_(in) {}

  std::istringstream line(const std::string& expected_tag) {
    std::string text;
    if (!std::getline(in_, text)) throw ParseError("unexpected end of checkpoint", line_no_ + 1);
    ++line_no_;
    std::istringstream ls(text);
    std::string tag;
    ls >> tag;
    if (tag != expected_tag)
      throw ParseError("expected '" + expected_tag + "', found '" + tag + "'", line_no_);
    return ls;
  }

  double real(std::istringstream& ls) {
    std::string tok;
    if (!(ls >> tok)) throw ParseError("missing value", line_no_);
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end != tok.c_str() + tok.size()) throw ParseError("bad real '" + tok + "'", line_no_);
    return v;
  }

  void reals(std::istringstream& ls, std::span<double> out) {
    for (double& x : out) x = real(ls);
    std::string extra;
    if (ls >> extra) throw ParseError("too many values", line_no_);
  }

  std::size_t line_no() const { return line_no_; }

 private:
  std::istream& in_;
  std::size_t line_no_ = 0;
};

inline nn::Mlp read_mlp(TokenReader& rd, const std::string& name) {
  auto head = rd.line("mlp");
  std::string got;
  std::size_t n = 0;
  head >> got >> n;
  if (got != name) throw ParseError("expected mlp '" + name + "'", rd.line_no());
  nn::Mlp mlp;
  for (std::size_t i = 0; i < n; ++i) {
    auto ll = rd.line("layer");
    std::size_t out = 0, in = 0;
    std::string act;
    ll >> out >> in >> act;
    nn::DenseLayer layer{nn::Matrix(out, in), nn::Vector(out), nn::activation_from_string(act)};
    auto wl = rd.line("w");
    rd.reals(wl, layer.weights.data());
    auto bl = rd.line("b");
    rd.reals(bl, layer.bias);
    mlp.layers.push_back(std::move(layer));
  }
  mlp.validate();
  return mlp;
}

}  // namespace detail

inline std::uint64_t config_hash(const ModelConfig& c) {
  return detail::fnv1a(detail::config_text(c));
}

inline void save_checkpoint(std::ostream& os, const SiameseModel& m) {
  char hash[24];
  std::snprintf(hash, sizeof hash, "%016" PRIx64, config_hash(m.config));
  os << "anneal-checkpoint 1\nconfig_hash " << hash << '\n' << detail::config_text(m.config);
  detail::write_mlp(os, "encoder", m.encoder);
  detail::write_mlp(os, "similarity_head", m.similarity_head);
  detail::write_mlp(os, "classifier", m.classifier);
  os << "adam " << m.adam.step << ' ' << detail::hexfloat(m.adam.learning_rate) << ' '
     << detail::hexfloat(m.adam.beta1) << ' ' << detail::hexfloat(m.adam.beta2) << ' '
     << detail::hexfloat(m.adam.epsilon) << ' ' << m.adam.first_moment.size() << '\n';
  detail::write_values(os, "m", m.adam.first_moment);
  detail::write_values(os, "v", m.adam.second_moment);
  os << "end\n";
}

inline SiameseModel load_checkpoint(std::istream& in) {
  detail::TokenReader rd(in);
  auto magic = rd.line("anneal-checkpoint");
  int version = 0;
  magic >> version;
  if (version != 1) throw ParseError("unsupported checkpoint version", rd.line_no());
  auto hl = rd.line("config_hash");
  std::string hash;
  hl >> hash;

  SiameseModel m;
  auto& c = m.config;
  rd.line("input_dim") >> c.input_dim;
  {
    auto l = rd.line("encoder_hidden");
    c.encoder_hidden.clear();
    for (std::size_t w; l >> w;) c.encoder_hidden.push_back(w);
  }
  rd.line("embedding_dim") >> c.embedding_dim;
  {
    auto l = rd.line("head_dims");
    c.head_dims.clear();
    for (std::size_t w; l >> w;) c.head_dims.push_back(w);
  }
  {
    auto l = rd.line("margin");
    c.margin = rd.real(l);
  }
  {
    auto l = rd.line("beta");
    c.beta = rd.real(l);
  }
  {
    auto l = rd.line("learning_rate");
    c.learning_rate = rd.real(l);
  }
  char expect[24];
  std::snprintf(expect, sizeof expect, "%016" PRIx64, config_hash(c));
  if (hash != expect) throw ParseError("config hash mismatch", 2);

  m.encoder = detail::read_mlp(rd, "encoder");
  m.similarity_head = detail::read_mlp(rd, "similarity_head");
  m.classifier = detail::read_mlp(rd, "classifier");
  auto al = rd.line("adam");
  std::size_t n = 0;
  al >> m.adam.step;
  m.adam.learning_rate = rd.real(al);
  m.adam.beta1 = rd.real(al);
  m.adam.beta2 = rd.real(al);
  m.adam.epsilon = rd.real(al);
  al >> n;
  m.adam.first_moment.resize(n);
  m.adam.second_moment.resize(n);
  auto ml = rd.line("m");
  rd.reals(ml, m.adam.first_moment);
  auto vl = rd.line("v");
  rd.reals(vl, m.adam.second_moment);
  rd.line("end");
  m.validate();
  return m;
}

inline void save_checkpoint(const std::string& path, const SiameseModel& m) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::trunc);
    if (!os) throw Error("cannot write checkpoint '" + tmp + "'");
    save_checkpoint(os, m);
    if (!os) throw Error("failed writing checkpoint '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw Error("cannot move checkpoint into place at '" + path + "'");
}

inline SiameseModel load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  return load_checkpoint(in);
}

}  // namespace anneal
