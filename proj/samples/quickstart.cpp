// Library walk-through: generate clustered features, run the pair-based
// active learning loop with a noisy simulated annotator, print the curve.
//
//   quickstart [stddev] [flip_probability]

#include <cstdio>
#include <cstdlib>
#include <random>

#include "anneal/al_engine.hpp"

namespace {

// Answers like SimulatedOracle but flips each label with probability p,
// which is the kind of annotator a custom Oracle can model.
class NoisyOracle final : public anneal::Oracle {
 public:
  NoisyOracle(const anneal::Dataset& data, double p) : data_(data), flip_(p) {}

  std::vector<int> label(std::span<const anneal::Pair> pairs) override {
    std::vector<int> out;
    for (const auto& p : pairs) {
      const int y = data_.at(p.a).oracle_class == data_.at(p.b).oracle_class;
      out.push_back(flip_(rng_) ? 1 - y : y);
    }
    return out;
  }
  anneal::Provenance provenance() const override { return anneal::Provenance::simulated; }

 private:
  const anneal::Dataset& data_;
  std::bernoulli_distribution flip_;
  std::mt19937_64 rng_{99};
};

}  // namespace

int main(int argc, char** argv) {
  const double stddev = argc > 1 ? std::atof(argv[1]) : 1.0;
  const double flip = argc > 2 ? std::atof(argv[2]) : 0.0;
  anneal::log::quiet() = true;

  anneal::Dataset data(anneal::generate_synthetic(6, 40, 16, stddev, 5));
  anneal::ALConfig cfg;
  cfg.k = 20;
  cfg.budget_bits = 100;
  cfg.iterations_max = 5;
  cfg.epochs_per_iteration = 10;
  cfg.encoder_hidden = {32};
  cfg.embedding_dim = 16;
  cfg.head_dims = {16, 16, 16};

  NoisyOracle oracle(data, flip);
  const auto result = anneal::run_experiment(data, cfg, oracle);
  std::printf("iteration  bits  mAP@5   labeled  transitive\n");
  for (const auto& h : result.state.history)
    std::printf("%9zu %5.0f  %.4f %8zu %11zu\n", h.iteration, h.bits, h.map_at_5, h.labeled_pairs,
                h.transitive_pairs);
  return 0;
}
