#pragma once

// Dataset records, canonical pair algebra, initial labeled-set
// construction and the minority-oversampling batch sampler.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <istream>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "anneal/error.hpp"
#include "anneal/nn.hpp"

namespace anneal {

using ImageId = std::int64_t;
using Rng = std::mt19937_64;

enum class Split { train, validation, test };

inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "?";
}

inline std::optional<Split> split_from_string(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  return std::nullopt;
}

struct ImageRecord {
  ImageId id = 0;
  nn::Vector features;
  int oracle_class = 0;  // hidden from the learner
  Split split = Split::train;

  friend bool operator==(const ImageRecord&, const ImageRecord&) = default;
};

class Dataset {
 public:
  Dataset() = default;
  explicit Dataset(std::vector<ImageRecord> records) : records_(std::move(records)) {
    index_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const auto& r = records_[i];
      if (!index_.emplace(r.id, i).second)
        throw Error("duplicate image id " + std::to_string(r.id));
      if (i > 0 && r.features.size() != records_[0].features.size())
        throw Error("image " + std::to_string(r.id) + " has " +
                    std::to_string(r.features.size()) + " features, expected " +
                    std::to_string(records_[0].features.size()));
      if (r.oracle_class < 0) throw Error("image " + std::to_string(r.id) + " has negative class");
      num_classes_ = std::max(num_classes_, r.oracle_class + 1);
      by_split_[static_cast<int>(r.split)].push_back(r.id);
    }
  }

  const std::vector<ImageRecord>& records() const noexcept { return records_; }
  std::size_t size() const noexcept { return records_.size(); }
  std::size_t dim() const noexcept { return records_.empty() ? 0 : records_[0].features.size(); }
  /// Number of classes, taken as max class id + 1.
  int num_classes() const noexcept { return num_classes_; }

  bool contains(ImageId id) const { return index_.count(id) > 0; }
  const ImageRecord& at(ImageId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error("unknown image id " + std::to_string(id));
    return records_[it->second];
  }
  std::size_t index_of(ImageId id) const {
    auto it = index_.find(id);
    if (it == index_.end()) throw Error("unknown image id " + std::to_string(id));
    return it->second;
  }
  std::span<const double> features(ImageId id) const { return at(id).features; }

  /// Ids of a split in file order.
  const std::vector<ImageId>& ids(Split s) const { return by_split_[static_cast<int>(s)]; }

 private:
  std::vector<ImageRecord> records_;
  std::unordered_map<ImageId, std::size_t> index_;
  std::vector<ImageId> by_split_[3];
  int num_classes_ = 0;
};

// --- pairs ------------------------------------------------------------------

struct Pair {
  ImageId a = 0;
  ImageId b = 0;

  friend auto operator<=>(const Pair&, const Pair&) = default;
};

/// Ordered pair (min, max); equal ids are rejected.
inline Pair canonicalize(ImageId a, ImageId b) {
  if (a == b) throw Error("pair of identical images (" + std::to_string(a) + ")");
  return a < b ? Pair{a, b} : Pair{b, a};
}

inline std::string pair_id(const Pair& p) {
  return std::to_string(p.a) + "-" + std::to_string(p.b);
}

inline std::optional<Pair> parse_pair_id(std::string_view s) {
  const auto dash = s.find('-', 1);
  if (dash == std::string_view::npos) return std::nullopt;
  ImageId a = 0, b = 0;
  auto ra = std::from_chars(s.data(), s.data() + dash, a);
  auto rb = std::from_chars(s.data() + dash + 1, s.data() + s.size(), b);
  if (ra.ec != std::errc{} || ra.ptr != s.data() + dash) return std::nullopt;
  if (rb.ec != std::errc{} || rb.ptr != s.data() + s.size()) return std::nullopt;
  if (a >= b) return std::nullopt;
  return Pair{a, b};
}

enum class Provenance { seed, human, simulated, transitive };

inline const char* to_string(Provenance p) {
  switch (p) {
    case Provenance::seed: return "seed";
    case Provenance::human: return "human";
    case Provenance::simulated: return "simulated";
    case Provenance::transitive: return "transitive";
  }
  return "?";
}

inline Provenance provenance_from_string(std::string_view s) {
  if (s == "seed") return Provenance::seed;
  if (s == "human") return Provenance::human;
  if (s == "simulated") return Provenance::simulated;
  if (s == "transitive") return Provenance::transitive;
  throw Error("unknown provenance '" + std::string(s) + "'");
}

constexpr int kSimilar = 1;
constexpr int kDissimilar = 0;

struct LabeledPair {
  Pair pair;
  int label = kDissimilar;
  Provenance provenance = Provenance::seed;

  friend bool operator==(const LabeledPair&, const LabeledPair&) = default;
};

/// The labeled training set T, keyed by canonical pair.
class LabeledSet {
 public:
  enum class AddResult { inserted, replaced, kept_existing };

  /// Inserts a labeled pair. An annotated label replaces a transitive one
  /// for the same pair; otherwise the existing entry is kept.
  AddResult add(const LabeledPair& lp) {
    if (lp.pair.a >= lp.pair.b) throw Error("non-canonical pair " + pair_id(lp.pair));
    if (lp.label != kSimilar && lp.label != kDissimilar)
      throw Error("label must be 0 or 1 for pair " + pair_id(lp.pair));
    auto [it, inserted] = pairs_.emplace(lp.pair, lp);
    if (inserted) return AddResult::inserted;
    if (it->second.provenance == Provenance::transitive &&
        lp.provenance != Provenance::transitive) {
      it->second = lp;
      return AddResult::replaced;
    }
    return AddResult::kept_existing;
  }

  bool contains(const Pair& p) const { return pairs_.count(p) > 0; }
  const LabeledPair* find(const Pair& p) const {
    auto it = pairs_.find(p);
    return it == pairs_.end() ? nullptr : &it->second;
  }
  std::size_t size() const noexcept { return pairs_.size(); }
  bool empty() const noexcept { return pairs_.empty(); }

  std::size_t count(Provenance p) const {
    return static_cast<std::size_t>(std::count_if(
        pairs_.begin(), pairs_.end(), [p](const auto& kv) { return kv.second.provenance == p; }));
  }
  std::size_t count_label(int label) const {
    return static_cast<std::size_t>(std::count_if(
        pairs_.begin(), pairs_.end(), [label](const auto& kv) { return kv.second.label == label; }));
  }

  /// Pairs in canonical key order.
  std::vector<LabeledPair> items() const {
    std::vector<LabeledPair> out;
    out.reserve(pairs_.size());
    for (const auto& kv : pairs_) out.push_back(kv.second);
    return out;
  }

  auto begin() const { return pairs_.begin(); }
  auto end() const { return pairs_.end(); }

  friend bool operator==(const LabeledSet&, const LabeledSet&) = default;

 private:
  std::map<Pair, LabeledPair> pairs_;
};

// --- CSV ingestion ------------------------------------------------------------

namespace detail {

inline std::vector<std::string_view> split_csv_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r'))
    s.remove_suffix(1);
  return s;
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  std::string tmp(s);
  char* end = nullptr;
  out = std::strtod(tmp.c_str(), &end);
  return end == tmp.c_str() + tmp.size() && std::isfinite(out);
}

template <class Int>
bool parse_int(std::string_view s, Int& out) {
  s = trim(s);
  auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  return r.ec == std::errc{} && r.ptr == s.data() + s.size();
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Seeded 80/10/10 split assignment for records whose split is unset.
/// Train takes round(0.8 n), validation round(0.1 n), test the remainder.
inline void assign_splits(std::vector<ImageRecord>& records, std::span<const std::size_t> unset,
                          std::uint64_t seed) {
  std::vector<std::size_t> order(unset.begin(), unset.end());
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n = static_cast<double>(order.size());
  const auto n_train = static_cast<std::size_t>(std::llround(0.8 * n));
  const auto n_val = static_cast<std::size_t>(std::llround(0.1 * n));
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto& r = records[order[i]];
    r.split = i < n_train ? Split::train : (i < n_train + n_val ? Split::validation : Split::test);
  }
}

/// Parses `id,class,split,f0,...,f{d-1}`. Lines starting with '#' are comments.
/// Empty split cells are assigned by `assign_splits` with `split_seed`.
inline std::vector<ImageRecord> parse_dataset(std::istream& in, std::uint64_t split_seed = 0) {
  std::string line;
  std::size_t line_no = 0;
  std::size_t dim = 0;
  bool have_header = false;
  std::vector<ImageRecord> records;
  std::vector<std::size_t> unset;
  while (std::getline(in, line)) {
    ++line_no;
    std::string_view sv = detail::trim(line);
    if (sv.empty() || sv.front() == '#') continue;
    auto cells = detail::split_csv_line(sv);
    if (!have_header) {
      if (cells.size() < 4 || detail::trim(cells[0]) != "id" || detail::trim(cells[1]) != "class" ||
          detail::trim(cells[2]) != "split")
        throw ParseError("header must be id,class,split,f0,...", line_no);
      for (std::size_t i = 3; i < cells.size(); ++i)
        if (detail::trim(cells[i]) != "f" + std::to_string(i - 3))
          throw ParseError("feature column " + std::to_string(i - 3) + " must be named f" +
                               std::to_string(i - 3),
                           line_no);
      dim = cells.size() - 3;
      have_header = true;
      continue;
    }
    if (cells.size() != dim + 3)
      throw ParseError("row has " + std::to_string(cells.size() - std::min<std::size_t>(cells.size(), 3)) +
                           " features, expected " + std::to_string(dim),
                       line_no);
    ImageRecord r;
    if (!detail::parse_int(cells[0], r.id)) throw ParseError("bad id", line_no);
    if (!detail::parse_int(cells[1], r.oracle_class) || r.oracle_class < 0)
      throw ParseError("bad class", line_no);
    auto split = detail::trim(cells[2]);
    if (split.empty()) {
      unset.push_back(records.size());
    } else if (auto s = split_from_string(split)) {
      r.split = *s;
    } else {
      throw ParseError("bad split '" + std::string(split) + "'", line_no);
    }
    r.features.resize(dim);
    for (std::size_t i = 0; i < dim; ++i)
      if (!detail::parse_double(cells[i + 3], r.features[i]))
        throw ParseError("bad feature f" + std::to_string(i), line_no);
    records.push_back(std::move(r));
  }
  if (!have_header) throw ParseError("missing header", line_no);
  if (!unset.empty()) assign_splits(records, unset, split_seed);
  return records;
}

inline std::vector<ImageRecord> load_dataset(const std::string& path, std::uint64_t split_seed = 0) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset '" + path + "'");
  return parse_dataset(in, split_seed);
}

inline void write_dataset(std::ostream& out, std::span<const ImageRecord> records) {
  const std::size_t dim = records.empty() ? 0 : records[0].features.size();
  out << "id,class,split";
  for (std::size_t i = 0; i < dim; ++i) out << ",f" << i;
  out << '\n';
  for (const auto& r : records) {
    out << r.id << ',' << r.oracle_class << ',' << to_string(r.split);
    for (double f : r.features) out << ',' << detail::format_double(f);
    out << '\n';
  }
}

inline std::string dataset_to_csv(std::span<const ImageRecord> records) {
  std::ostringstream os;
  write_dataset(os, records);
  return os.str();
}

/// Gaussian class clusters: centers ~ N(0, 1)^d, members ~ center + N(0, stddev)^d.
/// Ids are 0..C*n-1 in class-major order; splits come from the same seed.
inline std::vector<ImageRecord> generate_synthetic(int classes, int per_class, int dim,
                                                   double stddev, std::uint64_t seed) {
  if (classes < 2) throw Error("synthetic: need at least 2 classes");
  if (per_class < 10) throw Error("synthetic: need at least 10 images per class");
  if (dim < 2) throw Error("synthetic: need at least 2 feature dims");
  if (!(stddev >= 0) || !std::isfinite(stddev)) throw Error("synthetic: stddev must be >= 0");
  Rng rng(seed);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<nn::Vector> centers(static_cast<std::size_t>(classes), nn::Vector(dim));
  for (auto& c : centers)
    for (double& x : c) x = unit(rng);
  std::vector<ImageRecord> records;
  records.reserve(static_cast<std::size_t>(classes) * per_class);
  ImageId next = 0;
  for (int c = 0; c < classes; ++c) {
    for (int j = 0; j < per_class; ++j) {
      ImageRecord r;
      r.id = next++;
      r.oracle_class = c;
      r.features = centers[c];
      for (double& x : r.features) x += stddev * unit(rng);
      records.push_back(std::move(r));
    }
  }
  std::vector<std::size_t> all(records.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  assign_splits(records, all, seed ^ 0x9e3779b97f4a7c15ULL);
  return records;
}

// --- initial labeled set ----------------------------------------------------

struct InitialSet {
  LabeledSet pairs;
  std::vector<ImageId> seed_images;
};

/// Picks ceil(seed_fraction * |train|) seed images and labels, for each,
/// `per_seed_similar` same-class partners and `per_seed_dissimilar`
/// partners drawn from a uniformly chosen other class. Canonical
/// duplicates collapse.
inline InitialSet build_initial_set(const Dataset& data, double seed_fraction,
                                    std::size_t per_seed_similar,
                                    std::size_t per_seed_dissimilar, Rng& rng) {
  if (!(seed_fraction >= 0.0 && seed_fraction <= 1.0))
    throw Error("seed_fraction must lie in [0, 1]");
  const auto& train = data.ids(Split::train);
  std::map<int, std::vector<ImageId>> by_class;
  for (ImageId id : train) by_class[data.at(id).oracle_class].push_back(id);

  InitialSet out;
  if (per_seed_similar == 0 && per_seed_dissimilar == 0) return out;

  for (const auto& [cls, members] : by_class)
    if (per_seed_similar > 0 && members.size() < per_seed_similar + 1)
      throw Error("class " + std::to_string(cls) + " has " + std::to_string(members.size()) +
                  " train images; need " + std::to_string(per_seed_similar + 1) +
                  " for similar partners");

  const auto n_seeds = static_cast<std::size_t>(
      std::ceil(seed_fraction * static_cast<double>(train.size()) - 1e-9));
  std::vector<ImageId> shuffled = train;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  shuffled.resize(std::min(n_seeds, shuffled.size()));
  out.seed_images = shuffled;

  for (ImageId seed : out.seed_images) {
    const int cls = data.at(seed).oracle_class;
    std::vector<ImageId> same;
    for (ImageId id : by_class[cls])
      if (id != seed) same.push_back(id);
    std::vector<ImageId> picked;
    std::sample(same.begin(), same.end(), std::back_inserter(picked),
                static_cast<std::ptrdiff_t>(per_seed_similar), rng);
    for (ImageId p : picked)
      out.pairs.add({canonicalize(seed, p), kSimilar, Provenance::seed});

    std::vector<int> others;
    for (const auto& [c, members] : by_class)
      if (c != cls) others.push_back(c);
    std::size_t other_total = 0;
    for (int c : others) other_total += by_class[c].size();
    if (per_seed_dissimilar > 0 && other_total < per_seed_dissimilar)
      throw Error("class " + std::to_string(cls) + " lacks " + std::to_string(per_seed_dissimilar) +
                  " dissimilar partners");
    std::set<ImageId> chosen;
    while (chosen.size() < per_seed_dissimilar) {
      std::uniform_int_distribution<std::size_t> pick_class(0, others.size() - 1);
      const auto& members = by_class[others[pick_class(rng)]];
      std::uniform_int_distribution<std::size_t> pick(0, members.size() - 1);
      const ImageId p = members[pick(rng)];
      if (chosen.insert(p).second)
        out.pairs.add({canonicalize(seed, p), kDissimilar, Provenance::seed});
    }
  }
  return out;
}

// --- oversampling -------------------------------------------------------------

/// One epoch of batches (indices into `labels`). The minority label is
/// replicated with replacement until both labels occur equally often;
/// every majority example appears exactly once.
inline std::vector<std::vector<std::size_t>> oversample_batches(std::span<const int> labels,
                                                                std::size_t batch_size, Rng& rng) {
  if (batch_size == 0) throw Error("batch_size must be positive");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < labels.size(); ++i) (labels[i] == kSimilar ? pos : neg).push_back(i);

  std::vector<std::size_t> epoch;
  if (pos.empty() || neg.empty()) {
    if (!labels.empty()) log::warn("oversampling: only one label present, plain shuffle");
    epoch.resize(labels.size());
    std::iota(epoch.begin(), epoch.end(), std::size_t{0});
  } else {
    auto& minority = pos.size() < neg.size() ? pos : neg;
    auto& majority = pos.size() < neg.size() ? neg : pos;
    epoch = majority;
    const std::size_t copies = majority.size() / minority.size();
    for (std::size_t c = 0; c < copies; ++c) epoch.insert(epoch.end(), minority.begin(), minority.end());
    const std::size_t rest = majority.size() - copies * minority.size();
    std::sample(minority.begin(), minority.end(), std::back_inserter(epoch),
                static_cast<std::ptrdiff_t>(rest), rng);
  }
  std::shuffle(epoch.begin(), epoch.end(), rng);

  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < epoch.size(); i += batch_size)
    batches.emplace_back(epoch.begin() + static_cast<std::ptrdiff_t>(i),
                         epoch.begin() + static_cast<std::ptrdiff_t>(std::min(epoch.size(), i + batch_size)));
  return batches;
}

}  // namespace anneal
