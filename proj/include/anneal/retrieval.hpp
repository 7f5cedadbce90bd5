#pragma once

// Cosine retrieval over encoder embeddings, AP@k / mAP@k, and the
// results-CSV curve files.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "anneal/data_pool.hpp"
#include "anneal/error.hpp"
#include "anneal/nn.hpp"

namespace anneal {

struct RetrievalResult {
  ImageId query = 0;
  std::vector<ImageId> ids;     // best first
  std::vector<double> scores;   // non-increasing
};

/// Ranks gallery items by cosine similarity to the query embedding,
/// descending, ties by id ascending. k is truncated to the gallery size.
inline RetrievalResult retrieve_topk(ImageId query, std::span<const double> query_embedding,
                                     std::span<const ImageId> gallery_ids,
                                     std::span<const nn::Vector> gallery_embeddings,
                                     std::size_t k) {
  if (gallery_ids.empty()) throw Error("retrieve_topk: empty gallery");
  if (gallery_ids.size() != gallery_embeddings.size())
    throw DimensionError("retrieve_topk: gallery ids and embeddings differ in length");
  if (k > gallery_ids.size()) {
    log::warn("retrieve_topk: k=" + std::to_string(k) + " exceeds gallery size " +
              std::to_string(gallery_ids.size()));
    k = gallery_ids.size();
  }
  std::vector<double> s(gallery_ids.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (gallery_ids[i] == query) throw Error("retrieve_topk: query is part of the gallery");
    s[i] = nn::cosine_similarity(query_embedding, gallery_embeddings[i]);
  }
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto cmp = [&](std::size_t a, std::size_t b) {
    return s[a] != s[b] ? s[a] > s[b] : gallery_ids[a] < gallery_ids[b];
  };
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), cmp);
  RetrievalResult r{query, {}, {}};
  for (std::size_t i = 0; i < k; ++i) {
    r.ids.push_back(gallery_ids[order[i]]);
    r.scores.push_back(s[order[i]]);
  }
  return r;
}

/// (sum_i P@i * rel_i) / min(total_relevant, k); 0 when that is 0.
inline double average_precision_at_k(std::span<const int> relevance,
                                     std::size_t total_relevant_in_gallery) {
  const std::size_t denom = std::min(total_relevant_in_gallery, relevance.size());
  if (denom == 0) return 0.0;
  double hits = 0.0, sum = 0.0;
  for (std::size_t i = 0; i < relevance.size(); ++i) {
    if (!relevance[i]) continue;
    hits += 1.0;
    sum += hits / static_cast<double>(i + 1);
  }
  return sum / static_cast<double>(denom);
}

struct MapResult {
  double map = 0.0;
  std::size_t queries = 0;
  std::size_t zero_relevant_queries = 0;  // counted with AP = 0
  std::vector<RetrievalResult> rankings;
};

struct EvalOptions {
  std::size_t k = 5;
  std::size_t threads = 1;
  bool keep_rankings = false;
};

/// mAP@k with validation images as queries against the test gallery;
/// relevance is equality of oracle class. `embed_fn(features)` yields the
/// retrieval embedding.
template <class EmbedFn>
MapResult map_at_k(EmbedFn&& embed_fn, const Dataset& data, const EvalOptions& opts = {}) {
  const auto& queries = data.ids(Split::validation);
  const auto& gallery = data.ids(Split::test);
  if (queries.empty()) throw Error("map_at_k: validation split is empty");
  if (gallery.empty()) throw Error("map_at_k: test split is empty");
  if (opts.k == 0) throw Error("map_at_k: k must be positive");

  std::vector<nn::Vector> gallery_emb(gallery.size());
  std::vector<int> class_count(static_cast<std::size_t>(data.num_classes()), 0);
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    gallery_emb[i] = embed_fn(data.features(gallery[i]));
    ++class_count[static_cast<std::size_t>(data.at(gallery[i]).oracle_class)];
  }

  std::vector<double> ap(queries.size());
  std::vector<RetrievalResult> rankings(opts.keep_rankings ? queries.size() : 0);
  auto work = [&](std::size_t begin, std::size_t end) {
    for (std::size_t q = begin; q < end; ++q) {
      const auto& rec = data.at(queries[q]);
      const auto emb = embed_fn(std::span<const double>(rec.features));
      auto res = retrieve_topk(rec.id, emb, gallery, gallery_emb, std::min(opts.k, gallery.size()));
      std::vector<int> rel;
      for (ImageId id : res.ids) rel.push_back(data.at(id).oracle_class == rec.oracle_class);
      ap[q] = average_precision_at_k(rel, static_cast<std::size_t>(class_count[rec.oracle_class]));
      if (opts.keep_rankings) rankings[q] = std::move(res);
    }
  };
  const std::size_t threads = std::max<std::size_t>(1, std::min(opts.threads, queries.size()));
  if (threads == 1) {
    work(0, queries.size());
  } else {
    std::vector<std::thread> pool;
    const std::size_t chunk = (queries.size() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t b = t * chunk, e = std::min(queries.size(), b + chunk);
      if (b < e) pool.emplace_back(work, b, e);
    }
    for (auto& th : pool) th.join();
  }

  MapResult r;
  r.queries = queries.size();
  for (std::size_t q = 0; q < queries.size(); ++q) {
    r.map += ap[q];
    if (class_count[data.at(queries[q]).oracle_class] == 0) ++r.zero_relevant_queries;
  }
  r.map /= static_cast<double>(queries.size());
  if (r.zero_relevant_queries > 0)
    log::info("map_at_k: " + std::to_string(r.zero_relevant_queries) +
              " queries have no relevant gallery item (AP = 0)");
  r.rankings = std::move(rankings);
  return r;
}

/// `query_id,rank,gallery_id,score,relevant` for every ranked item.
inline void write_ranking_dump(std::ostream& os, const MapResult& r, const Dataset& data) {
  os << "query_id,rank,gallery_id,score,relevant\n";
  char buf[40];
  for (const auto& q : r.rankings) {
    const int cls = data.at(q.query).oracle_class;
    for (std::size_t i = 0; i < q.ids.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.9g", q.scores[i]);
      os << q.query << ',' << i + 1 << ',' << q.ids[i] << ',' << buf << ','
         << (data.at(q.ids[i]).oracle_class == cls ? 1 : 0) << '\n';
    }
  }
}

// --- results curves ----------------------------------------------------------------

struct HistoryRow {
  std::size_t iteration = 0;
  double bits = 0.0;
  std::string strategy;
  std::uint64_t seed = 0;
  double map_at_5 = 0.0;
  std::size_t labeled_pairs = 0;
  std::size_t transitive_pairs = 0;  // added in this iteration

  friend bool operator==(const HistoryRow&, const HistoryRow&) = default;
};

inline constexpr const char* kResultsHeader =
    "iteration,bits,strategy,seed,map_at_5,labeled_pairs,transitive_pairs";

inline std::string format_sig9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline void write_results(std::ostream& os, std::span<const HistoryRow> history) {
  os << kResultsHeader << '\n';
  for (const auto& h : history)
    os << h.iteration << ',' << format_sig9(h.bits) << ',' << h.strategy << ',' << h.seed << ','
       << format_sig9(h.map_at_5) << ',' << h.labeled_pairs << ',' << h.transitive_pairs << '\n';
}

inline void export_curve(std::span<const HistoryRow> history, const std::string& path) {
  if (history.empty()) throw Error("export_curve: history is empty");
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Error("export_curve: cannot open '" + path + "'");
  write_results(os, history);
  os.flush();
  if (!os) throw Error("export_curve: write failed for '" + path + "'");
}

inline std::vector<HistoryRow> parse_results(std::istream& in) {
  std::string line;
  std::size_t no = 0;
  if (!std::getline(in, line)) throw ParseError("missing header", 1);
  ++no;
  if (detail::trim(line) != kResultsHeader) throw ParseError("unexpected results header", 1);
  std::vector<HistoryRow> rows;
  while (std::getline(in, line)) {
    ++no;
    if (detail::trim(line).empty()) continue;
    auto c = detail::split_csv_line(detail::trim(line));
    if (c.size() != 7) throw ParseError("expected 7 columns", no);
    HistoryRow h;
    if (!detail::parse_int(c[0], h.iteration) || !detail::parse_double(c[1], h.bits) ||
        !detail::parse_int(c[3], h.seed) || !detail::parse_double(c[4], h.map_at_5) ||
        !detail::parse_int(c[5], h.labeled_pairs) || !detail::parse_int(c[6], h.transitive_pairs))
      throw ParseError("malformed results row", no);
    h.strategy = std::string(c[2]);
    rows.push_back(std::move(h));
  }
  return rows;
}

inline std::vector<HistoryRow> read_curve(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open results '" + path + "'");
  return parse_results(in);
}

}  // namespace anneal
