#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "anneal/error.hpp"
#include "anneal/nn.hpp"

namespace anneal {

struct KMeansOptions {
  std::size_t max_iterations = 100;
  double tolerance = 1e-6;  // stop once the largest centroid shift falls below
};

struct KMeansResult {
  std::vector<nn::Vector> centroids;
  std::vector<std::size_t> assignment;
  // Inertia after each assignment step, starting with the k-means++ seeding.
  std::vector<double> inertia_trace;
  std::size_t iterations = 0;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double t = a[i] - b[i];
    d += t * t;
  }
  return d;
}

namespace detail {

inline double assign_points(std::span<const nn::Vector> points,
                            std::span<const nn::Vector> centroids,
                            std::vector<std::size_t>& assignment) {
  double inertia = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    std::size_t arg = 0;
    for (std::size_t c = 0; c < centroids.size(); ++c) {
      const double d = squared_distance(points[i], centroids[c]);
      if (d < best) {
        best = d;
        arg = c;
      }
    }
    assignment[i] = arg;
    inertia += best;
  }
  return inertia;
}

}  // namespace detail

/// k-means++ seeding followed by Lloyd iterations. Empty clusters keep
/// their previous centroid. Throws if inertia ever increases between
/// assignment steps (beyond rounding).
template <class Rng>
KMeansResult kmeans(std::span<const nn::Vector> points, std::size_t k, Rng& rng,
                    const KMeansOptions& opts = {}) {
  if (k == 0) throw Error("kmeans: k must be positive");
  if (points.size() < k) throw Error("kmeans: fewer points than clusters");
  const std::size_t n = points.size();
  const std::size_t dim = points[0].size();
  for (const auto& p : points)
    if (p.size() != dim) throw DimensionError("kmeans: points of unequal dimension");

  KMeansResult r;
  r.assignment.assign(n, 0);

  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  r.centroids.push_back(points[first(rng)]);
  std::vector<double> mind(n);
  for (std::size_t i = 0; i < n; ++i) mind[i] = squared_distance(points[i], r.centroids[0]);
  while (r.centroids.size() < k) {
    const double total = std::accumulate(mind.begin(), mind.end(), 0.0);
    std::size_t pick = 0;
    if (total > 0.0) {
      std::uniform_real_distribution<double> u(0.0, total);
      double target = u(rng);
      pick = n - 1;
      for (std::size_t i = 0; i < n; ++i) {
        if (mind[i] <= 0.0) continue;
        target -= mind[i];
        if (target <= 0.0) {
          pick = i;
          break;
        }
      }
      while (mind[pick] <= 0.0 && pick > 0) --pick;
    } else {
      // all remaining points coincide with existing centroids
      pick = first(rng);
    }
    r.centroids.push_back(points[pick]);
    for (std::size_t i = 0; i < n; ++i)
      mind[i] = std::min(mind[i], squared_distance(points[i], r.centroids.back()));
  }

  r.inertia_trace.push_back(detail::assign_points(points, r.centroids, r.assignment));
  std::vector<nn::Vector> sums(k, nn::Vector(dim));
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < opts.max_iterations; ++it) {
    for (auto& s : sums) std::fill(s.begin(), s.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      auto& s = sums[r.assignment[i]];
      for (std::size_t d = 0; d < dim; ++d) s[d] += points[i][d];
      ++counts[r.assignment[i]];
    }
    double shift = 0.0;
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (auto& x : sums[c]) x /= static_cast<double>(counts[c]);
      shift = std::max(shift, std::sqrt(squared_distance(sums[c], r.centroids[c])));
      r.centroids[c] = sums[c];
    }
    const double inertia = detail::assign_points(points, r.centroids, r.assignment);
    const double prev = r.inertia_trace.back();
    if (inertia > prev + 1e-9 * std::max(1.0, prev))
      throw NumericError("kmeans: inertia increased from " + std::to_string(prev) + " to " +
                         std::to_string(inertia));
    r.inertia_trace.push_back(inertia);
    r.iterations = it + 1;
    if (shift < opts.tolerance) break;
  }
  return r;
}

/// Diversity selection shared by the pair and image samplers: cluster the
/// candidates into k groups, take the lowest-score member of each non-empty
/// cluster (ties by key), then backfill from the globally lowest-score
/// unselected candidates. Returns candidate indices sorted by (score, key).
template <class Key, class Rng>
std::vector<std::size_t> select_one_per_cluster(std::span<const nn::Vector> points,
                                                std::span<const double> scores,
                                                std::span<const Key> keys, std::size_t k,
                                                Rng& rng, KMeansResult* clustering = nullptr) {
  const std::size_t n = points.size();
  if (scores.size() != n || keys.size() != n)
    throw DimensionError("diversity selection: points, scores and keys differ in length");
  auto before = [&](std::size_t i, std::size_t j) {
    return scores[i] != scores[j] ? scores[i] < scores[j] : keys[i] < keys[j];
  };
  std::vector<std::size_t> out;
  if (k == 0) return out;
  if (n <= k) {
    if (n < k) log::warn("diversity selection: only " + std::to_string(n) + " candidates for k=" +
                         std::to_string(k));
    out.resize(n);
    std::iota(out.begin(), out.end(), std::size_t{0});
    std::sort(out.begin(), out.end(), before);
    return out;
  }
  auto km = kmeans(points, k, rng);
  constexpr std::size_t none = static_cast<std::size_t>(-1);
  std::vector<std::size_t> best(k, none);
  for (std::size_t i = 0; i < n; ++i) {
    auto& b = best[km.assignment[i]];
    if (b == none || before(i, b)) b = i;
  }
  std::vector<char> taken(n, 0);
  for (auto b : best)
    if (b != none) {
      out.push_back(b);
      taken[b] = 1;
    }
  if (out.size() < k) {
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < n; ++i)
      if (!taken[i]) rest.push_back(i);
    std::sort(rest.begin(), rest.end(), before);
    for (std::size_t i = 0; out.size() < k && i < rest.size(); ++i) out.push_back(rest[i]);
  }
  std::sort(out.begin(), out.end(), before);
  if (clustering) *clustering = std::move(km);
  return out;
}

}  // namespace anneal
