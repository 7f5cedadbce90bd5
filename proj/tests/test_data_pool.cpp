#include <gtest/gtest.h>

#include <set>
#include <sstream>

#include "anneal/data_pool.hpp"

using namespace anneal;

namespace {

std::vector<ImageRecord> parse(const std::string& text, std::uint64_t seed = 0) {
  std::istringstream in(text);
  return parse_dataset(in, seed);
}

}  // namespace

TEST(Pairs, CanonicalizeOrdersIds) {
  EXPECT_EQ(canonicalize(7, 3), (Pair{3, 7}));
  EXPECT_EQ(canonicalize(3, 7), (Pair{3, 7}));
  EXPECT_THROW(canonicalize(4, 4), Error);
}

TEST(Pairs, PairIdRoundTrip) {
  const Pair p{12, 40};
  EXPECT_EQ(pair_id(p), "12-40");
  EXPECT_EQ(parse_pair_id("12-40"), p);
  EXPECT_FALSE(parse_pair_id("40-12"));
  EXPECT_FALSE(parse_pair_id("12"));
  EXPECT_FALSE(parse_pair_id("a-b"));
  EXPECT_FALSE(parse_pair_id("../1-2"));
}

TEST(LabeledSet, AnnotatedLabelReplacesTransitive) {
  LabeledSet t;
  EXPECT_EQ(t.add({{1, 2}, kSimilar, Provenance::transitive}), LabeledSet::AddResult::inserted);
  EXPECT_EQ(t.add({{1, 2}, kDissimilar, Provenance::human}), LabeledSet::AddResult::replaced);
  EXPECT_EQ(t.find({1, 2})->label, kDissimilar);
  EXPECT_EQ(t.add({{1, 2}, kSimilar, Provenance::human}), LabeledSet::AddResult::kept_existing);
  EXPECT_EQ(t.find({1, 2})->label, kDissimilar);
  EXPECT_EQ(t.size(), 1u);
}

TEST(LabeledSet, RejectsNonCanonicalAndBadLabels) {
  LabeledSet t;
  EXPECT_THROW(t.add({{2, 1}, kSimilar, Provenance::seed}), Error);
  EXPECT_THROW(t.add({{1, 2}, 3, Provenance::seed}), Error);
}

TEST(DatasetCsv, ParsesHeaderCommentsAndSplits) {
  const auto recs = parse(
      "# comment\n"
      "id,class,split,f0,f1\n"
      "1,0,train,0.5,1\n"
      "2,1,validation,-1,2.5\n"
      "3,1,test,0,0\n");
  ASSERT_EQ(recs.size(), 3u);
  EXPECT_EQ(recs[1].split, Split::validation);
  EXPECT_EQ(recs[1].features, (std::vector<double>{-1, 2.5}));
  Dataset d(recs);
  EXPECT_EQ(d.num_classes(), 2);
  EXPECT_EQ(d.dim(), 2u);
  EXPECT_EQ(d.ids(Split::test), (std::vector<ImageId>{3}));
}

TEST(DatasetCsv, ErrorsCarryLineNumbers) {
  try {
    parse("id,class,split,f0\n1,0,train,0.5\n2,0,train,abc\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  try {
    parse("id,class,split,f0,f1\n1,0,train,0.5\n");
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 2u);
  }
  EXPECT_THROW(parse("id,class,split,f0\n1,0,holdout,0.5\n"), ParseError);
}

TEST(DatasetCsv, DuplicateIdsRejected) {
  EXPECT_THROW(Dataset(parse("id,class,split,f0\n1,0,train,0\n1,0,test,1\n")), Error);
}

TEST(DatasetCsv, MissingSplitsAssignedBySeed) {
  std::string text = "id,class,split,f0\n";
  for (int i = 0; i < 100; ++i) text += std::to_string(i) + "," + std::to_string(i % 5) + ",,0.5\n";
  const auto a = parse(text, 11), b = parse(text, 11), c = parse(text, 12);
  std::size_t tr = 0, va = 0, te = 0;
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].split, b[i].split);
    differs |= a[i].split != c[i].split;
    tr += a[i].split == Split::train;
    va += a[i].split == Split::validation;
    te += a[i].split == Split::test;
  }
  EXPECT_EQ(tr, 80u);
  EXPECT_EQ(va, 10u);
  EXPECT_EQ(te, 10u);
  EXPECT_TRUE(differs);
}

TEST(DatasetCsv, WriteThenParseIsLossless) {
  const auto recs = generate_synthetic(3, 10, 4, 0.7, 5);
  const auto again = parse(dataset_to_csv(recs));
  ASSERT_EQ(again.size(), recs.size());
  for (std::size_t i = 0; i < recs.size(); ++i) {
    EXPECT_EQ(again[i].id, recs[i].id);
    EXPECT_EQ(again[i].oracle_class, recs[i].oracle_class);
    EXPECT_EQ(again[i].split, recs[i].split);
    EXPECT_EQ(again[i].features, recs[i].features);
  }
}

TEST(Synthetic, ShapeAndDeterminism) {
  const auto a = generate_synthetic(10, 100, 64, 0.3, 1);
  EXPECT_EQ(a.size(), 1000u);
  EXPECT_EQ(a[0].features.size(), 64u);
  EXPECT_EQ(dataset_to_csv(a), dataset_to_csv(generate_synthetic(10, 100, 64, 0.3, 1)));
  EXPECT_NE(dataset_to_csv(a), dataset_to_csv(generate_synthetic(10, 100, 64, 0.3, 2)));
  std::vector<int> per_class(10);
  for (const auto& r : a) ++per_class[r.oracle_class];
  for (int c : per_class) EXPECT_EQ(c, 100);
}

TEST(InitialSet, FourAndFourPerSeedImage) {
  Dataset d(generate_synthetic(10, 100, 8, 0.3, 4));
  Rng rng(2);
  const auto init = build_initial_set(d, 0.05, 4, 4, rng);
  EXPECT_EQ(init.seed_images.size(), 40u);  // ceil(0.05 * 800)
  std::set<ImageId> seeds(init.seed_images.begin(), init.seed_images.end());
  EXPECT_EQ(seeds.size(), 40u);
  std::map<ImageId, std::pair<int, int>> per_seed;
  for (const auto& [p, lp] : init.pairs) {
    EXPECT_EQ(d.at(p.a).split, Split::train);
    EXPECT_EQ(d.at(p.b).split, Split::train);
    const bool same = d.at(p.a).oracle_class == d.at(p.b).oracle_class;
    EXPECT_EQ(lp.label, same ? kSimilar : kDissimilar);
    EXPECT_EQ(lp.provenance, Provenance::seed);
  }
  for (ImageId s : init.seed_images) {
    int sim = 0, dis = 0;
    for (const auto& [p, lp] : init.pairs)
      if (p.a == s || p.b == s) (lp.label == kSimilar ? sim : dis)++;
    EXPECT_GE(sim, 4);
    EXPECT_GE(dis, 4);
  }
  EXPECT_LE(init.pairs.size(), 320u);
  EXPECT_GE(init.pairs.size(), 300u);
}

TEST(InitialSet, TooSmallClassNamed) {
  std::vector<ImageRecord> recs;
  for (int i = 0; i < 20; ++i) recs.push_back({i, {0.0}, i < 3 ? 0 : 1, Split::train});
  Dataset d(recs);
  Rng rng(1);
  try {
    build_initial_set(d, 0.5, 4, 4, rng);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("class 0"), std::string::npos);
  }
}

TEST(Oversampling, BalancesLabelsExactly) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::uniform_int_distribution<int> n(1, 60), m(1, 60);
    std::vector<int> labels(static_cast<std::size_t>(n(rng)), kSimilar);
    labels.resize(labels.size() + static_cast<std::size_t>(m(rng)), kDissimilar);
    const auto batches = oversample_batches(labels, 8, rng);
    std::size_t pos = 0, neg = 0;
    std::map<std::size_t, int> seen;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      if (b + 1 < batches.size()) {
        EXPECT_EQ(batches[b].size(), 8u);
      }
      for (auto i : batches[b]) {
        (labels[i] == kSimilar ? pos : neg)++;
        ++seen[i];
      }
    }
    EXPECT_EQ(pos, neg);
    // every example appears at least once
    EXPECT_EQ(seen.size(), labels.size());
  }
}

TEST(Oversampling, SingleLabelIsPlainShuffle) {
  Rng rng(1);
  const std::vector<int> labels(10, kSimilar);
  std::size_t total = 0;
  for (const auto& b : oversample_batches(labels, 4, rng)) total += b.size();
  EXPECT_EQ(total, 10u);
}
