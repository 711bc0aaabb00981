#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <set>

#include "amran/graph.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace amran;
using namespace amran::graph;
using data::Index;
using data::InteractionDataset;

namespace {

InteractionDataset make_dataset(int n, int m, const std::vector<oracle::Posting>& posts) {
  InteractionDataset ds;
  for (int u = 0; u < n; ++u) {
    ds.user_ids.push_back("u" + std::to_string(u));
    ds.user_index.emplace(ds.user_ids.back(), u);
  }
  for (int c = 0; c < m; ++c) {
    ds.url_ids.push_back("c" + std::to_string(c));
    ds.url_index.emplace(ds.url_ids.back(), c);
  }
  std::int64_t order = 0;
  for (const auto& p : posts) ds.interactions.push_back({p.user, p.url, order, order, p.count}), ++order;
  return ds;
}

std::vector<oracle::Posting> random_posts(Rng& rng, int n, int m) {
  std::vector<oracle::Posting> posts;
  std::bernoulli_distribution keep(0.45);
  std::uniform_int_distribution<int> times(1, 4);
  for (int u = 0; u < n; ++u)
    for (int c = 0; c < m; ++c)
      if (keep(rng)) posts.push_back({u, c, times(rng)});
  return posts;
}

void expect_matches(const SparseMatrix& got, const oracle::Dense& want, double tol) {
  ASSERT_EQ(got.rows(), want.size());
  for (std::size_t i = 0; i < want.size(); ++i) {
    for (const auto& e : got.row(i)) EXPECT_GT(e.value, 0.0);
    for (std::size_t j = 0; j < want[i].size(); ++j) EXPECT_NEAR(got.at(i, j), want[i][j], tol) << i << "," << j;
  }
}

}  // namespace

TEST(Cooccurrence, ThreeUserExample) {
  // u1:{A,B}, u2:{A,B}, u3:{A}
  const auto ds = make_dataset(3, 2, {{0, 0, 1}, {0, 1, 1}, {1, 0, 1}, {1, 1, 1}, {2, 0, 1}});
  const auto c = build_cooccurrence_counts(ds);
  EXPECT_EQ(c.users.pairs.at(0, 1), 2.0);
  EXPECT_EQ(c.users.pairs.at(0, 2), 1.0);
  EXPECT_EQ(c.users.pairs.at(1, 2), 1.0);
  EXPECT_EQ(c.users.pairs.at(1, 0), 2.0);
  EXPECT_EQ(c.users.total, 8.0);
  EXPECT_EQ(c.users.marginal[0], 3.0);
  // URLs A,B both posted by {u1,u2}
  EXPECT_EQ(c.urls.pairs.at(0, 1), 2.0);

  const auto s1 = compute_sppmi(c.users, 1.0);
  EXPECT_NEAR(s1.at(0, 1), std::log(16.0 / 9.0), 1e-12);
  EXPECT_NEAR(s1.at(0, 1), 0.575, 5e-4);
  const auto s2 = compute_sppmi(c.users, 2.0);
  EXPECT_EQ(s2.at(0, 1), 0.0);
  EXPECT_EQ(s2.row(0).size(), 0u);
  EXPECT_THROW(compute_sppmi(c.users, 0.0), ConfigError);
}

TEST(Cooccurrence, SingleUserHasNoPairs) {
  const auto ds = make_dataset(1, 3, {{0, 0, 1}, {0, 1, 1}});
  const auto c = build_cooccurrence_counts(ds);
  EXPECT_EQ(c.users.pairs.nnz(), 0u);
  EXPECT_EQ(c.users.total, 0.0);
}

TEST(Tfidf, Examples) {
  // user posted A x3, B x1; m = 4
  const auto ds = make_dataset(1, 4, {{0, 0, 3}, {0, 1, 1}});
  const auto t = compute_tfidf(ds);
  EXPECT_NEAR(t.at(0, 0), std::log(2.0), 1e-12);
  EXPECT_NEAR(t.at(0, 1), std::log(2.0) / 3.0, 1e-12);
  EXPECT_NEAR(t.at(0, 1), 0.231, 5e-4);
  const auto all = make_dataset(1, 2, {{0, 0, 1}, {0, 1, 2}});
  EXPECT_EQ(compute_tfidf(all).nnz(), 0u);
}

TEST(Sppmi, MatchesBruteForceOracle) {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 9), m = 2 + static_cast<int>(rng() % 9);
    const auto posts = random_posts(rng, n, m);
    const auto ds = make_dataset(n, m, posts);
    const double k = std::vector<double>{1, 2, 5, 10}[rng() % 4];
    const auto c = build_cooccurrence_counts(ds);
    const auto y = oracle::incidence(posts, n, m);
    expect_matches(compute_sppmi(c.users, k), oracle::sppmi_rows(y, k), 1e-12);
    expect_matches(compute_sppmi(c.urls, k), oracle::sppmi_rows(oracle::transpose(y), k), 1e-12);
    expect_matches(compute_tfidf(ds), oracle::tfidf(posts, n, m), 1e-12);
  }
}

TEST(Sppmi, SymmetricNonnegativeMonotoneInShift) {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const auto posts = random_posts(rng, 9, 8);
    const auto c = build_cooccurrence_counts(make_dataset(9, 8, posts));
    SparseMatrix prev;
    bool first = true;
    for (double k : {1.0, 1.5, 2.0, 5.0, 10.0}) {
      const auto s = compute_sppmi(c.users, k);
      for (std::size_t i = 0; i < 9; ++i)
        for (std::size_t j = 0; j < 9; ++j) {
          EXPECT_GE(s.at(i, j), 0.0);
          EXPECT_EQ(s.at(i, j), s.at(j, i));
          if (!first) { EXPECT_LE(s.at(i, j), prev.at(i, j)); }
        }
      prev = s;
      first = false;
    }
  }
}

TEST(HeteroGraph, AdjacencyBlocksAndIdempotence) {
  Rng rng(3);
  const auto posts = random_posts(rng, 6, 5);
  const auto ds = make_dataset(6, 5, posts);
  const auto g = build_graph(ds, 1.0);
  const auto tf = compute_tfidf(ds);
  for (std::int64_t v = 0; v < static_cast<std::int64_t>(g.num_nodes()); ++v) {
    EXPECT_EQ(g.weight(v, v), 1.0);
    for (auto t : {NodeType::user, NodeType::url})
      for (const auto& nb : g.neighbors(v, t)) {
        EXPECT_NE(nb.node, v);
        EXPECT_GT(nb.weight, 0.0);
        EXPECT_EQ(g.type(nb.node), t);
        EXPECT_EQ(g.weight(v, nb.node), g.weight(nb.node, v));
      }
  }
  for (Index u = 0; u < 6; ++u)
    for (Index c = 0; c < 5; ++c) EXPECT_EQ(g.weight(g.user_node(u), g.url_node(c)), tf.at(u, c));
  EXPECT_TRUE(build_graph(ds, 1.0) == g);
  EXPECT_THROW(assemble_adjacency(g.user_user(), g.url_url(), SparseMatrix(3, 3), 1.0), ShapeError);
}

TEST(HeteroGraph, PersistenceRoundTrip) {
  testutil::TempDir dir;
  Rng rng(5);
  const auto ds = make_dataset(7, 6, random_posts(rng, 7, 6));
  const auto g = build_graph(ds, 2.0);
  write_graph(g, dir.str(), ds);
  EXPECT_TRUE(read_graph(dir.str()) == g);
}

TEST(CsanStreams, PaddingTruncationAndExclusion) {
  // user 0 follows 1 and 2 only
  std::vector<oracle::Posting> posts;
  for (int u = 0; u < 14; ++u)
    for (int c = 0; c < 4; ++c)
      if (u == 0 || c == u % 4 || c == 0) posts.push_back({u, c, 1});
  auto ds = make_dataset(14, 5, posts);
  ds.social_edges = {{0, 1}, {0, 2}};
  const auto g = build_graph(ds, 1.0);
  const auto idx = ContextIndex::build(ds, g);
  const auto ctx = select_csan_neighbors(g, idx, 0, 2, 10);
  EXPECT_EQ(ctx.social_users.real(), 2u);
  EXPECT_EQ(ctx.social_users.padded.size(), 10u);
  EXPECT_EQ(std::count(ctx.social_users.ids.begin(), ctx.social_users.ids.end(), -1), 8);
  for (std::size_t k = 0; k < 10; ++k) EXPECT_EQ(ctx.social_users.padded[k] != 0, ctx.social_users.ids[k] < 0);

  EXPECT_EQ(ctx.cooccur_users.real(), std::min<std::size_t>(10, g.user_user().row(0).size()));
  // top-b by weight: every kept weight >= every dropped weight
  std::vector<double> all;
  for (const auto& e : g.user_user().row(0)) all.push_back(e.value);
  std::sort(all.rbegin(), all.rend());
  for (std::size_t k = 0; k < ctx.cooccur_users.real(); ++k)
    EXPECT_EQ(g.user_user().at(0, ctx.cooccur_users.ids[k]), all[k]);

  for (auto id : ctx.historical_urls.ids) EXPECT_NE(id, 2);
  EXPECT_EQ(ctx.historical_urls.real(), 3u);
  for (Index c = 0; c < 4; ++c)
    for (auto id : historical_stream(idx, 0, c, 10).ids) EXPECT_NE(id, c);
}

TEST(Wrs, ContractsAndErrors) {
  Rng rng(1);
  std::vector<Neighbor> one{{42, 0.3}};
  EXPECT_EQ(wrs_sample(one, 1, rng), std::vector<std::int64_t>{42});
  std::vector<Neighbor> three{{1, 1.0}, {2, 2.0}, {3, 0.5}};
  auto all = wrs_sample(three, 8, rng);
  EXPECT_EQ(std::set<std::int64_t>(all.begin(), all.end()), (std::set<std::int64_t>{1, 2, 3}));
  std::vector<Neighbor> bad{{1, 1.0}, {2, 0.0}};
  EXPECT_THROW(wrs_sample(bad, 1, rng), DomainError);
  EXPECT_THROW(wrs_sample(three, 0, rng), ConfigError);
}

TEST(Wrs, NoDuplicatesSubsetAndDeterminism) {
  Rng weights(9);
  std::uniform_real_distribution<double> w(0.01, 5.0);
  std::vector<Neighbor> cands;
  for (int k = 0; k < 30; ++k) cands.push_back({k * 3, w(weights)});
  for (std::uint64_t s = 0; s < 200; ++s) {
    Rng a(s), b(s);
    const auto x = wrs_sample(cands, 8, a);
    EXPECT_EQ(x, wrs_sample(cands, 8, b));
    std::set<std::int64_t> uniq(x.begin(), x.end());
    EXPECT_EQ(uniq.size(), 8u);
    for (auto v : x) EXPECT_EQ(v % 3, 0);
  }
}

TEST(Wrs, InclusionFrequencyNineToOne) {
  std::vector<Neighbor> cands{{0, 9.0}, {1, 1.0}};
  Rng rng(12345);
  int hits = 0;
  const int trials = 100000;
  for (int t = 0; t < trials; ++t) hits += wrs_sample(cands, 1, rng)[0] == 0;
  EXPECT_NEAR(static_cast<double>(hits) / trials, 0.9, 0.01);
}

TEST(HganSampler, TypedSlotsAndFrozenSamples) {
  Rng rng(4);
  const auto ds = make_dataset(12, 10, random_posts(rng, 12, 10));
  const auto g = build_graph(ds, 1.0);
  HganSampler s(g, 3, 77);
  for (std::int64_t v = 0; v < static_cast<std::int64_t>(g.num_nodes()); ++v) {
    const auto a = s.sample(v, 0);
    EXPECT_EQ(a.nodes, s.sample(v, 0).nodes);
    ASSERT_EQ(a.nodes.size(), 6u);
    for (std::size_t k = 0; k < 6; ++k) {
      if (!a.valid[k]) {
        EXPECT_EQ(a.nodes[k], -1);
        continue;
      }
      EXPECT_EQ(g.type(a.nodes[k]), k < 3 ? NodeType::user : NodeType::url);
      EXPECT_EQ(a.weights[k], g.weight(v, a.nodes[k]));
    }
    const auto users = g.neighbors(v, NodeType::user).size();
    EXPECT_EQ(std::count(a.valid.begin(), a.valid.begin() + 3, 1), static_cast<long>(std::min<std::size_t>(3, users)));
  }
  EXPECT_THROW(HganSampler(g, 0, 1), ConfigError);
}
