#include <gtest/gtest.h>

#include <cmath>

#include "amran/hgan.hpp"
#include "amran/toy.hpp"

using namespace amran;
using namespace amran::hgan;
using numeric::Tensor;

namespace {

// One central node (id 0) per layer with a fixed neighborhood; every node id
// appears at every frontier.
Frontiers manual_frontiers(std::size_t layers, std::size_t nodes, const graph::NeighborSample& s) {
  Frontiers f;
  f.nodes.assign(layers + 1, {});
  f.position.assign(layers + 1, {});
  f.samples.assign(layers, {});
  for (std::size_t l = 0; l < layers; ++l) {
    for (std::size_t k = 0; k < nodes; ++k) {
      f.nodes[l].push_back(static_cast<std::int64_t>(k));
      f.position[l][static_cast<std::int64_t>(k)] = k;
    }
    f.samples[l].push_back(s);
  }
  f.nodes[layers] = {0};
  f.position[layers][0] = 0;
  return f;
}

HganParams params(std::size_t d, std::size_t layers, double gate_bias) {
  auto p = HganParams::init(2, 2, d, layers, 1);
  for (std::size_t l = 0; l < layers; ++l) {
    std::fill(p.gate_w[l].values().begin(), p.gate_w[l].values().end(), 0.0);
    std::fill(p.gate_b[l].values().begin(), p.gate_b[l].values().end(), gate_bias);
  }
  return p;
}

Tensor rows(std::vector<std::vector<double>> r) {
  std::vector<double> flat;
  for (auto& row : r) flat.insert(flat.end(), row.begin(), row.end());
  return Tensor::from({r.size(), r[0].size()}, std::move(flat));
}

}  // namespace

TEST(Hgan, OppositeNeighborsGetLogisticWeights) {
  const auto h = rows({{1, 0, 0}, {2, 0, 0}, {-1, 0, 0}, {0, 1, 0}});
  const graph::NeighborSample s{{1, 2, 3, -1}, {1, 1, 1, 0}, {1, 1, 1, 0}};
  const auto f = manual_frontiers(1, 4, s);
  std::vector<LayerTrace> trace;
  hgan_layer(h, f, 0, params(3, 1, 0.0), {}, &trace);
  ASSERT_EQ(trace.size(), 1u);
  const auto& a = trace[0].alpha;
  EXPECT_NEAR(a[0], std::exp(1.0) / (std::exp(1.0) + std::exp(-1.0)), 1e-12);
  EXPECT_NEAR(a[0], 0.881, 5e-4);
  EXPECT_NEAR(a[1], 0.119, 5e-4);
  EXPECT_DOUBLE_EQ(a[2], 1.0);
  EXPECT_EQ(a[3], 0.0);
}

TEST(Hgan, AttentionIsSimplexPerTypeGroup) {
  Rng rng(4);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int t = 0; t < 50; ++t) {
    const std::size_t k = 2 * (1 + t % 4), n = k + 1;
    std::vector<std::vector<double>> hv(n, std::vector<double>(5));
    for (auto& r : hv)
      for (auto& v : r) v = u(rng);
    graph::NeighborSample s;
    for (std::size_t j = 0; j < k; ++j) {
      const bool ok = rng() % 4 != 0;
      s.nodes.push_back(ok ? static_cast<std::int64_t>(1 + j) : -1);
      s.weights.push_back(ok ? 0.5 : 0.0);
      s.valid.push_back(ok);
    }
    std::vector<LayerTrace> trace;
    hgan_layer(rows(hv), manual_frontiers(1, n, s), 0, params(5, 1, 0.0), {}, &trace);
    const auto& a = trace[0].alpha;
    for (std::size_t g = 0; g < 2; ++g) {
      double sum = 0.0;
      bool any = false;
      for (std::size_t j = g * k / 2; j < (g + 1) * k / 2; ++j) {
        if (!s.valid[j]) { EXPECT_EQ(a[j], 0.0); }
        EXPECT_GE(a[j], 0.0);
        sum += a[j];
        any = any || s.valid[j];
      }
      EXPECT_NEAR(sum, any ? 1.0 : 0.0, 1e-12);
    }
  }
}

TEST(Hgan, CosineIgnoresScale) {
  const auto c = rows({{1, 2, -1}});
  const auto n = rows({{0.3, -1, 2}, {2, 1, 0}});
  const auto n3 = rows({{0.9, -3, 6}, {2, 1, 0}});
  const auto a = numeric::cosine_pairs(c, n, 2), b = numeric::cosine_pairs(c, n3, 2);
  const auto c5 = numeric::cosine_pairs(numeric::scale(c, 5.0), n, 2);
  for (std::size_t k = 0; k < 2; ++k) {
    EXPECT_NEAR(a[k], b[k], 1e-14);
    EXPECT_NEAR(a[k], c5[k], 1e-14);
  }
}

TEST(Hgan, IsolatedNodeShrinksByHalfPerLayer) {
  const auto h = rows({{1.5, -2, 4}});
  const graph::NeighborSample none{{-1, -1}, {0, 0}, {0, 0}};
  const auto f = manual_frontiers(2, 1, none);
  const auto p = params(3, 2, 0.0);
  const auto h1 = hgan_layer(h, f, 0, p, {}, nullptr);
  const auto h2 = hgan_layer(h1, f, 1, p, {}, nullptr);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_NEAR(h1[k], 0.5 * h[k], 1e-15);
    EXPECT_NEAR(h2[k], 0.25 * h[k], 1e-15);
  }
}

TEST(Hgan, SaturatedGateKeepsCentral) {
  const auto h = rows({{1, 2, 3}, {-4, 5, 6}, {7, 8, -9}});
  const graph::NeighborSample s{{1, 2}, {0.7, 0.3}, {1, 1}};
  const auto out = hgan_layer(h, manual_frontiers(1, 3, s), 0, params(3, 1, 60.0), {}, nullptr);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(out[k], h[k], 1e-12);
}

TEST(Hgan, SingleNeighborGivesHalfOfIt) {
  const auto h = rows({{1, 0, 2}, {3, 1, 0.5}});
  const graph::NeighborSample s{{1, -1}, {1, 0}, {1, 0}};
  const auto out = hgan_layer(h, manual_frontiers(1, 2, s), 0, params(3, 1, -60.0), {}, nullptr);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(out[k], 0.5 * h[3 + k], 1e-12);
}

TEST(Hgan, AggregateIsLinearInEdgeWeight) {
  const auto h = rows({{1, 0, 2}, {3, 1, 0.5}, {0.2, 2, 1}});
  const graph::NeighborSample s{{1, 2}, {0.4, 1.3}, {1, 1}};
  auto s2 = s;
  for (auto& w : s2.weights) w *= 2.0;
  const auto p = params(3, 1, -60.0);
  const auto a = hgan_layer(h, manual_frontiers(1, 3, s), 0, p, {}, nullptr);
  const auto b = hgan_layer(h, manual_frontiers(1, 3, s2), 0, p, {}, nullptr);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(b[k], 2.0 * a[k], 1e-12);
}

TEST(Hgan, NoGraphAttentionIsUniform) {
  const auto h = rows({{1, 0}, {2, 1}, {-1, 3}, {0, 1}, {5, 5}});
  const graph::NeighborSample s{{1, 2, 3, 4, -1, -1}, {1, 1, 1, 1, 0, 0}, {1, 1, 1, 1, 0, 0}};
  std::vector<LayerTrace> trace;
  hgan_layer(h, manual_frontiers(1, 5, s), 0, params(2, 1, 0.0), {false}, &trace);
  const std::vector<double> expect{1.0 / 3, 1.0 / 3, 1.0 / 3, 1.0, 0.0, 0.0};
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(trace[0].alpha[k], expect[k], 1e-15);
}

TEST(Hgan, ProjectNodesOnToyGraph) {
  const auto toy = toy::make_toy(3);
  const auto emb = csan::AttributeEmbeddings::init(toy->data.schema, 4, 5);
  const auto tables = csan::project_tables(emb);
  const auto p = HganParams::init(8, 8, 6, 2, 7);
  const auto& g = toy->graph;
  const std::vector<std::int64_t> nodes{g.url_node(2), g.user_node(1), g.user_node(4), g.url_node(0)};
  const auto h = project_nodes(g, toy->data, tables, p, nodes);
  EXPECT_EQ(h.shape(), (numeric::Shape{4, 6}));
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    const auto one = project_nodes(g, toy->data, tables, p, {nodes[k]});
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(h[k * 6 + j], one[j], 1e-14);
  }
  EXPECT_THROW(project_nodes(g, toy->data, tables, p, {static_cast<std::int64_t>(g.num_nodes())}), ShapeError);
}

TEST(Hgan, ForwardOnToyGraph) {
  const auto toy = toy::make_toy(3);
  const auto emb = csan::AttributeEmbeddings::init(toy->data.schema, 4, 5);
  const auto tables = csan::project_tables(emb);
  const auto p = HganParams::init(8, 8, 6, 2, 7);
  const auto& g = toy->graph;
  const graph::HganSampler sampler(g, 2, 11);
  const std::vector<std::int64_t> targets{g.user_node(0), g.url_node(3)};
  std::vector<LayerTrace> trace;
  const auto a = hgan_forward(g, toy->data, sampler, tables, p, targets, {}, &trace);
  const auto b = hgan_forward(g, toy->data, sampler, tables, p, targets);
  EXPECT_EQ(a.shape(), (numeric::Shape{2, 6}));
  EXPECT_EQ(a.values(), b.values());
  EXPECT_FALSE(trace.empty());
  for (const auto& t : trace) EXPECT_EQ(t.alpha.size(), 4u);
  EXPECT_THROW(hgan_forward(g, toy->data, sampler, tables, p, {targets[0], targets[0]}), ShapeError);
}
