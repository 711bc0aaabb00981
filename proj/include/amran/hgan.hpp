#pragma once

#include <cstdint>
#include <unordered_map>
#include <vector>

#include "amran/csan.hpp"
#include "amran/graph.hpp"
#include "amran/numeric/init.hpp"
#include "amran/numeric/ops.hpp"

// Heterogeneous graph attention over sampled typed neighborhoods.
namespace amran::hgan {

using numeric::Tensor;

struct HganParams {
  Tensor user_projection;  // (s*w) x d
  Tensor url_projection;   // (t*w) x d
  std::vector<Tensor> gate_w;  // per layer, d x d
  std::vector<Tensor> gate_b;  // per layer, d

  static HganParams init(std::size_t user_width, std::size_t url_width, std::size_t d, std::size_t layers,
                         std::uint64_t seed) {
    HganParams p;
    p.user_projection = numeric::xavier_init({user_width, d}, derive_seed(seed, 1));
    p.url_projection = numeric::xavier_init({url_width, d}, derive_seed(seed, 2));
    for (std::size_t l = 0; l < layers; ++l) {
      p.gate_w.push_back(numeric::xavier_init({d, d}, derive_seed(seed, 3, l)));
      p.gate_b.push_back(numeric::zeros_param({d}));
    }
    return p;
  }

  std::size_t layers() const { return gate_w.size(); }
};

// Sampled neighbors and attention weights of one central node at one layer.
struct LayerTrace {
  std::int64_t node = 0;
  std::size_t layer = 0;
  graph::NeighborSample sample;
  std::vector<double> alpha;
};

struct HganOptions {
  bool use_graph_attention = true;
};

// Nodes whose layer-l representation is needed. frontiers[L] is the target
// list itself, frontiers[l] extends frontiers[l+1] with its sampled neighbors.
struct Frontiers {
  std::vector<std::vector<std::int64_t>> nodes;
  std::vector<std::unordered_map<std::int64_t, std::size_t>> position;
  // samples[l][k]: neighborhood of nodes[l+1][k] used to compute layer l+1.
  std::vector<std::vector<graph::NeighborSample>> samples;
};

inline Frontiers build_frontiers(const graph::HganSampler& sampler, const std::vector<std::int64_t>& targets,
                                 std::size_t layers) {
  Frontiers f;
  f.nodes.resize(layers + 1);
  f.position.resize(layers + 1);
  f.samples.resize(layers);
  auto add = [&](std::size_t l, std::int64_t node) {
    if (f.position[l].emplace(node, f.nodes[l].size()).second) f.nodes[l].push_back(node);
  };
  for (auto t : targets) add(layers, t);
  if (f.nodes[layers].size() != targets.size()) throw ShapeError("hgan: duplicate target nodes");
  for (std::size_t l = layers; l-- > 0;) {
    for (auto v : f.nodes[l + 1]) add(l, v);
    for (auto v : f.nodes[l + 1]) {
      f.samples[l].push_back(sampler.sample(v, l));
      for (std::size_t k = 0; k < f.samples[l].back().nodes.size(); ++k)
        if (f.samples[l].back().valid[k]) add(l, f.samples[l].back().nodes[k]);
    }
  }
  return f;
}

// h0 = W_phi(i) x_i for the given nodes, rows in `nodes` order.
inline Tensor project_nodes(const graph::HeteroGraph& g, const data::InteractionDataset& ds,
                            const csan::ProjectedTables& tables, const HganParams& p,
                            const std::vector<std::int64_t>& nodes) {
  using namespace numeric;
  std::vector<data::Index> users, urls;
  std::vector<std::int64_t> order(nodes.size());
  for (std::size_t k = 0; k < nodes.size(); ++k) {
    if (nodes[k] < 0 || static_cast<std::size_t>(nodes[k]) >= g.num_nodes())
      throw ShapeError("hgan: node " + std::to_string(nodes[k]) + " outside the graph");
    if (g.type(nodes[k]) == graph::NodeType::user) {
      order[k] = static_cast<std::int64_t>(users.size());
      users.push_back(g.local(nodes[k]));
    } else {
      order[k] = -1 - static_cast<std::int64_t>(urls.size());
      urls.push_back(g.local(nodes[k]));
    }
  }
  std::vector<Tensor> parts;
  if (!users.empty())
    parts.push_back(matmul(csan::embed_concat(tables.user, ds.user_attributes, users), p.user_projection));
  if (!urls.empty())
    parts.push_back(matmul(csan::embed_concat(tables.url, ds.url_attributes, urls), p.url_projection));
  const Tensor stacked = parts.size() == 1 ? parts[0] : concat_rows(parts);
  for (auto& o : order)
    if (o < 0) o = static_cast<std::int64_t>(users.size()) + (-1 - o);
  return gather_rows(stacked, std::move(order));
}

// Uniform weights over the real slots of each group of `group` entries.
inline Tensor uniform_alpha(const std::vector<std::uint8_t>& valid, std::size_t rows, std::size_t cols,
                            std::size_t group) {
  std::vector<double> a(rows * cols, 0.0);
  for (std::size_t start = 0; start < a.size(); start += group) {
    std::size_t n = 0;
    for (std::size_t k = 0; k < group; ++k) n += valid[start + k];
    for (std::size_t k = 0; k < group && n > 0; ++k)
      if (valid[start + k]) a[start + k] = 1.0 / static_cast<double>(n);
  }
  return Tensor::from({rows, cols}, std::move(a));
}

// One layer: attention, typed aggregation (1/|A| with |A| = 2), gated residual.
// `h` holds layer-l rows for frontier l; the result has one row per central node.
inline Tensor hgan_layer(const Tensor& h, const Frontiers& f, std::size_t l, const HganParams& p,
                         const HganOptions& opt, std::vector<LayerTrace>* trace) {
  using namespace numeric;
  const auto& centrals = f.nodes[l + 1];
  const auto& samples = f.samples[l];
  const std::size_t r = centrals.size();
  const std::size_t k = samples.empty() ? 0 : samples[0].nodes.size();
  std::vector<std::int64_t> central_idx(r), neighbor_idx(r * k, -1);
  std::vector<double> weights(r * k, 0.0);
  std::vector<std::uint8_t> valid(r * k, 0);
  for (std::size_t i = 0; i < r; ++i) {
    central_idx[i] = static_cast<std::int64_t>(f.position[l].at(centrals[i]));
    for (std::size_t j = 0; j < k; ++j) {
      if (!samples[i].valid[j]) continue;
      neighbor_idx[i * k + j] = static_cast<std::int64_t>(f.position[l].at(samples[i].nodes[j]));
      weights[i * k + j] = samples[i].weights[j];
      valid[i * k + j] = 1;
    }
  }
  const Tensor hc = gather_rows(h, central_idx);
  const Tensor hn = gather_rows(h, neighbor_idx);
  const std::size_t group = k / 2;
  const Tensor alpha = opt.use_graph_attention ? masked_group_softmax(cosine_pairs(hc, hn, k), valid, group)
                                               : uniform_alpha(valid, r, k, group);
  if (trace)
    for (std::size_t i = 0; i < r; ++i)
      trace->push_back({centrals[i], l, samples[i],
                        std::vector<double>(alpha.values().begin() + static_cast<std::ptrdiff_t>(i * k),
                                            alpha.values().begin() + static_cast<std::ptrdiff_t>((i + 1) * k))});
  const Tensor z = relu(scale_rows(hn, std::move(weights)));
  const Tensor aggregated = scale(weighted_group_sum(z, alpha), 0.5);
  const Tensor gate = sigmoid(linear(hc, p.gate_w[l], p.gate_b[l]));
  return add(aggregated, mul(gate, sub(hc, aggregated)));
}

// Final-layer embeddings for `targets` (distinct global node ids), one row each.
inline Tensor hgan_forward(const graph::HeteroGraph& g, const data::InteractionDataset& ds,
                           const graph::HganSampler& sampler, const csan::ProjectedTables& tables,
                           const HganParams& p, const std::vector<std::int64_t>& targets, const HganOptions& opt = {},
                           std::vector<LayerTrace>* trace = nullptr) {
  const std::size_t layers = p.layers();
  const Frontiers f = build_frontiers(sampler, targets, layers);
  Tensor h = project_nodes(g, ds, tables, p, f.nodes[0]);
  for (std::size_t l = 0; l < layers; ++l) h = hgan_layer(h, f, l, p, opt, trace);
  return h;
}

}  // namespace amran::hgan
