#pragma once

#include <memory>
#include <string>
#include <vector>

#include "amran/dataset.hpp"
#include "amran/graph.hpp"
#include "amran/model.hpp"
#include "amran/numeric/gradcheck.hpp"
#include "amran/random.hpp"

// Small fully in-memory problem (5 users, 4 URLs, two attributes per side)
// for end-to-end gradient checks.
namespace amran::toy {

struct ToyProblem {
  data::InteractionDataset data;
  graph::HeteroGraph graph;
  graph::ContextIndex index;
  std::vector<model::Pair> pairs;
  std::vector<double> labels;

  model::Context context() const { return {&data, &graph, &index}; }
};

inline model::ModelConfig toy_model_config() {
  model::ModelConfig c;
  c.d = 8;
  c.w = 4;
  c.b_h = 3;
  c.budget = 2;
  c.layers = 2;
  return c;
}

inline std::unique_ptr<ToyProblem> make_toy(std::uint64_t seed = 7) {
  auto t = std::make_unique<ToyProblem>();
  auto& ds = t->data;
  for (int u = 0; u < 5; ++u) {
    ds.user_ids.push_back("tu" + std::to_string(u));
    ds.user_index.emplace(ds.user_ids.back(), u);
  }
  for (int c = 0; c < 4; ++c) {
    ds.url_ids.push_back("tc" + std::to_string(c));
    ds.url_index.emplace(ds.url_ids.back(), c);
  }
  const int posts[5][4] = {{1, 1, 0, 1}, {1, 0, 1, 0}, {0, 1, 1, 2}, {3, 0, 1, 1}, {0, 1, 0, 1}};
  std::int64_t order = 0;
  for (int u = 0; u < 5; ++u)
    for (int c = 0; c < 4; ++c)
      if (posts[u][c]) {
        ds.interactions.push_back({u, c, order, order, posts[u][c]});
        ++order;
      }
  ds.social_edges = {{0, 1}, {0, 2}, {1, 0}, {2, 3}, {3, 4}, {4, 0}, {4, 2}};
  ds.schema.user = {{"community", data::AttributeKind::categorical, {"a", "b"}, 0, 3},
                    {"followers", data::AttributeKind::continuous, {}, 4, 3}};
  ds.schema.url = {{"category", data::AttributeKind::categorical, {"x", "y"}, 0, 3},
                   {"site", data::AttributeKind::categorical, {"s", "t"}, 0, 2}};
  Rng rng(derive_seed(seed, 0x70f));
  ds.user_attributes = {5, 2, {}};
  for (int u = 0; u < 5; ++u) {
    ds.user_attributes.values.push_back(static_cast<data::Index>(rng() % 3));
    ds.user_attributes.values.push_back(static_cast<data::Index>(rng() % 4));
  }
  ds.url_attributes = {4, 2, {}};
  for (int c = 0; c < 4; ++c) {
    ds.url_attributes.values.push_back(static_cast<data::Index>(rng() % 3));
    ds.url_attributes.values.push_back(static_cast<data::Index>(rng() % 3));
  }
  t->graph = graph::build_graph(ds, 1.0);
  t->index = graph::ContextIndex::build(ds, t->graph);
  for (int u = 0; u < 5; ++u)
    for (int c = 0; c < 4; ++c) {
      t->pairs.push_back({u, c});
      t->labels.push_back(posts[u][c] ? 1.0 : 0.0);
    }
  return t;
}

struct TensorCheck {
  std::string name;
  numeric::GradCheckResult result;
};

struct GradcheckReport {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t skipped = 0;
  std::vector<TensorCheck> tensors;
};

// Central differences against backprop for every optimized tensor of a
// freshly initialized model, on the summed BCE + L2 objective in training
// mode with frozen neighbor samples.
inline GradcheckReport run_gradcheck(std::uint64_t seed = 7, const model::AblationConfig& ablation = {},
                                     const numeric::GradCheckOptions& base = {}) {
  const auto toy = make_toy(seed);
  model::AmranModel m(toy->data.schema, toy_model_config(), ablation, seed);
  model::ForwardOptions opt;
  opt.training = true;
  opt.update_running_stats = false;
  opt.sample_seed = derive_seed(seed, 0x6c);
  const auto ctx = toy->context();
  auto loss_fn = [&] {
    return model::training_loss(m, m.forward(ctx, toy->pairs, opt), toy->labels, 1e-4);
  };
  GradcheckReport report;
  std::uint64_t k = 0;
  for (const auto& reg : m.named_parameters()) {
    if (!reg.active) continue;
    auto o = base;
    o.seed = derive_seed(seed, ++k);
    const auto r = numeric::finite_difference_check(loss_fn, reg.tensor, o);
    report.max_relative_error = std::max(report.max_relative_error, r.max_relative_error);
    report.checked += r.checked;
    report.skipped += r.skipped;
    report.tensors.push_back({reg.name, r});
  }
  return report;
}

}  // namespace amran::toy
