#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "amran/csan.hpp"
#include "amran/dataset.hpp"
#include "amran/graph.hpp"
#include "amran/hgan.hpp"
#include "amran/numeric/checkpoint.hpp"
#include "amran/numeric/init.hpp"
#include "amran/numeric/ops.hpp"

namespace amran::model {

using data::Index;
using numeric::Tensor;

struct ModelConfig {
  std::size_t d = 16;
  std::size_t w = 16;
  std::size_t b_h = 10;
  std::size_t budget = 8;
  std::size_t layers = 2;
  std::size_t reduction = 2;
  double bn_momentum = 0.1;

  void validate() const {
    if (d == 0 || w == 0) throw ConfigError("d and w must be positive");
    if (b_h == 0) throw ConfigError("b_h must be positive");
    if (budget == 0) throw ConfigError("neighbor budget must be positive");
    if (layers == 0) throw ConfigError("at least one graph attention layer is required");
    if (reduction == 0) throw ConfigError("reduction ratio must be positive");
  }
};

struct AblationConfig {
  bool use_csan = true;
  bool use_hgan = true;
  bool use_spatial_attention = true;
  bool use_graph_attention = true;

  void validate() const {
    if (!use_csan && !use_hgan) throw ConfigError("ablation disables both CSAN and HGAN");
  }

  // Comma-separated flags, e.g. "no-hgan,no-spatial-attention". "full" or an
  // empty string keeps everything on.
  static AblationConfig parse(const std::string& text) {
    AblationConfig a;
    std::size_t start = 0;
    while (start <= text.size()) {
      const auto end = std::min(text.find(',', start), text.size());
      const std::string flag = csv::trim(std::string_view(text).substr(start, end - start));
      if (flag.empty() || flag == "full") {
      } else if (flag == "no-csan" || flag == "hgan_only") {
        a.use_csan = false;
      } else if (flag == "no-hgan" || flag == "csan_only") {
        a.use_hgan = false;
      } else if (flag == "no-spatial-attention") {
        a.use_spatial_attention = false;
      } else if (flag == "no-graph-attention") {
        a.use_graph_attention = false;
      } else {
        throw ConfigError("unknown ablation flag '" + flag + "'");
      }
      start = end + 1;
    }
    a.validate();
    return a;
  }

  std::string name() const {
    if (!use_csan) return use_graph_attention ? "hgan_only" : "hgan_only_no_graph_attention";
    if (!use_hgan) return use_spatial_attention ? "csan_only" : "csan_only_no_spatial_attention";
    std::string n = "full";
    if (!use_spatial_attention) n += "_no_spatial_attention";
    if (!use_graph_attention) n += "_no_graph_attention";
    return n;
  }
};

struct Pair {
  Index user = 0;
  Index url = 0;
};

// Read-only inputs shared by every forward pass: the training view of the
// dataset, the graph built from it, and per-user stream lookups.
struct Context {
  const data::InteractionDataset* data = nullptr;
  const graph::HeteroGraph* graph = nullptr;
  const graph::ContextIndex* index = nullptr;
};

struct StreamTrace {
  std::vector<Index> neighbors;      // -1 for padding
  std::vector<double> channel_mean;  // mean attention weight per slot
};

struct CsanPairTrace {
  Pair pair;
  double gate_u = 0.0;
  double gate_v = 0.0;
  StreamTrace social, cooccur_users, historical, cooccur_urls;
};

struct AttentionTrace {
  std::vector<CsanPairTrace> csan;
  std::vector<hgan::LayerTrace> hgan;
};

struct ForwardOptions {
  bool training = false;
  bool update_running_stats = false;
  std::uint64_t sample_seed = 0;
  AttentionTrace* trace = nullptr;
};

namespace detail {

// Distinct streams of one kind in a batch plus the row each pair reads.
struct StreamBatch {
  std::vector<Index> ids;
  std::vector<std::uint8_t> padded;
  std::vector<std::int64_t> pair_row;
  std::vector<graph::Stream> streams;
};

template <typename Key, typename Make>
StreamBatch collect_streams(const std::vector<Key>& keys, Make make) {
  StreamBatch sb;
  std::map<Key, std::int64_t> seen;
  for (const auto& k : keys) {
    auto [it, fresh] = seen.emplace(k, static_cast<std::int64_t>(sb.streams.size()));
    if (fresh) {
      sb.streams.push_back(make(k));
      const auto& s = sb.streams.back();
      sb.ids.insert(sb.ids.end(), s.ids.begin(), s.ids.end());
      sb.padded.insert(sb.padded.end(), s.padded.begin(), s.padded.end());
    }
    sb.pair_row.push_back(it->second);
  }
  return sb;
}

inline StreamTrace stream_trace(const graph::Stream& s, const Tensor& weights, std::size_t row) {
  StreamTrace t{s.ids, std::vector<double>(s.ids.size(), 1.0)};
  if (!weights.defined()) return t;
  const std::size_t b = weights.dim(1), hw = weights.dim(2) * weights.dim(3);
  for (std::size_t c = 0; c < b; ++c) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += weights[(row * b + c) * hw + i];
    t.channel_mean[c] = s.padded[c] ? 0.0 : acc / static_cast<double>(hw);
  }
  return t;
}

}  // namespace detail

class AmranModel {
 public:
  AmranModel(const data::AttributeSchema& schema, const ModelConfig& cfg, const AblationConfig& ablation,
             std::uint64_t seed)
      : cfg_(cfg), ablation_(ablation), schema_(schema) {
    cfg.validate();
    ablation.validate();
    schema.validate();
    const std::size_t d = cfg.d, w = cfg.w, b = cfg.b_h;
    embeddings_ = csan::AttributeEmbeddings::init(schema, w, derive_seed(seed, 1));
    user_target_w_ = numeric::xavier_init({schema.user.size() * w, d}, derive_seed(seed, 2));
    user_target_b_ = numeric::zeros_param({d});
    url_target_w_ = numeric::xavier_init({schema.url.size() * w, d}, derive_seed(seed, 3));
    url_target_b_ = numeric::zeros_param({d});
    social_ = csan::StreamParams::init(b, d, cfg.reduction, derive_seed(seed, 4));
    cooccur_users_ = csan::StreamParams::init(b, d, cfg.reduction, derive_seed(seed, 5));
    historical_ = csan::StreamParams::init(b, d, cfg.reduction, derive_seed(seed, 6));
    cooccur_urls_ = csan::StreamParams::init(b, d, cfg.reduction, derive_seed(seed, 7));
    gate_u_ = numeric::zeros_param({1});
    gate_v_ = numeric::zeros_param({1});
    hgan_ = hgan::HganParams::init(schema.user.size() * w, schema.url.size() * w, d, cfg.layers, derive_seed(seed, 8));
    out_w_ = numeric::xavier_init({6 * d, d}, derive_seed(seed, 9));
    out_b_ = numeric::zeros_param({d});
    head_w_ = numeric::xavier_init({d, 1}, derive_seed(seed, 10));
    head_b_ = numeric::zeros_param({1});
  }

  const ModelConfig& config() const { return cfg_; }
  const AblationConfig& ablation() const { return ablation_; }
  const data::AttributeSchema& schema() const { return schema_; }

  // Every trainable tensor with a stable name and whether the current ablation
  // reaches it.
  struct Registered {
    std::string name;
    Tensor tensor;
    bool active;
  };

  std::vector<Registered> named_parameters() const {
    std::vector<Registered> out;
    const bool csan = ablation_.use_csan, att = csan && ablation_.use_spatial_attention, hg = ablation_.use_hgan;
    for (auto [group, specs, embs] : {std::tuple{"user", &schema_.user, &embeddings_.user},
                                      std::tuple{"url", &schema_.url, &embeddings_.url}})
      for (std::size_t a = 0; a < specs->size(); ++a) {
        const std::string base = std::string("emb.") + group + "." + (*specs)[a].name;
        out.push_back({base + ".table", (*embs)[a].table, true});
        out.push_back({base + ".projection", (*embs)[a].projection, true});
      }
    out.push_back({"csan.user_target.w", user_target_w_, csan});
    out.push_back({"csan.user_target.b", user_target_b_, csan});
    out.push_back({"csan.url_target.w", url_target_w_, csan});
    out.push_back({"csan.url_target.b", url_target_b_, csan});
    for (auto [name, s] : streams()) {
      const std::string base = std::string("csan.") + name;
      const auto& p = s->attention;
      out.push_back({base + ".layer_conv3", p.layer_conv3, att});
      out.push_back({base + ".layer_bn1.gamma", p.layer_bn1_gamma, att});
      out.push_back({base + ".layer_bn1.beta", p.layer_bn1_beta, att});
      out.push_back({base + ".layer_conv1", p.layer_conv1, att});
      out.push_back({base + ".layer_bn2.gamma", p.layer_bn2_gamma, att});
      out.push_back({base + ".layer_bn2.beta", p.layer_bn2_beta, att});
      out.push_back({base + ".channel_fc1.w", p.channel_fc1_w, att});
      out.push_back({base + ".channel_fc1.b", p.channel_fc1_b, att});
      out.push_back({base + ".channel_fc2.w", p.channel_fc2_w, att});
      out.push_back({base + ".channel_fc2.b", p.channel_fc2_b, att});
      out.push_back({base + ".fusion.w", p.fusion_w, att});
      out.push_back({base + ".fusion.b", p.fusion_b, att});
      out.push_back({base + ".extract.w", s->extract_w, csan});
      out.push_back({base + ".extract.b", s->extract_b, csan});
    }
    out.push_back({"csan.gate_u", gate_u_, csan});
    out.push_back({"csan.gate_v", gate_v_, csan});
    out.push_back({"hgan.user_projection", hgan_.user_projection, hg});
    out.push_back({"hgan.url_projection", hgan_.url_projection, hg});
    for (std::size_t l = 0; l < hgan_.layers(); ++l) {
      out.push_back({"hgan.gate_w." + std::to_string(l), hgan_.gate_w[l], hg});
      out.push_back({"hgan.gate_b." + std::to_string(l), hgan_.gate_b[l], hg});
    }
    out.push_back({"interaction.w", out_w_, true});
    out.push_back({"interaction.b", out_b_, true});
    out.push_back({"head.w", head_w_, true});
    out.push_back({"head.b", head_b_, true});
    return out;
  }

  // Tensors the optimizer updates under the current ablation.
  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& r : named_parameters())
      if (r.active) out.push_back(r.tensor);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& t : parameters()) n += t.size();
    return n;
  }

  // Sum of squares over the optimized tensors.
  Tensor l2_penalty() const {
    std::vector<Tensor> parts;
    for (const auto& t : parameters()) parts.push_back(numeric::sum_squares(t));
    Tensor total = parts[0];
    for (std::size_t k = 1; k < parts.size(); ++k) total = numeric::add(total, parts[k]);
    return total;
  }

  // Parameters and batch-norm running statistics, in a fixed order.
  std::vector<numeric::NamedTensor> state() const {
    std::vector<numeric::NamedTensor> out;
    for (const auto& r : named_parameters()) out.push_back({r.name, r.tensor.shape(), r.tensor.values()});
    for (auto [name, s] : const_cast<AmranModel*>(this)->streams()) {
      const std::string base = std::string("csan.") + name;
      for (auto [bn, stats] : {std::pair{".layer_bn1", &s->attention.layer_bn1_stats},
                               std::pair{".layer_bn2", &s->attention.layer_bn2_stats}}) {
        out.push_back({base + bn + ".running_mean", {stats->mean.size()}, stats->mean});
        out.push_back({base + bn + ".running_var", {stats->var.size()}, stats->var});
      }
    }
    return out;
  }

  void load_state(const std::vector<numeric::NamedTensor>& tensors) {
    std::unordered_map<std::string, const numeric::NamedTensor*> by_name;
    for (const auto& t : tensors) by_name[t.name] = &t;
    auto fetch = [&](const std::string& name, const numeric::Shape& shape) -> const std::vector<double>& {
      auto it = by_name.find(name);
      if (it == by_name.end()) throw IoError("checkpoint is missing tensor '" + name + "'");
      if (it->second->shape != shape)
        throw ShapeError("checkpoint tensor '" + name + "' has shape " + numeric::shape_str(it->second->shape) +
                         ", model expects " + numeric::shape_str(shape));
      return it->second->values;
    };
    for (auto& r : named_parameters()) r.tensor.values() = fetch(r.name, r.tensor.shape());
    for (auto [name, s] : streams()) {
      const std::string base = std::string("csan.") + name;
      for (auto [bn, stats] : {std::pair{".layer_bn1", &s->attention.layer_bn1_stats},
                               std::pair{".layer_bn2", &s->attention.layer_bn2_stats}}) {
        stats->mean = fetch(base + bn + ".running_mean", {stats->mean.size()});
        stats->var = fetch(base + bn + ".running_var", {stats->var.size()});
      }
    }
    if (by_name.size() != tensors.size()) throw IoError("checkpoint has duplicate tensor names");
    if (tensors.size() != state().size()) throw IoError("checkpoint has tensors the model does not know");
  }

  // Probabilities (P) for a list of (user, url) pairs. Streams, target
  // embeddings and graph nodes are computed once per distinct key.
  Tensor forward(const Context& ctx, const std::vector<Pair>& pairs, const ForwardOptions& opt = {}) {
    using namespace numeric;
    if (pairs.empty()) throw ShapeError("forward: empty batch");
    const auto& ds = *ctx.data;
    const auto& g = *ctx.graph;
    for (const auto& p : pairs)
      if (p.user < 0 || static_cast<std::size_t>(p.user) >= ds.num_users() || p.url < 0 ||
          static_cast<std::size_t>(p.url) >= ds.num_urls())
        throw ReferenceError("forward: pair (" + std::to_string(p.user) + ", " + std::to_string(p.url) +
                             ") outside the dataset");
    const std::size_t n = pairs.size(), d = cfg_.d, b = cfg_.b_h;

    std::vector<Index> users, urls;
    std::vector<std::int64_t> user_row, url_row;
    {
      std::unordered_map<Index, std::int64_t> useen, cseen;
      for (const auto& p : pairs) {
        auto [ui, ufresh] = useen.emplace(p.user, static_cast<std::int64_t>(users.size()));
        if (ufresh) users.push_back(p.user);
        user_row.push_back(ui->second);
        auto [ci, cfresh] = cseen.emplace(p.url, static_cast<std::int64_t>(urls.size()));
        if (cfresh) urls.push_back(p.url);
        url_row.push_back(ci->second);
      }
    }

    const auto tables = csan::project_tables(embeddings_);
    Tensor u_target, c_target, p_user, p_url, h_user, h_url;
    if (ablation_.use_csan) {
      const csan::AttentionOptions aopt{ablation_.use_spatial_attention, opt.training, opt.update_running_stats,
                                        cfg_.bn_momentum};
      u_target = gather_rows(linear(csan::embed_concat(tables.user, ds.user_attributes, users), user_target_w_,
                                    user_target_b_),
                             user_row);
      c_target = gather_rows(linear(csan::embed_concat(tables.url, ds.url_attributes, urls), url_target_w_,
                                    url_target_b_),
                             url_row);

      std::vector<Index> pair_users, pair_urls;
      std::vector<std::pair<Index, Index>> hist_keys;
      for (const auto& p : pairs) {
        pair_users.push_back(p.user);
        pair_urls.push_back(p.url);
        const auto& tp = ctx.index->history[p.user];
        const bool in_history =
            std::any_of(tp.begin(), tp.end(), [&](const auto& h) { return h.first == p.url; });
        Index dropped = in_history ? p.url : -1;
        // A training positive never sees itself in the history stream; negatives
        // lose one item too so the number of real channels carries no label.
        if (opt.training && !in_history && !tp.empty())
          dropped = tp[derive_seed(opt.sample_seed, 0x415, p.user, p.url) % tp.size()].first;
        hist_keys.push_back({p.user, dropped});
      }
      auto social = detail::collect_streams(pair_users, [&](Index u) {
        return graph::social_stream(g, *ctx.index, u, b);
      });
      auto co_users = detail::collect_streams(pair_users, [&](Index u) { return graph::cooccur_user_stream(g, u, b); });
      auto hist = detail::collect_streams(hist_keys, [&](const std::pair<Index, Index>& k) {
        return graph::historical_stream(*ctx.index, k.first, k.second, b);
      });
      auto co_urls = detail::collect_streams(pair_urls, [&](Index c) { return graph::cooccur_url_stream(g, c, b); });

      auto o_uf = csan::run_stream(tables.user, ds.user_attributes, social.ids, social.padded, b, social_, aopt);
      auto o_uc = csan::run_stream(tables.user, ds.user_attributes, co_users.ids, co_users.padded, b,
                                   cooccur_users_, aopt);
      auto o_ih = csan::run_stream(tables.url, ds.url_attributes, hist.ids, hist.padded, b, historical_, aopt);
      auto o_ic = csan::run_stream(tables.url, ds.url_attributes, co_urls.ids, co_urls.padded, b, cooccur_urls_,
                                   aopt);
      p_user = csan::gated_fusion(gather_rows(o_uf.vectors, social.pair_row),
                                  gather_rows(o_uc.vectors, co_users.pair_row), gate_u_);
      p_url = csan::gated_fusion(gather_rows(o_ih.vectors, hist.pair_row),
                                 gather_rows(o_ic.vectors, co_urls.pair_row), gate_v_);

      if (opt.trace) {
        const double gu = sigmoid_value(gate_u_[0]), gv = sigmoid_value(gate_v_[0]);
        for (std::size_t k = 0; k < n; ++k) {
          auto tr = [&](const detail::StreamBatch& sb, const csan::StreamResult& r) {
            const auto row = static_cast<std::size_t>(sb.pair_row[k]);
            return detail::stream_trace(sb.streams[row], r.weights, row);
          };
          opt.trace->csan.push_back(
              {pairs[k], gu, gv, tr(social, o_uf), tr(co_users, o_uc), tr(hist, o_ih), tr(co_urls, o_ic)});
        }
      }
    } else {
      u_target = c_target = p_user = p_url = Tensor({n, d});
    }

    if (ablation_.use_hgan) {
      graph::HganSampler sampler(g, cfg_.budget, opt.sample_seed);
      std::vector<std::int64_t> targets;
      for (auto u : users) targets.push_back(g.user_node(u));
      for (auto c : urls) targets.push_back(g.url_node(c));
      const Tensor h = hgan::hgan_forward(g, ds, sampler, tables, hgan_, targets,
                                          {ablation_.use_graph_attention}, opt.trace ? &opt.trace->hgan : nullptr);
      h_user = gather_rows(h, user_row);
      std::vector<std::int64_t> shifted(url_row);
      for (auto& r : shifted) r += static_cast<std::int64_t>(users.size());
      h_url = gather_rows(h, std::move(shifted));
    } else {
      h_user = h_url = Tensor({n, d});
    }

    return interaction_score(concat_cols({u_target, c_target, p_user, p_url, h_user, h_url}));
  }

  // [u', c', p_i, p_j, h_i, h_j] (P x 6d) -> ReLU(W_o x + b_o) -> sigmoid(head).
  Tensor interaction_score(const Tensor& features) const {
    using namespace numeric;
    if (features.rank() != 2 || features.dim(1) != 6 * cfg_.d)
      throw ShapeError("interaction_score: expected (P, " + std::to_string(6 * cfg_.d) + ") features, got " +
                       shape_str(features.shape()));
    const Tensor hidden = relu(linear(features, out_w_, out_b_));
    const Tensor logit = linear(hidden, head_w_, head_b_);
    return reshape(sigmoid(logit), {features.dim(0)});
  }

 private:
  std::vector<std::pair<const char*, csan::StreamParams*>> streams() const {
    auto* self = const_cast<AmranModel*>(this);
    return {{"social", &self->social_},
            {"cooccur_users", &self->cooccur_users_},
            {"historical", &self->historical_},
            {"cooccur_urls", &self->cooccur_urls_}};
  }

  ModelConfig cfg_;
  AblationConfig ablation_;
  data::AttributeSchema schema_;
  csan::AttributeEmbeddings embeddings_;
  Tensor user_target_w_, user_target_b_, url_target_w_, url_target_b_;
  csan::StreamParams social_, cooccur_users_, historical_, cooccur_urls_;
  Tensor gate_u_, gate_v_;
  hgan::HganParams hgan_;
  Tensor out_w_, out_b_, head_w_, head_b_;
};

// Summed BCE plus lambda * ||theta||^2 over the optimized parameters.
inline Tensor training_loss(const AmranModel& model, const Tensor& probs, const std::vector<double>& labels,
                            double l2, std::size_t* clamped = nullptr) {
  using namespace numeric;
  Tensor loss = bce_loss(probs, labels, clamped);
  if (l2 > 0.0) loss = add(loss, scale(model.l2_penalty(), l2));
  return loss;
}

}  // namespace amran::model
