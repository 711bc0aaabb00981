#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "amran/dataset.hpp"
#include "amran/numeric/init.hpp"
#include "amran/numeric/ops.hpp"
#include "amran/random.hpp"

// Convolutional spatial attention over stacked neighbor attribute matrices.
// A stream batch is an image tensor (streams, b, rows, w): one channel per
// neighbor slot, one row per attribute.
namespace amran::csan {

using numeric::Tensor;

// Lookup table at the attribute's native width plus its projection to w.
struct AttributeEmbedding {
  Tensor table;       // cardinality x dim
  Tensor projection;  // dim x w
};

// Attribute embeddings shared by every CSAN stream, the target projections and
// the HGAN node features.
struct AttributeEmbeddings {
  std::vector<AttributeEmbedding> user;
  std::vector<AttributeEmbedding> url;

  static AttributeEmbeddings init(const data::AttributeSchema& schema, std::size_t w, std::uint64_t seed) {
    AttributeEmbeddings e;
    std::uint64_t k = 0;
    for (auto [specs, out] : {std::pair{&schema.user, &e.user}, std::pair{&schema.url, &e.url}})
      for (const auto& spec : *specs) {
        if (spec.cardinality() == 0) throw SchemaError("attribute '" + spec.name + "' has no values");
        out->push_back({numeric::xavier_init({spec.cardinality(), spec.dim}, derive_seed(seed, ++k)),
                        numeric::xavier_init({spec.dim, w}, derive_seed(seed, ++k))});
      }
    return e;
  }
};

// Per-attribute tables already projected to width w (cardinality x w).
struct ProjectedTables {
  std::vector<Tensor> user;
  std::vector<Tensor> url;
};

inline ProjectedTables project_tables(const AttributeEmbeddings& emb) {
  ProjectedTables p;
  for (const auto& a : emb.user) p.user.push_back(numeric::matmul(a.table, a.projection));
  for (const auto& a : emb.url) p.url.push_back(numeric::matmul(a.table, a.projection));
  return p;
}

// Stacks attribute rows for `entities` (-1 = padded slot), grouped into items
// of `channels` slots: result (items, channels, rows, w).
inline Tensor embed_attribute_matrix(const std::vector<Tensor>& tables, const data::AttributeTable& attrs,
                                     const std::vector<data::Index>& entities, std::size_t channels) {
  if (channels == 0 || entities.size() % channels != 0) throw ShapeError("embed_attribute_matrix: bad channel count");
  if (attrs.attributes != tables.size()) throw ShapeError("embed_attribute_matrix: attribute count mismatch");
  const std::size_t rows = tables.size();
  std::vector<std::int64_t> index(entities.size() * rows, -1);
  for (std::size_t e = 0; e < entities.size(); ++e) {
    if (entities[e] < 0) continue;
    for (std::size_t a = 0; a < rows; ++a) {
      const auto v = attrs.at(static_cast<std::size_t>(entities[e]), a);
      if (v < 0 || static_cast<std::size_t>(v) >= tables[a].dim(0))
        throw SchemaError("attribute value " + std::to_string(v) + " out of vocabulary");
      index[e * rows + a] = v;
    }
  }
  return numeric::gather_stack(tables, index, entities.size() / channels, channels);
}

// Concatenated attribute vectors (items x rows*w) for target/node features.
inline Tensor embed_concat(const std::vector<Tensor>& tables, const data::AttributeTable& attrs,
                           const std::vector<data::Index>& entities) {
  auto stacked = embed_attribute_matrix(tables, attrs, entities, 1);
  const std::size_t width = stacked.dim(2) * stacked.dim(3);
  return numeric::reshape(stacked, {entities.size(), width});
}

struct SpatialAttentionParams {
  Tensor layer_conv3;  // (1, 1, 3, 3)
  Tensor layer_bn1_gamma, layer_bn1_beta;
  Tensor layer_conv1;  // (1, 1, 1, 1)
  Tensor layer_bn2_gamma, layer_bn2_beta;
  numeric::BatchNormStats layer_bn1_stats{1}, layer_bn2_stats{1};
  Tensor channel_fc1_w, channel_fc1_b;  // b -> ceil(b/r)
  Tensor channel_fc2_w, channel_fc2_b;  // ceil(b/r) -> b
  Tensor fusion_w, fusion_b;            // (b, b, 1, 1) identity-initialized

  static SpatialAttentionParams init(std::size_t b, std::size_t reduction, std::uint64_t seed) {
    const std::size_t hidden = (b + reduction - 1) / reduction;
    SpatialAttentionParams p;
    p.layer_conv3 = numeric::xavier_init({1, 1, 3, 3}, derive_seed(seed, 1));
    p.layer_bn1_gamma = numeric::constant_param({1}, 1.0);
    p.layer_bn1_beta = numeric::zeros_param({1});
    p.layer_conv1 = numeric::xavier_init({1, 1, 1, 1}, derive_seed(seed, 2));
    p.layer_bn2_gamma = numeric::constant_param({1}, 1.0);
    p.layer_bn2_beta = numeric::zeros_param({1});
    p.channel_fc1_w = numeric::xavier_init({b, hidden}, derive_seed(seed, 3));
    p.channel_fc1_b = numeric::zeros_param({hidden});
    p.channel_fc2_w = numeric::xavier_init({hidden, b}, derive_seed(seed, 4));
    p.channel_fc2_b = numeric::zeros_param({b});
    p.fusion_w = numeric::identity_kernel(b);
    p.fusion_b = numeric::zeros_param({b});
    return p;
  }
};

struct StreamParams {
  SpatialAttentionParams attention;
  Tensor extract_w;  // (d, b, 3, 3)
  Tensor extract_b;  // (d)

  static StreamParams init(std::size_t b, std::size_t d, std::size_t reduction, std::uint64_t seed) {
    return {SpatialAttentionParams::init(b, reduction, derive_seed(seed, 10)),
            numeric::xavier_init({d, b, 3, 3}, derive_seed(seed, 11)), numeric::zeros_param({d})};
  }
};

struct AttentionOptions {
  bool enabled = true;
  bool training = true;
  bool update_running_stats = true;
  double bn_momentum = 0.1;
};

struct SpatialAttentionResult {
  Tensor attended;  // N = M * S with padded channels zeroed
  Tensor weights;   // S, undefined when attention is disabled
};

// L = relu(bn(conv1x1(relu(bn(conv3x3(mean_c M))))))      (items, 1, rows, w)
// C = relu(fc2(relu(fc1(avgpool_hw M))))                   (items, b)
// S = sigmoid(fusion(L x C));  N = M * S, padded channels forced to zero.
inline SpatialAttentionResult spatial_attention(const Tensor& m, const std::vector<std::uint8_t>& padded,
                                                SpatialAttentionParams& p, const AttentionOptions& opt = {}) {
  using namespace numeric;
  if (!opt.enabled) return {mask_channels(m, padded), Tensor()};
  BatchNormOptions bn{opt.training, opt.bn_momentum, 1e-5, opt.update_running_stats};
  Tensor layer = channel_mean(m);
  layer = relu(batch_norm(conv2d(layer, p.layer_conv3, Tensor()), p.layer_bn1_gamma, p.layer_bn1_beta,
                          p.layer_bn1_stats, bn));
  layer = relu(batch_norm(conv2d(layer, p.layer_conv1, Tensor()), p.layer_bn2_gamma, p.layer_bn2_beta,
                          p.layer_bn2_stats, bn));
  Tensor channel = global_avg_pool(m);
  channel = relu(linear(channel, p.channel_fc1_w, p.channel_fc1_b));
  channel = relu(linear(channel, p.channel_fc2_w, p.channel_fc2_b));
  Tensor s = sigmoid(conv2d(layer_channel_product(layer, channel), p.fusion_w, p.fusion_b));
  return {mask_channels(mul(m, s), padded), s};
}

// 3x3 conv b -> d, ReLU, global max pooling over (rows, w): (items, d).
inline Tensor stream_extract(const Tensor& attended, const Tensor& weight, const Tensor& bias) {
  using namespace numeric;
  return global_max_pool(relu(conv2d(attended, weight, bias)));
}

// p = g * a + (1 - g) * b with g = sigmoid(gate_param).
inline Tensor gated_fusion(const Tensor& a, const Tensor& b, const Tensor& gate_param) {
  using namespace numeric;
  const Tensor g = sigmoid(gate_param);
  return add(b, mul_scalar(sub(a, b), g));
}

struct StreamResult {
  Tensor vectors;  // (items, d)
  Tensor weights;  // attention map S, may be undefined
};

// Full stream: embed -> spatial attention -> extraction.
inline StreamResult run_stream(const std::vector<Tensor>& tables, const data::AttributeTable& attrs,
                               const std::vector<data::Index>& neighbor_ids, const std::vector<std::uint8_t>& padded,
                               std::size_t b, StreamParams& params, const AttentionOptions& opt) {
  const Tensor m = embed_attribute_matrix(tables, attrs, neighbor_ids, b);
  auto att = spatial_attention(m, padded, params.attention, opt);
  return {stream_extract(att.attended, params.extract_w, params.extract_b), att.weights};
}

}  // namespace amran::csan
