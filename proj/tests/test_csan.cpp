#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "amran/csan.hpp"

using namespace amran;
using namespace amran::csan;
using numeric::Tensor;

namespace {

Tensor random_tensor(const numeric::Shape& shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (double& v : t.values()) v = u(rng);
  return t;
}

data::AttributeSchema schema2() {
  data::AttributeSchema s;
  s.user = {{"a", data::AttributeKind::categorical, {"x", "y", "z"}, 0, 3},
            {"b", data::AttributeKind::continuous, {}, 5, 6}};
  s.url = {{"c", data::AttributeKind::categorical, {"p", "q"}, 0, 2}};
  return s;
}

data::AttributeTable table(std::size_t entities, std::size_t attrs, std::vector<data::Index> values) {
  return {entities, attrs, std::move(values)};
}

std::vector<std::uint8_t> random_pads(Rng& rng, std::size_t n) {
  std::vector<std::uint8_t> p(n);
  for (auto& v : p) v = static_cast<std::uint8_t>(rng() % 3 == 0);
  return p;
}

}  // namespace

TEST(Embed, ShapesSharingAndPadding) {
  const auto emb = AttributeEmbeddings::init(schema2(), 8, 1);
  const auto tables = project_tables(emb);
  const auto attrs = table(3, 2, {1, 2, 1, 2, 3, 0});
  const auto m = embed_attribute_matrix(tables.user, attrs, {0, 1, -1, 2}, 4);
  EXPECT_EQ(m.shape(), (numeric::Shape{1, 4, 2, 8}));
  for (std::size_t k = 0; k < 16; ++k) {
    EXPECT_EQ(m[k], m[16 + k]);  // identical attribute values -> identical rows
    EXPECT_EQ(m[32 + k], 0.0);   // padded slot
  }
  EXPECT_NE(m[0], m[48]);
  const auto bad = table(1, 2, {4, 0});
  EXPECT_THROW(embed_attribute_matrix(tables.user, bad, {0}, 1), SchemaError);
}

TEST(Embed, TargetProjection) {
  const auto emb = AttributeEmbeddings::init(schema2(), 8, 2);
  auto tables = project_tables(emb);
  const auto attrs = table(2, 2, {1, 3, 1, 3});
  const auto x = embed_concat(tables.user, attrs, {0, 1});
  EXPECT_EQ(x.shape(), (numeric::Shape{2, 16}));
  const auto w = numeric::xavier_init({16, 16}, 3);
  const auto b = numeric::zeros_param({16});
  const auto u = numeric::linear(x, w, b);
  EXPECT_EQ(u.shape(), (numeric::Shape{2, 16}));
  for (std::size_t k = 0; k < 16; ++k) EXPECT_EQ(u[k], u[16 + k]);
  for (auto& t : tables.user) std::fill(t.values().begin(), t.values().end(), 0.0);
  const auto z = numeric::linear(embed_concat(tables.user, attrs, {0}), w, b);
  for (double v : z.values()) EXPECT_EQ(v, 0.0);
}

TEST(SpatialAttention, CrossChannelMean) {
  Tensor m({1, 2, 2, 3});
  for (std::size_t k = 0; k < 6; ++k) {
    m.values()[k] = 1.0;
    m.values()[6 + k] = 3.0;
  }
  const auto mean = numeric::channel_mean(m);
  for (double v : mean.values()) EXPECT_EQ(v, 2.0);
}

TEST(SpatialAttention, PropertiesOnRandomTensors) {
  Rng rng(99);
  for (std::uint64_t t = 0; t < 100; ++t) {
    const std::size_t items = 1 + t % 4, b = 2 + t % 9, rows = 1 + t % 3, w = 2 + t % 6;
    const auto m = random_tensor({items, b, rows, w}, t, -3.0, 3.0);
    auto pads = random_pads(rng, items * b);
    auto p = SpatialAttentionParams::init(b, 2, t);
    AttentionOptions opt;
    opt.training = t % 2 == 0;
    const auto r = spatial_attention(m, pads, p, opt);
    ASSERT_EQ(r.weights.shape(), m.shape());
    for (std::size_t e = 0; e < m.size(); ++e) {
      EXPECT_GT(r.weights[e], 0.0);
      EXPECT_LT(r.weights[e], 1.0);
      EXPECT_LE(std::abs(r.attended[e]), std::abs(m[e]));
      if (pads[e / (rows * w)]) { EXPECT_EQ(r.attended[e], 0.0); }
    }
  }
}

TEST(SpatialAttention, ConstantHalfMapHalvesInput) {
  const std::size_t b = 4;
  auto p = SpatialAttentionParams::init(b, 2, 5);
  std::fill(p.fusion_w.values().begin(), p.fusion_w.values().end(), 0.0);
  const auto m = random_tensor({2, b, 3, 5}, 6);
  const auto r = spatial_attention(m, std::vector<std::uint8_t>(2 * b, 0), p);
  for (std::size_t e = 0; e < m.size(); ++e) {
    EXPECT_EQ(r.weights[e], 0.5);
    EXPECT_DOUBLE_EQ(r.attended[e], 0.5 * m[e]);
  }
}

TEST(SpatialAttention, DisabledPassesMaskedInput) {
  auto p = SpatialAttentionParams::init(3, 2, 5);
  const auto m = random_tensor({1, 3, 2, 4}, 7);
  AttentionOptions opt;
  opt.enabled = false;
  const auto r = spatial_attention(m, {0, 1, 0}, p, opt);
  EXPECT_FALSE(r.weights.defined());
  for (std::size_t e = 0; e < m.size(); ++e) EXPECT_EQ(r.attended[e], (e / 8 == 1) ? 0.0 : m[e]);
}

TEST(SpatialAttention, ChannelPermutationIsCoherent) {
  const std::size_t b = 5, rows = 2, w = 3, hw = rows * w;
  auto p = SpatialAttentionParams::init(b, 1, 8);
  for (auto* t : {&p.channel_fc1_w, &p.channel_fc2_w}) {
    std::fill(t->values().begin(), t->values().end(), 0.0);
    for (std::size_t i = 0; i < b; ++i) t->values()[i * b + i] = 1.0;
  }
  const auto m = random_tensor({1, b, rows, w}, 9);
  const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
  Tensor pm({1, b, rows, w});
  for (std::size_t c = 0; c < b; ++c)
    for (std::size_t i = 0; i < hw; ++i) pm.values()[c * hw + i] = m[perm[c] * hw + i];
  AttentionOptions opt;
  opt.training = false;
  const auto a = spatial_attention(m, std::vector<std::uint8_t>(b, 0), p, opt);
  const auto c = spatial_attention(pm, std::vector<std::uint8_t>(b, 0), p, opt);
  for (std::size_t ch = 0; ch < b; ++ch)
    for (std::size_t i = 0; i < hw; ++i) {
      EXPECT_NEAR(c.weights[ch * hw + i], a.weights[perm[ch] * hw + i], 1e-12);
      EXPECT_NEAR(c.attended[ch * hw + i], a.attended[perm[ch] * hw + i], 1e-12);
    }
}

TEST(StreamExtract, ZeroInputAndHomogeneity) {
  const auto w = numeric::xavier_init({16, 4, 3, 3}, 1);
  const Tensor bias({16});
  const auto zero = stream_extract(Tensor({2, 4, 3, 5}), w, bias);
  EXPECT_EQ(zero.shape(), (numeric::Shape{2, 16}));
  for (double v : zero.values()) EXPECT_EQ(v, 0.0);
  const auto n = random_tensor({2, 4, 3, 5}, 2);
  const auto one = stream_extract(n, w, bias);
  const auto two = stream_extract(numeric::scale(n, 2.0), w, bias);
  for (std::size_t k = 0; k < one.size(); ++k) EXPECT_NEAR(two[k], 2.0 * one[k], 1e-12);
}

TEST(StreamExtract, PaddedChannelsContributeNothing) {
  const auto w = numeric::xavier_init({6, 3, 3, 3}, 4);
  auto n = random_tensor({1, 3, 2, 4}, 5);
  const auto masked = numeric::mask_channels(n, {0, 1, 0});
  auto w2 = w.detach_copy();
  for (std::size_t o = 0; o < 6; ++o)
    for (std::size_t k = 0; k < 9; ++k) w2.values()[(o * 3 + 1) * 9 + k] = 7.0;  // weights on the padded channel
  const auto a = numeric::conv2d(masked, w, Tensor()), b = numeric::conv2d(masked, w2, Tensor());
  EXPECT_EQ(a.values(), b.values());
}

TEST(GatedFusion, Limits) {
  const auto a = random_tensor({2, 3}, 1), b = random_tensor({2, 3}, 2);
  const auto half = gated_fusion(a, b, Tensor::scalar(0.0));
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(half[k], 0.5 * (a[k] + b[k]), 1e-15);
  const auto big = gated_fusion(a, b, Tensor::scalar(50.0));
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(big[k], a[k], 1e-12);
  const auto same = gated_fusion(a, a, Tensor::scalar(-1.3));
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(same[k], a[k], 1e-15);
}

TEST(RunStream, FullyPaddedStreamIsZero) {
  const auto emb = AttributeEmbeddings::init(schema2(), 4, 3);
  const auto tables = project_tables(emb);
  auto params = StreamParams::init(3, 8, 2, 4);
  const auto attrs = table(2, 2, {1, 1, 2, 2});
  const auto r = run_stream(tables.user, attrs, {-1, -1, -1, 0, -1, 1}, {1, 1, 1, 0, 1, 0}, 3, params, {});
  EXPECT_EQ(r.vectors.shape(), (numeric::Shape{2, 8}));
  for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(r.vectors[k], 0.0);
}
