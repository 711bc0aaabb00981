#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "amran/dataset.hpp"
#include "amran/model.hpp"

namespace amran::eval {

using data::Index;

inline constexpr std::size_t kCandidates = 100;

// 1-based rank of candidates[positive] when sorted by descending score, ties
// broken by ascending URL id.
inline std::size_t rank_of_positive(std::span<const double> scores, std::span<const Index> candidates,
                                    std::size_t positive, std::size_t expected = kCandidates) {
  if (scores.size() != candidates.size()) throw ShapeError("rank: score and candidate counts differ");
  if (candidates.size() != expected)
    throw ProtocolError("rank: expected " + std::to_string(expected) + " candidates, got " +
                        std::to_string(candidates.size()));
  if (positive >= candidates.size()) throw ProtocolError("rank: positive index out of range");
  const double s = scores[positive];
  const Index id = candidates[positive];
  std::size_t ahead = 0;
  for (std::size_t k = 0; k < scores.size(); ++k) {
    if (k == positive) continue;
    if (scores[k] > s || (scores[k] == s && candidates[k] < id)) ++ahead;
  }
  return ahead + 1;
}

inline double hr_at_k(std::size_t rank, std::size_t k = 10) {
  if (rank == 0) throw DomainError("rank must be at least 1");
  return rank <= k ? 1.0 : 0.0;
}

inline double ndcg_at_k(std::size_t rank, std::size_t k = 10) {
  if (rank == 0) throw DomainError("rank must be at least 1");
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

// Scores pairs in evaluation mode (running batch-norm statistics, no graph
// recording), chunked to bound memory.
inline std::vector<double> score_pairs(model::AmranModel& m, const model::Context& ctx,
                                       const std::vector<model::Pair>& pairs, std::uint64_t sample_seed,
                                       std::size_t chunk = 4096) {
  numeric::NoGradGuard guard;
  std::vector<double> out;
  out.reserve(pairs.size());
  model::ForwardOptions opt;
  opt.sample_seed = sample_seed;
  for (std::size_t start = 0; start < pairs.size(); start += chunk) {
    const std::vector<model::Pair> part(pairs.begin() + static_cast<std::ptrdiff_t>(start),
                                        pairs.begin() + static_cast<std::ptrdiff_t>(std::min(pairs.size(), start + chunk)));
    const auto probs = m.forward(ctx, part, opt);
    out.insert(out.end(), probs.values().begin(), probs.values().end());
  }
  return out;
}

struct UserRank {
  Index user = 0;
  Index positive = 0;
  std::size_t rank = 0;
};

struct Metrics {
  double hr = 0.0;
  double ndcg = 0.0;
  std::vector<UserRank> ranks;
};

inline Metrics summarize(std::vector<UserRank> ranks, std::size_t k = 10) {
  Metrics m;
  for (const auto& r : ranks) {
    m.hr += hr_at_k(r.rank, k);
    m.ndcg += ndcg_at_k(r.rank, k);
  }
  if (!ranks.empty()) {
    m.hr /= static_cast<double>(ranks.size());
    m.ndcg /= static_cast<double>(ranks.size());
  }
  m.ranks = std::move(ranks);
  return m;
}

enum class Part { validation, test };

// Leave-one-out ranking of each user's held-out URL against its sampled
// negatives (positive first in the candidate list).
inline Metrics evaluate_split(model::AmranModel& m, const model::Context& ctx, const data::SplitSet& split, Part part,
                              std::uint64_t sample_seed, std::size_t k = 10) {
  const auto& held = part == Part::test ? split.test : split.validation;
  const auto& negs = part == Part::test ? split.test_negatives : split.validation_negatives;
  std::vector<model::Pair> pairs;
  pairs.reserve(held.size() * kCandidates);
  for (std::size_t u = 0; u < held.size(); ++u) {
    pairs.push_back({static_cast<Index>(u), held[u].url});
    for (auto c : negs[u]) pairs.push_back({static_cast<Index>(u), c});
  }
  const auto scores = score_pairs(m, ctx, pairs, sample_seed);
  std::vector<UserRank> ranks;
  std::size_t offset = 0;
  std::vector<Index> cand;
  for (std::size_t u = 0; u < held.size(); ++u) {
    const std::size_t count = 1 + negs[u].size();
    cand.clear();
    for (std::size_t j = 0; j < count; ++j) cand.push_back(pairs[offset + j].url);
    const std::span<const double> s(scores.data() + offset, count);
    ranks.push_back({static_cast<Index>(u), held[u].url, rank_of_positive(s, cand, 0, 1 + split.eval_negatives)});
    offset += count;
  }
  return summarize(std::move(ranks), k);
}

// Ranks every training positive of each user against that user's test
// negatives: how well the model memorizes the pairs it was fit on.
inline Metrics evaluate_training_pairs(model::AmranModel& m, const model::Context& ctx, const data::SplitSet& split,
                                       std::uint64_t sample_seed, std::size_t k = 10) {
  std::vector<model::Pair> pairs;
  std::vector<std::pair<std::size_t, Index>> owners;
  for (const auto& it : split.train) {
    owners.push_back({pairs.size(), it.user});
    pairs.push_back({it.user, it.url});
    for (auto c : split.test_negatives[it.user]) pairs.push_back({it.user, c});
  }
  const auto scores = score_pairs(m, ctx, pairs, sample_seed);
  std::vector<UserRank> ranks;
  std::vector<Index> cand;
  for (const auto& [offset, user] : owners) {
    const std::size_t count = 1 + split.test_negatives[user].size();
    cand.clear();
    for (std::size_t j = 0; j < count; ++j) cand.push_back(pairs[offset + j].url);
    ranks.push_back({user, pairs[offset].url,
                     rank_of_positive(std::span<const double>(scores.data() + offset, count), cand, 0,
                                      1 + split.eval_negatives)});
  }
  return summarize(std::move(ranks), k);
}

struct Aggregate {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation over runs
};

inline Aggregate aggregate(const std::vector<double>& values) {
  Aggregate a;
  if (values.empty()) return a;
  for (double v : values) a.mean += v;
  a.mean /= static_cast<double>(values.size());
  for (double v : values) a.std += (v - a.mean) * (v - a.mean);
  a.std = std::sqrt(a.std / static_cast<double>(values.size()));
  return a;
}

}  // namespace amran::eval
