#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <tuple>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "amran/csv.hpp"
#include "amran/error.hpp"
#include "amran/random.hpp"

namespace amran::data {

using Index = std::int32_t;

struct Interaction {
  Index user = 0;
  Index url = 0;
  std::int64_t timestamp = 0;
  // Position of the retained row in the input; breaks timestamp ties.
  std::int64_t order = 0;
  // Raw number of times the pair was posted (before deduplication).
  std::int32_t count = 1;
};

struct SocialEdge {
  Index follower = 0;
  Index followee = 0;
};

enum class AttributeKind { categorical, continuous };

struct AttributeSpec {
  std::string name;
  AttributeKind kind = AttributeKind::categorical;
  // Categorical: declared values; index 0 is reserved for "unknown".
  std::vector<std::string> vocabulary;
  // Continuous: number of buckets (k_max + 2). 0 means "derive from data".
  std::size_t buckets = 0;
  std::size_t dim = 8;

  std::size_t cardinality() const {
    return kind == AttributeKind::categorical ? vocabulary.size() + 1 : buckets;
  }
};

struct AttributeSchema {
  std::vector<AttributeSpec> user;
  std::vector<AttributeSpec> url;

  void validate() const {
    if (user.empty() || url.empty()) throw SchemaError("schema needs at least one user and one URL attribute");
    for (const auto* group : {&user, &url})
      for (const auto& a : *group) {
        if (a.name.empty()) throw SchemaError("attribute without a name");
        if (a.dim == 0) throw SchemaError("attribute '" + a.name + "' has zero embedding dimension");
      }
  }
};

// Encoded attribute indices, row-major (entity x attribute).
struct AttributeTable {
  std::size_t entities = 0;
  std::size_t attributes = 0;
  std::vector<Index> values;

  Index at(std::size_t entity, std::size_t attribute) const { return values[entity * attributes + attribute]; }
};

struct InteractionDataset {
  std::vector<std::string> user_ids;  // dense index -> external id
  std::vector<std::string> url_ids;
  std::unordered_map<std::string, Index> user_index;
  std::unordered_map<std::string, Index> url_index;
  std::vector<Interaction> interactions;  // one per distinct (user, url)
  std::vector<SocialEdge> social_edges;
  AttributeSchema schema;
  AttributeTable user_attributes;
  AttributeTable url_attributes;
  // External ids removed by the minimum-interaction filter; later files may
  // still mention them.
  std::unordered_set<std::string> filtered_users;
  std::unordered_set<std::string> filtered_urls;

  std::size_t num_users() const { return user_ids.size(); }
  std::size_t num_urls() const { return url_ids.size(); }
};

struct LoadReport {
  std::size_t rows = 0;
  std::size_t duplicates = 0;
  std::size_t dropped = 0;
};

// ---------------------------------------------------------------------------
// Bucketization
// ---------------------------------------------------------------------------

// [0,1) -> 0, [1,2) -> 1, [2,4) -> 2, ..., [2^k, 2^(k+1)) -> k+1.
inline Index bucketize_continuous(double v) {
  if (!(v >= 0.0) || std::isinf(v)) throw DomainError("bucketize: value must be finite and nonnegative");
  if (v < 1.0) return 0;
  return static_cast<Index>(std::ilogb(v)) + 1;
}

// ---------------------------------------------------------------------------
// Loading
// ---------------------------------------------------------------------------

inline InteractionDataset load_interactions(const std::string& path, LoadReport* report = nullptr) {
  csv::Reader reader(path);
  std::vector<std::string> header, row;
  if (!reader.next(header)) throw ParseError(path, 0, "empty file, expected header user_id,url_id[,timestamp]");
  const auto user_col = csv::column(reader, header, "user_id");
  const auto url_col = csv::column(reader, header, "url_id");
  const auto ts_col = csv::optional_column(header, "timestamp");

  InteractionDataset ds;
  std::map<std::pair<Index, Index>, std::size_t> seen;
  LoadReport rep;
  std::int64_t order = 0;
  while (reader.next(row)) {
    ++rep.rows;
    const std::size_t needed = std::max({user_col, url_col, ts_col.value_or(0)}) + 1;
    if (row.size() < needed) reader.fail("expected " + std::to_string(needed) + " columns, got " + std::to_string(row.size()));
    const auto& uid = row[user_col];
    const auto& cid = row[url_col];
    if (uid.empty()) reader.fail("empty user_id");
    if (cid.empty()) reader.fail("empty url_id");
    std::int64_t ts = order;
    if (ts_col) {
      auto parsed = csv::parse_int(row[*ts_col]);
      if (!parsed) reader.fail("timestamp '" + row[*ts_col] + "' is not an integer");
      ts = *parsed;
    }
    auto [uit, unew] = ds.user_index.try_emplace(uid, static_cast<Index>(ds.user_ids.size()));
    if (unew) ds.user_ids.push_back(uid);
    auto [cit, cnew] = ds.url_index.try_emplace(cid, static_cast<Index>(ds.url_ids.size()));
    if (cnew) ds.url_ids.push_back(cid);
    const std::pair<Index, Index> key{uit->second, cit->second};
    auto found = seen.find(key);
    if (found == seen.end()) {
      seen.emplace(key, ds.interactions.size());
      ds.interactions.push_back({key.first, key.second, ts, order, 1});
    } else {
      ++rep.duplicates;
      auto& kept = ds.interactions[found->second];
      ++kept.count;
      // Later postings win; equal timestamps resolve to the later row.
      if (ts >= kept.timestamp) {
        kept.timestamp = ts;
        kept.order = order;
      }
    }
    ++order;
  }
  if (report) *report = rep;
  return ds;
}

// Keeps users with at least `min_interactions` distinct URLs and re-indexes
// users and URLs densely in order of first appearance.
inline InteractionDataset filter_min_interactions(const InteractionDataset& in, std::size_t min_interactions = 3) {
  std::vector<std::size_t> per_user(in.num_users(), 0);
  for (const auto& it : in.interactions) ++per_user[it.user];
  InteractionDataset out;
  out.schema = in.schema;
  out.filtered_users = in.filtered_users;
  out.filtered_urls = in.filtered_urls;
  std::vector<Index> user_map(in.num_users(), -1), url_map(in.num_urls(), -1);
  for (const auto& it : in.interactions) {
    if (per_user[it.user] < min_interactions) continue;
    if (user_map[it.user] < 0) {
      user_map[it.user] = static_cast<Index>(out.user_ids.size());
      out.user_ids.push_back(in.user_ids[it.user]);
    }
    if (url_map[it.url] < 0) {
      url_map[it.url] = static_cast<Index>(out.url_ids.size());
      out.url_ids.push_back(in.url_ids[it.url]);
    }
    Interaction copy = it;
    copy.user = user_map[it.user];
    copy.url = url_map[it.url];
    out.interactions.push_back(copy);
  }
  for (std::size_t u = 0; u < in.num_users(); ++u)
    if (user_map[u] < 0) out.filtered_users.insert(in.user_ids[u]);
  for (std::size_t c = 0; c < in.num_urls(); ++c)
    if (url_map[c] < 0) out.filtered_urls.insert(in.url_ids[c]);
  for (std::size_t u = 0; u < out.user_ids.size(); ++u) out.user_index.emplace(out.user_ids[u], static_cast<Index>(u));
  for (std::size_t c = 0; c < out.url_ids.size(); ++c) out.url_index.emplace(out.url_ids[c], static_cast<Index>(c));
  for (const auto& e : in.social_edges)
    if (user_map[e.follower] >= 0 && user_map[e.followee] >= 0)
      out.social_edges.push_back({user_map[e.follower], user_map[e.followee]});
  return out;
}

// Directed follower -> followee edges among known users. Edges naming
// unknown users (or self-follows) are dropped and counted.
inline std::vector<SocialEdge> load_social_edges(const std::string& path, const InteractionDataset& ds,
                                                 LoadReport* report = nullptr) {
  csv::Reader reader(path);
  std::vector<std::string> header, row;
  std::vector<SocialEdge> edges;
  LoadReport rep;
  if (!reader.next(header)) {
    if (report) *report = rep;
    return edges;
  }
  const auto from_col = csv::column(reader, header, "follower_id");
  const auto to_col = csv::column(reader, header, "followee_id");
  std::set<std::pair<Index, Index>> seen;
  while (reader.next(row)) {
    ++rep.rows;
    if (row.size() <= std::max(from_col, to_col)) reader.fail("expected follower_id,followee_id");
    if (row[from_col].empty() || row[to_col].empty()) reader.fail("empty user id");
    auto a = ds.user_index.find(row[from_col]);
    auto b = ds.user_index.find(row[to_col]);
    if (a == ds.user_index.end() || b == ds.user_index.end() || a->second == b->second) {
      ++rep.dropped;
      continue;
    }
    if (!seen.insert({a->second, b->second}).second) {
      ++rep.duplicates;
      continue;
    }
    edges.push_back({a->second, b->second});
  }
  if (report) *report = rep;
  return edges;
}

namespace detail {

struct RawAttributeTable {
  std::vector<std::vector<std::string>> cells;  // entity x attribute, "" = missing
};

inline RawAttributeTable read_attribute_file(const std::string& path, const std::vector<AttributeSpec>& specs,
                                             const std::unordered_map<std::string, Index>& index,
                                             const std::unordered_set<std::string>& filtered, std::size_t entities) {
  RawAttributeTable raw;
  raw.cells.assign(entities, std::vector<std::string>(specs.size()));
  csv::Reader reader(path);
  std::vector<std::string> header, row;
  if (!reader.next(header)) throw ParseError(path, 0, "empty attribute file");
  std::vector<std::size_t> cols;
  for (const auto& s : specs) {
    auto c = csv::optional_column(header, s.name);
    if (!c) throw SchemaError(path + ": declared attribute '" + s.name + "' missing from header");
    cols.push_back(*c);
  }
  while (reader.next(row)) {
    if (row.empty() || row[0].empty()) reader.fail("empty entity id");
    auto it = index.find(row[0]);
    if (it == index.end()) {
      if (filtered.contains(row[0])) continue;
      throw ReferenceError(path + ":" + std::to_string(reader.line()) + ": unknown id '" + row[0] + "'");
    }
    for (std::size_t a = 0; a < specs.size(); ++a)
      raw.cells[it->second][a] = cols[a] < row.size() ? row[cols[a]] : std::string();
  }
  return raw;
}

inline AttributeTable encode_attributes(const RawAttributeTable& raw, std::vector<AttributeSpec>& specs,
                                        const std::string& path) {
  AttributeTable table;
  table.entities = raw.cells.size();
  table.attributes = specs.size();
  table.values.assign(table.entities * table.attributes, 0);
  for (std::size_t a = 0; a < specs.size(); ++a) {
    auto& spec = specs[a];
    if (spec.kind == AttributeKind::categorical) {
      std::unordered_map<std::string, Index> vocab;
      for (std::size_t v = 0; v < spec.vocabulary.size(); ++v) vocab.emplace(spec.vocabulary[v], static_cast<Index>(v + 1));
      for (std::size_t e = 0; e < table.entities; ++e) {
        const auto& cell = raw.cells[e][a];
        if (cell.empty()) continue;
        auto it = vocab.find(cell);
        if (it == vocab.end())
          throw SchemaError(path + ": value '" + cell + "' not in vocabulary of attribute '" + spec.name + "'");
        table.values[e * table.attributes + a] = it->second;
      }
    } else {
      Index top = 0;
      std::vector<Index> buckets(table.entities, 0);
      for (std::size_t e = 0; e < table.entities; ++e) {
        const auto& cell = raw.cells[e][a];
        if (cell.empty()) continue;
        auto v = csv::parse_double(cell);
        if (!v) throw SchemaError(path + ": value '" + cell + "' of continuous attribute '" + spec.name + "' is not numeric");
        if (*v < 0.0) throw SchemaError(path + ": negative value for continuous attribute '" + spec.name + "'");
        buckets[e] = bucketize_continuous(*v);
        top = std::max(top, buckets[e]);
      }
      if (spec.buckets == 0) spec.buckets = std::max<std::size_t>(2, static_cast<std::size_t>(top) + 1);
      const auto last = static_cast<Index>(spec.buckets - 1);
      for (std::size_t e = 0; e < table.entities; ++e) table.values[e * table.attributes + a] = std::min(buckets[e], last);
    }
  }
  return table;
}

}  // namespace detail

// Reads user and URL attribute tables against `schema`. Entities absent from
// a file get the "unknown" category / bucket 0. Continuous attributes with an
// undeclared bucket count get one derived from the data (stored in ds.schema).
inline void load_attribute_tables(InteractionDataset& ds, const std::string& user_path, const std::string& url_path,
                                  AttributeSchema schema) {
  schema.validate();
  auto raw_users = detail::read_attribute_file(user_path, schema.user, ds.user_index, ds.filtered_users, ds.num_users());
  auto raw_urls = detail::read_attribute_file(url_path, schema.url, ds.url_index, ds.filtered_urls, ds.num_urls());
  ds.user_attributes = detail::encode_attributes(raw_users, schema.user, user_path);
  ds.url_attributes = detail::encode_attributes(raw_urls, schema.url, url_path);
  ds.schema = std::move(schema);
}

// Id-map sidecar: "index,id" rows in dense order.
inline std::string id_map_text(const std::vector<std::string>& ids) {
  std::string out = "index,id\n";
  for (std::size_t i = 0; i < ids.size(); ++i) out += std::to_string(i) + "," + csv::quote_if_needed(ids[i]) + "\n";
  return out;
}

inline void write_id_maps(const InteractionDataset& ds, const std::string& dir) {
  for (auto [name, ids] : {std::pair{"users_idmap.csv", &ds.user_ids}, std::pair{"urls_idmap.csv", &ds.url_ids}}) {
    std::ofstream out(dir + "/" + name);
    if (!out) throw IoError("cannot write " + dir + "/" + name);
    out << id_map_text(*ids);
  }
}

// ---------------------------------------------------------------------------
// Leave-one-out split
// ---------------------------------------------------------------------------

struct SplitSet {
  std::vector<Interaction> train;
  std::vector<Interaction> validation;  // indexed by user
  std::vector<Interaction> test;        // indexed by user
  std::vector<std::vector<Index>> validation_negatives;
  std::vector<std::vector<Index>> test_negatives;
  std::vector<std::vector<Index>> train_positives;  // sorted URL ids per user
  std::vector<std::vector<Index>> all_positives;    // sorted URL ids per user
  std::size_t num_users = 0;
  std::size_t num_urls = 0;
  std::size_t eval_negatives = 99;  // sampled negatives per held-out item

  bool is_train_positive(Index user, Index url) const {
    const auto& p = train_positives[user];
    return std::binary_search(p.begin(), p.end(), url);
  }
};

namespace detail {

// `count` URLs outside `positives` (sorted). Distinct when the pool allows,
// otherwise drawn with replacement from the whole pool.
inline std::vector<Index> sample_negatives(const std::vector<Index>& positives, std::size_t num_urls, std::size_t count,
                                           Rng& rng) {
  std::vector<Index> pool;
  pool.reserve(num_urls - positives.size());
  for (Index c = 0; c < static_cast<Index>(num_urls); ++c)
    if (!std::binary_search(positives.begin(), positives.end(), c)) pool.push_back(c);
  if (pool.empty()) throw SplitError("cannot sample negatives: user interacted with every URL");
  std::vector<Index> out;
  out.reserve(count);
  if (pool.size() >= count) {
    for (std::size_t i = 0; i < count; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
      out.push_back(pool[i]);
    }
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
    for (std::size_t i = 0; i < count; ++i) out.push_back(pool[pick(rng)]);
  }
  return out;
}

}  // namespace detail

inline SplitSet split_leave_one_out(const InteractionDataset& ds, std::size_t num_eval_negatives = 99,
                                    std::uint64_t seed = 0) {
  const std::size_t n = ds.num_users();
  std::vector<std::vector<Interaction>> per_user(n);
  for (const auto& it : ds.interactions) per_user[it.user].push_back(it);
  SplitSet split;
  split.num_users = n;
  split.num_urls = ds.num_urls();
  split.eval_negatives = num_eval_negatives;
  split.validation.resize(n);
  split.test.resize(n);
  split.validation_negatives.resize(n);
  split.test_negatives.resize(n);
  split.train_positives.resize(n);
  split.all_positives.resize(n);
  for (std::size_t u = 0; u < n; ++u) {
    auto& items = per_user[u];
    if (items.size() < 3)
      throw SplitError("user '" + ds.user_ids[u] + "' has " + std::to_string(items.size()) +
                       " interactions; leave-one-out needs at least 3");
    std::sort(items.begin(), items.end(), [](const Interaction& a, const Interaction& b) {
      return std::tie(a.timestamp, a.order) < std::tie(b.timestamp, b.order);
    });
    split.test[u] = items.back();
    split.validation[u] = items[items.size() - 2];
    for (std::size_t k = 0; k + 2 < items.size(); ++k) {
      split.train.push_back(items[k]);
      split.train_positives[u].push_back(items[k].url);
    }
    for (const auto& it : items) split.all_positives[u].push_back(it.url);
    std::sort(split.train_positives[u].begin(), split.train_positives[u].end());
    std::sort(split.all_positives[u].begin(), split.all_positives[u].end());
    Rng test_rng(derive_seed(seed, 0x7e57, u));
    split.test_negatives[u] = detail::sample_negatives(split.all_positives[u], ds.num_urls(), num_eval_negatives, test_rng);
    Rng val_rng(derive_seed(seed, 0x7a1, u));
    split.validation_negatives[u] =
        detail::sample_negatives(split.all_positives[u], ds.num_urls(), num_eval_negatives, val_rng);
  }
  return split;
}

// ---------------------------------------------------------------------------
// Training instances
// ---------------------------------------------------------------------------

struct Instance {
  Index user = 0;
  Index url = 0;
  double label = 0.0;
};

// One uniform negative for `user` outside its training positives.
inline Index sample_negative(const SplitSet& split, Index user, Rng& rng) {
  const auto& pos = split.train_positives[user];
  if (pos.size() >= split.num_urls) throw SplitError("cannot sample negatives: user interacted with every URL");
  std::uniform_int_distribution<Index> pick(0, static_cast<Index>(split.num_urls) - 1);
  if (pos.size() * 2 <= split.num_urls) {
    for (;;) {
      const Index c = pick(rng);
      if (!std::binary_search(pos.begin(), pos.end(), c)) return c;
    }
  }
  // Dense user: pick the k-th URL of the complement directly.
  std::uniform_int_distribution<std::size_t> kth(0, split.num_urls - pos.size() - 1);
  std::size_t target = kth(rng);
  for (Index c = 0;; ++c)
    if (!std::binary_search(pos.begin(), pos.end(), c) && target-- == 0) return c;
}

// One epoch of shuffled instances: every training positive followed by
// `neg_ratio` uniform negatives, chunked into batches of `batch_size`.
inline std::vector<std::vector<Instance>> sample_training_batches(const SplitSet& split, std::size_t batch_size,
                                                                  int neg_ratio, std::uint64_t seed) {
  if (neg_ratio < 1) throw ConfigError("neg_ratio must be at least 1");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (split.train.empty()) throw SplitError("training split is empty");
  Rng rng(seed);
  std::vector<Instance> all;
  all.reserve(split.train.size() * static_cast<std::size_t>(neg_ratio + 1));
  for (const auto& it : split.train) {
    all.push_back({it.user, it.url, 1.0});
    for (int k = 0; k < neg_ratio; ++k) all.push_back({it.user, sample_negative(split, it.user, rng), 0.0});
  }
  std::shuffle(all.begin(), all.end(), rng);
  std::vector<std::vector<Instance>> batches;
  for (std::size_t start = 0; start < all.size(); start += batch_size)
    batches.emplace_back(all.begin() + static_cast<std::ptrdiff_t>(start),
                         all.begin() + static_cast<std::ptrdiff_t>(std::min(all.size(), start + batch_size)));
  return batches;
}

// Interactions restricted to a split's training part, with every other
// dataset field kept; graph statistics are built from this view.
inline InteractionDataset training_view(const InteractionDataset& ds, const SplitSet& split) {
  InteractionDataset view = ds;
  view.interactions = split.train;
  return view;
}

}  // namespace amran::data
