#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "amran/csv.hpp"
#include "amran/dataset.hpp"
#include "amran/error.hpp"
#include "amran/random.hpp"

namespace amran::graph {

using data::Index;

struct Entry {
  Index col;
  double value;
};

// Compressed sparse rows with sorted columns and no explicit zeros.
class SparseMatrix {
 public:
  SparseMatrix() = default;
  SparseMatrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), row_ptr_(rows + 1, 0) {}

  // Triplets may arrive in any order; duplicates are summed, zeros dropped.
  static SparseMatrix from_triplets(std::size_t rows, std::size_t cols,
                                    std::vector<std::pair<std::pair<Index, Index>, double>> triplets) {
    std::sort(triplets.begin(), triplets.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    SparseMatrix m(rows, cols);
    for (std::size_t k = 0; k < triplets.size();) {
      auto [r, c] = triplets[k].first;
      if (r < 0 || c < 0 || static_cast<std::size_t>(r) >= rows || static_cast<std::size_t>(c) >= cols)
        throw ShapeError("sparse matrix: entry out of range");
      double v = 0.0;
      std::size_t j = k;
      while (j < triplets.size() && triplets[j].first == triplets[k].first) v += triplets[j++].second;
      if (v != 0.0) {
        m.entries_.push_back({c, v});
        ++m.row_ptr_[r + 1];
      }
      k = j;
    }
    for (std::size_t r = 0; r < rows; ++r) m.row_ptr_[r + 1] += m.row_ptr_[r];
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return entries_.size(); }

  std::span<const Entry> row(std::size_t r) const {
    return {entries_.data() + row_ptr_[r], row_ptr_[r + 1] - row_ptr_[r]};
  }

  double at(std::size_t r, std::size_t c) const {
    auto rr = row(r);
    auto it = std::lower_bound(rr.begin(), rr.end(), static_cast<Index>(c),
                               [](const Entry& e, Index col) { return e.col < col; });
    return (it != rr.end() && it->col == static_cast<Index>(c)) ? it->value : 0.0;
  }

  SparseMatrix transpose() const {
    std::vector<std::pair<std::pair<Index, Index>, double>> t;
    t.reserve(nnz());
    for (std::size_t r = 0; r < rows_; ++r)
      for (const auto& e : row(r)) t.push_back({{e.col, static_cast<Index>(r)}, e.value});
    return from_triplets(cols_, rows_, std::move(t));
  }

  bool operator==(const SparseMatrix& o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_ || row_ptr_ != o.row_ptr_ || entries_.size() != o.entries_.size())
      return false;
    for (std::size_t k = 0; k < entries_.size(); ++k)
      if (entries_[k].col != o.entries_[k].col || entries_[k].value != o.entries_[k].value) return false;
    return true;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::size_t> row_ptr_{0};
  std::vector<Entry> entries_;
};

// ---------------------------------------------------------------------------
// Co-occurrence statistics
// ---------------------------------------------------------------------------

// Pair counts over ordered pairs: marginal[i] = sum_{j != i} #(i,j) and
// total = sum_{i != j} #(i,j), so marginals sum to total.
struct CooccurrenceCounts {
  SparseMatrix pairs;
  std::vector<double> marginal;
  double total = 0.0;
};

struct Cooccurrence {
  CooccurrenceCounts users;
  CooccurrenceCounts urls;
};

namespace detail {

// #(a,b) = number of distinct groups containing both a and b.
inline CooccurrenceCounts count_pairs(const std::vector<std::vector<Index>>& groups, std::size_t items) {
  std::map<std::pair<Index, Index>, double> counts;
  for (const auto& g : groups)
    for (std::size_t x = 0; x < g.size(); ++x)
      for (std::size_t y = x + 1; y < g.size(); ++y) {
        const Index a = std::min(g[x], g[y]), b = std::max(g[x], g[y]);
        if (a != b) counts[{a, b}] += 1.0;
      }
  std::vector<std::pair<std::pair<Index, Index>, double>> triplets;
  CooccurrenceCounts out;
  out.marginal.assign(items, 0.0);
  for (const auto& [key, c] : counts) {
    triplets.push_back({key, c});
    triplets.push_back({{key.second, key.first}, c});
    out.marginal[key.first] += c;
    out.marginal[key.second] += c;
    out.total += 2.0 * c;
  }
  out.pairs = SparseMatrix::from_triplets(items, items, std::move(triplets));
  return out;
}

}  // namespace detail

inline Cooccurrence build_cooccurrence_counts(const data::InteractionDataset& ds) {
  std::vector<std::vector<Index>> users_of_url(ds.num_urls()), urls_of_user(ds.num_users());
  for (const auto& it : ds.interactions) {
    users_of_url[it.url].push_back(it.user);
    urls_of_user[it.user].push_back(it.url);
  }
  for (auto* groups : {&users_of_url, &urls_of_user})
    for (auto& g : *groups) {
      std::sort(g.begin(), g.end());
      g.erase(std::unique(g.begin(), g.end()), g.end());
    }
  return {detail::count_pairs(users_of_url, ds.num_users()), detail::count_pairs(urls_of_user, ds.num_urls())};
}

// SPPMI(i,j) = max(ln(#(i,j) |D| / (#(i) #(j))) - ln k, 0); zeros omitted.
inline SparseMatrix compute_sppmi(const CooccurrenceCounts& counts, double k_shift) {
  if (!(k_shift > 0.0)) throw ConfigError("SPPMI shift constant must be positive");
  const double shift = std::log(k_shift);
  std::vector<std::pair<std::pair<Index, Index>, double>> triplets;
  const auto& m = counts.pairs;
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (const auto& e : m.row(i)) {
      const double pmi = std::log(e.value * counts.total / (counts.marginal[i] * counts.marginal[e.col]));
      const double v = pmi - shift;
      if (v > 0.0) triplets.push_back({{static_cast<Index>(i), e.col}, v});
    }
  return SparseMatrix::from_triplets(m.rows(), m.cols(), std::move(triplets));
}

// TF-IDF(i,j) = #(i,j) / max_k #(i,k) * ln(m / m_i), with #(i,j) the raw post
// count, m the number of URLs and m_i the number of distinct URLs of user i.
inline SparseMatrix compute_tfidf(const data::InteractionDataset& ds) {
  const std::size_t n = ds.num_users(), m = ds.num_urls();
  std::vector<double> max_count(n, 0.0), distinct(n, 0.0);
  for (const auto& it : ds.interactions) {
    max_count[it.user] = std::max(max_count[it.user], static_cast<double>(it.count));
    distinct[it.user] += 1.0;
  }
  std::vector<std::pair<std::pair<Index, Index>, double>> triplets;
  for (const auto& it : ds.interactions) {
    const double tf = static_cast<double>(it.count) / max_count[it.user];
    const double idf = std::log(static_cast<double>(m) / distinct[it.user]);
    const double v = tf * idf;
    if (v > 0.0) triplets.push_back({{it.user, it.url}, v});
  }
  return SparseMatrix::from_triplets(n, m, std::move(triplets));
}

// ---------------------------------------------------------------------------
// Heterogeneous graph
// ---------------------------------------------------------------------------

enum class NodeType { user, url };
enum class EdgeType { user_user, url_url, user_url };

struct Neighbor {
  std::int64_t node;  // global node id
  double weight;
};

// Nodes 0..n-1 are users, n..n+m-1 are URLs. The diagonal weight is 1 but a
// node is never reported as its own neighbor.
class HeteroGraph {
 public:
  HeteroGraph() = default;
  HeteroGraph(SparseMatrix user_user, SparseMatrix url_url, SparseMatrix user_url, double k_shift)
      : user_user_(std::move(user_user)),
        url_url_(std::move(url_url)),
        user_url_(std::move(user_url)),
        k_shift_(k_shift) {
    url_user_ = user_url_.transpose();
  }

  std::size_t num_users() const { return user_user_.rows(); }
  std::size_t num_urls() const { return url_url_.rows(); }
  std::size_t num_nodes() const { return num_users() + num_urls(); }
  double k_shift() const { return k_shift_; }

  std::int64_t user_node(Index u) const { return u; }
  std::int64_t url_node(Index c) const { return static_cast<std::int64_t>(num_users()) + c; }
  NodeType type(std::int64_t node) const {
    if (node < 0 || static_cast<std::size_t>(node) >= num_nodes()) throw DomainError("node id out of range");
    return static_cast<std::size_t>(node) < num_users() ? NodeType::user : NodeType::url;
  }
  Index local(std::int64_t node) const {
    return static_cast<Index>(type(node) == NodeType::user ? node : node - static_cast<std::int64_t>(num_users()));
  }

  double weight(std::int64_t a, std::int64_t b) const {
    if (a == b) return 1.0;
    const auto ta = type(a), tb = type(b);
    if (ta == NodeType::user && tb == NodeType::user) return user_user_.at(local(a), local(b));
    if (ta == NodeType::url && tb == NodeType::url) return url_url_.at(local(a), local(b));
    if (ta == NodeType::user) return user_url_.at(local(a), local(b));
    return user_url_.at(local(b), local(a));
  }

  // Typed neighbors (excluding the node itself) with positive weight.
  std::vector<Neighbor> neighbors(std::int64_t node, NodeType of_type) const {
    std::vector<Neighbor> out;
    const Index i = local(node);
    const SparseMatrix* src = nullptr;
    if (type(node) == NodeType::user)
      src = of_type == NodeType::user ? &user_user_ : &user_url_;
    else
      src = of_type == NodeType::user ? &url_user_ : &url_url_;
    const std::int64_t offset = of_type == NodeType::user ? 0 : static_cast<std::int64_t>(num_users());
    for (const auto& e : src->row(i)) {
      const std::int64_t nb = offset + e.col;
      if (nb != node) out.push_back({nb, e.value});
    }
    return out;
  }

  const SparseMatrix& user_user() const { return user_user_; }
  const SparseMatrix& url_url() const { return url_url_; }
  const SparseMatrix& user_url() const { return user_url_; }

  bool operator==(const HeteroGraph& o) const {
    return user_user_ == o.user_user_ && url_url_ == o.url_url_ && user_url_ == o.user_url_ && k_shift_ == o.k_shift_;
  }

 private:
  SparseMatrix user_user_, url_url_, user_url_, url_user_;
  double k_shift_ = 1.0;
};

inline HeteroGraph assemble_adjacency(SparseMatrix sppmi_user, SparseMatrix sppmi_url, SparseMatrix tfidf,
                                      double k_shift) {
  if (sppmi_user.rows() != sppmi_user.cols() || sppmi_url.rows() != sppmi_url.cols())
    throw ShapeError("adjacency: SPPMI blocks must be square");
  if (tfidf.rows() != sppmi_user.rows() || tfidf.cols() != sppmi_url.rows())
    throw ShapeError("adjacency: TF-IDF block is " + std::to_string(tfidf.rows()) + "x" + std::to_string(tfidf.cols()) +
                     " but graph has " + std::to_string(sppmi_user.rows()) + " users and " +
                     std::to_string(sppmi_url.rows()) + " URLs");
  return HeteroGraph(std::move(sppmi_user), std::move(sppmi_url), std::move(tfidf), k_shift);
}

inline HeteroGraph build_graph(const data::InteractionDataset& train_view, double k_shift) {
  auto counts = build_cooccurrence_counts(train_view);
  return assemble_adjacency(compute_sppmi(counts.users, k_shift), compute_sppmi(counts.urls, k_shift),
                            compute_tfidf(train_view), k_shift);
}

// ---------------------------------------------------------------------------
// Neighbor selection
// ---------------------------------------------------------------------------

// b slots of neighbor ids (-1 for padding).
struct Stream {
  std::vector<Index> ids;
  std::vector<std::uint8_t> padded;
  std::size_t real() const { return static_cast<std::size_t>(std::count(padded.begin(), padded.end(), 0)); }
};

struct CsanContext {
  Stream social_users;
  Stream cooccur_users;
  Stream historical_urls;
  Stream cooccur_urls;
};

// Per-user lookups the CSAN streams need besides the graph.
struct ContextIndex {
  std::vector<std::vector<Index>> followees;                // sorted
  std::vector<std::vector<std::pair<Index, double>>> history;  // (url, tf-idf), ranked

  static ContextIndex build(const data::InteractionDataset& train_view, const HeteroGraph& graph) {
    ContextIndex idx;
    idx.followees.resize(train_view.num_users());
    idx.history.resize(train_view.num_users());
    for (const auto& e : train_view.social_edges) idx.followees[e.follower].push_back(e.followee);
    for (auto& f : idx.followees) std::sort(f.begin(), f.end());
    for (const auto& it : train_view.interactions)
      idx.history[it.user].push_back({it.url, graph.user_url().at(it.user, it.url)});
    for (auto& h : idx.history)
      std::sort(h.begin(), h.end(), [](const auto& a, const auto& b) {
        return a.second != b.second ? a.second > b.second : a.first < b.first;
      });
    return idx;
  }
};

namespace detail {

// Highest weight first, ties by ascending id; truncated or padded to b.
inline Stream top_weighted(std::vector<std::pair<Index, double>> candidates, std::size_t b) {
  std::sort(candidates.begin(), candidates.end(), [](const auto& x, const auto& y) {
    return x.second != y.second ? x.second > y.second : x.first < y.first;
  });
  Stream s;
  s.ids.assign(b, -1);
  s.padded.assign(b, 1);
  for (std::size_t k = 0; k < std::min(b, candidates.size()); ++k) {
    s.ids[k] = candidates[k].first;
    s.padded[k] = 0;
  }
  return s;
}

}  // namespace detail

inline Stream social_stream(const HeteroGraph& graph, const ContextIndex& ctx, Index user, std::size_t b) {
  std::vector<std::pair<Index, double>> cand;
  for (Index f : ctx.followees[user])
    if (f != user) cand.push_back({f, graph.user_user().at(user, f)});
  return detail::top_weighted(std::move(cand), b);
}

inline Stream cooccur_user_stream(const HeteroGraph& graph, Index user, std::size_t b) {
  std::vector<std::pair<Index, double>> cand;
  for (const auto& e : graph.user_user().row(user))
    if (e.col != user) cand.push_back({e.col, e.value});
  return detail::top_weighted(std::move(cand), b);
}

// The user's posted URLs other than `exclude_url` (pass -1 to keep all).
inline Stream historical_stream(const ContextIndex& ctx, Index user, Index exclude_url, std::size_t b) {
  std::vector<std::pair<Index, double>> cand;
  for (const auto& h : ctx.history[user])
    if (h.first != exclude_url) cand.push_back(h);
  return detail::top_weighted(std::move(cand), b);
}

inline Stream cooccur_url_stream(const HeteroGraph& graph, Index url, std::size_t b) {
  std::vector<std::pair<Index, double>> cand;
  for (const auto& e : graph.url_url().row(url))
    if (e.col != url) cand.push_back({e.col, e.value});
  return detail::top_weighted(std::move(cand), b);
}

inline CsanContext select_csan_neighbors(const HeteroGraph& graph, const ContextIndex& ctx, Index user, Index url,
                                         std::size_t b_h = 10) {
  return {social_stream(graph, ctx, user, b_h), cooccur_user_stream(graph, user, b_h),
          historical_stream(ctx, user, url, b_h), cooccur_url_stream(graph, url, b_h)};
}

// Efraimidis-Spirakis weighted sampling without replacement: key u^(1/w),
// keep the `count` largest keys. Returned in descending key order.
inline std::vector<std::int64_t> wrs_sample(std::span<const Neighbor> candidates, std::size_t count, Rng& rng) {
  if (count == 0) throw ConfigError("wrs_sample: count must be at least 1");
  std::vector<std::pair<double, std::int64_t>> keyed;
  keyed.reserve(candidates.size());
  for (const auto& c : candidates) {
    if (!(c.weight > 0.0)) throw DomainError("wrs_sample: weights must be strictly positive");
    // log(u)/w preserves the order of u^(1/w) without underflow.
    keyed.push_back({std::log(uniform_open01(rng)) / c.weight, c.node});
  }
  const std::size_t take = std::min(count, keyed.size());
  std::partial_sort(keyed.begin(), keyed.begin() + static_cast<std::ptrdiff_t>(take), keyed.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::int64_t> out;
  out.reserve(take);
  for (std::size_t k = 0; k < take; ++k) out.push_back(keyed[k].second);
  return out;
}

// Per-layer typed neighborhood of one central node: `budget` user slots then
// `budget` URL slots. Padded slots have node -1, weight 0, valid 0.
struct NeighborSample {
  std::vector<std::int64_t> nodes;
  std::vector<double> weights;
  std::vector<std::uint8_t> valid;
};

// Samples are a pure function of (seed, layer, node), so a forward pass and
// its backward pass (or two evaluation passes) see identical neighborhoods.
class HganSampler {
 public:
  HganSampler(const HeteroGraph& graph, std::size_t budget, std::uint64_t seed)
      : graph_(&graph), budget_(budget), seed_(seed) {
    if (budget == 0) throw ConfigError("neighbor budget must be at least 1");
  }

  std::size_t budget() const { return budget_; }

  NeighborSample sample(std::int64_t node, std::size_t layer) const {
    NeighborSample s;
    s.nodes.assign(2 * budget_, -1);
    s.weights.assign(2 * budget_, 0.0);
    s.valid.assign(2 * budget_, 0);
    Rng rng(derive_seed(seed_, layer, static_cast<std::uint64_t>(node)));
    std::size_t base = 0;
    for (auto t : {NodeType::user, NodeType::url}) {
      const auto cands = graph_->neighbors(node, t);
      const auto picked = wrs_sample(cands, budget_, rng);
      for (std::size_t k = 0; k < picked.size(); ++k) {
        s.nodes[base + k] = picked[k];
        s.weights[base + k] = graph_->weight(node, picked[k]);
        s.valid[base + k] = 1;
      }
      base += budget_;
    }
    return s;
  }

 private:
  const HeteroGraph* graph_;
  std::size_t budget_;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Persistence: three "row,col,weight" triplet files plus a JSON manifest.
// ---------------------------------------------------------------------------

namespace detail {

inline std::string triplets_text(const SparseMatrix& m) {
  std::ostringstream os;
  os << "row,col,weight\n" << std::setprecision(17);
  for (std::size_t r = 0; r < m.rows(); ++r)
    for (const auto& e : m.row(r)) os << r << ',' << e.col << ',' << e.value << '\n';
  return os.str();
}

inline SparseMatrix read_triplets(const std::string& path, std::size_t rows, std::size_t cols) {
  csv::Reader reader(path);
  std::vector<std::string> header, row;
  if (!reader.next(header)) throw ParseError(path, 0, "empty triplet file");
  std::vector<std::pair<std::pair<Index, Index>, double>> t;
  while (reader.next(row)) {
    if (row.size() != 3) reader.fail("expected row,col,weight");
    auto r = csv::parse_int(row[0]);
    auto c = csv::parse_int(row[1]);
    auto w = csv::parse_double(row[2]);
    if (!r || !c || !w) reader.fail("malformed triplet");
    t.push_back({{static_cast<Index>(*r), static_cast<Index>(*c)}, *w});
  }
  return SparseMatrix::from_triplets(rows, cols, std::move(t));
}

}  // namespace detail

inline void write_graph(const HeteroGraph& g, const std::string& dir, const data::InteractionDataset& ds) {
  const std::pair<const char*, const SparseMatrix*> files[] = {
      {"graph_user_user.csv", &g.user_user()}, {"graph_url_url.csv", &g.url_url()}, {"graph_user_url.csv", &g.user_url()}};
  nlohmann::json manifest;
  for (const auto& [name, m] : files) {
    const auto text = detail::triplets_text(*m);
    std::ofstream out(dir + "/" + name);
    if (!out) throw IoError("cannot write " + dir + "/" + name);
    out << text;
    manifest["files"][name] = {{"rows", m->rows()}, {"cols", m->cols()}, {"nnz", m->nnz()}};
  }
  manifest["k_shift"] = g.k_shift();
  manifest["log_base"] = "e";
  manifest["diagonal"] = 1.0;
  manifest["num_users"] = g.num_users();
  manifest["num_urls"] = g.num_urls();
  std::ostringstream hu, hc;
  hu << std::hex << std::setw(16) << std::setfill('0') << fnv1a(data::id_map_text(ds.user_ids));
  hc << std::hex << std::setw(16) << std::setfill('0') << fnv1a(data::id_map_text(ds.url_ids));
  manifest["user_id_map_fnv1a"] = hu.str();
  manifest["url_id_map_fnv1a"] = hc.str();
  std::ofstream out(dir + "/graph_manifest.json");
  if (!out) throw IoError("cannot write " + dir + "/graph_manifest.json");
  out << manifest.dump(2) << '\n';
}

inline HeteroGraph read_graph(const std::string& dir) {
  std::ifstream in(dir + "/graph_manifest.json");
  if (!in) throw IoError("cannot read " + dir + "/graph_manifest.json");
  const auto manifest = nlohmann::json::parse(in);
  const std::size_t n = manifest.at("num_users"), m = manifest.at("num_urls");
  return HeteroGraph(detail::read_triplets(dir + "/graph_user_user.csv", n, n),
                     detail::read_triplets(dir + "/graph_url_url.csv", m, m),
                     detail::read_triplets(dir + "/graph_user_url.csv", n, m), manifest.at("k_shift").get<double>());
}

}  // namespace amran::graph
