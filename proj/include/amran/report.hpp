#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "amran/eval.hpp"
#include "amran/model.hpp"
#include "amran/train.hpp"
#include "json.hpp"

// Artifact writers. Every file carries the config hash and seed list; CSV
// files put them in a leading '#' comment line.
namespace amran::report {

using nlohmann::json;

struct Metadata {
  std::string config_hash;
  std::vector<std::uint64_t> seeds;
};

inline std::string fixed(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.8f", v);
  return buf;
}

inline std::string comment_line(const Metadata& meta) {
  std::string s = "# config_hash=" + meta.config_hash + " seeds=";
  for (std::size_t k = 0; k < meta.seeds.size(); ++k) s += (k ? ";" : "") + std::to_string(meta.seeds[k]);
  return s + "\n";
}

inline void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("failed writing " + path);
}

inline std::string train_log_csv(const std::vector<train::EpochLog>& log, const Metadata& meta) {
  std::string s = comment_line(meta) + "epoch,loss,val_hr10,val_ndcg10,wall_seconds\n";
  for (const auto& e : log)
    s += std::to_string(e.epoch) + "," + fixed(e.loss) + "," + fixed(e.val_hr) + "," + fixed(e.val_ndcg) + "," +
         fixed(e.wall_seconds) + "\n";
  return s;
}

inline std::string ranks_csv(const eval::Metrics& m, const data::InteractionDataset& ds, const Metadata& meta) {
  std::string s = comment_line(meta) + "user_id,rank\n";
  for (const auto& r : m.ranks) s += csv::quote_if_needed(ds.user_ids[r.user]) + "," + std::to_string(r.rank) + "\n";
  return s;
}

inline json run_json(const train::RunResult& r) {
  return {{"seed", r.seed},
          {"best_epoch", r.training.best_epoch},
          {"epochs_run", r.training.log.size()},
          {"val_hr10", r.training.best_val_hr},
          {"val_ndcg10", r.training.best_val_ndcg},
          {"test_hr10", r.test.hr},
          {"test_ndcg10", r.test.ndcg},
          {"users", r.test.ranks.size()},
          {"clamped_predictions", r.training.clamped}};
}

inline json aggregate_json(const std::vector<train::RunResult>& runs) {
  std::vector<double> hr, ndcg, vhr, vndcg;
  for (const auto& r : runs) {
    hr.push_back(r.test.hr);
    ndcg.push_back(r.test.ndcg);
    vhr.push_back(r.training.best_val_hr);
    vndcg.push_back(r.training.best_val_ndcg);
  }
  auto pack = [](const std::vector<double>& v) {
    const auto a = eval::aggregate(v);
    return json{{"mean", a.mean}, {"std", a.std}};
  };
  return {{"test_hr10", pack(hr)}, {"test_ndcg10", pack(ndcg)}, {"val_hr10", pack(vhr)}, {"val_ndcg10", pack(vndcg)}};
}

inline std::string eval_report_json(const std::vector<train::RunResult>& runs, const Metadata& meta,
                                    const std::string& ablation, std::size_t k) {
  json j;
  j["config_hash"] = meta.config_hash;
  j["seeds"] = meta.seeds;
  j["ablation"] = ablation;
  j["k"] = k;
  j["runs"] = json::array();
  for (const auto& r : runs) j["runs"].push_back(run_json(r));
  j["aggregate"] = aggregate_json(runs);
  return j.dump(2) + "\n";
}

inline json stream_json(const model::StreamTrace& t, const std::vector<std::string>& ids) {
  json arr = json::array();
  for (std::size_t k = 0; k < t.neighbors.size(); ++k)
    if (t.neighbors[k] >= 0) arr.push_back({{"id", ids[static_cast<std::size_t>(t.neighbors[k])]}, {"weight", t.channel_mean[k]}});
  return arr;
}

inline std::string csan_record(const model::CsanPairTrace& t, const data::InteractionDataset& ds, const Metadata& meta) {
  json j{{"user", ds.user_ids[t.pair.user]},
         {"url", ds.url_ids[t.pair.url]},
         {"gate_u", t.gate_u},
         {"gate_v", t.gate_v},
         {"social_users", stream_json(t.social, ds.user_ids)},
         {"cooccur_users", stream_json(t.cooccur_users, ds.user_ids)},
         {"historical_urls", stream_json(t.historical, ds.url_ids)},
         {"cooccur_urls", stream_json(t.cooccur_urls, ds.url_ids)},
         {"config_hash", meta.config_hash},
         {"seeds", meta.seeds}};
  return j.dump() + "\n";
}

inline std::string node_name(const graph::HeteroGraph& g, const data::InteractionDataset& ds, std::int64_t node) {
  const auto i = static_cast<std::size_t>(g.local(node));
  return g.type(node) == graph::NodeType::user ? ds.user_ids[i] : ds.url_ids[i];
}

// Per target pair: for the user node and the URL node, each layer's sampled
// neighbors with edge weight A and attention alpha.
inline std::string hgan_record(const model::Pair& pair, const std::vector<hgan::LayerTrace>& traces,
                               const graph::HeteroGraph& g, const data::InteractionDataset& ds, const Metadata& meta) {
  json j{{"user", ds.user_ids[pair.user]}, {"url", ds.url_ids[pair.url]}};
  j["layers"] = json::array();
  for (const auto target : {g.user_node(pair.user), g.url_node(pair.url)})
    for (const auto& t : traces) {
      if (t.node != target) continue;
      json rec{{"layer", t.layer + 1},
               {"node", node_name(g, ds, t.node)},
               {"node_type", g.type(t.node) == graph::NodeType::user ? "user" : "url"}};
      json users = json::array(), urls = json::array();
      const std::size_t half = t.sample.nodes.size() / 2;
      for (std::size_t k = 0; k < t.sample.nodes.size(); ++k) {
        if (!t.sample.valid[k]) continue;
        json n{{"id", node_name(g, ds, t.sample.nodes[k])}, {"weight", t.sample.weights[k]}, {"alpha", t.alpha[k]}};
        (k < half ? users : urls).push_back(n);
      }
      rec["user_neighbors"] = users;
      rec["url_neighbors"] = urls;
      j["layers"].push_back(rec);
    }
  j["config_hash"] = meta.config_hash;
  j["seeds"] = meta.seeds;
  return j.dump() + "\n";
}

}  // namespace amran::report
