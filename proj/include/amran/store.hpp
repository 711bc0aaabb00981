#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "amran/config.hpp"
#include "amran/csv.hpp"
#include "amran/dataset.hpp"

// Ingested dataset persisted under a directory with dense indices:
//   interactions.csv  user,url,timestamp,order,count
//   social.csv        follower,followee
//   user_attrs.csv / url_attrs.csv   encoded attribute indices
//   schema.json       schema with resolved bucket counts
//   users_idmap.csv / urls_idmap.csv
namespace amran::store {

namespace detail {

inline std::ofstream open_out(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  return out;
}

inline void write_table(const std::string& path, const std::vector<data::AttributeSpec>& specs,
                        const data::AttributeTable& t) {
  auto out = open_out(path);
  for (std::size_t a = 0; a < specs.size(); ++a) out << (a ? "," : "") << csv::quote_if_needed(specs[a].name);
  out << '\n';
  for (std::size_t e = 0; e < t.entities; ++e) {
    for (std::size_t a = 0; a < t.attributes; ++a) out << (a ? "," : "") << t.at(e, a);
    out << '\n';
  }
}

inline std::int64_t to_int(const csv::Reader& r, const std::string& s) {
  auto v = csv::parse_int(s);
  if (!v) r.fail("'" + s + "' is not an integer");
  return *v;
}

inline data::AttributeTable read_table(const std::string& path, std::size_t entities, std::size_t attributes) {
  csv::Reader r(path);
  std::vector<std::string> row;
  if (!r.next(row) || row.size() != attributes) throw ParseError(path, r.line(), "attribute header mismatch");
  data::AttributeTable t{entities, attributes, {}};
  while (r.next(row)) {
    if (row.size() != attributes) r.fail("expected " + std::to_string(attributes) + " columns");
    for (const auto& f : row) t.values.push_back(static_cast<data::Index>(to_int(r, f)));
  }
  if (t.values.size() != entities * attributes) throw ParseError(path, r.line(), "wrong number of rows");
  return t;
}

inline std::vector<std::string> read_id_map(const std::string& path) {
  csv::Reader r(path);
  std::vector<std::string> row, ids;
  if (!r.next(row)) throw ParseError(path, 0, "empty id map");
  while (r.next(row)) {
    if (row.size() != 2 || to_int(r, row[0]) != static_cast<std::int64_t>(ids.size())) r.fail("bad id map row");
    ids.push_back(row[1]);
  }
  return ids;
}

}  // namespace detail

inline void save_dataset(const data::InteractionDataset& ds, const std::string& dir) {
  std::filesystem::create_directories(dir);
  {
    auto out = detail::open_out(dir + "/interactions.csv");
    out << "user,url,timestamp,order,count\n";
    for (const auto& it : ds.interactions)
      out << it.user << ',' << it.url << ',' << it.timestamp << ',' << it.order << ',' << it.count << '\n';
  }
  {
    auto out = detail::open_out(dir + "/social.csv");
    out << "follower,followee\n";
    for (const auto& e : ds.social_edges) out << e.follower << ',' << e.followee << '\n';
  }
  detail::write_table(dir + "/user_attrs.csv", ds.schema.user, ds.user_attributes);
  detail::write_table(dir + "/url_attrs.csv", ds.schema.url, ds.url_attributes);
  detail::open_out(dir + "/schema.json") << config::schema_to_json(ds.schema).dump(2) << '\n';
  data::write_id_maps(ds, dir);
}

inline data::InteractionDataset load_dataset(const std::string& dir) {
  data::InteractionDataset ds;
  std::ifstream sin(dir + "/schema.json");
  if (!sin) throw IoError("no ingested dataset in " + dir + " (run ingest first)");
  ds.schema = config::schema_from_json(nlohmann::json::parse(sin));
  ds.user_ids = detail::read_id_map(dir + "/users_idmap.csv");
  ds.url_ids = detail::read_id_map(dir + "/urls_idmap.csv");
  for (std::size_t u = 0; u < ds.user_ids.size(); ++u) ds.user_index.emplace(ds.user_ids[u], static_cast<data::Index>(u));
  for (std::size_t c = 0; c < ds.url_ids.size(); ++c) ds.url_index.emplace(ds.url_ids[c], static_cast<data::Index>(c));
  {
    csv::Reader r(dir + "/interactions.csv");
    std::vector<std::string> row;
    r.next(row);
    while (r.next(row)) {
      if (row.size() != 5) r.fail("expected 5 columns");
      data::Interaction it;
      it.user = static_cast<data::Index>(detail::to_int(r, row[0]));
      it.url = static_cast<data::Index>(detail::to_int(r, row[1]));
      it.timestamp = detail::to_int(r, row[2]);
      it.order = detail::to_int(r, row[3]);
      it.count = static_cast<std::int32_t>(detail::to_int(r, row[4]));
      if (it.user < 0 || static_cast<std::size_t>(it.user) >= ds.num_users() || it.url < 0 ||
          static_cast<std::size_t>(it.url) >= ds.num_urls())
        r.fail("index out of range");
      ds.interactions.push_back(it);
    }
  }
  {
    csv::Reader r(dir + "/social.csv");
    std::vector<std::string> row;
    r.next(row);
    while (r.next(row)) {
      if (row.size() != 2) r.fail("expected 2 columns");
      ds.social_edges.push_back({static_cast<data::Index>(detail::to_int(r, row[0])),
                                 static_cast<data::Index>(detail::to_int(r, row[1]))});
    }
  }
  ds.user_attributes = detail::read_table(dir + "/user_attrs.csv", ds.num_users(), ds.schema.user.size());
  ds.url_attributes = detail::read_table(dir + "/url_attrs.csv", ds.num_urls(), ds.schema.url.size());
  return ds;
}

// Full ingestion from raw files: load, filter users with fewer than
// `min_interactions` URLs, attach social edges and attributes.
inline data::InteractionDataset ingest(const config::Paths& paths, const data::AttributeSchema& schema,
                                       std::size_t min_interactions, std::vector<std::string>* notes = nullptr) {
  data::LoadReport rep;
  auto raw = data::load_interactions(paths.interactions, &rep);
  auto ds = data::filter_min_interactions(raw, min_interactions);
  if (notes) {
    notes->push_back("rows=" + std::to_string(rep.rows) + " duplicates=" + std::to_string(rep.duplicates));
    notes->push_back("users kept=" + std::to_string(ds.num_users()) + " filtered=" + std::to_string(ds.filtered_users.size()));
  }
  if (ds.num_users() == 0) throw SplitError("no user has at least " + std::to_string(min_interactions) + " interactions");
  if (!paths.social.empty()) {
    data::LoadReport srep;
    ds.social_edges = data::load_social_edges(paths.social, ds, &srep);
    if (notes) notes->push_back("social edges=" + std::to_string(ds.social_edges.size()) + " dropped=" + std::to_string(srep.dropped));
  }
  data::load_attribute_tables(ds, paths.user_attrs, paths.url_attrs, schema);
  return ds;
}

}  // namespace amran::store
