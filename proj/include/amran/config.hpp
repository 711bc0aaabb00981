#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "amran/dataset.hpp"
#include "amran/model.hpp"
#include "amran/random.hpp"
#include "amran/train.hpp"
#include "json.hpp"

namespace amran::config {

using nlohmann::json;

inline const std::vector<std::size_t> kDimensionGrid{8, 16, 32, 64};
inline const std::vector<double> kRegularizationGrid{0.1, 0.01, 0.001, 0.0001, 0.00001};
inline const std::vector<double> kLearningRateGrid{0.0001, 0.0003, 0.001, 0.01, 0.05, 0.1};
inline const std::vector<double> kShiftGrid{1, 2, 5, 10};

inline json schema_to_json(const data::AttributeSchema& s) {
  auto group = [](const std::vector<data::AttributeSpec>& specs) {
    json arr = json::array();
    for (const auto& a : specs) {
      json j{{"name", a.name}, {"dim", a.dim}};
      if (a.kind == data::AttributeKind::categorical) {
        j["kind"] = "categorical";
        j["vocabulary"] = a.vocabulary;
      } else {
        j["kind"] = "continuous";
        j["buckets"] = a.buckets;
      }
      arr.push_back(j);
    }
    return arr;
  };
  return {{"user", group(s.user)}, {"url", group(s.url)}};
}

inline data::AttributeSchema schema_from_json(const json& j) {
  auto group = [](const json& arr) {
    std::vector<data::AttributeSpec> out;
    if (!arr.is_array()) throw SchemaError("schema: attribute group must be an array");
    for (const auto& a : arr) {
      data::AttributeSpec spec;
      spec.name = a.at("name").get<std::string>();
      const auto kind = a.value("kind", std::string("categorical"));
      if (kind == "categorical") {
        spec.kind = data::AttributeKind::categorical;
        spec.vocabulary = a.value("vocabulary", std::vector<std::string>{});
      } else if (kind == "continuous") {
        spec.kind = data::AttributeKind::continuous;
        spec.buckets = a.value("buckets", std::size_t{0});
      } else {
        throw SchemaError("schema: attribute '" + spec.name + "' has unknown kind '" + kind + "'");
      }
      spec.dim = a.value("dim", std::size_t{8});
      out.push_back(std::move(spec));
    }
    return out;
  };
  try {
    data::AttributeSchema s{group(j.at("user")), group(j.at("url"))};
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("schema: ") + e.what());
  }
}

struct Paths {
  std::string interactions;
  std::string social;
  std::string user_attrs;
  std::string url_attrs;
};

struct RunConfig {
  Paths paths;
  std::string workdir = "work";
  data::AttributeSchema schema;
  bool has_schema = false;
  model::ModelConfig model;
  train::TrainConfig training;
  double k_shift = 1.0;
  std::size_t runs = 5;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::uint64_t split_seed = 0;
  std::size_t min_interactions = 3;
  std::size_t eval_negatives = 99;
  std::string ablation = "full";
  bool allow_off_grid = false;

  // Hyperparameters outside the tuned grids are rejected unless explicitly
  // allowed.
  void validate() const {
    model.validate();
    training.validate();
    if (!(k_shift > 0.0)) throw ConfigError("k_shift must be positive");
    if (runs == 0) throw ConfigError("runs must be at least 1");
    if (seeds.size() < runs) throw ConfigError("need " + std::to_string(runs) + " seeds, got " + std::to_string(seeds.size()));
    if (eval_negatives == 0) throw ConfigError("eval_negatives must be positive");
    model::AblationConfig::parse(ablation);
    if (allow_off_grid) return;
    auto on = [](const auto& grid, auto v) { return std::find(grid.begin(), grid.end(), v) != grid.end(); };
    if (!on(kDimensionGrid, model.d)) throw ConfigError("d=" + std::to_string(model.d) + " is off the grid {8,16,32,64}");
    if (!on(kRegularizationGrid, training.l2)) throw ConfigError("regularization weight is off the grid");
    if (!on(kLearningRateGrid, training.lr)) throw ConfigError("learning rate is off the grid");
    if (!on(kShiftGrid, k_shift)) throw ConfigError("k_shift is off the grid {1,2,5,10}");
  }

  std::vector<std::uint64_t> run_seeds() const { return {seeds.begin(), seeds.begin() + static_cast<std::ptrdiff_t>(runs)}; }
};

inline json to_json(const RunConfig& c) {
  json j;
  j["paths"] = {{"interactions", c.paths.interactions},
                {"social", c.paths.social},
                {"user_attrs", c.paths.user_attrs},
                {"url_attrs", c.paths.url_attrs}};
  j["workdir"] = c.workdir;
  if (c.has_schema) j["schema"] = schema_to_json(c.schema);
  j["model"] = {{"d", c.model.d},           {"w", c.model.w},           {"b_h", c.model.b_h},
                {"budget", c.model.budget}, {"layers", c.model.layers}, {"reduction", c.model.reduction}};
  j["train"] = {{"lr", c.training.lr},
                {"l2", c.training.l2},
                {"neg_ratio", c.training.neg_ratio},
                {"batch_size", c.training.batch_size},
                {"epochs", c.training.epochs},
                {"patience", c.training.patience},
                {"k", c.training.k},
                {"record_wall_time", c.training.record_wall_time}};
  j["k_shift"] = c.k_shift;
  j["runs"] = c.runs;
  j["seeds"] = c.seeds;
  j["split_seed"] = c.split_seed;
  j["min_interactions"] = c.min_interactions;
  j["eval_negatives"] = c.eval_negatives;
  j["ablation"] = c.ablation;
  j["allow_off_grid"] = c.allow_off_grid;
  return j;
}

inline RunConfig from_json(const json& j) {
  RunConfig c;
  try {
    if (j.contains("paths")) {
      const auto& p = j["paths"];
      c.paths.interactions = p.value("interactions", "");
      c.paths.social = p.value("social", "");
      c.paths.user_attrs = p.value("user_attrs", "");
      c.paths.url_attrs = p.value("url_attrs", "");
    }
    c.workdir = j.value("workdir", c.workdir);
    if (j.contains("schema")) {
      c.schema = schema_from_json(j["schema"]);
      c.has_schema = true;
    }
    if (j.contains("model")) {
      const auto& m = j["model"];
      c.model.d = m.value("d", c.model.d);
      c.model.w = m.value("w", c.model.d);
      c.model.b_h = m.value("b_h", c.model.b_h);
      c.model.budget = m.value("budget", c.model.budget);
      c.model.layers = m.value("layers", c.model.layers);
      c.model.reduction = m.value("reduction", c.model.reduction);
    }
    if (j.contains("train")) {
      const auto& t = j["train"];
      c.training.lr = t.value("lr", c.training.lr);
      c.training.l2 = t.value("l2", c.training.l2);
      c.training.neg_ratio = t.value("neg_ratio", c.training.neg_ratio);
      c.training.batch_size = t.value("batch_size", c.training.batch_size);
      c.training.epochs = t.value("epochs", c.training.epochs);
      c.training.patience = t.value("patience", c.training.patience);
      c.training.k = t.value("k", c.training.k);
      c.training.record_wall_time = t.value("record_wall_time", c.training.record_wall_time);
    }
    c.k_shift = j.value("k_shift", c.k_shift);
    c.runs = j.value("runs", c.runs);
    c.seeds = j.value("seeds", c.seeds);
    c.split_seed = j.value("split_seed", c.split_seed);
    c.min_interactions = j.value("min_interactions", c.min_interactions);
    c.eval_negatives = j.value("eval_negatives", c.eval_negatives);
    c.ablation = j.value("ablation", c.ablation);
    c.allow_off_grid = j.value("allow_off_grid", c.allow_off_grid);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline RunConfig load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path, 0, e.what());
  }
  return from_json(j);
}

// FNV-1a of the canonical JSON (sorted keys) minus paths, hex encoded.
inline std::string config_hash(const RunConfig& c) {
  auto j = to_json(c);
  j.erase("paths");
  j.erase("workdir");
  j["train"].erase("record_wall_time");
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << fnv1a(j.dump());
  return s.str();
}

}  // namespace amran::config
