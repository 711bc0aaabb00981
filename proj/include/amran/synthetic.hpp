#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "amran/dataset.hpp"
#include "amran/random.hpp"

// Planted-cluster generator: users and URLs belong to one of `clusters`
// groups; users mostly post URLs of their own group and mostly follow users of
// their own group. Attributes reveal the group with some noise.
namespace amran::synthetic {

struct SyntheticConfig {
  std::size_t users = 50;
  std::size_t urls = 30;
  double density = 0.8;
  std::uint64_t seed = 1;
  std::size_t clusters = 5;
  double cross_density = 0.05;  // relative to density
  double attribute_fidelity = 0.8;
  double follow_within = 0.3;
  double follow_across = 0.02;

  void validate() const {
    if (users < 2 || urls < 4) throw ConfigError("synthetic: need at least 2 users and 4 URLs");
    if (clusters == 0 || clusters > urls) throw ConfigError("synthetic: cluster count must be in [1, urls]");
    if (!(density > 0.0 && density <= 1.0)) throw ConfigError("synthetic: density must be in (0, 1]");
  }
};

struct SyntheticPaths {
  std::string interactions, social, user_attrs, url_attrs;
};

inline std::size_t url_cluster(const SyntheticConfig& c, std::size_t url) { return url * c.clusters / c.urls; }
inline std::size_t user_cluster(const SyntheticConfig& c, std::size_t user) { return user % c.clusters; }

inline std::string user_id(std::size_t u) {
  std::ostringstream s;
  s << 'u' << std::setw(4) << std::setfill('0') << u;
  return s.str();
}

inline std::string url_id(std::size_t c) {
  std::ostringstream s;
  s << "url" << std::setw(4) << std::setfill('0') << c;
  return s.str();
}

inline data::AttributeSchema synthetic_schema(const SyntheticConfig& c) {
  data::AttributeSchema schema;
  data::AttributeSpec community{"community", data::AttributeKind::categorical, {}, 0, 8};
  data::AttributeSpec category{"category", data::AttributeKind::categorical, {}, 0, 8};
  for (std::size_t k = 0; k < c.clusters; ++k) {
    community.vocabulary.push_back("g" + std::to_string(k));
    category.vocabulary.push_back("g" + std::to_string(k));
  }
  data::AttributeSpec followers{"followers", data::AttributeKind::continuous, {}, 0, 4};
  data::AttributeSpec site{"site", data::AttributeKind::categorical, {"snopes", "politifact", "factcheck", "other"}, 0, 4};
  schema.user = {community, followers};
  schema.url = {category, site};
  return schema;
}

// Writes interactions.csv, social.csv, user_attrs.csv and url_attrs.csv into
// `dir` and returns their paths.
inline SyntheticPaths write_synthetic(const std::string& dir, const SyntheticConfig& c) {
  c.validate();
  std::filesystem::create_directories(dir);
  Rng rng(derive_seed(c.seed, 0x5e7));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto noisy_group = [&](std::size_t truth) {
    return unit(rng) < c.attribute_fidelity ? truth : static_cast<std::size_t>(rng() % c.clusters);
  };

  struct Row {
    std::size_t user, url;
    std::int64_t ts;
  };
  std::vector<Row> rows;
  std::geometric_distribution<int> repeats(0.5);
  std::uniform_int_distribution<std::int64_t> when(0, 999999);
  for (std::size_t u = 0; u < c.users; ++u) {
    const auto g = user_cluster(c, u);
    std::vector<std::size_t> own, picked;
    for (std::size_t j = 0; j < c.urls; ++j) {
      const bool same = url_cluster(c, j) == g;
      if (same) own.push_back(j);
      if (unit(rng) < (same ? c.density : c.density * c.cross_density)) picked.push_back(j);
    }
    std::shuffle(own.begin(), own.end(), rng);
    for (std::size_t k = 0; picked.size() < 3 && k < own.size(); ++k)
      if (std::find(picked.begin(), picked.end(), own[k]) == picked.end()) picked.push_back(own[k]);
    for (std::size_t j = 0; picked.size() < 3; ++j)
      if (std::find(picked.begin(), picked.end(), j) == picked.end()) picked.push_back(j);
    for (auto j : picked) {
      const int n = 1 + repeats(rng);
      for (int r = 0; r < n; ++r) rows.push_back({u, j, when(rng)});
    }
  }
  std::shuffle(rows.begin(), rows.end(), rng);

  SyntheticPaths p{dir + "/interactions.csv", dir + "/social.csv", dir + "/user_attrs.csv", dir + "/url_attrs.csv"};
  auto open = [](const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    return out;
  };
  {
    auto out = open(p.interactions);
    out << "user_id,url_id,timestamp\n";
    for (const auto& r : rows) out << user_id(r.user) << ',' << url_id(r.url) << ',' << r.ts << '\n';
  }
  {
    auto out = open(p.social);
    out << "follower_id,followee_id\n";
    for (std::size_t a = 0; a < c.users; ++a)
      for (std::size_t b = 0; b < c.users; ++b) {
        if (a == b) continue;
        const double prob = user_cluster(c, a) == user_cluster(c, b) ? c.follow_within : c.follow_across;
        if (unit(rng) < prob) out << user_id(a) << ',' << user_id(b) << '\n';
      }
  }
  {
    auto out = open(p.user_attrs);
    out << "user_id,community,followers\n";
    for (std::size_t u = 0; u < c.users; ++u) {
      const double followers = std::floor(std::exp(unit(rng) * 9.0));
      out << user_id(u) << ",g" << noisy_group(user_cluster(c, u)) << ',' << followers << '\n';
    }
  }
  {
    auto out = open(p.url_attrs);
    static const char* sites[] = {"snopes", "politifact", "factcheck", "other"};
    out << "url_id,category,site\n";
    for (std::size_t j = 0; j < c.urls; ++j)
      out << url_id(j) << ",g" << noisy_group(url_cluster(c, j)) << ',' << sites[rng() % 4] << '\n';
  }
  return p;
}

}  // namespace amran::synthetic
