// Acceptance gates. Prints one PASS/FAIL line per criterion and exits
// nonzero if any gating criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "amran/cli.hpp"
#include "amran/hgan.hpp"
#include "amran/toy.hpp"
#include "../oracles.hpp"

using namespace amran;
namespace fs = std::filesystem;

namespace {

constexpr double kGradTolerance = 1e-4;
constexpr double kGradSeconds = 30.0;
constexpr double kStatsTolerance = 1e-12;
constexpr double kStatsSeconds = 10.0;
constexpr double kMetricTolerance = 1e-15;
constexpr double kMetricSeconds = 5.0;
constexpr double kSimplexTolerance = 1e-9;
constexpr double kInvariantSeconds = 10.0;
constexpr double kWrsTarget = 0.9;
constexpr double kWrsTolerance = 0.01;
constexpr double kWrsSeconds = 5.0;
constexpr double kTrainHrFloor = 0.9;
constexpr double kRandomHr = 0.10;
constexpr double kTestLift = 3.0;
constexpr double kLearnSeconds = 300.0;
constexpr double kAblationSlack = 0.02;
constexpr std::size_t kSeeds = 5;
constexpr std::size_t kEpochs = 50;

struct Outcome {
  bool pass;
  std::string detail;
};

class Clock {
 public:
  double seconds() const { return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count(); }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) { return eval::aggregate(v).mean; }

Outcome gradient_check() {
  Clock c;
  const auto r = toy::run_gradcheck(7);
  const double s = c.seconds();
  return {r.max_relative_error < kGradTolerance && r.checked > 0 && s < kGradSeconds,
          fmt("max relative error %.3g over %zu coordinates (%zu at kinks skipped), %.1f s", r.max_relative_error,
              r.checked, r.skipped, s)};
}

data::InteractionDataset posts_dataset(int n, int m, const std::vector<oracle::Posting>& posts) {
  data::InteractionDataset ds;
  for (int u = 0; u < n; ++u) {
    ds.user_ids.push_back("u" + std::to_string(u));
    ds.user_index.emplace(ds.user_ids.back(), u);
  }
  for (int c = 0; c < m; ++c) {
    ds.url_ids.push_back("c" + std::to_string(c));
    ds.url_index.emplace(ds.url_ids.back(), c);
  }
  std::int64_t order = 0;
  for (const auto& p : posts) {
    ds.interactions.push_back({p.user, p.url, order, order, p.count});
    ++order;
  }
  return ds;
}

double max_gap(const graph::SparseMatrix& got, const oracle::Dense& want) {
  double gap = got.rows() == want.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < want.size() && std::isfinite(gap); ++i)
    for (std::size_t j = 0; j < want[i].size(); ++j) gap = std::max(gap, std::abs(got.at(i, j) - want[i][j]));
  return gap;
}

Outcome statistics_oracles() {
  Clock c;
  Rng rng(20240);
  double gap = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 9), m = 2 + static_cast<int>(rng() % 9);
    std::vector<oracle::Posting> posts;
    for (int u = 0; u < n; ++u)
      for (int j = 0; j < m; ++j)
        if (rng() % 100 < 45) posts.push_back({u, j, 1 + static_cast<int>(rng() % 4)});
    const auto ds = posts_dataset(n, m, posts);
    const double k = std::vector<double>{1, 2, 5, 10}[rng() % 4];
    const auto counts = graph::build_cooccurrence_counts(ds);
    const auto y = oracle::incidence(posts, n, m);
    gap = std::max(gap, max_gap(graph::compute_sppmi(counts.users, k), oracle::sppmi_rows(y, k)));
    gap = std::max(gap, max_gap(graph::compute_sppmi(counts.urls, k), oracle::sppmi_rows(oracle::transpose(y), k)));
    gap = std::max(gap, max_gap(graph::compute_tfidf(ds), oracle::tfidf(posts, n, m)));
  }
  const double s = c.seconds();
  return {gap <= kStatsTolerance && s < kStatsSeconds,
          fmt("50 datasets, max |SPPMI/TF-IDF - oracle| %.3g, %.2f s", gap, s)};
}

Outcome metric_oracles() {
  Clock c;
  Rng rng(31);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::size_t mismatches = 0;
  double gap = 0.0;
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> scores(100);
    for (auto& v : scores) v = t % 5 == 0 ? 0.5 : t % 5 == 1 ? std::round(u(rng) * 3) : u(rng);
    std::vector<data::Index> ids(100);
    std::iota(ids.begin(), ids.end(), 0);
    std::shuffle(ids.begin(), ids.end(), rng);
    const std::size_t pos = rng() % 100;
    const std::vector<std::int64_t> ids64(ids.begin(), ids.end());
    const auto want = oracle::sorted_rank(scores, ids64, pos);
    const auto got = eval::rank_of_positive(scores, ids, pos);
    mismatches += got != want;
    gap = std::max(gap, std::abs(eval::hr_at_k(got) - oracle::hr_from_sorted(want, 10)));
    gap = std::max(gap, std::abs(eval::ndcg_at_k(got) - oracle::ndcg_from_sorted(want, 10)));
  }
  const double s = c.seconds();
  return {mismatches == 0 && gap <= kMetricTolerance && s < kMetricSeconds,
          fmt("1000 score vectors (200 all-tied), %zu rank mismatches, max metric gap %.3g, %.2f s", mismatches, gap,
              s)};
}

numeric::Tensor random_tensor(const numeric::Shape& shape, Rng& rng, double scale) {
  std::uniform_real_distribution<double> u(-scale, scale);
  numeric::Tensor t(shape);
  for (double& v : t.values()) v = u(rng);
  return t;
}

Outcome attention_invariants() {
  Clock c;
  Rng rng(77);
  std::size_t simplex_bad = 0, pad_bad = 0, s_bad = 0, n_bad = 0, cos_bad = 0;
  for (int t = 0; t < 100; ++t) {
    // Graph attention: one central node with k typed slots.
    const std::size_t k = 2 * (1 + rng() % 5), d = 2 + rng() % 6;
    const auto h = random_tensor({k + 1, d}, rng, 2.0);
    graph::NeighborSample sample;
    for (std::size_t j = 0; j < k; ++j) {
      const bool ok = rng() % 4 != 0;
      sample.nodes.push_back(ok ? static_cast<std::int64_t>(j + 1) : -1);
      sample.weights.push_back(ok ? 1.0 : 0.0);
      sample.valid.push_back(ok);
    }
    hgan::Frontiers f;
    f.nodes = {{}, {0}};
    f.position = {{}, {{0, 0}}};
    for (std::size_t j = 0; j <= k; ++j) {
      f.nodes[0].push_back(static_cast<std::int64_t>(j));
      f.position[0][static_cast<std::int64_t>(j)] = j;
    }
    f.samples = {{sample}};
    const auto p = hgan::HganParams::init(1, 1, d, 1, static_cast<std::uint64_t>(t));
    std::vector<hgan::LayerTrace> trace;
    hgan::hgan_layer(h, f, 0, p, {}, &trace);
    const auto& alpha = trace[0].alpha;
    for (std::size_t g = 0; g < 2; ++g) {
      double sum = 0.0;
      bool any = false;
      for (std::size_t j = g * k / 2; j < (g + 1) * k / 2; ++j) {
        sum += alpha[j];
        any = any || sample.valid[j];
        if (!sample.valid[j] && alpha[j] != 0.0) ++pad_bad;
        if (alpha[j] < 0.0) ++simplex_bad;
      }
      if (any && std::abs(sum - 1.0) > kSimplexTolerance) ++simplex_bad;
    }

    // Cosine scale invariance.
    const auto central = random_tensor({1, d}, rng, 2.0), nbrs = random_tensor({k, d}, rng, 2.0);
    const double a = 0.1 + 10.0 * std::uniform_real_distribution<double>(0, 1)(rng);
    const double b = 0.1 + 10.0 * std::uniform_real_distribution<double>(0, 1)(rng);
    const auto base = numeric::cosine_pairs(central, nbrs, k);
    const auto scaled = numeric::cosine_pairs(numeric::scale(central, a), numeric::scale(nbrs, b), k);
    for (std::size_t j = 0; j < k; ++j) cos_bad += std::abs(base[j] - scaled[j]) > 1e-12;

    // Spatial attention map and attended embeddings.
    const std::size_t items = 1 + rng() % 3, bh = 2 + rng() % 9, rows = 1 + rng() % 3, w = 2 + rng() % 6;
    const auto m = random_tensor({items, bh, rows, w}, rng, 3.0);
    std::vector<std::uint8_t> pads(items * bh);
    for (auto& v : pads) v = rng() % 3 == 0;
    auto sp = csan::SpatialAttentionParams::init(bh, 2, static_cast<std::uint64_t>(t));
    csan::AttentionOptions opt;
    opt.training = t % 2 == 0;
    const auto r = csan::spatial_attention(m, pads, sp, opt);
    for (std::size_t e = 0; e < m.size(); ++e) {
      if (!(r.weights[e] > 0.0 && r.weights[e] < 1.0)) ++s_bad;
      if (std::abs(r.attended[e]) > std::abs(m[e])) ++n_bad;
      if (pads[e / (rows * w)] && r.attended[e] != 0.0) ++n_bad;
    }
  }
  const double s = c.seconds();
  const std::size_t bad = simplex_bad + pad_bad + s_bad + n_bad + cos_bad;
  return {bad == 0 && s < kInvariantSeconds,
          fmt("100 instances each; violations: simplex %zu, pads %zu, S range %zu, |N|<=|M| %zu, cosine %zu; %.2f s",
              simplex_bad, pad_bad, s_bad, n_bad, cos_bad, s)};
}

Outcome wrs_fidelity() {
  Clock c;
  const std::vector<graph::Neighbor> cands{{0, 9.0}, {1, 1.0}};
  Rng rng(4242);
  const int trials = 100000;
  int hits = 0;
  for (int t = 0; t < trials; ++t) hits += graph::wrs_sample(cands, 1, rng)[0] == 0;
  const double freq = static_cast<double>(hits) / trials, s = c.seconds();
  return {std::abs(freq - kWrsTarget) <= kWrsTolerance && s < kWrsSeconds,
          fmt("weight-9 inclusion %.4f over %d draws, %.2f s", freq, trials, s)};
}

struct VariantRuns {
  std::vector<double> val_hr, train_hr, test_hr;
  double seconds = 0.0;
};

VariantRuns run_variant(const train::Pipeline& pipe, const std::string& ablation) {
  Clock c;
  const model::ModelConfig mcfg;
  train::TrainConfig tcfg;
  tcfg.epochs = kEpochs;
  tcfg.patience = kEpochs;  // full budget; the best-validation checkpoint is still selected
  std::vector<std::uint64_t> seeds(kSeeds);
  std::iota(seeds.begin(), seeds.end(), 1);
  const auto a = model::AblationConfig::parse(ablation);
  const auto runs = train::run_experiments(pipe, mcfg, a, tcfg, seeds, {}, train::worker_threads());
  VariantRuns out;
  for (const auto& r : runs) {
    model::AmranModel m(pipe.data.schema, mcfg, a, r.seed);
    m.load_state(r.training.final_state);
    out.train_hr.push_back(
        eval::evaluate_training_pairs(m, pipe.context(), pipe.split, train::eval_sample_seed(r.seed), tcfg.k).hr);
    out.val_hr.push_back(r.training.best_val_hr);
    out.test_hr.push_back(r.test.hr);
  }
  out.seconds = c.seconds();
  return out;
}

Outcome learnability(const VariantRuns& full) {
  const double train_med = median(full.train_hr), test_med = median(full.test_hr);
  return {train_med >= kTrainHrFloor && test_med >= kTestLift * kRandomHr && full.seconds < kLearnSeconds,
          fmt("median train HR@10 %.3f (>= %.2f), median test HR@10 %.3f (>= %.2f), %zu seeds, %.0f s", train_med,
              kTrainHrFloor, test_med, kTestLift * kRandomHr, kSeeds, full.seconds)};
}

Outcome ablation_direction(const VariantRuns& full, const VariantRuns& csan, const VariantRuns& hgan) {
  const double f = mean(full.val_hr), c = mean(csan.val_hr), h = mean(hgan.val_hr);
  return {f >= c - kAblationSlack && f >= h - kAblationSlack,
          fmt("mean val HR@10: full %.3f, csan_only %.3f, hgan_only %.3f (slack %.2f)", f, c, h, kAblationSlack)};
}

Outcome determinism(const std::string& root) {
  Clock c;
  fs::create_directories(root);
  const std::string cfg = root + "/config.json";
  std::ofstream(cfg) << R"({"runs": 2, "seeds": [11, 12], "train": {"epochs": 3}})";
  std::string log[2], report[2];
  int failures = 0;
  for (int k = 0; k < 2; ++k) {
    const std::string wd = root + "/run" + std::to_string(k);
    fs::remove_all(wd);
    std::ostringstream sink;
    auto call = [&](std::vector<std::string> args) {
      args.insert(args.begin(), "amran");
      args.insert(args.end(), {"--config", cfg, "--workdir", wd});
      std::vector<const char*> argv;
      for (const auto& a : args) argv.push_back(a.c_str());
      failures += cli::run_command(static_cast<int>(argv.size()), argv.data(), sink, sink) != 0;
    };
    call({"ingest", "--synthetic", "50", "30", "0.8", "1"});
    call({"evaluate"});
    std::ifstream l(wd + "/train_log.csv"), r(wd + "/eval_report.json");
    std::stringstream ls, rs;
    ls << l.rdbuf();
    rs << r.rdbuf();
    log[k] = ls.str();
    report[k] = rs.str();
  }
  const bool same = failures == 0 && !log[0].empty() && !report[0].empty() && log[0] == log[1] && report[0] == report[1];
  return {same, fmt("train_log.csv %s, eval_report.json %s, %d command failures, %.0f s",
                    log[0] == log[1] ? "identical" : "DIFFERENT", report[0] == report[1] ? "identical" : "DIFFERENT",
                    failures, c.seconds())};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance gates"};
  std::string workdir = (fs::temp_directory_path() / "amran_acceptance").string();
  std::string only;
  app.add_option("--workdir", workdir, "Scratch directory");
  app.add_option("--only", only, "Comma-separated criterion numbers to run");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(workdir);
  auto wanted = [&](int n) {
    if (only.empty()) return true;
    std::stringstream ss(only);
    for (std::string tok; std::getline(ss, tok, ',');)
      if (tok == std::to_string(n)) return true;
    return false;
  };

  int failed = 0;
  auto report = [&](int n, const char* name, const Outcome& o) {
    std::printf("%s %d %s: %s\n", o.pass ? "PASS" : "FAIL", n, name, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  };

  if (wanted(1)) report(1, "gradient check", gradient_check());
  if (wanted(2)) report(2, "statistics oracles", statistics_oracles());
  if (wanted(3)) report(3, "metric oracles", metric_oracles());
  if (wanted(4)) report(4, "attention invariants", attention_invariants());
  if (wanted(5)) report(5, "WRS fidelity", wrs_fidelity());
  if (wanted(6) || wanted(7)) {
    synthetic::SyntheticConfig sc;
    const auto paths = synthetic::write_synthetic(workdir + "/synthetic", sc);
    auto ds = store::ingest({paths.interactions, paths.social, paths.user_attrs, paths.url_attrs},
                            synthetic::synthetic_schema(sc), 3);
    const auto pipe = train::Pipeline::build(std::move(ds), 0, 1.0);
    const auto full = run_variant(*pipe, "full");
    if (wanted(6)) report(6, "learnability", learnability(full));
    if (wanted(7)) {
      const auto csan = run_variant(*pipe, "csan_only");
      const auto hgan = run_variant(*pipe, "hgan_only");
      report(7, "ablation direction", ablation_direction(full, csan, hgan));
    }
  }
  if (wanted(8)) report(8, "determinism", determinism(workdir + "/determinism"));
  std::printf("INFO 9 public-dataset reproduction: not gated; no public dataset supplied\n");
  return failed == 0 ? 0 : 1;
}
