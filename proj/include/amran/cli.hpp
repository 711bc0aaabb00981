#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "amran/config.hpp"
#include "amran/eval.hpp"
#include "amran/graph.hpp"
#include "amran/model.hpp"
#include "amran/numeric/checkpoint.hpp"
#include "amran/report.hpp"
#include "amran/store.hpp"
#include "amran/synthetic.hpp"
#include "amran/toy.hpp"
#include "amran/train.hpp"

namespace amran::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitUsage = 2;

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> workdir;
  std::optional<std::string> ablation;
  std::size_t top = 10;
  std::string user;
  std::string url;
  std::string pairs_path;
  std::string checkpoint;
  std::vector<std::string> synthetic;
  bool verbose = false;
};

class Session {
 public:
  Session(const Options& opt, std::ostream& out, std::ostream& err) : opt_(opt), out_(out), err_(err) {
    if (!opt.config_path.empty()) cfg_ = config::load(opt.config_path);
    if (opt.workdir) cfg_.workdir = *opt.workdir;
    if (opt.seed) {
      cfg_.seeds = {*opt.seed};
      cfg_.runs = 1;
    }
    if (opt.ablation) cfg_.ablation = *opt.ablation;
  }

  int ingest() {
    std::filesystem::create_directories(cfg_.workdir);
    if (!opt_.synthetic.empty()) {
      if (opt_.synthetic.size() != 4) throw ConfigError("--synthetic takes: n_users n_urls density seed");
      synthetic::SyntheticConfig sc;
      const auto n = csv::parse_int(opt_.synthetic[0]), m = csv::parse_int(opt_.synthetic[1]);
      const auto density = csv::parse_double(opt_.synthetic[2]);
      const auto seed = csv::parse_int(opt_.synthetic[3]);
      if (!n || !m || !density || !seed || *n < 0 || *m < 0 || *seed < 0)
        throw ConfigError("--synthetic: expected integers n m seed and a number density");
      sc.users = static_cast<std::size_t>(*n);
      sc.urls = static_cast<std::size_t>(*m);
      sc.density = *density;
      sc.seed = static_cast<std::uint64_t>(*seed);
      const auto paths = synthetic::write_synthetic(cfg_.workdir + "/raw", sc);
      cfg_.paths = {paths.interactions, paths.social, paths.user_attrs, paths.url_attrs};
      cfg_.schema = synthetic::synthetic_schema(sc);
      cfg_.has_schema = true;
    }
    if (cfg_.paths.interactions.empty() || cfg_.paths.user_attrs.empty() || cfg_.paths.url_attrs.empty())
      throw ConfigError("ingest needs paths.interactions, paths.user_attrs and paths.url_attrs (or --synthetic)");
    if (!cfg_.has_schema) throw ConfigError("ingest needs an attribute schema in the config");
    std::vector<std::string> notes;
    const auto ds = store::ingest(cfg_.paths, cfg_.schema, cfg_.min_interactions, &notes);
    store::save_dataset(ds, dataset_dir());
    for (const auto& n : notes) out_ << n << '\n';
    out_ << "ingested " << ds.num_users() << " users, " << ds.num_urls() << " URLs, " << ds.interactions.size()
         << " interactions into " << dataset_dir() << '\n';
    return kExitOk;
  }

  int build_graph() {
    cfg_.validate();
    const auto pipe = pipeline();
    const std::string dir = cfg_.workdir + "/graph";
    std::filesystem::create_directories(dir);
    graph::write_graph(pipe->graph, dir, pipe->data);
    out_ << "graph: " << pipe->graph.num_users() << " users, " << pipe->graph.num_urls()
         << " URLs; nnz user-user " << pipe->graph.user_user().nnz() << ", url-url " << pipe->graph.url_url().nnz()
         << ", user-url " << pipe->graph.user_url().nnz() << " -> " << dir << '\n';
    return kExitOk;
  }

  int train() {
    cfg_.validate();
    const auto pipe = pipeline();
    const auto seed = cfg_.seeds.front();
    model::AmranModel m(pipe->data.schema, cfg_.model, ablation(), seed);
    const auto result = train::train(m, *pipe, cfg_.training, seed, [&](const train::EpochLog& e) {
      if (opt_.verbose) out_ << "epoch " << e.epoch << " loss " << e.loss << " val_hr10 " << e.val_hr << '\n';
    });
    numeric::save_checkpoint(checkpoint_path(), result.best_state);
    report::write_file(cfg_.workdir + "/train_log.csv", report::train_log_csv(result.log, meta({seed})));
    out_ << "trained seed " << seed << ": best epoch " << result.best_epoch << ", val HR@" << cfg_.training.k
         << " " << result.best_val_hr << ", NDCG@" << cfg_.training.k << " " << result.best_val_ndcg << '\n';
    out_ << "checkpoint -> " << checkpoint_path() << '\n';
    return kExitOk;
  }

  int evaluate() {
    cfg_.validate();
    const auto pipe = pipeline();
    std::vector<train::RunResult> runs;
    if (!opt_.checkpoint.empty()) {
      const auto seed = cfg_.seeds.front();
      model::AmranModel m(pipe->data.schema, cfg_.model, ablation(), seed);
      m.load_state(numeric::load_checkpoint(opt_.checkpoint));
      train::RunResult r;
      r.seed = seed;
      r.training.best_val_hr = -1;
      const auto val = eval::evaluate_split(m, pipe->context(), pipe->split, eval::Part::validation,
                                            train::eval_sample_seed(seed), cfg_.training.k);
      r.training.best_val_hr = val.hr;
      r.training.best_val_ndcg = val.ndcg;
      r.test = eval::evaluate_split(m, pipe->context(), pipe->split, eval::Part::test, train::eval_sample_seed(seed),
                                    cfg_.training.k);
      runs.push_back(std::move(r));
    } else {
      runs = run_all(*pipe, ablation());
      for (std::size_t r = 0; r < runs.size(); ++r) {
        const auto text = report::train_log_csv(runs[r].training.log, meta(cfg_.run_seeds()));
        report::write_file(cfg_.workdir + "/train_log_run" + std::to_string(r) + ".csv", text);
        if (r == 0) report::write_file(cfg_.workdir + "/train_log.csv", text);
      }
    }
    const auto m = meta(runs.size() == 1 ? std::vector<std::uint64_t>{runs[0].seed} : cfg_.run_seeds());
    report::write_file(cfg_.workdir + "/eval_report.json",
                       report::eval_report_json(runs, m, ablation().name(), cfg_.training.k));
    report::write_file(cfg_.workdir + "/ranks.csv", report::ranks_csv(runs.front().test, pipe->data, m));
    std::vector<double> hr, ndcg;
    for (const auto& r : runs) {
      hr.push_back(r.test.hr);
      ndcg.push_back(r.test.ndcg);
    }
    const auto ah = eval::aggregate(hr), an = eval::aggregate(ndcg);
    out_ << "test HR@" << cfg_.training.k << " " << ah.mean << " +- " << ah.std << ", NDCG@" << cfg_.training.k
         << " " << an.mean << " +- " << an.std << " over " << runs.size() << " run(s)\n";
    return kExitOk;
  }

  int ablate() {
    cfg_.validate();
    const auto pipe = pipeline();
    const std::vector<std::string> variants{"full", "csan_only", "hgan_only", "no-hgan,no-spatial-attention",
                                            "no-csan,no-graph-attention"};
    std::string table = report::comment_line(meta(cfg_.run_seeds())) +
                        "variant,val_hr10_mean,val_ndcg10_mean,test_hr10_mean,test_hr10_std,test_ndcg10_mean,"
                        "test_ndcg10_std\n";
    for (const auto& v : variants) {
      const auto a = model::AblationConfig::parse(v);
      const auto runs = run_all(*pipe, a);
      std::vector<double> vh, vn, th, tn;
      for (const auto& r : runs) {
        vh.push_back(r.training.best_val_hr);
        vn.push_back(r.training.best_val_ndcg);
        th.push_back(r.test.hr);
        tn.push_back(r.test.ndcg);
      }
      const auto ath = eval::aggregate(th), atn = eval::aggregate(tn);
      const std::string row = a.name() + "," + report::fixed(eval::aggregate(vh).mean) + "," +
                              report::fixed(eval::aggregate(vn).mean) + "," + report::fixed(ath.mean) + "," +
                              report::fixed(ath.std) + "," + report::fixed(atn.mean) + "," + report::fixed(atn.std);
      table += row + "\n";
      out_ << row << '\n';
    }
    report::write_file(cfg_.workdir + "/ablation.csv", table);
    return kExitOk;
  }

  int recommend() {
    if (opt_.user.empty()) throw ConfigError("recommend needs --user ID");
    if (opt_.top == 0) throw ConfigError("--top must be positive");
    const auto pipe = pipeline();
    auto uit = pipe->data.user_index.find(opt_.user);
    if (uit == pipe->data.user_index.end()) throw ReferenceError("unknown user '" + opt_.user + "'");
    auto m = load_model(*pipe);
    const auto u = uit->second;
    const auto& seen = pipe->split.all_positives[u];
    std::vector<model::Pair> pairs;
    for (data::Index c = 0; c < static_cast<data::Index>(pipe->data.num_urls()); ++c)
      if (!std::binary_search(seen.begin(), seen.end(), c)) pairs.push_back({u, c});
    if (pairs.empty()) {
      out_ << "user '" << opt_.user << "' has posted every URL\n";
      return kExitOk;
    }
    const auto scores = eval::score_pairs(*m, pipe->context(), pairs, train::eval_sample_seed(cfg_.seeds.front()));
    std::vector<std::size_t> order(pairs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return scores[a] != scores[b] ? scores[a] > scores[b] : pairs[a].url < pairs[b].url;
    });
    out_ << "rank,url_id,score\n";
    for (std::size_t k = 0; k < std::min(opt_.top, order.size()); ++k)
      out_ << k + 1 << ',' << csv::quote_if_needed(pipe->data.url_ids[pairs[order[k]].url]) << ','
           << report::fixed(scores[order[k]]) << '\n';
    return kExitOk;
  }

  int export_attention() {
    const auto pipe = pipeline();
    std::vector<model::Pair> pairs;
    auto resolve = [&](const std::string& user, const std::string& url) {
      auto u = pipe->data.user_index.find(user);
      if (u == pipe->data.user_index.end()) throw ReferenceError("unknown user '" + user + "'");
      auto c = pipe->data.url_index.find(url);
      if (c == pipe->data.url_index.end()) throw ReferenceError("unknown URL '" + url + "'");
      pairs.push_back({u->second, c->second});
    };
    if (!opt_.pairs_path.empty()) {
      csv::Reader r(opt_.pairs_path);
      std::vector<std::string> header, row;
      if (!r.next(header)) throw ParseError(opt_.pairs_path, 0, "empty pair file");
      const auto uc = csv::column(r, header, "user_id"), cc = csv::column(r, header, "url_id");
      while (r.next(row)) {
        if (row.size() <= std::max(uc, cc)) r.fail("expected user_id,url_id");
        resolve(row[uc], row[cc]);
      }
    } else if (!opt_.user.empty() && !opt_.url.empty()) {
      resolve(opt_.user, opt_.url);
    } else {
      throw ConfigError("export-attention needs --pairs FILE or --user ID --url ID");
    }
    auto m = load_model(*pipe);
    const auto md = meta({cfg_.seeds.front()});
    std::string csan_text, hgan_text;
    numeric::NoGradGuard guard;
    for (const auto& p : pairs) {
      model::AttentionTrace trace;
      model::ForwardOptions fo;
      fo.sample_seed = train::eval_sample_seed(cfg_.seeds.front());
      fo.trace = &trace;
      m->forward(pipe->context(), {p}, fo);
      for (const auto& t : trace.csan) csan_text += report::csan_record(t, pipe->data, md);
      if (m->ablation().use_hgan) hgan_text += report::hgan_record(p, trace.hgan, pipe->graph, pipe->data, md);
    }
    report::write_file(cfg_.workdir + "/csan_attention.jsonl", csan_text);
    report::write_file(cfg_.workdir + "/hgan_attention.jsonl", hgan_text);
    out_ << "exported attention for " << pairs.size() << " pair(s) to " << cfg_.workdir << '\n';
    return kExitOk;
  }

  int gradcheck() {
    const auto seed = opt_.seed.value_or(7);
    const auto report = toy::run_gradcheck(seed, ablation());
    for (const auto& t : report.tensors)
      if (opt_.verbose)
        out_ << t.name << " " << t.result.max_relative_error << " (" << t.result.checked << " checked, "
             << t.result.skipped << " skipped)\n";
    out_ << "max relative error " << report.max_relative_error << " over " << report.checked << " coordinates ("
         << report.skipped << " skipped at kinks)\n";
    const bool ok = report.max_relative_error < 1e-4 && report.checked > 0;
    out_ << (ok ? "gradcheck passed" : "gradcheck FAILED") << '\n';
    return ok ? kExitOk : kExitFailure;
  }

 private:
  std::string dataset_dir() const { return cfg_.workdir + "/dataset"; }
  std::string checkpoint_path() const { return cfg_.workdir + "/checkpoint.bin"; }

  model::AblationConfig ablation() const { return model::AblationConfig::parse(cfg_.ablation); }

  report::Metadata meta(std::vector<std::uint64_t> seeds) const { return {config::config_hash(cfg_), std::move(seeds)}; }

  std::unique_ptr<train::Pipeline> pipeline() const {
    return train::Pipeline::build(store::load_dataset(dataset_dir()), cfg_.split_seed, cfg_.k_shift,
                                  cfg_.eval_negatives);
  }

  std::unique_ptr<model::AmranModel> load_model(const train::Pipeline& pipe) const {
    const std::string path = opt_.checkpoint.empty() ? checkpoint_path() : opt_.checkpoint;
    auto m = std::make_unique<model::AmranModel>(pipe.data.schema, cfg_.model, ablation(), cfg_.seeds.front());
    m->load_state(numeric::load_checkpoint(path));
    return m;
  }

  std::vector<train::RunResult> run_all(const train::Pipeline& pipe, const model::AblationConfig& a) {
    std::mutex mu;
    return train::run_experiments(
        pipe, cfg_.model, a, cfg_.training, cfg_.run_seeds(),
        [&](std::size_t r, const train::EpochLog& e) {
          if (!opt_.verbose) return;
          std::lock_guard lock(mu);
          out_ << a.name() << " run " << r << " epoch " << e.epoch << " loss " << e.loss << " val_hr10 " << e.val_hr
               << '\n';
        },
        train::worker_threads());
  }

  Options opt_;
  config::RunConfig cfg_;
  std::ostream& out_;
  std::ostream& err_;
};

// Parses argv and runs one subcommand. Returns 0 on success, 2 on usage
// errors and 1 on any other failure.
inline int run_command(int argc, const char* const* argv, std::ostream& out = std::cout,
                       std::ostream& err = std::cerr) {
  CLI::App app{"Fact-checking URL recommender (attributed multi-relational attention network)", "amran"};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "JSON run configuration")->check(CLI::ExistingFile);
    sub->add_option("--workdir", opt.workdir, "Directory for artifacts");
    sub->add_option("--seed", opt.seed, "Single seed (overrides the configured seed list)");
    sub->add_option("--ablation", opt.ablation,
                    "Comma-separated: full, no-csan, no-hgan, no-spatial-attention, no-graph-attention");
    sub->add_flag("-v,--verbose", opt.verbose, "Per-epoch progress");
  };
  auto* ingest = app.add_subcommand("ingest", "Load raw files (or generate synthetic data) into the workdir");
  add_common(ingest);
  ingest->add_option("--synthetic", opt.synthetic, "Generate data: n_users n_urls density seed")->expected(4);
  auto* build = app.add_subcommand("build-graph", "Build SPPMI/TF-IDF graph from the training split");
  add_common(build);
  auto* train_cmd = app.add_subcommand("train", "Train one model and save the best checkpoint");
  add_common(train_cmd);
  auto* evaluate = app.add_subcommand("evaluate", "Train and evaluate over the configured runs");
  add_common(evaluate);
  evaluate->add_option("--checkpoint", opt.checkpoint, "Evaluate this checkpoint instead of training")
      ->check(CLI::ExistingFile);
  auto* ablate = app.add_subcommand("ablate", "Evaluate the ablation variants");
  add_common(ablate);
  auto* recommend = app.add_subcommand("recommend", "Top-N unseen URLs for one user");
  add_common(recommend);
  recommend->add_option("--user", opt.user, "External user id")->required();
  recommend->add_option("--top", opt.top, "Number of URLs");
  recommend->add_option("--checkpoint", opt.checkpoint, "Checkpoint (default: workdir/checkpoint.bin)");
  auto* exp = app.add_subcommand("export-attention", "Dump CSAN and HGAN attention for pairs");
  add_common(exp);
  exp->add_option("--pairs", opt.pairs_path, "CSV with user_id,url_id");
  exp->add_option("--user", opt.user, "External user id");
  exp->add_option("--url", opt.url, "External URL id");
  exp->add_option("--checkpoint", opt.checkpoint, "Checkpoint (default: workdir/checkpoint.bin)");
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of the full model on a toy problem");
  add_common(gc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return kExitOk;
    }
    err << "error: " << e.what() << "\n" << "run with --help for usage\n";
    return kExitUsage;
  }
  try {
    Session s(opt, out, err);
    if (*ingest) return s.ingest();
    if (*build) return s.build_graph();
    if (*train_cmd) return s.train();
    if (*evaluate) return s.evaluate();
    if (*ablate) return s.ablate();
    if (*recommend) return s.recommend();
    if (*exp) return s.export_attention();
    if (*gc) return s.gradcheck();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace amran::cli
