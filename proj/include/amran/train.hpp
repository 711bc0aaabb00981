#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "amran/dataset.hpp"
#include "amran/eval.hpp"
#include "amran/graph.hpp"
#include "amran/model.hpp"
#include "amran/numeric/adam.hpp"

namespace amran::train {

using data::Index;

// Everything derived from the loaded dataset before training: the split, the
// training view and the graph/context built from training interactions only.
struct Pipeline {
  data::InteractionDataset data;
  data::SplitSet split;
  data::InteractionDataset train_view;
  graph::HeteroGraph graph;
  graph::ContextIndex index;

  static std::unique_ptr<Pipeline> build(data::InteractionDataset ds, std::uint64_t split_seed, double k_shift,
                                         std::size_t eval_negatives = 99) {
    auto p = std::make_unique<Pipeline>();
    p->data = std::move(ds);
    p->split = data::split_leave_one_out(p->data, eval_negatives, split_seed);
    p->train_view = data::training_view(p->data, p->split);
    p->graph = graph::build_graph(p->train_view, k_shift);
    p->index = graph::ContextIndex::build(p->train_view, p->graph);
    return p;
  }

  model::Context context() const { return {&train_view, &graph, &index}; }
};

struct TrainConfig {
  std::size_t epochs = 50;
  std::size_t patience = 10;
  std::size_t batch_size = 128;
  int neg_ratio = 4;
  double lr = 0.01;
  double l2 = 1e-2;
  std::size_t k = 10;
  bool record_wall_time = false;

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (neg_ratio < 1) throw ConfigError("neg_ratio must be at least 1");
    if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
    if (l2 < 0.0) throw ConfigError("regularization weight must be non-negative");
    if (k == 0) throw ConfigError("K must be positive");
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;  // mean objective per training instance
  double val_hr = 0.0;
  double val_ndcg = 0.0;
  double wall_seconds = 0.0;
};

struct TrainResult {
  std::vector<numeric::NamedTensor> best_state;
  std::vector<numeric::NamedTensor> final_state;  // parameters after the last epoch run
  std::size_t best_epoch = 0;
  double best_val_hr = 0.0;
  double best_val_ndcg = 0.0;
  std::vector<EpochLog> log;
  std::size_t clamped = 0;
};

inline std::uint64_t epoch_sample_seed(std::uint64_t seed, std::size_t epoch) {
  return derive_seed(seed, 0x5a3, epoch);
}

// Neighbor samples used by every evaluation pass of one run.
inline std::uint64_t eval_sample_seed(std::uint64_t seed) { return derive_seed(seed, 0xe7a1); }

// One optimizer step on a batch; returns the objective value.
inline double train_step(model::AmranModel& m, const model::Context& ctx, const std::vector<data::Instance>& batch,
                         double l2, std::uint64_t sample_seed, numeric::AdamState& adam,
                         const numeric::AdamConfig& acfg, std::vector<numeric::Tensor>& params,
                         std::size_t* clamped = nullptr) {
  std::vector<model::Pair> pairs;
  std::vector<double> labels;
  for (const auto& in : batch) {
    pairs.push_back({in.user, in.url});
    labels.push_back(in.label);
  }
  model::ForwardOptions opt;
  opt.training = true;
  opt.update_running_stats = true;
  opt.sample_seed = sample_seed;
  const auto probs = m.forward(ctx, pairs, opt);
  const auto loss = model::training_loss(m, probs, labels, l2, clamped);
  const double value = loss.item();
  if (!std::isfinite(value)) throw DivergenceError("loss became non-finite (" + std::to_string(value) + ")");
  numeric::backward(loss);
  numeric::adam_update(params, adam, acfg);
  return value;
}

// Mini-batch training with per-epoch validation HR@K, early stopping and
// best-checkpoint selection. The model ends holding the best state.
inline TrainResult train(model::AmranModel& m, const Pipeline& pipe, const TrainConfig& cfg, std::uint64_t seed,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  const auto ctx = pipe.context();
  TrainResult result;
  result.best_state = m.state();
  auto params = m.parameters();
  numeric::AdamState adam;
  const numeric::AdamConfig acfg{cfg.lr};
  std::size_t since_best = 0;
  bool have_best = false;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const auto batches =
        data::sample_training_batches(pipe.split, cfg.batch_size, cfg.neg_ratio, derive_seed(seed, 0xba7c, epoch));
    double total = 0.0;
    std::size_t instances = 0;
    for (const auto& batch : batches) {
      total += train_step(m, ctx, batch, cfg.l2, epoch_sample_seed(seed, epoch), adam, acfg, params, &result.clamped);
      instances += batch.size();
    }
    const auto val = eval::evaluate_split(m, ctx, pipe.split, eval::Part::validation, eval_sample_seed(seed), cfg.k);
    EpochLog log{epoch, total / static_cast<double>(instances), val.hr, val.ndcg, 0.0};
    if (cfg.record_wall_time)
      log.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.push_back(log);
    if (on_epoch) on_epoch(log);
    if (!have_best || val.hr > result.best_val_hr) {
      have_best = true;
      result.best_state = m.state();
      result.best_epoch = epoch;
      result.best_val_hr = val.hr;
      result.best_val_ndcg = val.ndcg;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  result.final_state = m.state();
  m.load_state(result.best_state);
  return result;
}

struct RunResult {
  std::uint64_t seed = 0;
  TrainResult training;
  eval::Metrics test;
};

// Worker cap from AMRAN_THREADS (default: hardware concurrency, at least 1).
inline std::size_t worker_threads() {
  if (const char* env = std::getenv("AMRAN_THREADS")) {
    const auto v = csv::parse_int(env);
    if (!v || *v < 1) throw ConfigError("AMRAN_THREADS must be a positive integer");
    return static_cast<std::size_t>(*v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Runs fn(0..n-1) on up to `threads` workers; the first exception is rethrown.
template <typename F>
void parallel_for(std::size_t n, std::size_t threads, F fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::mutex mu;
  std::size_t next = 0;
  std::exception_ptr failure;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (;;) {
        std::size_t i;
        {
          std::lock_guard lock(mu);
          if (next >= n || failure) return;
          i = next++;
        }
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

// Trains one model per seed and evaluates its best-validation checkpoint on the
// test split. Runs are independent and may execute concurrently; `on_epoch` is
// then called from several threads.
inline std::vector<RunResult> run_experiments(const Pipeline& pipe, const model::ModelConfig& mcfg,
                                              const model::AblationConfig& ablation, const TrainConfig& tcfg,
                                              const std::vector<std::uint64_t>& seeds,
                                              const std::function<void(std::size_t, const EpochLog&)>& on_epoch = {},
                                              std::size_t threads = 1) {
  std::vector<RunResult> runs(seeds.size());
  parallel_for(seeds.size(), threads, [&](std::size_t r) {
    model::AmranModel m(pipe.data.schema, mcfg, ablation, seeds[r]);
    RunResult& run = runs[r];
    run.seed = seeds[r];
    run.training = train(m, pipe, tcfg, seeds[r], [&](const EpochLog& e) {
      if (on_epoch) on_epoch(r, e);
    });
    run.test = eval::evaluate_split(m, pipe.context(), pipe.split, eval::Part::test, eval_sample_seed(seeds[r]), tcfg.k);
  });
  return runs;
}

}  // namespace amran::train
