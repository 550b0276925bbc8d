#pragma once

// Parameter sweeps over the fold protocol: NP-ratio, sample ratio and
// budget. Every (sweep, value, seed, fold) task builds features once and
// runs all methods on them; tasks run on a small thread pool and each
// finished task is handed to the caller right away.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include <nlohmann/json.hpp>

#include "activeiter/experiment.hpp"

namespace activeiter {

struct BenchConfig {
  ExperimentConfig base;
  std::vector<double> thetas;          // NP-ratio sweep at base.sample_ratio
  std::vector<double> sample_ratios;   // sample-ratio sweep at base.theta
  std::vector<std::size_t> budgets;    // budget sweep at base theta / sample ratio
  std::vector<std::uint64_t> seeds{1};
  std::size_t fold_limit = 0;          // 0 = all folds
  unsigned threads = 0;                // 0 = hardware concurrency
};

inline void from_json(const nlohmann::json& j, BenchConfig& c) {
  from_json(j, c.base);
  c.thetas = j.value("thetas", c.thetas);
  c.sample_ratios = j.value("sample_ratios", c.sample_ratios);
  c.budgets = j.value("budgets", c.budgets);
  c.seeds = j.value("seeds", c.seeds);
  c.fold_limit = j.value("fold_limit", c.fold_limit);
  c.threads = j.value("threads", c.threads);
}

inline nlohmann::json to_json(const BenchConfig& c) {
  auto j = to_json(c.base);
  j["thetas"] = c.thetas;
  j["sample_ratios"] = c.sample_ratios;
  j["budgets"] = c.budgets;
  j["seeds"] = c.seeds;
  j["fold_limit"] = c.fold_limit;
  j["threads"] = c.threads;
  return j;
}

/// One method on one fold.
struct BenchRun {
  std::string sweep;
  double value = 0.0;
  double theta = 0.0;
  double sample_ratio = 0.0;
  std::size_t budget = 0;
  std::string method;
  std::uint64_t seed = 0;
  std::size_t fold = 0;
  std::size_t links = 0;
  Metrics metrics;
  double seconds = 0.0;          // method time, excluding features
  double feature_seconds = 0.0;  // shared by the methods of a task
  std::vector<std::vector<double>> delta_traces;
};

struct Summary {
  double mean = 0.0;
  double stddev = 0.0;  // population std over runs
  std::size_t n = 0;
};

inline Summary summarize(const std::vector<double>& v) {
  Summary s;
  s.n = v.size();
  if (v.empty()) return s;
  for (double x : v) s.mean += x;
  s.mean /= double(v.size());
  for (double x : v) s.stddev += (x - s.mean) * (x - s.mean);
  s.stddev = std::sqrt(s.stddev / double(v.size()));
  return s;
}

/// Aggregated cell: (sweep, value, method) over seeds and folds.
struct BenchCell {
  std::string sweep;
  double value = 0.0;
  std::string method;
  Summary precision, recall, f1, accuracy, seconds;
};

struct BenchReport {
  std::vector<BenchRun> runs;
  std::vector<BenchCell> cells;
};

namespace detail {

struct BenchTask {
  std::string sweep;
  double value;
  double theta;
  double sample_ratio;
  std::vector<std::pair<Method, std::size_t>> methods;
  std::uint64_t seed;
  std::size_t fold;
};

inline std::vector<BenchTask> bench_tasks(const BenchConfig& c) {
  const auto& b = c.base;
  const std::size_t folds = c.fold_limit ? std::min(c.fold_limit, b.folds) : b.folds;
  auto standard = [&](std::size_t budget) {
    return std::vector<std::pair<Method, std::size_t>>{
        {Method::ActiveIter, budget}, {Method::ActiveIterRand, budget}, {Method::Iter, 0}};
  };
  std::vector<BenchTask> out;
  auto add = [&](const std::string& sweep, double value, double theta, double ratio,
                 std::vector<std::pair<Method, std::size_t>> methods) {
    for (auto seed : c.seeds)
      for (std::size_t f = 0; f < folds; ++f)
        out.push_back({sweep, value, theta, ratio, methods, seed, f});
  };
  for (double t : c.thetas) add("theta", t, t, b.sample_ratio, standard(b.budget));
  for (double r : c.sample_ratios) add("sample_ratio", r, b.theta, r, standard(b.budget));
  for (auto budget : c.budgets) {
    add("budget", double(budget), b.theta, b.sample_ratio,
        {{Method::ActiveIter, budget}, {Method::ActiveIterRand, budget}});
  }
  return out;
}

}  // namespace detail

inline std::vector<BenchCell> aggregate(const std::vector<BenchRun>& runs) {
  std::map<std::tuple<std::string, double, std::string>, std::vector<const BenchRun*>> groups;
  std::vector<std::tuple<std::string, double, std::string>> order;
  for (const auto& r : runs) {
    auto key = std::make_tuple(r.sweep, r.value, r.method);
    auto [it, fresh] = groups.try_emplace(key);
    if (fresh) order.push_back(key);
    it->second.push_back(&r);
  }
  std::vector<BenchCell> cells;
  for (const auto& key : order) {
    const auto& g = groups.at(key);
    auto pick = [&](auto fn) {
      std::vector<double> v;
      for (auto* r : g) v.push_back(fn(*r));
      return summarize(v);
    };
    BenchCell c{std::get<0>(key), std::get<1>(key), std::get<2>(key), {}, {}, {}, {}, {}};
    c.precision = pick([](const BenchRun& r) { return r.metrics.precision; });
    c.recall = pick([](const BenchRun& r) { return r.metrics.recall; });
    c.f1 = pick([](const BenchRun& r) { return r.metrics.f1; });
    c.accuracy = pick([](const BenchRun& r) { return r.metrics.accuracy; });
    c.seconds = pick([](const BenchRun& r) { return r.seconds + r.feature_seconds; });
    cells.push_back(std::move(c));
  }
  return cells;
}

using BenchSink = std::function<void(const std::vector<BenchRun>&)>;

/// Runs every task; `sink` (if set) sees each task's runs as soon as they
/// finish, serialized. Runs in the report are in task order.
inline BenchReport run_benchmark(const BenchConfig& cfg, const BenchSink& sink = {}) {
  cfg.base.validate();
  const auto tasks = detail::bench_tasks(cfg);
  const auto diagrams = enumerate_diagrams(cfg.base.policy);
  std::vector<std::vector<BenchRun>> results(tasks.size());
  std::atomic<std::size_t> next{0};
  std::mutex sink_mu;
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto work = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        const auto& t = tasks[i];
        ExperimentConfig c = cfg.base;
        c.theta = t.theta;
        c.sample_ratio = t.sample_ratio;
        c.seed = t.seed;
        auto syn = generate_synthetic_pair(c.generator, t.seed);
        auto split = make_split(syn.pair, c.theta, c.sample_ratio, c.folds, t.seed);
        auto proto = make_protocol(syn.pair, split, t.seed);
        const auto f0 = std::chrono::steady_clock::now();
        const Eigen::MatrixXd X = fold_features(syn.pair, proto.space, diagrams,
                                                proto.folds[t.fold].train_positives, c.cache);
        const double fsec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - f0).count();
        for (auto [m, b] : t.methods) {
          auto r = run_method(syn.pair, proto, t.fold, diagrams, c, m, b, &X);
          BenchRun run;
          run.sweep = t.sweep;
          run.value = t.value;
          run.theta = t.theta;
          run.sample_ratio = t.sample_ratio;
          run.budget = m == Method::Iter ? 0 : b;
          run.method = r.method;
          run.seed = t.seed;
          run.fold = t.fold;
          run.links = proto.space.size();
          run.metrics = r.metrics;
          run.seconds = r.seconds;
          run.feature_seconds = fsec;
          run.delta_traces = r.alignment.delta_traces;
          results[i].push_back(std::move(run));
        }
        if (sink) {
          std::lock_guard lock(sink_mu);
          sink(results[i]);
        }
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  unsigned n = cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency());
  n = static_cast<unsigned>(std::min<std::size_t>(n, std::max<std::size_t>(1, tasks.size())));
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < n; ++i) pool.emplace_back(work);
  work();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);

  BenchReport report;
  for (auto& r : results)
    for (auto& run : r) report.runs.push_back(std::move(run));
  report.cells = aggregate(report.runs);
  return report;
}

inline void write_runs_header(std::ostream& out) {
  out << "sweep,value,theta,sample_ratio,budget,method,seed,fold,links,tp,fp,fn,tn,precision,"
         "recall,f1,accuracy,seconds,feature_seconds\n";
}

inline void write_runs_csv(const std::vector<BenchRun>& runs, std::ostream& out) {
  for (const auto& r : runs) {
    const auto& m = r.metrics;
    out << r.sweep << ',' << r.value << ',' << r.theta << ',' << r.sample_ratio << ','
        << r.budget << ',' << r.method << ',' << r.seed << ',' << r.fold << ',' << r.links << ','
        << m.tp << ',' << m.fp << ',' << m.fn << ',' << m.tn << ',' << m.precision << ','
        << m.recall << ',' << m.f1 << ',' << m.accuracy << ',' << r.seconds << ','
        << r.feature_seconds << '\n';
  }
}

inline void write_cells_csv(const std::vector<BenchCell>& cells, std::ostream& out) {
  out << "sweep,value,method,n,precision_mean,precision_std,recall_mean,recall_std,f1_mean,"
         "f1_std,accuracy_mean,accuracy_std,seconds_mean,seconds_std\n";
  for (const auto& c : cells) {
    out << c.sweep << ',' << c.value << ',' << c.method << ',' << c.f1.n << ','
        << c.precision.mean << ',' << c.precision.stddev << ',' << c.recall.mean << ','
        << c.recall.stddev << ',' << c.f1.mean << ',' << c.f1.stddev << ',' << c.accuracy.mean
        << ',' << c.accuracy.stddev << ',' << c.seconds.mean << ',' << c.seconds.stddev << '\n';
  }
}

/// sweep,value,method,seed,fold,solve,iteration,delta_y
inline void write_convergence_csv(const std::vector<BenchRun>& runs, std::ostream& out) {
  out << "sweep,value,method,seed,fold,solve,iteration,delta_y\n";
  for (const auto& r : runs)
    for (std::size_t s = 0; s < r.delta_traces.size(); ++s)
      for (std::size_t i = 0; i < r.delta_traces[s].size(); ++i)
        out << r.sweep << ',' << r.value << ',' << r.method << ',' << r.seed << ',' << r.fold
            << ',' << s << ',' << i + 1 << ',' << r.delta_traces[s][i] << '\n';
}

inline nlohmann::json to_json(const BenchReport& rep, const BenchConfig& cfg) {
  auto summary = [](const Summary& s) { return nlohmann::json{{"mean", s.mean}, {"std", s.stddev}}; };
  nlohmann::json cells = nlohmann::json::array();
  for (const auto& c : rep.cells) {
    cells.push_back({{"sweep", c.sweep},
                     {"value", c.value},
                     {"method", c.method},
                     {"n", c.f1.n},
                     {"precision", summary(c.precision)},
                     {"recall", summary(c.recall)},
                     {"f1", summary(c.f1)},
                     {"accuracy", summary(c.accuracy)},
                     {"seconds", summary(c.seconds)}});
  }
  nlohmann::json runtime = nlohmann::json::array();
  for (const auto& r : rep.runs) {
    runtime.push_back({{"method", r.method},
                       {"theta", r.theta},
                       {"links", r.links},
                       {"seconds", r.seconds},
                       {"feature_seconds", r.feature_seconds}});
  }
  return {{"config", to_json(cfg)}, {"cells", cells}, {"runtime", runtime}};
}

}  // namespace activeiter
