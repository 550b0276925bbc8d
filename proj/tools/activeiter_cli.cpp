// activeiter command-line entry point: generate, features, align, bench, serve.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include "activeiter/activeiter.hpp"

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>

namespace fs = std::filesystem;
using namespace activeiter;

namespace {

struct DataOptions {
  std::string data;  // dataset directory; empty = synthetic
  std::uint64_t seed = 1;
  SyntheticPairSpec gen;
};

void add_data_options(CLI::App* cmd, DataOptions& d) {
  cmd->add_option("--data", d.data, "dataset directory (net1/, net2/, anchors.tsv[, truth.tsv])");
  cmd->add_option("--seed", d.seed, "random seed");
  cmd->add_option("--users", d.gen.users, "synthetic: shared users");
  cmd->add_option("--follow-degree", d.gen.mean_follow_degree, "synthetic: mean follow degree");
  cmd->add_option("--posts", d.gen.posts_per_user, "synthetic: posts per user");
  cmd->add_option("--locations", d.gen.locations, "synthetic: location pool");
  cmd->add_option("--timestamps", d.gen.timestamps, "synthetic: timestamp pool");
  cmd->add_option("--p-follow", d.gen.follow_retention, "synthetic: follow retention");
  cmd->add_option("--p-post", d.gen.post_retention, "synthetic: post retention");
}

// The pair whose anchors are the full ground truth.
AlignedNetworkPair load_pair(const DataOptions& d) {
  if (d.data.empty()) return generate_synthetic_pair(d.gen, d.seed).pair;
  auto ds = load_dataset(d.data);
  if (ds.truth) ds.pair.anchors = *ds.truth;
  return std::move(ds.pair);
}

struct AlignOptions {
  DataOptions data;
  ExperimentConfig cfg;
  std::string method = "activeiter";
  std::string oracle = "sim";
  std::string init = "warm-matching";
  std::size_t fold = 0;
  std::string query_log;
  std::string state_dump;
  std::string host = "127.0.0.1";
  int port = 8080;
};

Method parse_method(const std::string& s) {
  if (s == "activeiter") return Method::ActiveIter;
  if (s == "random") return Method::ActiveIterRand;
  if (s == "iter") return Method::Iter;
  throw Error("unknown method '" + s + "' (activeiter, random, iter)");
}

nlohmann::json metrics_json(const Metrics& m) {
  return {{"tp", m.tp},         {"fp", m.fp},          {"fn", m.fn}, {"tn", m.tn},
          {"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1},
          {"accuracy", m.accuracy}};
}

void write_state_dump(const std::string& path, const std::vector<std::vector<double>>& deltas,
                      const std::vector<std::vector<double>>& objectives,
                      const std::vector<std::vector<std::size_t>>& positives) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (std::size_t s = 0; s < deltas.size(); ++s) {
    for (std::size_t i = 0; i < deltas[s].size(); ++i) {
      out << nlohmann::json{{"solve", s},
                            {"iteration", i + 1},
                            {"delta_y", deltas[s][i]},
                            {"objective", objectives[s][i]},
                            {"num_positive", positives[s][i]}}
                 .dump()
          << '\n';
    }
  }
}

void write_query_log(const std::string& path, const std::vector<QueryRecord>& log) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path);
  for (const auto& r : log) out << to_json(r).dump() << '\n';
}

int run_align(AlignOptions& o) {
  o.cfg.seed = o.data.seed;
  o.cfg.generator = o.data.gen;
  o.cfg.solver.init = parse_label_init(o.init);
  o.cfg.validate();
  const auto method = parse_method(o.method);
  auto pair = load_pair(o.data);
  auto split = make_split(pair, o.cfg.theta, o.cfg.sample_ratio, o.cfg.folds, o.cfg.seed);
  auto proto = make_protocol(pair, split, o.cfg.seed);
  if (o.fold >= proto.folds.size()) throw Error("fold out of range");
  const auto diagrams = enumerate_diagrams(o.cfg.policy);
  const auto& ids = proto.folds[o.fold];

  nlohmann::json out{{"method", method_name(method, o.cfg.budget)},
                     {"links", proto.space.size()},
                     {"fold", o.fold},
                     {"config", to_json(o.cfg)}};

  if (o.oracle == "sim") {
    auto r = run_method(pair, proto, o.fold, diagrams, o.cfg, method, o.cfg.budget);
    out["metrics"] = metrics_json(r.metrics);
    out["rounds"] = r.alignment.rounds;
    out["fallback_rounds"] = r.alignment.fallback_rounds;
    out["budget_spent"] = r.alignment.budget.spent;
    out["seconds"] = r.seconds;
    if (!o.query_log.empty()) write_query_log(o.query_log, r.alignment.query_log);
    if (!o.state_dump.empty()) {
      write_state_dump(o.state_dump, r.alignment.delta_traces, r.alignment.objective_traces,
                       r.alignment.positive_traces);
    }
  } else if (o.oracle == "server") {
    // Serve this fold as an in-memory dataset and wait for a human to
    // finish the session.
    Dataset d;
    d.name = "align";
    d.pair = pair;
    d.pair.anchors.clear();
    for (auto l : ids.train_positives) d.pair.anchors.push_back(proto.space[l]);
    d.truth = pair.anchors;
    d.candidates = proto.space.links();
    index_dataset(d);
    SessionManager mgr("", "");
    mgr.register_dataset(std::move(d));
    SessionOptions so;
    so.config = o.cfg;
    so.config.budget = method == Method::Iter ? 0 : o.cfg.budget;
    so.strategy = method == Method::ActiveIterRand ? QueryStrategy::Random : QueryStrategy::Conflict;
    const auto id = mgr.create("align", so);
    httplib::Server server;
    install_routes(server, mgr);
    std::thread th([&] { server.listen(o.host, o.port); });
    std::cerr << "session " << id << " at http://" << o.host << ':' << o.port << "/v1/sessions/"
              << id << "/pending\n";
    while (!mgr.done(id)) std::this_thread::sleep_for(std::chrono::milliseconds(200));
    server.stop();
    th.join();
    const auto status = mgr.status(id);
    out["session_id"] = id;
    out["status"] = status;
    // Score the fold's test links on the session's labels.
    const auto y = mgr.labels(id);
    const auto links = mgr.links(id);
    std::vector<std::uint8_t> predicted(proto.space.size(), 0);
    for (LinkId l = 0; l < links.size(); ++l) predicted[*proto.space.find(links[l])] = y[l];
    std::vector<LinkId> queried;
    for (const auto& q : status.at("query_log")) {
      queried.push_back(*proto.space.find(links[q.at("link_id").get<LinkId>()]));
    }
    out["metrics"] = metrics_json(evaluate(predicted, proto.truth, ids.test, queried));
  } else {
    throw Error("unknown oracle '" + o.oracle + "' (sim, server)");
  }
  std::cout << out.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Active anchor-link inference across two attributed social networks"};
  app.require_subcommand(1);

  // generate
  auto* gen = app.add_subcommand("generate", "write a synthetic aligned pair");
  DataOptions gen_data;
  std::string gen_out;
  double known_fraction = 1.0;
  double cand_theta = 0.0;
  add_data_options(gen, gen_data);
  gen->add_option("--out", gen_out, "output directory")->required();
  gen->add_option("--known-fraction", known_fraction,
                  "fraction of planted anchors written to anchors.tsv; the rest only to truth.tsv");
  gen->add_option("--candidates-theta", cand_theta,
                  "also write candidates.tsv with theta * |anchors| sampled non-anchors");

  // features
  auto* feat = app.add_subcommand("features", "write the meta-diagram feature CSV of one fold");
  DataOptions feat_data;
  double feat_theta = 10.0, feat_ratio = 0.6;
  std::size_t feat_fold = 0;
  std::string feat_out;
  bool feat_paths_only = false;
  add_data_options(feat, feat_data);
  feat->add_option("--theta", feat_theta, "NP-ratio");
  feat->add_option("--sample-ratio", feat_ratio, "training sample ratio");
  feat->add_option("--fold", feat_fold, "fold whose training positives are the known anchors");
  feat->add_option("--out", feat_out, "CSV path (default stdout)");
  feat->add_flag("--paths-only", feat_paths_only, "meta paths only, no stacked diagrams");

  // align
  auto* align = app.add_subcommand("align", "run one method on one fold");
  AlignOptions ao;
  ao.cfg.theta = 10.0;
  add_data_options(align, ao.data);
  align->add_option("--theta", ao.cfg.theta, "NP-ratio");
  align->add_option("--sample-ratio", ao.cfg.sample_ratio, "training sample ratio");
  align->add_option("--budget", ao.cfg.budget, "query budget");
  align->add_option("--batch-size", ao.cfg.batch_size, "queries per round");
  align->add_option("--lambda", ao.cfg.solver.lambda, "ridge coefficient");
  align->add_option("--tau-pos", ao.cfg.solver.tau_pos, "positive score threshold");
  align->add_option("--tau-sim", ao.cfg.tau_sim, "near-tie tolerance");
  align->add_option("--tau-margin", ao.cfg.tau_margin, "weak-positive margin");
  align->add_option("--max-iterations", ao.cfg.solver.max_iterations, "inner iteration cap");
  align->add_option("--init", ao.init, "free label seeding: zero, one, warm-matching");
  align->add_option("--method", ao.method, "activeiter, random or iter");
  align->add_option("--fold", ao.fold, "fold index");
  align->add_option("--oracle", ao.oracle, "sim or server")->check(CLI::IsMember({"sim", "server"}));
  align->add_flag("--recompute-features", ao.cfg.recompute_features,
                  "rebuild anchor-dependent features after positive answers");
  align->add_flag("!--no-fallback", ao.cfg.fallback, "do not pad batches beyond the candidate set");
  align->add_option("--query-log", ao.query_log, "JSONL query log path");
  align->add_option("--state-dump", ao.state_dump, "JSONL per-iteration state path");
  align->add_option("--host", ao.host, "server oracle: bind address");
  align->add_option("--port", ao.port, "server oracle: port");

  // bench
  auto* bench = app.add_subcommand("bench", "parameter sweeps over the fold protocol");
  std::string bench_config, bench_out = "bench-out";
  unsigned bench_threads = 0;
  bench->add_option("--config", bench_config, "JSON config")->required();
  bench->add_option("--out", bench_out, "report directory");
  bench->add_option("--threads", bench_threads, "worker threads (0 = all cores)");

  // serve
  auto* serve = app.add_subcommand("serve", "start the label server");
  std::string data_root = "data", state_dir = "state", host = "127.0.0.1";
  int port = 8080;
  serve->add_option("--data-root", data_root, "directory of datasets");
  serve->add_option("--state-dir", state_dir, "session checkpoint directory");
  serve->add_option("--host", host, "bind address");
  serve->add_option("--port", port, "port");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      auto syn = generate_synthetic_pair(gen_data.gen, gen_data.seed);
      std::vector<AnchorLink> known = syn.ground_truth;
      std::mt19937_64 rng(gen_data.seed);
      if (known_fraction < 1.0) {
        std::shuffle(known.begin(), known.end(), rng);
        known.resize(static_cast<std::size_t>(std::llround(known_fraction * double(known.size()))));
        std::sort(known.begin(), known.end());
      }
      std::optional<std::vector<AnchorLink>> cands;
      if (cand_theta > 0.0) {
        auto split = make_split(syn.pair, cand_theta, 1.0, 2, gen_data.seed);
        cands = split.negatives;
        cands->insert(cands->end(), syn.ground_truth.begin(), syn.ground_truth.end());
        std::sort(cands->begin(), cands->end());
      }
      const bool partial = known_fraction < 1.0;
      write_dataset(gen_out, syn.pair, known, partial ? &syn.ground_truth : nullptr,
                    cands ? &*cands : nullptr);
      std::cerr << "wrote " << gen_out << ": " << syn.pair.first.user_count() << " / "
                << syn.pair.second.user_count() << " users, " << known.size()
                << " known anchors\n";
      return 0;
    }
    if (*feat) {
      auto pair = load_pair(feat_data);
      auto split = make_split(pair, feat_theta, feat_ratio, 10, feat_data.seed);
      auto proto = make_protocol(pair, split, feat_data.seed);
      if (feat_fold >= proto.folds.size()) throw Error("fold out of range");
      std::vector<AnchorLink> known;
      for (auto l : proto.folds[feat_fold].train_positives) known.push_back(proto.space[l]);
      auto policy = feat_paths_only ? DiagramPolicy::paths_only() : DiagramPolicy{};
      auto fm = build_feature_matrix(proto.space, enumerate_diagrams(policy), pair, known);
      std::vector<int> labels(proto.truth.begin(), proto.truth.end());
      if (feat_out.empty()) {
        write_feature_csv(fm, labels, std::cout);
      } else {
        std::ofstream out(feat_out);
        if (!out) throw Error("cannot write " + feat_out);
        write_feature_csv(fm, labels, out);
      }
      return 0;
    }
    if (*align) return run_align(ao);
    if (*bench) {
      std::ifstream in(bench_config);
      if (!in) throw Error("cannot open " + bench_config);
      BenchConfig cfg;
      from_json(nlohmann::json::parse(in), cfg);
      if (bench_threads) cfg.threads = bench_threads;
      fs::create_directories(bench_out);
      std::ofstream runs(fs::path(bench_out) / "runs.csv");
      write_runs_header(runs);
      auto report = run_benchmark(cfg, [&](const std::vector<BenchRun>& r) {
        write_runs_csv(r, runs);
        runs.flush();
      });
      std::ofstream cells(fs::path(bench_out) / "report.csv");
      write_cells_csv(report.cells, cells);
      std::ofstream conv(fs::path(bench_out) / "convergence.csv");
      write_convergence_csv(report.runs, conv);
      std::ofstream js(fs::path(bench_out) / "report.json");
      js << to_json(report, cfg).dump(2) << '\n';
      for (const auto& c : report.cells) {
        std::cout << c.sweep << '=' << c.value << '\t' << c.method << "\tF1 " << c.f1.mean
                  << " +- " << c.f1.stddev << '\n';
      }
      return 0;
    }
    if (*serve) {
      SessionManager mgr(data_root, state_dir);
      httplib::Server server;
      install_routes(server, mgr);
      std::cerr << "listening on http://" << host << ':' << port << "/v1\n";
      if (!server.listen(host, port)) throw Error("cannot bind " + host + ":" + std::to_string(port));
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
