#pragma once

// Synthetic aligned networks, the fold/sampling protocol, metrics and the
// method runners used by the CLI and the benchmark sweeps.

#include <Eigen/Core>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "activeiter/active.hpp"
#include "activeiter/counting.hpp"
#include "activeiter/errors.hpp"
#include "activeiter/hetnet.hpp"
#include "activeiter/meta_diagram.hpp"
#include "activeiter/solver.hpp"

namespace activeiter {

struct SyntheticPairSpec {
  std::size_t users = 200;
  double mean_follow_degree = 8.0;
  std::size_t posts_per_user = 20;
  std::size_t locations = 50;
  std::size_t timestamps = 40;
  double follow_retention = 0.8;
  double post_retention = 0.7;

  void validate() const {
    if (users == 0) throw Error("generator needs at least one user");
    if (locations == 0 || timestamps == 0) throw Error("attribute pools must be non-empty");
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(follow_retention) || !prob(post_retention)) {
      throw Error("retention probabilities must lie in [0, 1]");
    }
    if (mean_follow_degree < 0.0) throw Error("mean follow degree must be >= 0");
  }
};

struct SyntheticPair {
  AlignedNetworkPair pair;             // pair.anchors holds the planted truth
  std::vector<AnchorLink> ground_truth;
};

/// Builds a base network, then two copies that independently keep each
/// follow edge with probability follow_retention and each post (with its
/// attributes) with probability post_retention. Ids are renamed through
/// independent permutations; the planted anchors pair each base user's two
/// copies.
inline SyntheticPair generate_synthetic_pair(const SyntheticPairSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  const std::size_t n = spec.users;
  const double p_follow = n > 1 ? std::min(1.0, spec.mean_follow_degree / double(n - 1)) : 0.0;

  std::bernoulli_distribution follow(p_follow);
  std::vector<std::pair<std::size_t, std::size_t>> follows;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && follow(rng)) follows.emplace_back(i, j);

  struct BasePost {
    std::size_t author;
    std::size_t location;
    std::size_t timestamp;
  };
  std::uniform_int_distribution<std::size_t> loc(0, spec.locations - 1);
  std::uniform_int_distribution<std::size_t> ts(0, spec.timestamps - 1);
  std::vector<BasePost> posts;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t k = 0; k < spec.posts_per_user; ++k) posts.push_back({u, loc(rng), ts(rng)});

  auto make_copy = [&](const std::string& tag, std::vector<std::size_t>& user_slot) {
    HeterogeneousNetwork g(tag);
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    // perm[k] = base user placed at ordinal k
    user_slot.assign(n, 0);
    std::vector<std::string> name(n);
    for (std::size_t k = 0; k < n; ++k) {
      name[perm[k]] = tag + "_u" + std::to_string(k);
      user_slot[perm[k]] = k;
      g.add_node(name[perm[k]], NodeType::User);
    }
    std::bernoulli_distribution keep_edge(spec.follow_retention);
    std::bernoulli_distribution keep_post(spec.post_retention);
    std::vector<std::pair<std::size_t, std::size_t>> kept_follows;
    for (const auto& e : follows)
      if (keep_edge(rng)) kept_follows.push_back(e);
    std::vector<std::size_t> kept_posts;
    for (std::size_t p = 0; p < posts.size(); ++p)
      if (keep_post(rng)) kept_posts.push_back(p);
    std::shuffle(kept_posts.begin(), kept_posts.end(), rng);
    for (std::size_t k = 0; k < kept_posts.size(); ++k) {
      g.add_node(tag + "_p" + std::to_string(k), NodeType::Post);
    }
    for (const auto& [a, b] : kept_follows) g.add_link(name[a], name[b], LinkType::Follow);
    for (std::size_t k = 0; k < kept_posts.size(); ++k) {
      const auto& p = posts[kept_posts[k]];
      const auto id = tag + "_p" + std::to_string(k);
      g.add_link(name[p.author], id, LinkType::Write);
      g.add_attribute(id, AttrType::Location, "L" + std::to_string(p.location));
      g.add_attribute(id, AttrType::Timestamp, "T" + std::to_string(p.timestamp));
    }
    return g;
  };

  std::vector<std::size_t> slot1, slot2;
  SyntheticPair out;
  out.pair.first = make_copy("g1", slot1);
  out.pair.second = make_copy("g2", slot2);
  for (std::size_t u = 0; u < n; ++u) {
    out.ground_truth.push_back({static_cast<UserIndex>(slot1[u]), static_cast<UserIndex>(slot2[u])});
  }
  std::sort(out.ground_truth.begin(), out.ground_truth.end());
  out.pair.anchors = out.ground_truth;
  return out;
}

struct Fold {
  std::vector<AnchorLink> train_positives;
  std::vector<AnchorLink> train_negatives;
  std::vector<AnchorLink> test;
};

struct Split {
  std::vector<AnchorLink> positives;
  std::vector<AnchorLink> negatives;
  std::vector<Fold> folds;
};

/// Samples theta * |positives| negatives from (U1 x U2) \ positives, deals
/// both classes into `folds` folds, and for fold f trains on a
/// sample_ratio subsample of fold f (at least one positive) and tests on
/// the other folds.
inline Split make_split(const AlignedNetworkPair& pair, double theta, double sample_ratio,
                        std::size_t folds, std::uint64_t seed) {
  if (!(theta >= 1.0)) throw Error("NP-ratio must be >= 1");
  if (!(sample_ratio > 0.0 && sample_ratio <= 1.0)) throw Error("sample ratio must lie in (0, 1]");
  if (folds < 2) throw Error("need at least two folds");
  if (pair.anchors.size() < folds) {
    throw InsufficientDataError("need at least one positive per fold (" +
                                std::to_string(pair.anchors.size()) + " positives, " +
                                std::to_string(folds) + " folds)");
  }
  std::mt19937_64 rng(seed);
  Split s;
  s.positives = pair.anchors;
  std::shuffle(s.positives.begin(), s.positives.end(), rng);

  const std::size_t n1 = pair.first.user_count(), n2 = pair.second.user_count();
  const auto want = static_cast<std::size_t>(std::llround(theta * double(s.positives.size())));
  const std::size_t available = n1 * n2 - s.positives.size();
  if (want > available) {
    throw InsufficientDataError("cannot sample " + std::to_string(want) + " negatives from " +
                                std::to_string(available) + " non-anchor pairs");
  }
  std::unordered_set<AnchorLink, AnchorHash> used(s.positives.begin(), s.positives.end());
  std::uniform_int_distribution<UserIndex> pick1(0, static_cast<UserIndex>(n1 - 1));
  std::uniform_int_distribution<UserIndex> pick2(0, static_cast<UserIndex>(n2 - 1));
  if (want * 2 > available) {
    // Dense regime: shuffle the complement instead of rejection sampling.
    std::vector<AnchorLink> all;
    for (UserIndex u = 0; u < n1; ++u)
      for (UserIndex v = 0; v < n2; ++v)
        if (!used.contains({u, v})) all.push_back({u, v});
    std::shuffle(all.begin(), all.end(), rng);
    all.resize(want);
    s.negatives = std::move(all);
  } else {
    while (s.negatives.size() < want) {
      AnchorLink c{pick1(rng), pick2(rng)};
      if (used.insert(c).second) s.negatives.push_back(c);
    }
  }

  auto deal = [folds](const std::vector<AnchorLink>& v) {
    std::vector<std::vector<AnchorLink>> out(folds);
    for (std::size_t i = 0; i < v.size(); ++i) out[i % folds].push_back(v[i]);
    return out;
  };
  auto pos_folds = deal(s.positives);
  auto neg_folds = deal(s.negatives);
  for (std::size_t f = 0; f < folds; ++f) {
    Fold fold;
    auto take = [&](const std::vector<AnchorLink>& v, std::size_t minimum) {
      auto k = static_cast<std::size_t>(std::llround(sample_ratio * double(v.size())));
      k = std::clamp<std::size_t>(k, std::min(minimum, v.size()), v.size());
      return std::vector<AnchorLink>(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k));
    };
    fold.train_positives = take(pos_folds[f], 1);
    fold.train_negatives = take(neg_folds[f], 0);
    for (std::size_t g = 0; g < folds; ++g) {
      if (g == f) continue;
      fold.test.insert(fold.test.end(), pos_folds[g].begin(), pos_folds[g].end());
      fold.test.insert(fold.test.end(), neg_folds[g].begin(), neg_folds[g].end());
    }
    s.folds.push_back(std::move(fold));
  }
  return s;
}

struct Metrics {
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0, accuracy = 0.0;

  static Metrics from_counts(std::size_t tp, std::size_t fp, std::size_t fn, std::size_t tn) {
    Metrics m{tp, fp, fn, tn};
    m.precision = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    m.recall = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0.0 ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
                                        : 0.0;
    const auto total = tp + fp + fn + tn;
    m.accuracy = total ? double(tp + tn) / double(total) : 0.0;
    return m;
  }
};

/// Confusion counts over `test` links, skipping any link in `queried`.
inline Metrics evaluate(const std::vector<std::uint8_t>& predicted, const std::vector<char>& truth,
                        const std::vector<LinkId>& test, const std::vector<LinkId>& queried) {
  std::unordered_set<LinkId> skip(queried.begin(), queried.end());
  std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
  for (auto l : test) {
    if (skip.contains(l)) continue;
    const bool p = predicted.at(l) != 0, t = truth.at(l) != 0;
    tp += p && t;
    fp += p && !t;
    fn += !p && t;
    tn += !p && !t;
  }
  return Metrics::from_counts(tp, fp, fn, tn);
}

/// Candidate space and per-fold link ids for one (pair, split) instance.
/// Links are inserted in a seeded random order so that id tie-breaks carry
/// no label information.
struct ProtocolInstance {
  CandidateLinkSpace space;
  std::vector<char> truth;
  struct FoldIds {
    std::vector<LinkId> train_positives;
    std::vector<LinkId> train_negatives;
    std::vector<LinkId> test;
  };
  std::vector<FoldIds> folds;
};

inline ProtocolInstance make_protocol(const AlignedNetworkPair& pair, const Split& split,
                                      std::uint64_t seed) {
  std::vector<std::pair<AnchorLink, char>> all;
  for (const auto& a : split.positives) all.emplace_back(a, 1);
  for (const auto& a : split.negatives) all.emplace_back(a, 0);
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::shuffle(all.begin(), all.end(), rng);
  ProtocolInstance p{CandidateLinkSpace(pair.first.user_count(), pair.second.user_count()), {}, {}};
  for (const auto& [a, t] : all) {
    p.space.add(a);
    p.truth.push_back(t);
  }
  auto ids = [&](const std::vector<AnchorLink>& v) {
    std::vector<LinkId> out;
    for (const auto& a : v) out.push_back(*p.space.find(a));
    return out;
  };
  for (const auto& f : split.folds) {
    p.folds.push_back({ids(f.train_positives), ids(f.train_negatives), ids(f.test)});
  }
  return p;
}

enum class Method : std::uint8_t { ActiveIter, ActiveIterRand, Iter };

inline std::string method_name(Method m, std::size_t budget) {
  switch (m) {
    case Method::ActiveIter: return "ActiveIter-" + std::to_string(budget);
    case Method::ActiveIterRand: return "ActiveIter-Rand-" + std::to_string(budget);
    case Method::Iter: return "Iter";
  }
  return "?";
}

struct ExperimentConfig {
  double theta = 50.0;
  double sample_ratio = 0.6;
  std::size_t folds = 10;
  std::size_t budget = 50;
  std::size_t batch_size = 5;
  SolverConfig solver;
  double tau_sim = 0.05;
  double tau_margin = 0.1;
  bool fallback = true;
  bool symmetric_witnesses = false;
  bool recompute_features = false;
  bool cache = true;
  DiagramPolicy policy;
  std::uint64_t seed = 1;
  SyntheticPairSpec generator;

  void validate() const {
    if (!(theta >= 1.0)) throw Error("theta must be >= 1");
    if (!(sample_ratio > 0.0 && sample_ratio <= 1.0)) throw Error("sample ratio must lie in (0, 1]");
    if (folds < 2) throw Error("folds must be >= 2");
    if (batch_size == 0) throw Error("batch size must be >= 1");
    solver.validate();
    generator.validate();
  }

  ActiveConfig active(Method m, std::size_t b) const {
    ActiveConfig a;
    a.budget = m == Method::Iter ? 0 : b;
    a.batch_size = batch_size;
    a.tau_sim = tau_sim;
    a.tau_margin = tau_margin;
    a.fallback = fallback;
    a.symmetric_witnesses = symmetric_witnesses;
    a.strategy = m == Method::ActiveIterRand ? QueryStrategy::Random : QueryStrategy::Conflict;
    a.seed = seed;
    return a;
  }
};

inline nlohmann::json to_json(const SyntheticPairSpec& g) {
  return {{"users", g.users},
          {"mean_follow_degree", g.mean_follow_degree},
          {"posts_per_user", g.posts_per_user},
          {"locations", g.locations},
          {"timestamps", g.timestamps},
          {"follow_retention", g.follow_retention},
          {"post_retention", g.post_retention}};
}

inline void from_json(const nlohmann::json& j, SyntheticPairSpec& g) {
  g.users = j.value("users", g.users);
  g.mean_follow_degree = j.value("mean_follow_degree", g.mean_follow_degree);
  g.posts_per_user = j.value("posts_per_user", g.posts_per_user);
  g.locations = j.value("locations", g.locations);
  g.timestamps = j.value("timestamps", g.timestamps);
  g.follow_retention = j.value("follow_retention", g.follow_retention);
  g.post_retention = j.value("post_retention", g.post_retention);
}

inline nlohmann::json to_json(const ExperimentConfig& c) {
  return {{"theta", c.theta},
          {"sample_ratio", c.sample_ratio},
          {"folds", c.folds},
          {"budget", c.budget},
          {"batch_size", c.batch_size},
          {"lambda", c.solver.lambda},
          {"tau_pos", c.solver.tau_pos},
          {"max_iterations", c.solver.max_iterations},
          {"tolerance", c.solver.tolerance},
          {"label_init", to_string(c.solver.init)},
          {"tau_sim", c.tau_sim},
          {"tau_margin", c.tau_margin},
          {"fallback", c.fallback},
          {"symmetric_witnesses", c.symmetric_witnesses},
          {"recompute_features", c.recompute_features},
          {"seed", c.seed},
          {"generator", to_json(c.generator)}};
}

inline void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  c.theta = j.value("theta", c.theta);
  c.sample_ratio = j.value("sample_ratio", c.sample_ratio);
  c.folds = j.value("folds", c.folds);
  c.budget = j.value("budget", c.budget);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.solver.lambda = j.value("lambda", c.solver.lambda);
  c.solver.tau_pos = j.value("tau_pos", c.solver.tau_pos);
  c.solver.max_iterations = j.value("max_iterations", c.solver.max_iterations);
  c.solver.tolerance = j.value("tolerance", c.solver.tolerance);
  if (j.contains("label_init")) c.solver.init = parse_label_init(j.at("label_init").get<std::string>());
  c.tau_sim = j.value("tau_sim", c.tau_sim);
  c.tau_margin = j.value("tau_margin", c.tau_margin);
  c.fallback = j.value("fallback", c.fallback);
  c.symmetric_witnesses = j.value("symmetric_witnesses", c.symmetric_witnesses);
  c.recompute_features = j.value("recompute_features", c.recompute_features);
  c.seed = j.value("seed", c.seed);
  if (j.contains("generator")) from_json(j.at("generator"), c.generator);
}

/// Features for a fold: anchor steps see only `known` positives.
inline Eigen::MatrixXd fold_features(const AlignedNetworkPair& pair, const CandidateLinkSpace& space,
                                     const std::vector<MetaDiagram>& diagrams,
                                     const std::vector<LinkId>& known, bool cache = true) {
  std::vector<AnchorLink> anchors;
  for (auto l : known) anchors.push_back(space[l]);
  return build_feature_matrix(space, diagrams, pair, anchors, cache).values;
}

struct RunResult {
  std::string method;
  Metrics metrics;
  AlignmentResult alignment;
  double seconds = 0.0;
};

/// One method on one fold of a protocol instance, with a simulated oracle.
inline RunResult run_method(const AlignedNetworkPair& pair, const ProtocolInstance& proto,
                            std::size_t fold, const std::vector<MetaDiagram>& diagrams,
                            const ExperimentConfig& cfg, Method method, std::size_t budget,
                            const Eigen::MatrixXd* precomputed = nullptr) {
  const auto start = std::chrono::steady_clock::now();
  const auto& ids = proto.folds.at(fold);
  Eigen::MatrixXd X = precomputed ? *precomputed
                                  : fold_features(pair, proto.space, diagrams, ids.train_positives,
                                                  cfg.cache);
  FeatureRefresh refresh;
  if (cfg.recompute_features) {
    refresh = [&](const std::vector<LinkId>& positives) {
      return fold_features(pair, proto.space, diagrams, positives, cfg.cache);
    };
  }
  SimulatedOracle oracle(proto.truth);
  auto labels = initial_labels(proto.space.size(), ids.train_positives);
  RunResult r;
  r.method = method_name(method, budget);
  r.alignment = run_active_alignment(proto.space, X, labels, cfg.solver, cfg.active(method, budget),
                                     oracle, refresh);
  std::vector<LinkId> queried;
  for (const auto& q : r.alignment.query_log) queried.push_back(q.link);
  r.metrics = evaluate(r.alignment.state.labels.y, proto.truth, ids.test, queried);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace activeiter
