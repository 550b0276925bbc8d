#pragma once

// Active query loop: conflict-based false-negative candidates, batched
// oracle queries under a budget, and the outer alternation with the solver.

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <nlohmann/json.hpp>

#include "activeiter/errors.hpp"
#include "activeiter/hetnet.hpp"
#include "activeiter/solver.hpp"

namespace activeiter {

/// An inferred-negative link whose score nearly ties a conflicting inferred
/// positive (`similar`) while the positive on its other endpoint (`weak`)
/// scores clearly lower.
struct QueryCandidate {
  LinkId link;
  LinkId similar;
  LinkId weak;
  double rank_key;  // score(link) - score(weak)
};

enum class QuerySource : std::uint8_t { Strategy, Fallback, Random };

inline std::string_view to_string(QuerySource s) {
  switch (s) {
    case QuerySource::Strategy: return "strategy";
    case QuerySource::Fallback: return "fallback";
    case QuerySource::Random: return "random";
  }
  return "?";
}

inline QuerySource parse_query_source(std::string_view s) {
  if (s == "strategy") return QuerySource::Strategy;
  if (s == "fallback") return QuerySource::Fallback;
  if (s == "random") return QuerySource::Random;
  throw Error("unknown query source '" + std::string(s) + "'");
}

enum class QueryStrategy : std::uint8_t { Conflict, Random };

struct ActiveConfig {
  std::size_t budget = 50;
  std::size_t batch_size = 5;
  double tau_sim = 0.05;
  double tau_margin = 0.1;
  bool fallback = true;
  /// Accept both witnesses on either endpoint instead of one per endpoint.
  bool symmetric_witnesses = false;
  QueryStrategy strategy = QueryStrategy::Conflict;
  std::uint64_t seed = 1;

  void validate() const {
    if (batch_size == 0) throw Error("batch size must be >= 1");
    if (tau_sim < 0.0 || tau_margin < 0.0) throw Error("query thresholds must be >= 0");
  }
};

struct Budget {
  std::size_t total = 0;
  std::size_t spent = 0;
  std::size_t batch_size = 5;

  std::size_t remaining() const noexcept { return total - spent; }
  bool exhausted() const noexcept { return spent >= total; }
};

/// Whether `c` satisfies every membership condition of the candidate set.
inline bool is_valid_candidate(const QueryCandidate& c, const AlignmentState& state,
                               const CandidateLinkSpace& space, double tau_sim,
                               double tau_margin) {
  const auto& lab = state.labels;
  auto inferred = [&](LinkId l, std::uint8_t y) {
    return lab.provenance[l] == Provenance::Inferred && lab.y[l] == y;
  };
  auto shares_endpoint = [&](LinkId a, LinkId b) {
    return space[a].user1 == space[b].user1 || space[a].user2 == space[b].user2;
  };
  const auto& s = state.scores;
  return inferred(c.link, 0) && inferred(c.similar, 1) && inferred(c.weak, 1) &&
         c.similar != c.weak && shares_endpoint(c.link, c.similar) &&
         shares_endpoint(c.link, c.weak) && std::abs(s(c.similar) - s(c.link)) <= tau_sim &&
         s(c.weak) > 0.0 && s(c.link) - s(c.weak) >= tau_margin;
}

/// Candidate false negatives sorted by descending rank key (ascending link
/// id on ties). For each link the witness pair with the largest key is kept.
inline std::vector<QueryCandidate> build_candidate_set(const AlignmentState& state,
                                                       const CandidateLinkSpace& space,
                                                       double tau_sim, double tau_margin,
                                                       bool symmetric_witnesses = false) {
  const auto& lab = state.labels;
  const auto& s = state.scores;
  auto inferred_positive = [&](LinkId l) {
    return lab.provenance[l] == Provenance::Inferred && lab.y[l] == 1;
  };

  std::vector<QueryCandidate> out;
  for (LinkId l = 0; l < space.size(); ++l) {
    if (lab.provenance[l] != Provenance::Inferred || lab.y[l] != 0) continue;
    const auto& link = space[l];
    std::vector<LinkId> side1, side2;
    for (auto o : space.incident1(link.user1))
      if (o != l && inferred_positive(o)) side1.push_back(o);
    for (auto o : space.incident2(link.user2))
      if (o != l && inferred_positive(o)) side2.push_back(o);
    if (side1.empty() && side2.empty()) continue;

    std::optional<QueryCandidate> best;
    auto consider = [&](LinkId similar, LinkId weak) {
      if (similar == weak) return;
      if (std::abs(s(similar) - s(l)) > tau_sim) return;
      if (!(s(weak) > 0.0)) return;
      const double key = s(l) - s(weak);
      if (key < tau_margin) return;
      if (!best || key > best->rank_key) best = QueryCandidate{l, similar, weak, key};
    };
    if (symmetric_witnesses) {
      std::vector<LinkId> all = side1;
      all.insert(all.end(), side2.begin(), side2.end());
      for (auto a : all)
        for (auto b : all) consider(a, b);
    } else {
      for (auto a : side1)
        for (auto b : side2) consider(a, b);
      for (auto a : side2)
        for (auto b : side1) consider(a, b);
    }
    if (best) out.push_back(*best);
  }
  std::sort(out.begin(), out.end(), [](const QueryCandidate& a, const QueryCandidate& b) {
    if (a.rank_key != b.rank_key) return a.rank_key > b.rank_key;
    return a.link < b.link;
  });
  return out;
}

struct BatchItem {
  LinkId link;
  double rank_key;
  QuerySource source;
};

/// Links the solver is still free to label, i.e. neither known nor queried.
inline std::vector<LinkId> queryable_links(const LabelState& labels) {
  std::vector<LinkId> out;
  for (LinkId l = 0; l < labels.size(); ++l)
    if (labels.provenance[l] == Provenance::Inferred) out.push_back(l);
  return out;
}

/// Top of the candidate list, capped by batch size and remaining budget.
/// With `fallback`, short batches are topped up with unqueried inferred
/// negatives by descending score, then with any unqueried link closest to
/// the decision threshold. Fallback items carry their score as rank key.
inline std::vector<BatchItem> select_query_batch(const std::vector<QueryCandidate>& candidates,
                                                 const AlignmentState& state,
                                                 const Budget& budget, bool fallback,
                                                 double tau_pos) {
  if (budget.exhausted()) throw BudgetExhausted("query budget exhausted");
  const std::size_t want = std::min(budget.batch_size, budget.remaining());
  const auto& lab = state.labels;
  std::vector<BatchItem> batch;
  std::unordered_set<LinkId> taken;
  for (const auto& c : candidates) {
    if (batch.size() == want) break;
    if (lab.provenance[c.link] != Provenance::Inferred) continue;
    if (taken.insert(c.link).second) batch.push_back({c.link, c.rank_key, QuerySource::Strategy});
  }
  if (!fallback || batch.size() == want) return batch;

  const auto& s = state.scores;
  std::vector<LinkId> negatives, rest;
  for (auto l : queryable_links(lab)) {
    if (taken.contains(l)) continue;
    (lab.y[l] == 0 ? negatives : rest).push_back(l);
  }
  std::sort(negatives.begin(), negatives.end(), [&](LinkId a, LinkId b) {
    if (s(a) != s(b)) return s(a) > s(b);
    return a < b;
  });
  for (auto l : negatives) {
    if (batch.size() == want) return batch;
    batch.push_back({l, s(l), QuerySource::Fallback});
    taken.insert(l);
  }
  std::sort(rest.begin(), rest.end(), [&](LinkId a, LinkId b) {
    const double da = std::abs(s(a) - tau_pos), db = std::abs(s(b) - tau_pos);
    if (da != db) return da < db;
    return a < b;
  });
  for (auto l : rest) {
    if (batch.size() == want) break;
    batch.push_back({l, s(l), QuerySource::Fallback});
  }
  return batch;
}

/// Uniform sample without replacement from the unqueried links.
inline std::vector<LinkId> random_query_strategy(const LabelState& labels, const Budget& budget,
                                                 std::mt19937_64& rng) {
  if (budget.exhausted()) throw BudgetExhausted("query budget exhausted");
  auto pool = queryable_links(labels);
  const std::size_t want = std::min({budget.batch_size, budget.remaining(), pool.size()});
  std::vector<LinkId> out;
  out.reserve(want);
  for (std::size_t i = 0; i < want; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
    std::swap(pool[i], pool[pick(rng)]);
    out.push_back(pool[i]);
  }
  return out;
}

/// A label source. Returning nullopt abstains (skip): no budget is spent and
/// the link stays eligible. Implementations may throw OracleUnavailable.
class Oracle {
 public:
  virtual ~Oracle() = default;
  virtual std::optional<bool> answer(LinkId link) = 0;
};

class SimulatedOracle final : public Oracle {
 public:
  explicit SimulatedOracle(std::vector<char> truth) : truth_(std::move(truth)) {}
  std::optional<bool> answer(LinkId link) override { return truth_.at(link) != 0; }

 private:
  std::vector<char> truth_;
};

/// Oracle answering from ground-truth anchors over a candidate space.
inline SimulatedOracle simulated_oracle(const std::vector<AnchorLink>& ground_truth,
                                        const CandidateLinkSpace& space) {
  std::vector<char> truth(space.size(), 0);
  for (const auto& a : ground_truth)
    if (auto id = space.find(a)) truth[*id] = 1;
  return SimulatedOracle(std::move(truth));
}

struct Answer {
  LinkId link;
  std::optional<bool> label;  // nullopt = skip
};

struct QueryRecord {
  std::size_t round;
  LinkId link;
  double rank_key;
  bool answer;
  QuerySource source;
};

inline nlohmann::json to_json(const QueryRecord& r) {
  return {{"round", r.round},
          {"link_id", r.link},
          {"rank_key", r.rank_key},
          {"answer", r.answer ? 1 : 0},
          {"source", std::string(to_string(r.source))}};
}

/// Applies oracle answers for links of `batch`. Positive answers pin the
/// link to 1, which the degree bound then propagates to its conflicts in
/// later greedy passes. Returns the number of labels consumed.
inline std::size_t apply_answers(LabelState& labels, Budget& budget,
                                 const std::vector<BatchItem>& batch,
                                 const std::vector<Answer>& answers) {
  std::unordered_set<LinkId> in_batch;
  for (const auto& b : batch) in_batch.insert(b.link);
  std::unordered_set<LinkId> seen;
  for (const auto& a : answers) {
    if (a.link >= labels.size()) throw UnknownLinkError("unknown link " + std::to_string(a.link));
    if (labels.provenance[a.link] == Provenance::Queried || !seen.insert(a.link).second) {
      throw RepeatedQueryError("link " + std::to_string(a.link) + " was already answered");
    }
    if (!in_batch.contains(a.link)) {
      throw UnknownLinkError("link " + std::to_string(a.link) + " is not in the pending batch");
    }
  }
  std::size_t consumed = 0;
  for (const auto& a : answers) {
    if (!a.label) continue;
    if (budget.exhausted()) throw BudgetExhausted("query budget exhausted");
    labels.set_queried(a.link, *a.label);
    ++budget.spent;
    ++consumed;
  }
  return consumed;
}

/// Rebuilds features after the known anchors change. Receives the current
/// positive anchors (known plus positively answered queries).
using FeatureRefresh = std::function<Eigen::MatrixXd(const std::vector<LinkId>& positives)>;

/// The outer loop as a resumable state machine: solve, plan a batch, wait
/// for answers, repeat. Synchronous oracles drive it through
/// run_active_alignment; the label server drives it one request at a time.
class ActiveSession {
 public:
  ActiveSession(const CandidateLinkSpace& space, Eigen::MatrixXd features, LabelState initial,
                SolverConfig solver, ActiveConfig active, FeatureRefresh refresh = {})
      : space_(&space),
        X_(std::move(features)),
        solver_cfg_(solver),
        active_cfg_(active),
        refresh_(std::move(refresh)),
        rng_(active.seed) {
    solver_cfg_.validate();
    active_cfg_.validate();
    budget_ = Budget{active.budget, 0, active.batch_size};
    ridge_ = std::make_unique<RidgeSolver>(X_, solver_cfg_.lambda);
    state_.labels = std::move(initial);
    solve();
    plan();
  }

  bool done() const noexcept { return done_; }
  const std::vector<BatchItem>& pending() const noexcept { return pending_; }
  const AlignmentState& state() const noexcept { return state_; }
  const Budget& budget() const noexcept { return budget_; }
  std::size_t round() const noexcept { return round_; }
  const std::vector<QueryRecord>& query_log() const noexcept { return log_; }
  const std::vector<std::vector<double>>& delta_traces() const noexcept { return traces_; }
  const std::vector<std::vector<double>>& objective_traces() const noexcept { return objectives_; }
  const std::vector<std::vector<std::size_t>>& positive_traces() const noexcept {
    return positives_;
  }
  std::size_t fallback_rounds() const noexcept { return fallback_rounds_; }
  const Eigen::MatrixXd& features() const noexcept { return X_; }
  const CandidateLinkSpace& space() const noexcept { return *space_; }
  /// Pending links not yet answered or skipped.
  std::vector<LinkId> unresolved() const {
    std::vector<LinkId> out;
    for (const auto& b : pending_)
      if (!resolved_.contains(b.link)) out.push_back(b.link);
    return out;
  }

  /// Applies (possibly partial) answers for the pending batch. Once every
  /// pending link is answered or skipped the loop re-solves and plans the
  /// next batch, or finishes.
  void submit(const std::vector<Answer>& answers) {
    if (done_) throw Error("session is complete");
    std::vector<BatchItem> open;
    for (const auto& b : pending_)
      if (!resolved_.contains(b.link)) open.push_back(b);
    for (const auto& a : answers) {
      if (resolved_.contains(a.link)) {
        throw RepeatedQueryError("link " + std::to_string(a.link) + " was already resolved");
      }
    }
    auto& labels = state_.labels;
    apply_answers(labels, budget_, open, answers);
    for (const auto& a : answers) {
      resolved_.insert(a.link);
      if (!a.label) continue;
      const auto it = std::find_if(pending_.begin(), pending_.end(),
                                   [&](const BatchItem& b) { return b.link == a.link; });
      log_.push_back({round_, a.link, it->rank_key, *a.label, it->source});
    }
    if (resolved_.size() == pending_.size()) advance();
  }

  nlohmann::json checkpoint() const {
    nlohmann::json j;
    std::vector<int> prov, y;
    for (std::size_t l = 0; l < state_.labels.size(); ++l) {
      prov.push_back(static_cast<int>(state_.labels.provenance[l]));
      y.push_back(state_.labels.y[l]);
    }
    j["provenance"] = prov;
    j["y"] = y;
    j["w"] = std::vector<double>(state_.w.data(), state_.w.data() + state_.w.size());
    j["scores"] =
        std::vector<double>(state_.scores.data(), state_.scores.data() + state_.scores.size());
    j["iterations"] = state_.iterations;
    j["converged"] = state_.converged;
    j["delta_trace"] = state_.delta_trace;
    j["objective_trace"] = state_.objective_trace;
    j["positive_trace"] = state_.positive_trace;
    j["budget"] = {{"total", budget_.total}, {"spent", budget_.spent},
                   {"batch_size", budget_.batch_size}};
    j["round"] = round_;
    j["done"] = done_;
    j["fallback_rounds"] = fallback_rounds_;
    nlohmann::json pend = nlohmann::json::array();
    for (const auto& b : pending_) {
      pend.push_back({{"link_id", b.link},
                      {"rank_key", b.rank_key},
                      {"source", std::string(to_string(b.source))}});
    }
    j["pending"] = pend;
    j["resolved"] = std::vector<LinkId>(resolved_.begin(), resolved_.end());
    nlohmann::json log = nlohmann::json::array();
    for (const auto& r : log_) log.push_back(to_json(r));
    j["query_log"] = log;
    j["traces"] = traces_;
    j["objective_traces"] = objectives_;
    j["positive_traces"] = positives_;
    std::ostringstream rng;
    rng << rng_;
    j["rng"] = rng.str();
    if (refresh_) {
      j["features"] = std::vector<double>(X_.data(), X_.data() + X_.size());
    }
    return j;
  }

  /// Restores a session from checkpoint() output. The candidate space,
  /// features and configs must be the ones the session was created with.
  static ActiveSession restore(const CandidateLinkSpace& space, Eigen::MatrixXd features,
                               SolverConfig solver, ActiveConfig active,
                               const nlohmann::json& j, FeatureRefresh refresh = {}) {
    ActiveSession s(space, std::move(features), solver, active, std::move(refresh));
    const auto n = space.size();
    auto prov = j.at("provenance").get<std::vector<int>>();
    auto y = j.at("y").get<std::vector<int>>();
    if (prov.size() != n || y.size() != n) throw Error("checkpoint does not match the link space");
    s.state_.labels = LabelState(n);
    for (std::size_t l = 0; l < n; ++l) {
      s.state_.labels.provenance[l] = static_cast<Provenance>(prov[l]);
      s.state_.labels.y[l] = static_cast<std::uint8_t>(y[l]);
    }
    auto w = j.at("w").get<std::vector<double>>();
    auto scores = j.at("scores").get<std::vector<double>>();
    s.state_.w = Eigen::Map<Eigen::VectorXd>(w.data(), static_cast<Eigen::Index>(w.size()));
    s.state_.scores =
        Eigen::Map<Eigen::VectorXd>(scores.data(), static_cast<Eigen::Index>(scores.size()));
    s.state_.iterations = j.at("iterations").get<int>();
    s.state_.converged = j.at("converged").get<bool>();
    s.state_.delta_trace = j.at("delta_trace").get<std::vector<double>>();
    s.state_.objective_trace = j.at("objective_trace").get<std::vector<double>>();
    s.state_.positive_trace = j.at("positive_trace").get<std::vector<std::size_t>>();
    s.budget_.total = j.at("budget").at("total").get<std::size_t>();
    s.budget_.spent = j.at("budget").at("spent").get<std::size_t>();
    s.budget_.batch_size = j.at("budget").at("batch_size").get<std::size_t>();
    s.round_ = j.at("round").get<std::size_t>();
    s.done_ = j.at("done").get<bool>();
    s.fallback_rounds_ = j.at("fallback_rounds").get<std::size_t>();
    for (const auto& p : j.at("pending")) {
      s.pending_.push_back({p.at("link_id").get<LinkId>(), p.at("rank_key").get<double>(),
                            parse_query_source(p.at("source").get<std::string>())});
    }
    for (auto l : j.at("resolved").get<std::vector<LinkId>>()) s.resolved_.insert(l);
    for (const auto& r : j.at("query_log")) {
      s.log_.push_back({r.at("round").get<std::size_t>(), r.at("link_id").get<LinkId>(),
                        r.at("rank_key").get<double>(), r.at("answer").get<int>() != 0,
                        parse_query_source(r.at("source").get<std::string>())});
    }
    s.traces_ = j.at("traces").get<std::vector<std::vector<double>>>();
    s.objectives_ = j.at("objective_traces").get<std::vector<std::vector<double>>>();
    s.positives_ = j.at("positive_traces").get<std::vector<std::vector<std::size_t>>>();
    std::istringstream rng(j.at("rng").get<std::string>());
    rng >> s.rng_;
    if (j.contains("features") && s.refresh_) {
      auto f = j.at("features").get<std::vector<double>>();
      if (f.size() != static_cast<std::size_t>(s.X_.size())) {
        throw Error("checkpoint feature matrix does not match");
      }
      s.X_ = Eigen::Map<Eigen::MatrixXd>(f.data(), s.X_.rows(), s.X_.cols());
      s.ridge_ = std::make_unique<RidgeSolver>(s.X_, s.solver_cfg_.lambda);
    }
    return s;
  }

 private:
  // Restore path: no initial solve.
  ActiveSession(const CandidateLinkSpace& space, Eigen::MatrixXd features, SolverConfig solver,
                ActiveConfig active, FeatureRefresh refresh)
      : space_(&space),
        X_(std::move(features)),
        solver_cfg_(solver),
        active_cfg_(active),
        refresh_(std::move(refresh)),
        rng_(active.seed) {
    ridge_ = std::make_unique<RidgeSolver>(X_, solver_cfg_.lambda);
  }

  void solve() {
    auto next = solve_inner(*ridge_, X_, *space_, state_.labels, solver_cfg_);
    traces_.push_back(next.delta_trace);
    objectives_.push_back(next.objective_trace);
    positives_.push_back(next.positive_trace);
    state_ = std::move(next);
  }

  void plan() {
    pending_.clear();
    resolved_.clear();
    if (budget_.exhausted() || queryable_links(state_.labels).empty()) {
      done_ = true;
      return;
    }
    if (active_cfg_.strategy == QueryStrategy::Random) {
      for (auto l : random_query_strategy(state_.labels, budget_, rng_)) {
        pending_.push_back({l, state_.scores(l), QuerySource::Random});
      }
    } else {
      auto candidates = build_candidate_set(state_, *space_, active_cfg_.tau_sim,
                                            active_cfg_.tau_margin,
                                            active_cfg_.symmetric_witnesses);
      pending_ = select_query_batch(candidates, state_, budget_, active_cfg_.fallback,
                                    solver_cfg_.tau_pos);
      if (std::any_of(pending_.begin(), pending_.end(),
                      [](const BatchItem& b) { return b.source == QuerySource::Fallback; })) {
        ++fallback_rounds_;
      }
    }
    if (pending_.empty()) {
      done_ = true;
      return;
    }
    ++round_;
  }

  void advance() {
    if (refresh_) {
      std::vector<LinkId> positives;
      for (LinkId l = 0; l < state_.labels.size(); ++l) {
        if (state_.labels.fixed(l) && state_.labels.y[l]) positives.push_back(l);
      }
      X_ = refresh_(positives);
      ridge_ = std::make_unique<RidgeSolver>(X_, solver_cfg_.lambda);
    }
    solve();
    plan();
  }

  const CandidateLinkSpace* space_;
  Eigen::MatrixXd X_;
  SolverConfig solver_cfg_;
  ActiveConfig active_cfg_;
  FeatureRefresh refresh_;
  std::unique_ptr<RidgeSolver> ridge_;
  std::mt19937_64 rng_;
  AlignmentState state_;
  Budget budget_;
  std::vector<BatchItem> pending_;
  std::unordered_set<LinkId> resolved_;
  std::vector<QueryRecord> log_;
  std::vector<std::vector<double>> traces_;
  std::vector<std::vector<double>> objectives_;
  std::vector<std::vector<std::size_t>> positives_;
  std::size_t round_ = 0;
  std::size_t fallback_rounds_ = 0;
  bool done_ = false;
};

struct AlignmentResult {
  AlignmentState state;
  std::vector<QueryRecord> query_log;
  std::vector<std::vector<double>> delta_traces;  // one per inner solve
  std::vector<std::vector<double>> objective_traces;
  std::vector<std::vector<std::size_t>> positive_traces;
  std::size_t rounds = 0;
  std::size_t fallback_rounds = 0;
  Budget budget;
};

/// Runs the full loop against a synchronous oracle until the budget is
/// spent or nothing is left to query. A batch on which the oracle abstains
/// entirely ends the loop.
inline AlignmentResult run_active_alignment(const CandidateLinkSpace& space,
                                            const Eigen::MatrixXd& features,
                                            const LabelState& initial,
                                            const SolverConfig& solver,
                                            const ActiveConfig& active, Oracle& oracle,
                                            FeatureRefresh refresh = {}) {
  ActiveSession session(space, features, initial, solver, active, std::move(refresh));
  while (!session.done()) {
    std::vector<Answer> answers;
    bool any = false;
    for (const auto& item : session.pending()) {
      auto label = oracle.answer(item.link);
      any = any || label.has_value();
      answers.push_back({item.link, label});
    }
    if (!any) break;
    session.submit(answers);
  }
  AlignmentResult r;
  r.state = session.state();
  r.query_log = session.query_log();
  r.delta_traces = session.delta_traces();
  r.objective_traces = session.objective_traces();
  r.positive_traces = session.positive_traces();
  r.fallback_rounds = session.fallback_rounds();
  r.budget = session.budget();
  std::unordered_set<std::size_t> rounds;
  for (const auto& q : r.query_log) rounds.insert(q.round);
  r.rounds = rounds.size();
  return r;
}

}  // namespace activeiter
