#pragma once

// Alternating ridge / greedy solver for the anchor-link labels.
//
//   min_{w,y}  ||Xw - y||^2 + lambda ||w||^2
//   s.t. y in {0,1}, fixed labels respected, 0 <= A1 y <= 1, 0 <= A2 y <= 1

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "activeiter/errors.hpp"
#include "activeiter/hetnet.hpp"

namespace activeiter {

/// How free labels are seeded before the first ridge fit.
///   Zero          all free labels 0 (plain positive-unlabeled start)
///   One           all free labels 1
///   WarmMatching  fit on the Zero start, then greedily match every free link
///                 with a positive score, ignoring tau_pos for this one pass
enum class LabelInit : std::uint8_t { Zero, One, WarmMatching };

inline std::string to_string(LabelInit i) {
  switch (i) {
    case LabelInit::Zero: return "zero";
    case LabelInit::One: return "one";
    case LabelInit::WarmMatching: return "warm-matching";
  }
  return "?";
}

inline LabelInit parse_label_init(const std::string& s) {
  if (s == "zero") return LabelInit::Zero;
  if (s == "one") return LabelInit::One;
  if (s == "warm-matching" || s == "warm") return LabelInit::WarmMatching;
  throw Error("unknown label init '" + s + "'");
}

struct SolverConfig {
  double lambda = 0.1;       // ridge coefficient; the closed form uses c = 1 / lambda
  double tau_pos = 0.5;      // minimum score for an inferred positive
  int max_iterations = 20;
  double tolerance = 0.0;    // stop once ||y_i - y_{i-1}||_1 <= tolerance
  LabelInit init = LabelInit::WarmMatching;

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw Error("lambda must be > 0");
    if (!(tau_pos > 0.0 && tau_pos < 1.0)) throw Error("tau_pos must lie in (0, 1)");
    if (max_iterations < 1) throw Error("max_iterations must be >= 1");
    if (tolerance < 0.0) throw Error("tolerance must be >= 0");
  }
};

enum class Provenance : std::uint8_t { Inferred, Known, Queried };

/// Per-link labels with where each one came from. Known and queried labels
/// are immutable for the solver.
struct LabelState {
  std::vector<Provenance> provenance;
  std::vector<std::uint8_t> y;

  LabelState() = default;
  explicit LabelState(std::size_t n) : provenance(n, Provenance::Inferred), y(n, 0) {}

  std::size_t size() const noexcept { return y.size(); }
  bool fixed(LinkId l) const { return provenance[l] != Provenance::Inferred; }

  void set_known_positive(LinkId l) {
    provenance.at(l) = Provenance::Known;
    y[l] = 1;
  }
  void set_queried(LinkId l, bool positive) {
    provenance.at(l) = Provenance::Queried;
    y[l] = positive ? 1 : 0;
  }
};

inline LabelState initial_labels(std::size_t links, const std::vector<LinkId>& known_positives) {
  LabelState s(links);
  for (auto l : known_positives) s.set_known_positive(l);
  return s;
}

/// Closed-form ridge fit w = c (I + c X^T X)^{-1} X^T y. The Cholesky factor
/// depends only on X and is computed once.
class RidgeSolver {
 public:
  RidgeSolver(const Eigen::MatrixXd& X, double lambda) : c_(1.0 / lambda), xt_(X.transpose()) {
    if (!(lambda > 0.0)) throw NumericalError("ridge coefficient must be positive");
    if (!X.allFinite()) throw NumericalError("feature matrix has non-finite entries");
    const auto d = X.cols();
    system_ = Eigen::MatrixXd::Identity(d, d);
    system_.noalias() += c_ * (xt_ * X);
    llt_.compute(system_);
    if (llt_.info() != Eigen::Success) {
      throw NumericalError("I + c X^T X is not positive definite");
    }
  }

  Eigen::VectorXd fit(const Eigen::VectorXd& y) const {
    if (y.size() != xt_.cols()) throw Error("label vector length does not match X");
    Eigen::VectorXd rhs = c_ * (xt_ * y);
    return llt_.solve(rhs);
  }

  Eigen::VectorXd fit(const std::vector<std::uint8_t>& y) const {
    Eigen::VectorXd v(static_cast<Eigen::Index>(y.size()));
    for (std::size_t i = 0; i < y.size(); ++i) v(static_cast<Eigen::Index>(i)) = y[i];
    return fit(v);
  }

  /// ||(I + c X^T X) w - c X^T y||_inf
  double residual(const Eigen::VectorXd& w, const Eigen::VectorXd& y) const {
    return (system_ * w - c_ * (xt_ * y)).cwiseAbs().maxCoeff();
  }

  double c() const noexcept { return c_; }

 private:
  double c_;
  Eigen::MatrixXd xt_;
  Eigen::MatrixXd system_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
};

inline Eigen::VectorXd fit_weights(const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                                   double lambda) {
  return RidgeSolver(X, lambda).fit(y);
}

inline double objective_value(const Eigen::MatrixXd& X, const Eigen::VectorXd& w,
                              const Eigen::VectorXd& y, double lambda) {
  return (X * w - y).squaredNorm() + lambda * w.squaredNorm();
}

inline Eigen::VectorXd to_vector(const std::vector<std::uint8_t>& y) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(y.size()));
  for (std::size_t i = 0; i < y.size(); ++i) v(static_cast<Eigen::Index>(i)) = y[i];
  return v;
}

/// Throws ConstraintError if the fixed positives share an endpoint.
inline void check_fixed_one_to_one(const CandidateLinkSpace& space, const LabelState& labels) {
  std::vector<char> used1(space.users1(), 0), used2(space.users2(), 0);
  for (LinkId l = 0; l < labels.size(); ++l) {
    if (!labels.fixed(l) || !labels.y[l]) continue;
    const auto& link = space[l];
    if (used1[link.user1]++ || used2[link.user2]++) {
      throw ConstraintError("fixed positive labels violate one-to-one at link " +
                            std::to_string(l));
    }
  }
}

/// Greedy constrained rounding of the scores. Free links are visited in
/// descending score (ascending id on ties) and become positive when the
/// score reaches tau_pos and neither endpoint already carries a positive.
inline std::vector<std::uint8_t> greedy_label_assignment(const Eigen::VectorXd& scores,
                                                         const CandidateLinkSpace& space,
                                                         const LabelState& fixed,
                                                         double tau_pos) {
  const auto n = space.size();
  if (static_cast<std::size_t>(scores.size()) != n || fixed.size() != n) {
    throw Error("score/label vectors do not match the candidate space");
  }
  if (!scores.allFinite()) throw NumericalError("non-finite link scores");
  check_fixed_one_to_one(space, fixed);

  std::vector<std::uint8_t> y(n, 0);
  std::vector<char> used1(space.users1(), 0), used2(space.users2(), 0);
  std::vector<LinkId> free;
  for (LinkId l = 0; l < n; ++l) {
    if (fixed.fixed(l)) {
      y[l] = fixed.y[l];
      if (y[l]) used1[space[l].user1] = used2[space[l].user2] = 1;
    } else {
      free.push_back(l);
    }
  }
  std::sort(free.begin(), free.end(), [&](LinkId a, LinkId b) {
    if (scores(a) != scores(b)) return scores(a) > scores(b);
    return a < b;
  });
  for (auto l : free) {
    if (scores(l) < tau_pos) break;
    const auto& link = space[l];
    if (used1[link.user1] || used2[link.user2]) continue;
    y[l] = 1;
    used1[link.user1] = used2[link.user2] = 1;
  }
  return y;
}

/// True when no user carries more than one positive label.
inline bool satisfies_degree_bounds(const CandidateLinkSpace& space,
                                    const std::vector<std::uint8_t>& y) {
  std::vector<int> d1(space.users1(), 0), d2(space.users2(), 0);
  for (LinkId l = 0; l < y.size(); ++l) {
    if (!y[l]) continue;
    if (++d1[space[l].user1] > 1 || ++d2[space[l].user2] > 1) return false;
  }
  return true;
}

struct AlignmentState {
  LabelState labels;
  Eigen::VectorXd w;
  Eigen::VectorXd scores;            // X w
  int iterations = 0;
  bool converged = false;
  std::vector<double> delta_trace;   // ||y_i - y_{i-1}||_1 per inner iteration
  std::vector<double> objective_trace;
  std::vector<std::size_t> positive_trace;  // positives after each iteration
};

/// Alternates the ridge fit and greedy rounding until the labels stop
/// changing. Free labels are seeded according to config.init.
inline AlignmentState solve_inner(const RidgeSolver& ridge, const Eigen::MatrixXd& X,
                                  const CandidateLinkSpace& space, const LabelState& labels,
                                  const SolverConfig& config) {
  config.validate();
  if (static_cast<std::size_t>(X.rows()) != space.size() || labels.size() != space.size()) {
    throw Error("feature matrix rows do not match the candidate space");
  }
  check_fixed_one_to_one(space, labels);

  AlignmentState state;
  state.labels = labels;
  if (config.init == LabelInit::One) {
    for (LinkId l = 0; l < labels.size(); ++l) {
      if (!labels.fixed(l)) state.labels.y[l] = 1;
    }
  } else {
    for (LinkId l = 0; l < labels.size(); ++l) {
      if (!labels.fixed(l)) state.labels.y[l] = 0;
    }
    if (config.init == LabelInit::WarmMatching) {
      const Eigen::VectorXd s0 = X * ridge.fit(to_vector(state.labels.y));
      state.labels.y = greedy_label_assignment(s0, space, state.labels,
                                               std::numeric_limits<double>::min());
    }
  }

  for (int it = 0; it < config.max_iterations; ++it) {
    const Eigen::VectorXd yv = to_vector(state.labels.y);
    state.w = ridge.fit(yv);
    state.scores = X * state.w;
    auto next = greedy_label_assignment(state.scores, space, state.labels, config.tau_pos);
    if (!satisfies_degree_bounds(space, next)) {
      throw ConstraintError("greedy assignment violated the degree bounds");
    }
    double delta = 0.0;
    for (std::size_t l = 0; l < next.size(); ++l) delta += next[l] != state.labels.y[l];
    state.labels.y = std::move(next);
    state.delta_trace.push_back(delta);
    state.objective_trace.push_back(
        objective_value(X, state.w, to_vector(state.labels.y), config.lambda));
    state.positive_trace.push_back(static_cast<std::size_t>(
        std::count(state.labels.y.begin(), state.labels.y.end(), std::uint8_t{1})));
    state.iterations = it + 1;
    if (delta <= config.tolerance) {
      state.converged = true;
      break;
    }
  }
  if (!state.converged) {
    // Keep w and the scores consistent with the final labels.
    state.w = ridge.fit(to_vector(state.labels.y));
    state.scores = X * state.w;
  }
  return state;
}

inline AlignmentState solve_inner(const Eigen::MatrixXd& X, const CandidateLinkSpace& space,
                                  const LabelState& labels, const SolverConfig& config) {
  return solve_inner(RidgeSolver(X, config.lambda), X, space, labels, config);
}

}  // namespace activeiter
