#include <gtest/gtest.h>

#include <random>

#include "activeiter/solver.hpp"
#include "oracles.hpp"

using namespace activeiter;

namespace {

struct Instance {
  CandidateLinkSpace space;
  Eigen::VectorXd scores;
};

// Random links over small user sets, scores in [-0.2, 1.2].
Instance random_instance(std::mt19937_64& rng, std::size_t max_links) {
  std::uniform_int_distribution<int> users(1, 5);
  const auto n1 = static_cast<std::size_t>(users(rng)), n2 = static_cast<std::size_t>(users(rng));
  Instance in{CandidateLinkSpace(n1, n2), {}};
  std::vector<AnchorLink> all;
  for (UserIndex u = 0; u < n1; ++u)
    for (UserIndex v = 0; v < n2; ++v) all.push_back({u, v});
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(std::min(all.size(), max_links));
  for (const auto& l : all) in.space.add(l);
  std::uniform_real_distribution<double> s(-0.2, 1.2);
  in.scores.resize(static_cast<Eigen::Index>(in.space.size()));
  for (auto& x : in.scores) x = s(rng);
  return in;
}

// Planted instance: feature 0 is high on the hidden matching, noise elsewhere.
struct Planted {
  CandidateLinkSpace space;
  Eigen::MatrixXd X;
  std::vector<std::uint8_t> truth;
};

Planted planted(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(0.0, 0.1);
  Planted p{CandidateLinkSpace(n, n), {}, {}};
  for (UserIndex u = 0; u < n; ++u) p.space.add({u, u});
  for (UserIndex u = 0; u < n; ++u)
    for (UserIndex v = 0; v < n; ++v)
      if (u != v && (u + v) % 3 == 0) p.space.add({u, v});
  p.X.resize(static_cast<Eigen::Index>(p.space.size()), 3);
  p.truth.assign(p.space.size(), 0);
  for (LinkId l = 0; l < p.space.size(); ++l) {
    const bool pos = p.space[l].user1 == p.space[l].user2;
    p.truth[l] = pos;
    p.X(l, 0) = pos ? 0.9 + noise(rng) : noise(rng);
    p.X(l, 1) = noise(rng);
    p.X(l, 2) = 1.0;
  }
  return p;
}

}  // namespace

TEST(FitWeights, ZeroFeaturesGiveZeroWeights) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Zero(4, 3);
  Eigen::VectorXd y(4);
  y << 1, 0, 1, 1;
  EXPECT_EQ(fit_weights(X, y, 0.1), Eigen::VectorXd::Zero(3));
}

TEST(FitWeights, ScalarClosedForm) {
  Eigen::MatrixXd X(1, 1);
  X << 1;
  Eigen::VectorXd y(1);
  y << 1;
  EXPECT_DOUBLE_EQ(fit_weights(X, y, 1.0)(0), 0.5);
}

TEST(FitWeights, MatchesIterativeMinimizer) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Eigen::MatrixXd X(50, 8);
  Eigen::VectorXd y(50);
  for (Eigen::Index i = 0; i < 50; ++i) {
    for (Eigen::Index j = 0; j < 8; ++j) X(i, j) = u(rng);
    y(i) = u(rng) < 0.3;
  }
  auto w = fit_weights(X, y, 0.1);
  auto ref = oracle::iterative_ridge(X, y, 0.1);
  EXPECT_LE((w - ref).cwiseAbs().maxCoeff(), 1e-6);
  RidgeSolver s(X, 0.1);
  EXPECT_LE(s.residual(w, y), 1e-8 * (1.0 + (s.c() * X.transpose() * y).cwiseAbs().maxCoeff()));
}

TEST(FitWeights, RejectsBadInput) {
  Eigen::MatrixXd X = Eigen::MatrixXd::Ones(2, 2);
  EXPECT_THROW(RidgeSolver(X, 0.0), NumericalError);
  X(0, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(RidgeSolver(X, 0.1), NumericalError);
}

TEST(Objective, HandValues) {
  Eigen::MatrixXd X(1, 1);
  X << 1;
  Eigen::VectorXd w(1), y(1);
  w << 0;
  y << 0;
  EXPECT_EQ(objective_value(X, w, y, 0.3), 0.0);
  w << 0.5;
  y << 1;
  EXPECT_DOUBLE_EQ(objective_value(X, w, y, 1.0), 0.5);
}

TEST(Objective, FitIsNotBeatenByPerturbations) {
  std::mt19937_64 rng(8);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd X = Eigen::MatrixXd::NullaryExpr(40, 6, [&] { return std::abs(g(rng)); });
  Eigen::VectorXd y = Eigen::VectorXd::NullaryExpr(40, [&] { return g(rng) > 0 ? 1.0 : 0.0; });
  for (double lambda : {0.01, 0.1, 1.0}) {
    auto w = fit_weights(X, y, lambda);
    const double best = objective_value(X, w, y, lambda);
    for (int t = 0; t < 100; ++t) {
      Eigen::VectorXd w2 = w + 0.01 * Eigen::VectorXd::NullaryExpr(6, [&] { return g(rng); });
      EXPECT_LE(best, objective_value(X, w2, y, lambda) + 1e-12);
    }
  }
}

TEST(Greedy, SingleLinkThreshold) {
  CandidateLinkSpace space(1, 1);
  space.add({0, 0});
  LabelState fixed(1);
  EXPECT_EQ(greedy_label_assignment(Eigen::VectorXd::Constant(1, 0.9), space, fixed, 0.5),
            std::vector<std::uint8_t>{1});
  EXPECT_EQ(greedy_label_assignment(Eigen::VectorXd::Constant(1, 0.2), space, fixed, 0.5),
            std::vector<std::uint8_t>{0});
}

TEST(Greedy, SharedUserKeepsHigherScore) {
  CandidateLinkSpace space(1, 2);
  space.add({0, 0});
  space.add({0, 1});
  Eigen::VectorXd s(2);
  s << 0.9, 0.8;
  auto y = greedy_label_assignment(s, space, LabelState(2), 0.5);
  EXPECT_EQ(y, (std::vector<std::uint8_t>{1, 0}));
  std::vector<char> choice;
  const double best = oracle::best_matching_value(space.links(), {0.9, 0.8}, {0, 0}, &choice);
  EXPECT_DOUBLE_EQ(best, 0.9);
  EXPECT_EQ(choice, (std::vector<char>{1, 0}));
}

TEST(Greedy, TiesBrokenByLinkId) {
  CandidateLinkSpace space(1, 3);
  space.add({0, 2});
  space.add({0, 0});
  space.add({0, 1});
  auto y = greedy_label_assignment(Eigen::VectorXd::Constant(3, 0.7), space, LabelState(3), 0.5);
  EXPECT_EQ(y, (std::vector<std::uint8_t>{1, 0, 0}));
}

TEST(Greedy, FixedLabelsRespected) {
  CandidateLinkSpace space(2, 2);
  space.add({0, 0});
  space.add({0, 1});
  space.add({1, 1});
  LabelState fixed(3);
  fixed.set_known_positive(0);
  fixed.set_queried(2, false);
  Eigen::VectorXd s(3);
  s << 0.0, 0.99, 0.99;
  auto y = greedy_label_assignment(s, space, fixed, 0.5);
  EXPECT_EQ(y, (std::vector<std::uint8_t>{1, 0, 0}));
}

TEST(Greedy, ConflictingFixedPositivesRejected) {
  CandidateLinkSpace space(1, 2);
  space.add({0, 0});
  space.add({0, 1});
  LabelState fixed(2);
  fixed.set_known_positive(0);
  fixed.set_queried(1, true);
  EXPECT_THROW(greedy_label_assignment(Eigen::VectorXd::Zero(2), space, fixed, 0.5),
               ConstraintError);
}

TEST(Greedy, NonFiniteScoresRejected) {
  CandidateLinkSpace space(1, 1);
  space.add({0, 0});
  Eigen::VectorXd s(1);
  s << std::numeric_limits<double>::infinity();
  EXPECT_THROW(greedy_label_assignment(s, space, LabelState(1), 0.5), NumericalError);
}

TEST(Greedy, HalfApproximationAndDegreeBounds) {
  std::mt19937_64 rng(21);
  const double tau = 0.5;
  for (int t = 0; t < 300; ++t) {
    auto in = random_instance(rng, 12);
    LabelState fixed(in.space.size());
    std::vector<char> fx(in.space.size(), 0);
    auto y = greedy_label_assignment(in.scores, in.space, fixed, tau);
    ASSERT_TRUE(satisfies_degree_bounds(in.space, y));
    std::vector<double> eligible(in.space.size()), margin(in.space.size());
    double got = 0.0, got_margin = 0.0;
    for (LinkId l = 0; l < in.space.size(); ++l) {
      eligible[l] = in.scores(l) >= tau ? in.scores(l) : 0.0;
      margin[l] = in.scores(l) - tau;
      if (y[l]) got += in.scores(l), got_margin += margin[l];
    }
    EXPECT_GE(got, 0.5 * oracle::best_matching_value(in.space.links(), eligible, fx) - 1e-12);
    EXPECT_GE(got_margin, 0.5 * oracle::best_matching_value(in.space.links(), margin, fx) - 1e-12);
  }
}

TEST(Greedy, MaximalAmongEligible) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 100; ++t) {
    auto in = random_instance(rng, 25);
    auto y = greedy_label_assignment(in.scores, in.space, LabelState(in.space.size()), 0.5);
    for (LinkId l = 0; l < in.space.size(); ++l) {
      if (y[l] || in.scores(l) < 0.5) continue;
      bool blocked = false;
      for (auto c : in.space.conflicts(l)) blocked |= y[c] == 1;
      EXPECT_TRUE(blocked);
    }
  }
}

TEST(Greedy, Deterministic) {
  std::mt19937_64 rng(77);
  auto in = random_instance(rng, 25);
  auto a = greedy_label_assignment(in.scores, in.space, LabelState(in.space.size()), 0.5);
  auto b = greedy_label_assignment(in.scores, in.space, LabelState(in.space.size()), 0.5);
  EXPECT_EQ(a, b);
}

TEST(SolveInner, AllFixedConvergesImmediately) {
  auto p = planted(6, 1);
  LabelState labels(p.space.size());
  for (LinkId l = 0; l < p.space.size(); ++l) {
    if (p.truth[l]) labels.set_known_positive(l);
    else labels.set_queried(l, false);
  }
  auto st = solve_inner(p.X, p.space, labels, SolverConfig{});
  EXPECT_TRUE(st.converged);
  EXPECT_EQ(st.iterations, 1);
  EXPECT_TRUE(st.w.isApprox(fit_weights(p.X, to_vector(labels.y), 0.1)));
  EXPECT_EQ(st.labels.y, labels.y);
}

TEST(SolveInner, RecoversPlantedMatching) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    auto p = planted(12, seed);
    auto labels = initial_labels(p.space.size(), {0, 1, 2, 3});
    auto st = solve_inner(p.X, p.space, labels, SolverConfig{});
    EXPECT_TRUE(st.converged);
    EXPECT_EQ(st.labels.y, p.truth);
    ASSERT_FALSE(st.delta_trace.empty());
    EXPECT_EQ(st.delta_trace.back(), 0.0);
    for (double d : st.delta_trace) {
      EXPECT_GE(d, 0.0);
      EXPECT_EQ(d, std::floor(d));
    }
    EXPECT_EQ(st.positive_trace.back(), 12u);
  }
}

TEST(SolveInner, EveryInitModeRespectsConstraints) {
  auto p = planted(10, 3);
  auto labels = initial_labels(p.space.size(), {0, 1, 2});
  for (auto init : {LabelInit::Zero, LabelInit::One, LabelInit::WarmMatching}) {
    SolverConfig cfg;
    cfg.init = init;
    auto st = solve_inner(p.X, p.space, labels, cfg);
    EXPECT_TRUE(satisfies_degree_bounds(p.space, st.labels.y)) << to_string(init);
    for (LinkId l : {0u, 1u, 2u}) EXPECT_EQ(st.labels.y[l], 1);
    EXPECT_EQ(parse_label_init(to_string(init)), init);
  }
  EXPECT_THROW(parse_label_init("sometimes"), Error);
}

TEST(SolveInner, ZeroInitWithoutPositiveEvidenceStaysEmpty) {
  auto p = planted(8, 2);
  SolverConfig cfg;
  cfg.init = LabelInit::Zero;
  auto st = solve_inner(p.X, p.space, LabelState(p.space.size()), cfg);
  EXPECT_EQ(st.positive_trace.back(), 0u);
  EXPECT_EQ(st.iterations, 1);
}

TEST(SolveInner, FitStepNeverIncreasesObjective) {
  auto p = planted(10, 9);
  auto labels = initial_labels(p.space.size(), {0, 1, 2});
  auto st = solve_inner(p.X, p.space, labels, SolverConfig{});
  auto yv = to_vector(st.labels.y);
  const double at_fit = objective_value(p.X, fit_weights(p.X, yv, 0.1), yv, 0.1);
  EXPECT_LE(at_fit, objective_value(p.X, Eigen::VectorXd::Zero(3), yv, 0.1));
}

TEST(SolveInner, Deterministic) {
  auto p = planted(10, 4);
  auto labels = initial_labels(p.space.size(), {0, 1});
  auto a = solve_inner(p.X, p.space, labels, SolverConfig{});
  auto b = solve_inner(p.X, p.space, labels, SolverConfig{});
  EXPECT_EQ(a.labels.y, b.labels.y);
  EXPECT_EQ(a.w, b.w);
}

TEST(SolveInner, ConflictingFixedLabelsRejected) {
  auto p = planted(4, 1);
  LabelState labels(p.space.size());
  labels.set_known_positive(0);
  auto other = *p.space.find({0, 3});
  labels.set_known_positive(other);
  EXPECT_THROW(solve_inner(p.X, p.space, labels, SolverConfig{}), ConstraintError);
}

TEST(SolverConfig, Validation) {
  SolverConfig c;
  c.lambda = 0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.tau_pos = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.max_iterations = 0;
  EXPECT_THROW(c.validate(), Error);
}
