#include <gtest/gtest.h>

#include <random>
#include <set>

#include "activeiter/active.hpp"

using namespace activeiter;

namespace {

// Three links around users (0,0): l = (0,0) negative, l1 = (0,1) and
// l2 = (1,0) inferred positives.
struct Triangle {
  CandidateLinkSpace space{2, 2};
  AlignmentState state;
  LinkId l, l1, l2;

  Triangle(double s, double s1, double s2) {
    l = space.add({0, 0});
    l1 = space.add({0, 1});
    l2 = space.add({1, 0});
    state.labels = LabelState(3);
    state.labels.y = {0, 1, 1};
    state.scores.resize(3);
    state.scores << s, s1, s2;
  }
};

struct Random {
  CandidateLinkSpace space;
  Eigen::MatrixXd X;
  std::vector<char> truth;
};

// n x n users, diagonal is the truth; every other pair with prob 0.3.
Random random_problem(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Random r{CandidateLinkSpace(n, n), {}, {}};
  for (UserIndex i = 0; i < n; ++i) r.space.add({i, i});
  for (UserIndex i = 0; i < n; ++i)
    for (UserIndex j = 0; j < n; ++j)
      if (i != j && u(rng) < 0.3) r.space.add({i, j});
  r.X.resize(static_cast<Eigen::Index>(r.space.size()), 4);
  r.truth.assign(r.space.size(), 0);
  for (LinkId l = 0; l < r.space.size(); ++l) {
    const bool pos = r.space[l].user1 == r.space[l].user2;
    r.truth[l] = pos;
    r.X(l, 0) = pos ? 0.3 + 0.7 * u(rng) : 0.6 * u(rng);
    r.X(l, 1) = pos ? u(rng) : 0.8 * u(rng);
    r.X(l, 2) = u(rng);
    r.X(l, 3) = 1.0;
  }
  return r;
}

LabelState first_known(const Random& r, std::size_t k) {
  std::vector<LinkId> known;
  for (LinkId l = 0; l < k; ++l) known.push_back(l);
  return initial_labels(r.space.size(), known);
}

AlignmentState blank_state(std::size_t n) {
  AlignmentState s;
  s.labels = LabelState(n);
  s.scores = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  return s;
}

std::vector<QueryCandidate> fake_candidates(std::size_t n) {
  std::vector<QueryCandidate> c;
  for (LinkId l = 0; l < n; ++l) c.push_back({l, 0, 0, 1.0 - 0.1 * l});
  return c;
}

}  // namespace

TEST(CandidateSet, NearTieAgainstWeakPositive) {
  Triangle t(0.78, 0.80, 0.30);
  auto c = build_candidate_set(t.state, t.space, 0.05, 0.1);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].link, t.l);
  EXPECT_EQ(c[0].similar, t.l1);
  EXPECT_EQ(c[0].weak, t.l2);
  EXPECT_NEAR(c[0].rank_key, 0.48, 1e-12);
  EXPECT_TRUE(is_valid_candidate(c[0], t.state, t.space, 0.05, 0.1));
}

TEST(CandidateSet, SimilarityThresholdExcludes) {
  Triangle t(0.78, 0.90, 0.30);
  EXPECT_TRUE(build_candidate_set(t.state, t.space, 0.05, 0.1).empty());
}

TEST(CandidateSet, MarginAndPositivityRequired) {
  Triangle close(0.78, 0.80, 0.72);
  EXPECT_TRUE(build_candidate_set(close.state, close.space, 0.05, 0.1).empty());
  Triangle negative(0.78, 0.80, -0.1);
  EXPECT_TRUE(build_candidate_set(negative.state, negative.space, 0.05, 0.1).empty());
}

TEST(CandidateSet, NoInferredPositives) {
  Triangle t(0.78, 0.80, 0.30);
  t.state.labels.y = {0, 0, 0};
  EXPECT_TRUE(build_candidate_set(t.state, t.space, 0.05, 0.1).empty());
}

TEST(CandidateSet, QueriedLinksAreNotWitnesses) {
  Triangle t(0.78, 0.80, 0.30);
  t.state.labels.set_queried(t.l1, true);
  EXPECT_TRUE(build_candidate_set(t.state, t.space, 0.05, 0.1).empty());
}

TEST(CandidateSet, SymmetricWitnessesOnOneEndpoint) {
  CandidateLinkSpace space(1, 3);
  space.add({0, 0});
  space.add({0, 1});
  space.add({0, 2});
  AlignmentState st;
  st.labels = LabelState(3);
  st.labels.y = {0, 1, 1};
  st.scores.resize(3);
  st.scores << 0.78, 0.80, 0.30;
  EXPECT_TRUE(build_candidate_set(st, space, 0.05, 0.1, false).empty());
  auto c = build_candidate_set(st, space, 0.05, 0.1, true);
  ASSERT_EQ(c.size(), 1u);
  EXPECT_NEAR(c[0].rank_key, 0.48, 1e-12);
}

TEST(CandidateSet, EveryCandidateValidAndSorted) {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    auto r = random_problem(12, seed);
    auto st = solve_inner(r.X, r.space, first_known(r, 4), SolverConfig{});
    // Widen thresholds so the set is not trivially empty.
    auto c = build_candidate_set(st, r.space, 0.3, 0.01);
    for (std::size_t i = 0; i < c.size(); ++i) {
      EXPECT_TRUE(is_valid_candidate(c[i], st, r.space, 0.3, 0.01));
      if (i) {
        EXPECT_GE(c[i - 1].rank_key, c[i].rank_key);
      }
    }
  }
}

TEST(SelectBatch, TopFiveByKey) {
  auto st = blank_state(10);
  Budget b{100, 0, 5};
  auto batch = select_query_batch(fake_candidates(8), st, b, true, 0.5);
  ASSERT_EQ(batch.size(), 5u);
  for (LinkId i = 0; i < 5; ++i) {
    EXPECT_EQ(batch[i].link, i);
    EXPECT_EQ(batch[i].source, QuerySource::Strategy);
  }
}

TEST(SelectBatch, ShortListWithoutFallback) {
  auto st = blank_state(10);
  Budget b{100, 0, 5};
  EXPECT_EQ(select_query_batch(fake_candidates(3), st, b, false, 0.5).size(), 3u);
}

TEST(SelectBatch, BudgetCap) {
  auto st = blank_state(10);
  Budget b{100, 98, 5};
  EXPECT_EQ(select_query_batch(fake_candidates(8), st, b, true, 0.5).size(), 2u);
  b.spent = 100;
  EXPECT_THROW(select_query_batch(fake_candidates(8), st, b, true, 0.5), BudgetExhausted);
}

TEST(SelectBatch, FallbackOrder) {
  auto st = blank_state(6);
  st.scores << 0.1, 0.4, 0.3, 0.9, 0.45, 0.2;
  st.labels.y = {0, 0, 0, 1, 0, 1};
  st.labels.set_queried(4, false);
  Budget b{100, 0, 5};
  auto batch = select_query_batch({}, st, b, true, 0.5);
  std::vector<LinkId> got;
  for (const auto& i : batch) {
    got.push_back(i.link);
    EXPECT_EQ(i.source, QuerySource::Fallback);
    EXPECT_EQ(i.rank_key, st.scores(i.link));
  }
  // negatives 1, 2, 0 by score, then positives 5 (|0.2-0.5|) before 3 (|0.9-0.5|)
  EXPECT_EQ(got, (std::vector<LinkId>{1, 2, 0, 5, 3}));
}

TEST(ApplyAnswers, SpendsBudgetPerAnswer) {
  LabelState labels(4);
  Budget b{10, 0, 5};
  std::vector<BatchItem> batch{{0, 0, QuerySource::Strategy}, {1, 0, QuerySource::Strategy}};
  EXPECT_EQ(apply_answers(labels, b, batch, {{0, false}, {1, true}}), 2u);
  EXPECT_EQ(b.spent, 2u);
  EXPECT_EQ(labels.provenance[0], Provenance::Queried);
  EXPECT_EQ(labels.y[0], 0);
  EXPECT_EQ(labels.y[1], 1);
}

TEST(ApplyAnswers, SingleNegative) {
  LabelState labels(2);
  Budget b{10, 0, 5};
  apply_answers(labels, b, {{1, 0, QuerySource::Strategy}}, {{1, false}});
  EXPECT_EQ(b.remaining(), 9u);
  EXPECT_TRUE(labels.fixed(1));
}

TEST(ApplyAnswers, Errors) {
  LabelState labels(3);
  Budget b{10, 0, 5};
  std::vector<BatchItem> batch{{0, 0, QuerySource::Strategy}};
  EXPECT_THROW(apply_answers(labels, b, batch, {{7, true}}), UnknownLinkError);
  EXPECT_THROW(apply_answers(labels, b, batch, {{2, true}}), UnknownLinkError);
  EXPECT_THROW(apply_answers(labels, b, batch, {{0, true}, {0, false}}), RepeatedQueryError);
  apply_answers(labels, b, batch, {{0, true}});
  EXPECT_THROW(apply_answers(labels, b, batch, {{0, true}}), RepeatedQueryError);
  EXPECT_EQ(b.spent, 1u);
}

TEST(ApplyAnswers, SkipCostsNothing) {
  LabelState labels(2);
  Budget b{10, 0, 5};
  EXPECT_EQ(apply_answers(labels, b, {{0, 0, QuerySource::Strategy}}, {{0, std::nullopt}}), 0u);
  EXPECT_EQ(b.spent, 0u);
  EXPECT_FALSE(labels.fixed(0));
}

TEST(ApplyAnswers, PositiveAnswerEvictsConflictingPositive) {
  CandidateLinkSpace space(3, 3);
  space.add({2, 2});  // known
  space.add({0, 0});
  space.add({0, 1});
  space.add({1, 1});
  Eigen::MatrixXd X(4, 2);
  X << 1, 1, 1, 1, 0.2, 1, 0.9, 1;
  auto init = initial_labels(4, {0});
  auto before = solve_inner(X, space, init, SolverConfig{});
  ASSERT_EQ(before.labels.y[1], 1);
  LabelState labels = before.labels;
  Budget b{5, 0, 5};
  apply_answers(labels, b, {{2, 0, QuerySource::Strategy}}, {{2, true}});
  auto after = solve_inner(X, space, labels, SolverConfig{});
  EXPECT_EQ(after.labels.y[2], 1);
  EXPECT_EQ(after.labels.y[1], 0);
  EXPECT_EQ(after.labels.y[3], 0);
}

TEST(RandomStrategy, ReproducibleAndFresh) {
  LabelState labels(20);
  labels.set_queried(3, false);
  labels.set_known_positive(4);
  Budget b{50, 0, 5};
  std::mt19937_64 r1(9), r2(9);
  auto a = random_query_strategy(labels, b, r1);
  auto c = random_query_strategy(labels, b, r2);
  EXPECT_EQ(a, c);
  EXPECT_EQ(a.size(), 5u);
  EXPECT_EQ(std::set<LinkId>(a.begin(), a.end()).size(), 5u);
  for (auto l : a) EXPECT_TRUE(l != 3 && l != 4);
}

TEST(RandomStrategy, SmallPool) {
  LabelState labels(3);
  Budget b{50, 0, 5};
  std::mt19937_64 rng(1);
  EXPECT_EQ(random_query_strategy(labels, b, rng).size(), 3u);
  b.spent = 50;
  EXPECT_THROW(random_query_strategy(labels, b, rng), BudgetExhausted);
}

TEST(SimulatedOracle, AnswersFromTruth) {
  CandidateLinkSpace space(2, 2);
  space.add({0, 0});
  space.add({0, 1});
  auto o = simulated_oracle({{0, 0}, {1, 1}}, space);
  EXPECT_EQ(o.answer(0), std::optional<bool>(true));
  EXPECT_EQ(o.answer(1), std::optional<bool>(false));
  EXPECT_EQ(o.answer(0), std::optional<bool>(true));
}

TEST(RunActive, ZeroBudgetIsPlainSolve) {
  auto r = random_problem(15, 3);
  auto init = first_known(r, 5);
  ActiveConfig ac;
  ac.budget = 0;
  SimulatedOracle oracle(r.truth);
  auto res = run_active_alignment(r.space, r.X, init, SolverConfig{}, ac, oracle);
  auto plain = solve_inner(r.X, r.space, init, SolverConfig{});
  EXPECT_EQ(res.state.labels.y, plain.labels.y);
  EXPECT_EQ(res.state.w, plain.w);
  EXPECT_TRUE(res.query_log.empty());
  EXPECT_EQ(res.rounds, 0u);
}

TEST(RunActive, TenRoundsForFiftyByFive) {
  auto r = random_problem(20, 4);
  ActiveConfig ac;
  ac.budget = 50;
  ac.batch_size = 5;
  SimulatedOracle oracle(r.truth);
  auto res = run_active_alignment(r.space, r.X, first_known(r, 5), SolverConfig{}, ac, oracle);
  EXPECT_EQ(res.rounds, 10u);
  EXPECT_EQ(res.query_log.size(), 50u);
  EXPECT_EQ(res.budget.spent, 50u);
  std::set<LinkId> seen;
  for (const auto& q : res.query_log) {
    EXPECT_TRUE(seen.insert(q.link).second) << "link queried twice";
    EXPECT_EQ(q.answer, r.truth[q.link] != 0);
    EXPECT_EQ(res.state.labels.provenance[q.link], Provenance::Queried);
    EXPECT_EQ(res.state.labels.y[q.link], r.truth[q.link]);
  }
  EXPECT_EQ(res.delta_traces.size(), 11u);
  EXPECT_TRUE(satisfies_degree_bounds(r.space, res.state.labels.y));
}

TEST(RunActive, Deterministic) {
  auto r = random_problem(20, 5);
  for (auto strat : {QueryStrategy::Conflict, QueryStrategy::Random}) {
    ActiveConfig ac;
    ac.strategy = strat;
    SimulatedOracle o1(r.truth), o2(r.truth);
    auto a = run_active_alignment(r.space, r.X, first_known(r, 5), SolverConfig{}, ac, o1);
    auto b = run_active_alignment(r.space, r.X, first_known(r, 5), SolverConfig{}, ac, o2);
    ASSERT_EQ(a.query_log.size(), b.query_log.size());
    for (std::size_t i = 0; i < a.query_log.size(); ++i)
      EXPECT_EQ(to_json(a.query_log[i]), to_json(b.query_log[i]));
    EXPECT_EQ(a.state.labels.y, b.state.labels.y);
  }
}

TEST(RunActive, StopsWhenNothingLeft) {
  auto r = random_problem(3, 6);
  ActiveConfig ac;
  ac.budget = 1000;
  SimulatedOracle oracle(r.truth);
  auto res = run_active_alignment(r.space, r.X, first_known(r, 1), SolverConfig{}, ac, oracle);
  EXPECT_EQ(res.budget.spent, r.space.size() - 1);
  EXPECT_TRUE(queryable_links(res.state.labels).empty());
}

namespace {

class SkipFirst final : public Oracle {
 public:
  explicit SkipFirst(std::vector<char> t) : truth_(std::move(t)) {}
  std::optional<bool> answer(LinkId l) override {
    if (skipped_.insert(l).second) return std::nullopt;
    return truth_[l] != 0;
  }

 private:
  std::vector<char> truth_;
  std::set<LinkId> skipped_;
};

}  // namespace

TEST(Session, SkipKeepsBudgetAndRequeues) {
  auto r = random_problem(15, 7);
  ActiveConfig ac;
  ac.budget = 10;
  ActiveSession s(r.space, r.X, first_known(r, 3), SolverConfig{}, ac);
  ASSERT_FALSE(s.done());
  auto first = s.pending();
  std::vector<Answer> skips;
  for (const auto& b : first) skips.push_back({b.link, std::nullopt});
  s.submit(skips);
  EXPECT_EQ(s.budget().spent, 0u);
  EXPECT_EQ(s.round(), 2u);
  ASSERT_EQ(s.pending().size(), first.size());
  for (std::size_t i = 0; i < first.size(); ++i) EXPECT_EQ(s.pending()[i].link, first[i].link);
}

TEST(Session, PartialAnswersWaitForTheRest) {
  auto r = random_problem(15, 8);
  ActiveSession s(r.space, r.X, first_known(r, 3), SolverConfig{}, ActiveConfig{});
  auto batch = s.pending();
  ASSERT_GE(batch.size(), 2u);
  s.submit({{batch[0].link, r.truth[batch[0].link] != 0}});
  EXPECT_EQ(s.round(), 1u);
  EXPECT_EQ(s.unresolved().size(), batch.size() - 1);
  EXPECT_THROW(s.submit({{batch[0].link, true}}), RepeatedQueryError);
  std::vector<Answer> rest;
  for (std::size_t i = 1; i < batch.size(); ++i) rest.push_back({batch[i].link, false});
  s.submit(rest);
  EXPECT_EQ(s.round(), 2u);
  EXPECT_EQ(s.budget().spent, batch.size());
}

TEST(Session, CheckpointRoundTrip) {
  auto r = random_problem(15, 9);
  ActiveConfig ac;
  ac.strategy = QueryStrategy::Random;
  ActiveSession s(r.space, r.X, first_known(r, 3), SolverConfig{}, ac);
  auto batch = s.pending();
  s.submit({{batch[0].link, true}});
  auto j = s.checkpoint();
  auto back = ActiveSession::restore(r.space, r.X, SolverConfig{}, ac, nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.checkpoint(), j);
  // Both copies evolve identically from here.
  std::vector<Answer> rest;
  for (auto l : s.unresolved()) rest.push_back({l, r.truth[l] != 0});
  s.submit(rest);
  back.submit(rest);
  EXPECT_EQ(back.checkpoint().dump(), s.checkpoint().dump());
}

TEST(Session, RejectsAnswersAfterDone) {
  auto r = random_problem(5, 10);
  ActiveConfig ac;
  ac.budget = 0;
  ActiveSession s(r.space, r.X, first_known(r, 1), SolverConfig{}, ac);
  EXPECT_TRUE(s.done());
  EXPECT_THROW(s.submit({{0, true}}), Error);
}

TEST(ActiveConfig, Validation) {
  ActiveConfig c;
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), Error);
}
