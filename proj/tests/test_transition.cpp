#include <catch2/catch_amalgamated.hpp>

#include "factgen/transition.hpp"

#include <cmath>
#include <random>

using namespace factgen;

namespace {

// Sets A to the identity so that A*B equals B: logit rows can be written
// directly into B.
TransitionParams identity_params(ParamStore& store, int k, std::mt19937_64& rng) {
  TransitionParams tp = TransitionParams::create(store, k, k, rng);
  for (Tensor a : {tp.a_in, tp.a_out}) {
    fill_constant(a, 0.0);
    for (int i = 0; i < k; ++i) a.values()[i * k + i] = 1.0;
  }
  fill_constant(tp.b_in, 0.0);
  fill_constant(tp.b_out, 0.0);
  return tp;
}

double row_sum(const Tensor& row) {
  double s = 0.0;
  for (double v : row.values()) s += v;
  return s;
}

}  // namespace

TEST_CASE("transition_row masking") {
  std::mt19937_64 rng(1);
  ParamStore store;
  TransitionParams tp = identity_params(store, 5, rng);

  SECTION("single unmasked target is forced") {
    MaskContext ctx = MaskContext::from_predicates({1}, 5);
    Tensor row = transition_row(tp, ParamSet::kIn, PredicateVocab::kStart, ctx);
    REQUIRE(row.at(0, 1) == 1.0);
    REQUIRE(row.at(0, 0) == 0.0);
    REQUIRE(row.at(0, 2) == 0.0);
  }
  SECTION("zero logits split mass evenly over q") {
    MaskContext ctx = MaskContext::from_predicates({1, 2}, 5);
    Tensor row = transition_row(tp, ParamSet::kIn, PredicateVocab::kStart, ctx);
    REQUIRE(row.at(0, 1) == Catch::Approx(0.5));
    REQUIRE(row.at(0, 2) == Catch::Approx(0.5));
    REQUIRE(row.at(0, 3) == 0.0);
  }
  SECTION("arbitrary weights match a hand-computed masked softmax") {
    // write logits into B_in row 0 (the start row)
    std::vector<double> logits = {0.3, -1.2, 2.0, 0.7, -0.5};
    for (int j = 0; j < 5; ++j) tp.b_in.values()[0 * 5 + j] = logits[j];
    MaskContext ctx = MaskContext::from_predicates({1, 2, 3}, 5);
    Tensor row = transition_row(tp, ParamSet::kIn, PredicateVocab::kStart, ctx);
    double z = std::exp(logits[1]) + std::exp(logits[2]) + std::exp(logits[3]);
    REQUIRE(row.at(0, 1) == Catch::Approx(std::exp(logits[1]) / z).epsilon(1e-12));
    REQUIRE(row.at(0, 2) == Catch::Approx(std::exp(logits[2]) / z).epsilon(1e-12));
    REQUIRE(row.at(0, 3) == Catch::Approx(std::exp(logits[3]) / z).epsilon(1e-12));
    REQUIRE(row.at(0, 0) == 0.0);
    REQUIRE(row.at(0, 4) == 0.0);
    REQUIRE(row_sum(row) == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("start column is always masked") {
    MaskContext ctx = MaskContext::from_predicates({1, 2}, 5);
    Tensor row = transition_row(tp, ParamSet::kIn, 1, ctx);
    REQUIRE(row.at(0, 0) == 0.0);
    REQUIRE(row_sum(row) == Catch::Approx(1.0).margin(1e-12));
  }
  SECTION("from-predicate outside q rejected") {
    MaskContext ctx = MaskContext::from_predicates({1, 2}, 5);
    REQUIRE_THROWS(transition_row(tp, ParamSet::kIn, 4, ctx));
  }
}

TEST_CASE("softmax rows are shift invariant") {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> logits(6);
  for (auto& v : logits) v = dist(rng);
  std::vector<std::uint8_t> allowed = {0, 1, 1, 0, 1, 1};
  Tensor base = masked_log_softmax(Tensor::from_values({6}, logits), allowed);
  std::vector<double> shifted = logits;
  for (auto& v : shifted) v += 7.25;
  Tensor moved = masked_log_softmax(Tensor::from_values({6}, shifted), allowed);
  for (int i = 0; i < 6; ++i)
    if (allowed[i]) REQUIRE(base.at(i) == Catch::Approx(moved.at(i)).margin(1e-12));
}

TEST_CASE("enumerate_states") {
  SECTION("counts follow permutation sums") {
    auto count_for = [](int n, int cap) {
      std::vector<int> preds;
      for (int i = 1; i <= n; ++i) preds.push_back(i);
      MaskContext ctx = MaskContext::from_predicates(preds, n + 1);
      return enumerate_states(ctx, cap).size();
    };
    REQUIRE(count_for(1, 3) == 1);
    REQUIRE(count_for(3, 3) == 15);   // 3 + 6 + 6
    REQUIRE(count_for(7, 3) == 259);  // 7 + 42 + 210
  }
  SECTION("deterministic order: by length then lexicographic") {
    MaskContext ctx = MaskContext::from_predicates({2, 1}, 4);
    auto states = enumerate_states(ctx, 2);
    REQUIRE(states == std::vector<StateCandidate>{
                          {1}, {2}, {1, 2}, {2, 1}});
  }
}

TEST_CASE("state_prob") {
  std::mt19937_64 rng(3);
  SECTION("singleton with a single predicate is forced to 1") {
    ParamStore store;
    TransitionParams tp = TransitionParams::create(store, 4, 8, rng);
    MaskContext ctx = MaskContext::from_predicates({2}, 4);
    REQUIRE(state_prob({2}, ctx, tp).value() == 1.0);
  }
  SECTION("pair unrolls to a product of rows") {
    ParamStore store;
    TransitionParams tp = TransitionParams::create(store, 4, 8, rng);
    MaskContext ctx = MaskContext::from_predicates({1, 2}, 4);
    Tensor row_start = transition_row(tp, ParamSet::kIn, PredicateVocab::kStart, ctx);
    Tensor row_1 = transition_row(tp, ParamSet::kIn, 1, ctx);
    const double expect = row_start.at(0, 1) * row_1.at(0, 2);
    REQUIRE(state_prob({1, 2}, ctx, tp).value() == Catch::Approx(expect).epsilon(1e-12));
  }
  SECTION("sum over full-length permutations matches explicit enumeration") {
    ParamStore store;
    TransitionParams tp = TransitionParams::create(store, 5, 6, rng);
    MaskContext ctx = MaskContext::from_predicates({1, 2, 3}, 5);
    double via_states = 0.0;
    for (const auto& st : enumerate_states(ctx, 3))
      if (st.size() == 3) via_states += state_prob(st, ctx, tp).value();
    // independent enumeration of chain probabilities
    double direct = 0.0;
    std::vector<int> preds = {1, 2, 3};
    std::sort(preds.begin(), preds.end());
    do {
      double p = transition_row(tp, ParamSet::kIn, 0, ctx).at(0, preds[0]);
      p *= transition_row(tp, ParamSet::kIn, preds[0], ctx).at(0, preds[1]);
      p *= transition_row(tp, ParamSet::kIn, preds[1], ctx).at(0, preds[2]);
      direct += p;
    } while (std::next_permutation(preds.begin(), preds.end()));
    REQUIRE(via_states == Catch::Approx(direct).epsilon(1e-10));
  }
}

TEST_CASE("state_transition_prob composes generation and boundary link") {
  std::mt19937_64 rng(4);
  ParamStore store;
  TransitionParams tp = TransitionParams::create(store, 5, 6, rng);
  MaskContext ctx = MaskContext::from_predicates({1, 2, 3}, 5);
  SECTION("pair of singletons") {
    const double expect =
        state_prob({2}, ctx, tp).value() *
        transition_row(tp, ParamSet::kOut, 1, ctx).at(0, 2);
    REQUIRE(state_transition_prob({1}, {2}, ctx, tp).value() ==
            Catch::Approx(expect).epsilon(1e-12));
  }
  SECTION("chain of three states unrolls") {
    StateCandidate s1 = {1}, s2 = {2, 3}, s3 = {3};
    const double chain = state_prob(s1, ctx, tp).value() *
                         state_transition_prob(s1, s2, ctx, tp).value() *
                         state_transition_prob(s2, s3, ctx, tp).value();
    const double unrolled =
        state_prob(s1, ctx, tp).value() * state_prob(s2, ctx, tp).value() *
        state_prob(s3, ctx, tp).value() *
        transition_row(tp, ParamSet::kOut, 1, ctx).at(0, 2) *
        transition_row(tp, ParamSet::kOut, 3, ctx).at(0, 3);
    REQUIRE(chain == Catch::Approx(unrolled).epsilon(1e-12));
  }
}

TEST_CASE("transition probabilities are differentiable") {
  std::mt19937_64 rng(5);
  ParamStore store;
  TransitionParams tp = TransitionParams::create(store, 4, 6, rng);
  MaskContext ctx = MaskContext::from_predicates({1, 2, 3}, 4);
  SECTION("state_prob gradient") {
    auto f = [&] { return neg(state_prob({1, 2, 3}, ctx, tp)); };
    REQUIRE(grad_check(store, f, 1e-5, 120) <= 1e-4);
  }
  SECTION("state_transition_prob gradient") {
    auto f = [&] { return neg(state_transition_prob({1, 2}, {3, 1}, ctx, tp)); };
    REQUIRE(grad_check(store, f, 1e-5, 120) <= 1e-4);
  }
}

TEST_CASE("TransitionScorer caches match direct computation") {
  std::mt19937_64 rng(6);
  ParamStore store;
  TransitionParams tp = TransitionParams::create(store, 5, 6, rng);
  MaskContext ctx = MaskContext::from_predicates({1, 3, 4}, 5);
  TransitionScorer scorer(tp, ctx);
  StateCandidate st = {3, 1};
  REQUIRE(std::exp(scorer.log_state_prob(st).value()) ==
          Catch::Approx(state_prob(st, ctx, tp).value()).epsilon(1e-12));
  REQUIRE(std::exp(scorer.log_state_transition({4}, st).value()) ==
          Catch::Approx(state_transition_prob({4}, st, ctx, tp).value())
              .epsilon(1e-12));
}
