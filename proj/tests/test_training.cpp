#include <catch2/catch_amalgamated.hpp>

#include "factgen/inference.hpp"
#include "factgen/training.hpp"

#include <cmath>
#include <random>

using namespace factgen;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.hidden_dim = 16;
  cfg.ffn_dim = 32;
  cfg.num_layers = 1;
  cfg.num_heads = 2;
  cfg.pred_emb_dim = 8;
  cfg.max_positions = 64;
  return cfg;
}

struct World {
  TokenVocab tv;
  PredicateVocab pv;
  Corpus corpus;
};

World make_world() {
  World w;
  Instance a;
  a.triples = {{"alpha", "color", "red"}, {"alpha", "size", "big"}};
  a.text = "alpha is red . it is big .";
  a.facts = {"alpha is red .", "it is big ."};
  Instance b;
  b.triples = {{"beta", "color", "blue"},
               {"beta", "size", "small"},
               {"beta", "shape", "round"}};
  b.text = "beta is blue . it is small and round .";
  b.facts = {"beta is blue .", "it is small and round ."};
  w.corpus = {a, b};
  auto [tv, pv] = build_vocabs(w.corpus);
  w.tv = tv;
  w.pv = pv;
  return w;
}

}  // namespace

TEST_CASE("hard_align coverage thresholds") {
  PredicateVocab pv;
  pv.add("color");
  pv.add("size");
  Instance inst;
  inst.triples = {{"alpha", "color", "bright red"}, {"alpha", "size", "big"}};

  SECTION("full coverage forces the predicate") {
    // triple tokens {color, bright, red} all appear in fact 0
    HardAlignment h =
        hard_align(inst, {"the color is bright red .", "its size is big ."}, pv);
    REQUIRE(h.forced[0] == std::vector<int>{pv.id("color")});
    REQUIRE(h.forced[1] == std::vector<int>{pv.id("size")});
  }
  SECTION("no shared tokens means no forcing") {
    HardAlignment h = hard_align(inst, {"nothing shared here ."}, pv);
    REQUIRE(h.forced[0].empty());
  }
  SECTION("coverage of exactly one half is not forced") {
    // triple 0 reference tokens: {color, bright, red, ...}; craft 2 of 4
    Instance i2;
    i2.triples = {{"s", "aa bb", "cc dd"}};
    PredicateVocab pv2;
    pv2.add("aa bb");
    HardAlignment h = hard_align(i2, {"aa cc only ."}, pv2);  // 2 of 4 tokens
    REQUIRE(h.forced[0].empty());
  }
  SECTION("ties go to the earlier fact") {
    HardAlignment h = hard_align(
        inst, {"color bright red twice .", "color bright red again ."}, pv);
    REQUIRE(h.forced[0] == std::vector<int>{pv.id("color")});
    REQUIRE(h.forced[1].empty());
  }
}

TEST_CASE("backward_marginal single-path instance") {
  World w = make_world();
  Instance inst;
  inst.triples = {{"alpha", "color", "red"}};
  inst.text = "alpha is red .";
  inst.facts = {"alpha is red ."};
  Model model = Model::create(tiny_config(), w.tv.size(), w.pv.size(), 3);
  PreparedInstance p = prepare_instance(inst, w.tv, w.pv, 3, false);
  Tensor marginal = backward_marginal(model, p);
  Tensor emission = fact_log_prob(model.emission, {w.pv.id("color")}, 0,
                                  p.facts, p.lin);
  // single predicate: state probability is 1, so the marginal is the emission
  REQUIRE(marginal.value() == Catch::Approx(emission.value()).margin(1e-12));
}

TEST_CASE("backward_marginal equals the brute-force oracle") {
  World w = make_world();
  std::mt19937_64 seed_rng(12345);
  for (int trial = 0; trial < 10; ++trial) {
    Model model = Model::create(tiny_config(), w.tv.size(), w.pv.size(), seed_rng());
    for (const auto& inst : w.corpus) {
      PreparedInstance p = prepare_instance(inst, w.tv, w.pv, 3, false);
      const double dp = backward_marginal(model, p).value();
      const double bf = brute_force_marginal(model, p);
      REQUIRE(dp == Catch::Approx(bf).margin(1e-9));
    }
  }
}

TEST_CASE("brute_force_marginal guards its search space") {
  World w = make_world();
  Model model = Model::create(tiny_config(), w.tv.size(), w.pv.size(), 3);
  PreparedInstance p = prepare_instance(w.corpus[1], w.tv, w.pv, 3, false);
  REQUIRE_THROWS_WITH(brute_force_marginal(model, p, 10),
                      Catch::Matchers::ContainsSubstring("bound exceeded"));
}

TEST_CASE("hard-alignment pruning can only lower the marginal") {
  World w = make_world();
  Model model = Model::create(tiny_config(), w.tv.size(), w.pv.size(), 11);
  for (const auto& inst : w.corpus) {
    PreparedInstance unpruned = prepare_instance(inst, w.tv, w.pv, 3, false);
    PreparedInstance pruned = prepare_instance(inst, w.tv, w.pv, 3, true);
    const double full = backward_marginal(model, unpruned).value();
    const double constrained = backward_marginal(model, pruned).value();
    REQUIRE(constrained <= full + 1e-12);
  }
}

TEST_CASE("over-constrained pruning reports the fact index") {
  PredicateVocab pv;
  pv.add("color");
  pv.add("size");
  pv.add("shape");
  pv.add("extra");
  TokenVocab tv;
  for (const char* t : {"alpha", "is", "red", "big", "round", "wide", "."})
    tv.add(t);
  Instance inst;
  inst.triples = {{"alpha", "color", "red"},
                  {"alpha", "size", "big"},
                  {"alpha", "shape", "round"},
                  {"alpha", "extra", "wide"}};
  inst.text = "alpha is color red size big shape round extra wide .";
  inst.facts = {"alpha is color red size big shape round extra wide ."};
  // all four triples hard-align to the single fact, exceeding the group cap
  REQUIRE_THROWS_WITH(prepare_instance(inst, tv, pv, 3, true),
                      Catch::Matchers::ContainsSubstring("fact 0"));
}

TEST_CASE("marginal gradient passes finite differences") {
  World w = make_world();
  Model model = Model::create(tiny_config(), w.tv.size(), w.pv.size(), 21);
  PreparedInstance p = prepare_instance(w.corpus[0], w.tv, w.pv, 3, false);
  auto f = [&] { return neg(backward_marginal(model, p)); };
  REQUIRE(grad_check(model.store, f, 1e-5, 150) <= 1e-4);
}

TEST_CASE("pretrain overfits a single instance") {
  World w = make_world();
  Corpus one = {w.corpus[0]};
  Model model = Model::create(tiny_config(), w.tv.size(), w.pv.size(), 9);

  LinearizedInput lin = linearize_input(one[0], w.tv, w.pv);
  std::vector<int> text_tokens = w.tv.encode(tokenize(one[0].text));
  const double init_loss = baseline_loss(model, lin, text_tokens).value();
  // small random init keeps the first loss near uniform
  REQUIRE(init_loss ==
          Catch::Approx(std::log(w.tv.size())).epsilon(0.10));

  PretrainOptions opts;
  opts.epochs = 300;
  opts.lr = 0.01;
  opts.seed = 4;
  opts.verbose = false;
  pretrain_baseline(model, one, w.tv, w.pv, opts);
  const double final_loss = baseline_loss(model, lin, text_tokens).value();
  REQUIRE(final_loss < 0.05);

  // greedy decoding with unmasked cross-attention reproduces the text
  NoGradGuard ng;
  Encoded enc = encode(model.emission, lin);
  std::vector<double> allowed(lin.length(), 1.0);
  std::vector<int> generated;
  for (int step = 0; step < 20; ++step) {
    std::vector<int> input = {TokenVocab::kFactStart};
    input.insert(input.end(), generated.begin(), generated.end());
    Tensor logits = decoder_logits(model.emission, enc, allowed, input);
    const int last = static_cast<int>(input.size()) - 1;
    int best = 0;
    for (int v = 1; v < w.tv.size(); ++v)
      if (logits.at(last, v) > logits.at(last, best)) best = v;
    if (best == TokenVocab::kFactEnd) break;
    generated.push_back(best);
  }
  REQUIRE(generated == text_tokens);
}

TEST_CASE("zero learning rates leave parameters unchanged") {
  World w = make_world();
  Model model = Model::create(tiny_config(), w.tv.size(), w.pv.size(), 30);
  std::vector<std::vector<double>> before;
  for (auto& [name, t] : model.store.entries()) before.push_back(t.values());
  TrainOptions opts;
  opts.epochs = 1;
  opts.lr_finetune = 0.0;
  opts.lr_transition = 0.0;
  opts.seed = 2;
  opts.verbose = false;
  train(model, w.corpus, w.tv, w.pv, opts);
  std::size_t i = 0;
  for (auto& [name, t] : model.store.entries()) {
    REQUIRE(t.values() == before[i]);
    ++i;
  }
}

TEST_CASE("training reduces the marginal loss on a small corpus") {
  World w = make_world();
  // ten instances: repeat the two-instance world five times
  Corpus corpus;
  for (int i = 0; i < 5; ++i)
    corpus.insert(corpus.end(), w.corpus.begin(), w.corpus.end());
  Model model = Model::create(tiny_config(), w.tv.size(), w.pv.size(), 77);
  PretrainOptions popts;
  popts.epochs = 30;
  popts.lr = 0.01;
  popts.seed = 5;
  popts.verbose = false;
  pretrain_baseline(model, corpus, w.tv, w.pv, popts);
  TrainOptions opts;
  opts.epochs = 8;
  opts.patience = 8;
  opts.seed = 6;
  opts.verbose = false;
  TrainReport report = train(model, corpus, w.tv, w.pv, opts);
  REQUIRE(report.train_loss_per_epoch.size() >= 2);
  REQUIRE(report.train_loss_per_epoch.back() <
          report.train_loss_per_epoch.front());
}

TEST_CASE("adam updates use per-group learning rates") {
  ParamStore ps;
  Tensor a = ps.add("a", {2});
  Tensor b = ps.add("b", {2});
  fill_constant(a, 1.0);
  fill_constant(b, 1.0);
  Adam opt({AdamGroup{{a}, 0.1}, AdamGroup{{b}, 0.0}});
  Tensor loss = sum(add(mul(a, a), mul(b, b)));
  ps.zero_grads();
  loss.backward();
  opt.step();
  REQUIRE(a.values()[0] < 1.0);
  REQUIRE(b.values()[0] == 1.0);
}
