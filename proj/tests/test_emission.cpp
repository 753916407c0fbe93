#include <catch2/catch_amalgamated.hpp>

#include "factgen/emission.hpp"
#include "factgen/training.hpp"

#include <cmath>
#include <random>

using namespace factgen;

namespace {

struct TinyWorld {
  TokenVocab tv;
  PredicateVocab pv;
  Instance inst;
  LinearizedInput lin;
  FactSequence facts;
  Model model;
};

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.hidden_dim = 16;
  cfg.ffn_dim = 32;
  cfg.num_layers = 2;
  cfg.num_heads = 2;
  cfg.pred_emb_dim = 8;
  cfg.max_positions = 64;
  return cfg;
}

TinyWorld make_world(std::uint64_t seed = 42) {
  TinyWorld w;
  w.inst.triples = {{"alpha", "color", "red"},
                    {"alpha", "size", "big"},
                    {"alpha", "shape", "round"}};
  w.inst.text = "alpha is red . it is big . it is round .";
  w.inst.facts = {"alpha is red .", "it is big .", "it is round ."};
  Corpus corpus = {w.inst};
  auto [tv, pv] = build_vocabs(corpus);
  w.tv = tv;
  w.pv = pv;
  w.lin = linearize_input(w.inst, w.tv, w.pv);
  w.facts = wrap_facts(w.inst.facts, w.tv);
  w.model = Model::create(tiny_config(), w.tv.size(), w.pv.size(), seed);
  return w;
}

}  // namespace

TEST_CASE("encode basics") {
  TinyWorld w = make_world();
  Encoded enc = encode(w.model.emission, w.lin);
  SECTION("one vector per input position") {
    REQUIRE(enc.states.rows() == w.lin.length());
    REQUIRE(enc.states.cols() == 16);
  }
  SECTION("identical inputs give identical outputs") {
    Encoded enc2 = encode(w.model.emission, w.lin);
    REQUIRE(enc.states.values() == enc2.states.values());
  }
  SECTION("span vectors depend only on their own triple's content") {
    Instance other = w.inst;
    other.triples[2].object = "square";  // same token count, different content
    LinearizedInput lin2 = linearize_input(other, w.tv, w.pv);
    Encoded enc2 = encode(w.model.emission, lin2);
    auto [b, e] = w.lin.triple_spans[0];
    for (int pos = b; pos < e; ++pos)
      for (int c = 0; c < 16; ++c)
        REQUIRE(enc.states.at(pos, c) == enc2.states.at(pos, c));
  }
}

TEST_CASE("fact_log_prob under a zeroed model is uniform") {
  TinyWorld w = make_world();
  for (auto& [name, t] : w.model.store.entries()) fill_constant(t, 0.0);
  // layer-norm gains stay 1 to keep the forward pass well-defined
  for (auto& [name, t] : w.model.store.entries())
    if (name.size() > 2 && name.substr(name.size() - 2) == ".g") fill_constant(t, 1.0);
  Instance single = w.inst;
  single.facts = {"red ."};
  single.text = "red .";
  FactSequence fs = wrap_facts(single.facts, w.tv);
  Tensor lp = fact_log_prob(w.model.emission, {w.pv.id("color")}, 0, fs, w.lin);
  // two content tokens plus the fact-end marker = 3 emitted positions
  REQUIRE(lp.value() ==
          Catch::Approx(3.0 * std::log(1.0 / w.tv.size())).epsilon(1e-12));
}

TEST_CASE("fact_log_prob is never positive and state must exist") {
  TinyWorld w = make_world();
  Encoded enc = encode(w.model.emission, w.lin);
  for (int t = 0; t < w.facts.count(); ++t) {
    Tensor lp = fact_log_prob(w.model.emission, enc, {w.pv.id("size")}, t, w.facts);
    REQUIRE(lp.value() <= 0.0);
  }
  REQUIRE_THROWS_WITH(
      fact_log_prob(w.model.emission, enc, {w.pv.size() - 1, 99}, 0, w.facts),
      Catch::Matchers::ContainsSubstring("absent"));
}

TEST_CASE("masked-triple invariance of fact_log_prob") {
  TinyWorld w = make_world();
  Encoded enc = encode(w.model.emission, w.lin);
  StateCandidate state = {w.pv.id("color")};
  const double base = fact_log_prob(w.model.emission, enc, state, 0, w.facts).value();
  std::mt19937_64 rng(7);
  const char* words[] = {"red", "big", "round", "alpha", "square", "tiny"};
  for (int trial = 0; trial < 100; ++trial) {
    Instance mutated = w.inst;
    mutated.triples[1].object = words[rng() % 6];
    mutated.triples[2].object = words[rng() % 6];
    LinearizedInput lin2 = linearize_input(mutated, w.tv, w.pv);
    Encoded enc2 = encode(w.model.emission, lin2);
    const double perturbed =
        fact_log_prob(w.model.emission, enc2, state, 0, w.facts).value();
    REQUIRE(std::abs(perturbed - base) <= 1e-12);
  }
}

TEST_CASE("teacher forcing matches a step-by-step decoding oracle") {
  TinyWorld w = make_world();
  Encoded enc = encode(w.model.emission, w.lin);
  std::vector<StateCandidate> gold = {{w.pv.id("color")},
                                      {w.pv.id("size")},
                                      {w.pv.id("shape")}};
  double joint = 0.0;
  for (int t = 0; t < w.facts.count(); ++t)
    joint += fact_log_prob(w.model.emission, enc, gold[t], t, w.facts).value();

  // Oracle: per emitted token, run the decoder on the exact prefix and take
  // the log-softmax of that token at the final position.
  double oracle = 0.0;
  std::vector<int> history;
  for (int t = 0; t < w.facts.count(); ++t) {
    std::vector<double> allowed = cross_attention_allowed(w.lin, gold[t]);
    const auto& fact = w.facts.facts[t];
    for (std::size_t i = 1; i < fact.size(); ++i) {
      std::vector<int> input = history;
      input.insert(input.end(), fact.begin(), fact.begin() + i);
      NoGradGuard ng;
      Tensor logits = decoder_logits(w.model.emission, enc, allowed, input);
      const int last = static_cast<int>(input.size()) - 1;
      double mx = logits.at(last, 0);
      for (int v = 1; v < w.tv.size(); ++v) mx = std::max(mx, logits.at(last, v));
      double z = 0.0;
      for (int v = 0; v < w.tv.size(); ++v) z += std::exp(logits.at(last, v) - mx);
      oracle += logits.at(last, fact[i]) - (mx + std::log(z));
    }
    history.insert(history.end(), fact.begin(), fact.end());
  }
  REQUIRE(joint == Catch::Approx(oracle).margin(1e-9));
}

TEST_CASE("fact_log_prob gradients pass grad_check") {
  TinyWorld w = make_world();
  StateCandidate state = {w.pv.id("color"), w.pv.id("size")};
  auto f = [&] {
    return neg(fact_log_prob(w.model.emission, state, 1, w.facts, w.lin));
  };
  REQUIRE(grad_check(w.model.store, f, 1e-5, 150) <= 1e-4);
}

TEST_CASE("decode_fact") {
  TinyWorld w = make_world(5);
  Encoded enc = encode(w.model.emission, w.lin);
  StateCandidate state = {w.pv.id("color")};

  SECTION("beam width 1 equals the greedy argmax chain") {
    DecodeResult beam = decode_fact(w.model.emission, enc, state, {}, 1, 5);
    std::vector<double> allowed = cross_attention_allowed(w.lin, state);
    std::vector<int> greedy;
    for (int step = 0; step < 5; ++step) {
      std::vector<int> input = {TokenVocab::kFactStart};
      input.insert(input.end(), greedy.begin(), greedy.end());
      NoGradGuard ng;
      Tensor logits = decoder_logits(w.model.emission, enc, allowed, input);
      const int last = static_cast<int>(input.size()) - 1;
      int best = 0;
      for (int v = 1; v < w.tv.size(); ++v)
        if (logits.at(last, v) > logits.at(last, best)) best = v;
      greedy.push_back(best);
      if (best == TokenVocab::kFactEnd) break;
    }
    REQUIRE(beam.tokens == greedy);
  }

  SECTION("deterministic across calls") {
    DecodeResult a = decode_fact(w.model.emission, enc, state, {}, 3, 6);
    DecodeResult b = decode_fact(w.model.emission, enc, state, {}, 3, 6);
    REQUIRE(a.tokens == b.tokens);
    REQUIRE(a.log_prob == b.log_prob);
  }

  SECTION("huge beam equals exhaustive search over short sequences") {
    const int max_len = 2;
    const int vocab = w.tv.size();
    DecodeResult beam =
        decode_fact(w.model.emission, enc, state, {}, vocab * vocab + vocab, max_len);

    // exhaustive: sequences of length <= 2; fact-end only terminal
    std::vector<double> allowed = cross_attention_allowed(w.lin, state);
    auto score_step = [&](const std::vector<int>& prefix, int tok) {
      std::vector<int> input = {TokenVocab::kFactStart};
      input.insert(input.end(), prefix.begin(), prefix.end());
      NoGradGuard ng;
      Tensor logits = decoder_logits(w.model.emission, enc, allowed, input);
      const int last = static_cast<int>(input.size()) - 1;
      double mx = logits.at(last, 0);
      for (int v = 1; v < vocab; ++v) mx = std::max(mx, logits.at(last, v));
      double z = 0.0;
      for (int v = 0; v < vocab; ++v) z += std::exp(logits.at(last, v) - mx);
      return logits.at(last, tok) - (mx + std::log(z));
    };
    std::vector<int> best_tokens;
    double best_score = -1e300;
    auto consider = [&](const std::vector<int>& tokens, double score) {
      if (score > best_score || (score == best_score && tokens < best_tokens)) {
        best_score = score;
        best_tokens = tokens;
      }
    };
    for (int v1 = 0; v1 < vocab; ++v1) {
      const double s1 = score_step({}, v1);
      if (v1 == TokenVocab::kFactEnd) {
        consider({v1}, s1);
        continue;
      }
      for (int v2 = 0; v2 < vocab; ++v2) consider({v1, v2}, s1 + score_step({v1}, v2));
    }
    REQUIRE(beam.tokens == best_tokens);
    REQUIRE(beam.log_prob == Catch::Approx(best_score).margin(1e-9));
  }
}
