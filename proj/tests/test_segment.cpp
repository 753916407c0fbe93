#include <catch2/catch_amalgamated.hpp>

#include "factgen/segment.hpp"

using namespace factgen;

TEST_CASE("segment_facts splits at sentence-final punctuation") {
  auto facts = segment_facts("william anders was a crew member on apollo 8 . he retired .");
  REQUIRE(facts == std::vector<std::string>{
                       "william anders was a crew member on apollo 8 .",
                       "he retired ."});
}

TEST_CASE("segment_facts keeps single sentences whole") {
  REQUIRE(segment_facts("nasa operated apollo 8 .") ==
          std::vector<std::string>{"nasa operated apollo 8 ."});
}

TEST_CASE("segment_facts splits before connectives only with verbs on both sides") {
  SECTION("verbs on both sides split") {
    auto facts = segment_facts("the venue is cheap , and the food is italian .");
    REQUIRE(facts == std::vector<std::string>{"the venue is cheap",
                                              ", and the food is italian ."});
  }
  SECTION("no verb on the left blocks the split") {
    auto facts = segment_facts("the cheap venue , and the italian food is here .");
    REQUIRE(facts.size() == 1);
  }
  SECTION("that-is connective") {
    auto facts = segment_facts("the venue is open that is what was said .");
    REQUIRE(facts == std::vector<std::string>{"the venue is open",
                                              "that is what was said ."});
  }
}

TEST_CASE("segment_facts concatenation reproduces the input") {
  const std::vector<std::string> cases = {
      "a b was here . c d is there ! e was f ?",
      "the venue is cheap , and the food is good , which was a surprise .",
      "single segment with no split points",
  };
  for (const auto& text : cases) {
    auto facts = segment_facts(text);
    std::string joined;
    for (const auto& f : facts) {
      REQUIRE_FALSE(f.empty());
      joined += f + " ";
    }
    REQUIRE(normalize_whitespace(joined) == normalize_whitespace(text));
  }
}

TEST_CASE("segmenter config file round-trip") {
  const std::string path = "/tmp/factgen_seg.cfg";
  {
    std::ofstream out(path);
    out << "# comment\n";
    out << "connective\t, and\n";
    out << "verb\tis\n";
    out << "verb\twas\n";
  }
  SegmenterConfig cfg = SegmenterConfig::load_file(path);
  REQUIRE(cfg.connectives.size() == 1);
  REQUIRE(cfg.verb_like.count("is") == 1);
  auto facts = segment_facts("x is a , and y was b .", cfg);
  REQUIRE(facts.size() == 2);
}

TEST_CASE("wrap_facts adds fact markers") {
  Corpus corpus;
  Instance inst;
  inst.triples.push_back({"a", "b", "c"});
  inst.text = "a b";
  corpus.push_back(inst);
  auto [tv, pv] = build_vocabs(corpus);

  SECTION("single fact wraps with markers") {
    FactSequence fs = wrap_facts({"a b"}, tv);
    REQUIRE(fs.count() == 1);
    REQUIRE(fs.facts[0].front() == TokenVocab::kFactStart);
    REQUIRE(fs.facts[0].back() == TokenVocab::kFactEnd);
    REQUIRE(fs.facts[0] == std::vector<int>{TokenVocab::kFactStart, tv.id("a"),
                                            tv.id("b"), TokenVocab::kFactEnd});
  }
  SECTION("wrapped length is content length plus two") {
    FactSequence fs = wrap_facts({"a", "a b", "a b c"}, tv);
    REQUIRE(fs.count() == 3);
    for (int t = 0; t < 3; ++t)
      REQUIRE(static_cast<int>(fs.facts[t].size()) == fs.content_length(t) + 2);
  }
  SECTION("unknown words map to the unknown id") {
    FactSequence fs = wrap_facts({"zzz"}, tv);
    REQUIRE(fs.facts[0][1] == TokenVocab::kUnk);
  }
  SECTION("empty fact rejected") { REQUIRE_THROWS(wrap_facts({""}, tv)); }
}

TEST_CASE("instance facts take precedence over the heuristic") {
  Instance inst;
  inst.triples.push_back({"a", "b", "c"});
  inst.text = "one sentence . two sentence .";
  inst.facts = {"one sentence . two sentence ."};  // deliberately unsplit
  REQUIRE(instance_facts(inst) == inst.facts);
  Instance no_facts = inst;
  no_facts.facts.clear();
  REQUIRE(instance_facts(no_facts).size() == 2);
}
