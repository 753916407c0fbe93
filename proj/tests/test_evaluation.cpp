#include <catch2/catch_amalgamated.hpp>

#include "factgen/evaluation.hpp"

#include <cmath>

using namespace factgen;

namespace {

std::vector<std::string> toks(const std::string& s) { return tokenize(s); }

}  // namespace

TEST_CASE("bleu") {
  SECTION("identity scores 100") {
    double score = bleu({{toks("the cat sat on the mat .")}},
                        {toks("the cat sat on the mat .")});
    REQUIRE(score == Catch::Approx(100.0).margin(1e-9));
  }
  SECTION("no unigram overlap scores 0") {
    REQUIRE(bleu({{toks("aa bb cc dd")}}, {toks("xx yy zz ww")}) == 0.0);
  }
  SECTION("short hypothesis pays the brevity penalty") {
    // precisions all 1 over available orders; BP = exp(1 - 4/3)
    double score = bleu({{toks("the cat sat down")}}, {toks("the cat sat")});
    REQUIRE(score == Catch::Approx(100.0 * std::exp(1.0 - 4.0 / 3.0)).margin(1e-3));
    REQUIRE(score == Catch::Approx(71.65).margin(0.01));
  }
  SECTION("zero overlap at a higher order zeroes the score without smoothing") {
    // unigrams overlap, no bigram in common
    REQUIRE(bleu({{toks("a x b y c z")}}, {toks("a b c")}) == 0.0);
  }
  SECTION("corpus score invariant to instance order") {
    std::vector<std::vector<std::vector<std::string>>> refs = {
        {toks("the cat sat on the mat .")}, {toks("dogs bark loudly at night .")}};
    std::vector<std::vector<std::string>> hyps = {toks("the cat sat on a mat ."),
                                                  toks("dogs bark at night .")};
    double a = bleu(refs, hyps);
    std::swap(refs[0], refs[1]);
    std::swap(hyps[0], hyps[1]);
    REQUIRE(bleu(refs, hyps) == Catch::Approx(a).margin(1e-12));
  }
  SECTION("multiple references use clipped maxima") {
    double score = bleu({{toks("a b c d"), toks("a b c e")}}, {toks("a b c e")});
    REQUIRE(score == Catch::Approx(100.0).margin(1e-9));
  }
  SECTION("list length mismatch rejected") {
    REQUIRE_THROWS(bleu({{toks("a")}}, {toks("a"), toks("b")}));
  }
}

TEST_CASE("ser") {
  SlotPatternFile patterns;
  patterns.add("food", "serves {OBJECT} food");
  patterns.add("area", "lies in the {OBJECT} area");
  patterns.add("kids", "is {OBJECT} for kids");
  patterns.add("near", "stands near {OBJECT}");
  std::vector<Triple> triples = {{"x", "food", "french"},
                                 {"x", "area", "riverside"},
                                 {"x", "kids", "great"},
                                 {"x", "near", "greenpark"}};

  SECTION("fully correct realization scores zero") {
    SerReport r = ser(
        "x serves french food . it lies in the riverside area . "
        "it is great for kids . it stands near greenpark .",
        triples, patterns);
    REQUIRE(r.add == 0);
    REQUIRE(r.miss == 0);
    REQUIRE(r.wrong == 0);
    REQUIRE(r.ser() == 0.0);
  }
  SECTION("omitting one of four slots gives ser 25") {
    SerReport r = ser(
        "x serves french food . it lies in the riverside area . "
        "it is great for kids .",
        triples, patterns);
    REQUIRE(r.miss == 1);
    REQUIRE(r.ser() == Catch::Approx(25.0));
  }
  SECTION("wrong object value detected") {
    SerReport r = ser(
        "x serves italian food . it lies in the riverside area . "
        "it is great for kids . it stands near greenpark .",
        triples, patterns);
    REQUIRE(r.wrong == 1);
    REQUIRE(r.miss == 0);
    REQUIRE(r.ser() == Catch::Approx(25.0));
  }
  SECTION("added predicate detected") {
    SlotPatternFile p2 = patterns;
    p2.add("venue", "is a {OBJECT} venue");
    SerReport r = ser(
        "x is a pub venue . x serves french food . it lies in the riverside area . "
        "it is great for kids . it stands near greenpark .",
        triples, p2);
    REQUIRE(r.add == 1);
    REQUIRE(r.ser() == Catch::Approx(25.0));
  }
  SECTION("components combine into the percentage") {
    SerReport r;
    r.add = 1;
    r.miss = 2;
    r.wrong = 1;
    r.total_slots = 8;
    REQUIRE(r.ser() == Catch::Approx(50.0));
  }
  SECTION("uncovered predicate is an error") {
    SlotPatternFile sparse;
    sparse.add("food", "serves {OBJECT} food");
    REQUIRE_THROWS_WITH(ser("anything", triples, sparse),
                        Catch::Matchers::ContainsSubstring("does not cover"));
  }
  SECTION("pattern file round-trips") {
    patterns.save("/tmp/factgen_patterns.tsv");
    SlotPatternFile loaded = SlotPatternFile::load_file("/tmp/factgen_patterns.tsv");
    REQUIRE(loaded.patterns == patterns.patterns);
  }
}

namespace {

Plan plan_of(const std::vector<std::vector<int>>& groups) {
  Plan p;
  for (const auto& g : groups) p.groups.push_back(g);
  return p;
}

}  // namespace

TEST_CASE("nmi") {
  SECTION("identical plans score 1") {
    Plan p = plan_of({{1, 2}, {3}});
    REQUIRE(nmi(p, p) == 1.0);
  }
  SECTION("orthogonal balanced clusterings score 0") {
    Plan a = plan_of({{1, 2}, {3, 4}});
    Plan b = plan_of({{1, 3}, {2, 4}});
    REQUIRE(nmi(a, b) == Catch::Approx(0.0).margin(1e-12));
  }
  SECTION("all-singletons vs all-singletons scores 1") {
    Plan a = plan_of({{1}, {2}, {3}});
    Plan b = plan_of({{3}, {1}, {2}});
    REQUIRE(nmi(a, b) == 1.0);
  }
  SECTION("single cluster degenerate cases") {
    Plan one = plan_of({{1, 2, 3}});
    REQUIRE(nmi(one, one) == 1.0);
    Plan split = plan_of({{1}, {2, 3}});
    REQUIRE(nmi(one, split) == 0.0);
  }
  SECTION("symmetry") {
    Plan a = plan_of({{1, 2}, {3}, {4}});
    Plan b = plan_of({{1}, {2, 3}, {4}});
    REQUIRE(nmi(a, b) == Catch::Approx(nmi(b, a)).margin(1e-12));
  }
  SECTION("mismatched predicate sets rejected") {
    REQUIRE_THROWS(nmi(plan_of({{1}}), plan_of({{2}})));
  }
}

TEST_CASE("kendall_tau") {
  SECTION("identical plans score 1") {
    Plan p = plan_of({{1}, {2, 3}});
    REQUIRE(kendall_tau(p, p) == 1.0);
  }
  SECTION("reversed singleton orderings score -1") {
    Plan a = plan_of({{1}, {2}, {3}});
    Plan b = plan_of({{3}, {2}, {1}});
    REQUIRE(kendall_tau(a, b) == Catch::Approx(-1.0));
  }
  SECTION("tie-corrected reversal of grouped plans") {
    Plan a = plan_of({{1}, {2, 3}});
    Plan b = plan_of({{2, 3}, {1}});
    REQUIRE(kendall_tau(a, b) == Catch::Approx(-1.0));
  }
  SECTION("symmetry") {
    Plan a = plan_of({{1, 2}, {3}, {4}});
    Plan b = plan_of({{2}, {1, 3}, {4}});
    REQUIRE(kendall_tau(a, b) == Catch::Approx(kendall_tau(b, a)).margin(1e-12));
  }
  SECTION("single predicate is vacuous agreement") {
    REQUIRE(kendall_tau(plan_of({{5}}), plan_of({{5}})) == 1.0);
  }
  SECTION("all-tied identical rank vectors score 1, different score 0") {
    Plan one = plan_of({{1, 2}});
    REQUIRE(kendall_tau(one, one) == 1.0);
    // one plan fully tied, the other ordered: no untied pair in a
    Plan two = plan_of({{1}, {2}});
    REQUIRE(kendall_tau(one, two) == 0.0);
  }
}

TEST_CASE("align_prf") {
  SECTION("identical alignments score perfectly") {
    Alignment a = {{1, 2}, {3}};
    PrfReport r = align_prf(a, a);
    REQUIRE(r.precision == 1.0);
    REQUIRE(r.recall == 1.0);
    REQUIRE(r.f1 == 1.0);
  }
  SECTION("half coverage with no spurious links") {
    Alignment gold = {{1, 2}, {3, 4}};
    Alignment pred = {{1}, {3}};
    PrfReport r = align_prf(pred, gold);
    REQUIRE(r.precision == 1.0);
    REQUIRE(r.recall == Catch::Approx(0.5));
    REQUIRE(r.f1 == Catch::Approx(2.0 / 3.0));
  }
  SECTION("empty prediction scores zero precision unless gold empty") {
    Alignment empty = {{}, {}};
    Alignment gold = {{1}, {2}};
    PrfReport r = align_prf(empty, gold);
    REQUIRE(r.precision == 0.0);
    PrfReport r2 = align_prf(empty, empty);
    REQUIRE(r2.precision == 1.0);
    REQUIRE(r2.recall == 1.0);
    REQUIRE(r2.f1 == 1.0);
  }
  SECTION("alignment_from_plan maps groups to facts") {
    Plan p = plan_of({{2, 1}, {3}});
    REQUIRE(alignment_from_plan(p) == Alignment{{1, 2}, {3}});
  }
}
