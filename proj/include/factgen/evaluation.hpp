#pragma once

// Generation and planning metrics: corpus BLEU, slot error rate against a
// pattern file, NMI and Kendall's tau-b between plans, and link-level
// alignment precision/recall/F1.

#include "factgen/data.hpp"
#include "factgen/inference.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <regex>
#include <set>
#include <string>
#include <vector>

namespace factgen {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// BLEU
// ---------------------------------------------------------------------------

namespace detail {

inline std::map<std::vector<std::string>, int> ngram_counts(
    const std::vector<std::string>& tokens, int n) {
  std::map<std::vector<std::string>, int> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i)
    ++counts[std::vector<std::string>(tokens.begin() + i, tokens.begin() + i + n)];
  return counts;
}

}  // namespace detail

// Corpus-level BLEU with n-grams up to 4, uniform weights, clipped counts,
// and the brevity penalty. No smoothing: zero overlap at any order with a
// nonzero denominator gives 0. Orders with no candidate n-grams at all are
// skipped. Reference length uses the closest length per segment (ties toward
// the shorter reference).
inline double bleu(const std::vector<std::vector<std::vector<std::string>>>& references,
                   const std::vector<std::vector<std::string>>& hypotheses) {
  if (references.size() != hypotheses.size())
    throw EvalError("bleu: reference/hypothesis count mismatch");
  if (hypotheses.empty()) throw EvalError("bleu: empty input");
  constexpr int kMaxOrder = 4;
  std::vector<std::int64_t> matched(kMaxOrder, 0), total(kMaxOrder, 0);
  std::int64_t hyp_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < hypotheses.size(); ++i) {
    const auto& hyp = hypotheses[i];
    const auto& refs = references[i];
    if (refs.empty()) throw EvalError("bleu: hypothesis without references");
    hyp_len += static_cast<std::int64_t>(hyp.size());
    std::int64_t best_ref = static_cast<std::int64_t>(refs[0].size());
    for (const auto& r : refs) {
      const auto rl = static_cast<std::int64_t>(r.size());
      const auto hl = static_cast<std::int64_t>(hyp.size());
      if (std::llabs(rl - hl) < std::llabs(best_ref - hl) ||
          (std::llabs(rl - hl) == std::llabs(best_ref - hl) && rl < best_ref))
        best_ref = rl;
    }
    ref_len += best_ref;
    for (int n = 1; n <= kMaxOrder; ++n) {
      auto hyp_counts = detail::ngram_counts(hyp, n);
      std::map<std::vector<std::string>, int> max_ref;
      for (const auto& r : refs)
        for (const auto& [gram, c] : detail::ngram_counts(r, n))
          max_ref[gram] = std::max(max_ref[gram], c);
      for (const auto& [gram, c] : hyp_counts) {
        total[n - 1] += c;
        auto it = max_ref.find(gram);
        if (it != max_ref.end()) matched[n - 1] += std::min(c, it->second);
      }
    }
  }
  double log_prec = 0.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    if (total[n] == 0) continue;  // no candidate n-grams of this order
    if (matched[n] == 0) return 0.0;
    log_prec += std::log(static_cast<double>(matched[n]) / total[n]) / kMaxOrder;
  }
  double bp = 1.0;
  if (hyp_len == 0) return 0.0;
  if (hyp_len < ref_len)
    bp = std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len));
  return 100.0 * bp * std::exp(log_prec);
}

// ---------------------------------------------------------------------------
// Slot error rate
// ---------------------------------------------------------------------------

// Per predicate: surface patterns, literal or containing a single {OBJECT}
// placeholder. Stored and matched over whitespace-normalized token text.
struct SlotPatternFile {
  std::map<std::string, std::vector<std::string>> patterns;  // predicate -> patterns

  void add(const std::string& predicate, const std::string& pattern) {
    patterns[PredicateVocab::normalize_name(predicate)].push_back(pattern);
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw EvalError("cannot write pattern file: " + path);
    for (const auto& [pred, pats] : patterns)
      for (const auto& p : pats) out << pred << '\t' << p << '\n';
  }

  static SlotPatternFile load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw EvalError("cannot open pattern file: " + path);
    SlotPatternFile f;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw EvalError("bad pattern line " + std::to_string(line_no) + " in " + path);
      f.add(line.substr(0, tab), line.substr(tab + 1));
    }
    return f;
  }
};

struct SerReport {
  int add = 0, miss = 0, wrong = 0;
  int total_slots = 0;

  double ser() const {
    if (total_slots == 0) return 0.0;
    return 100.0 * static_cast<double>(add + miss + wrong) / total_slots;
  }
  SerReport& operator+=(const SerReport& o) {
    add += o.add;
    miss += o.miss;
    wrong += o.wrong;
    total_slots += o.total_slots;
    return *this;
  }
};

namespace detail {

// Tokenizes a pattern while keeping the {OBJECT} placeholder intact.
inline std::string normalize_pattern(const std::string& pattern) {
  static const std::string kMarker = "__object__";
  std::string replaced = pattern;
  std::size_t pos;
  while ((pos = replaced.find("{OBJECT}")) != std::string::npos)
    replaced.replace(pos, 8, " " + kMarker + " ");
  return normalize_whitespace(replaced);
}

inline std::string regex_escape(const std::string& s) {
  static const std::regex special(R"([.^$|()\[\]{}*+?\\])");
  return std::regex_replace(s, special, R"(\$&)");
}

// True when the pattern (with the object substituted, or as a wildcard)
// occurs in the normalized text. When `object` is empty the placeholder
// matches any token run not crossing a sentence-final period.
inline bool pattern_matches(const std::string& norm_pattern,
                            const std::string& padded_text,
                            const std::string& object) {
  static const std::string kMarker = "__object__";
  if (norm_pattern.find(kMarker) == std::string::npos)
    return padded_text.find(" " + norm_pattern + " ") != std::string::npos;
  if (!object.empty()) {
    std::string inst = norm_pattern;
    std::size_t pos;
    while ((pos = inst.find(kMarker)) != std::string::npos)
      inst.replace(pos, kMarker.size(), object);
    return padded_text.find(" " + normalize_whitespace(inst) + " ") != std::string::npos;
  }
  std::string re = regex_escape(norm_pattern);
  std::size_t pos;
  while ((pos = re.find(kMarker)) != std::string::npos)
    re.replace(pos, kMarker.size(), R"(([^.]+?))");
  std::regex rx(" " + re + " ");
  return std::regex_search(padded_text, rx);
}

}  // namespace detail

// Counts predicates added, missed, or realized with a wrong object value.
// miss: no pattern for an input predicate matches; wrong: a pattern matches
// but never with the input's object; add: a pattern for a predicate absent
// from the input matches. Total slots = number of input triples.
inline SerReport ser(const std::string& hypothesis, const std::vector<Triple>& triples,
                     const SlotPatternFile& patterns) {
  SerReport report;
  report.total_slots = static_cast<int>(triples.size());
  const std::string padded = " " + normalize_whitespace(hypothesis) + " ";
  std::set<std::string> input_preds;
  for (const auto& tr : triples) {
    const std::string pred = PredicateVocab::normalize_name(tr.predicate);
    input_preds.insert(pred);
    auto it = patterns.patterns.find(pred);
    if (it == patterns.patterns.end())
      throw EvalError("pattern file does not cover predicate: " + pred);
    const std::string obj = normalize_whitespace(tr.object);
    bool correct = false, mentioned = false;
    for (const auto& pat : it->second) {
      const std::string norm = detail::normalize_pattern(pat);
      if (detail::pattern_matches(norm, padded, obj)) {
        correct = true;
        break;
      }
      if (detail::pattern_matches(norm, padded, "")) mentioned = true;
    }
    if (correct) continue;
    if (mentioned)
      ++report.wrong;
    else
      ++report.miss;
  }
  for (const auto& [pred, pats] : patterns.patterns) {
    if (input_preds.count(pred)) continue;
    for (const auto& pat : pats) {
      if (detail::pattern_matches(detail::normalize_pattern(pat), padded, "")) {
        ++report.add;
        break;
      }
    }
  }
  return report;
}

// ---------------------------------------------------------------------------
// Plan agreement metrics
// ---------------------------------------------------------------------------

namespace detail {

inline std::map<int, int> group_index_of(const Plan& plan) {
  std::map<int, int> out;
  for (std::size_t g = 0; g < plan.groups.size(); ++g)
    for (int p : plan.groups[g]) out[p] = static_cast<int>(g);
  return out;
}

inline void check_same_predicates(const std::map<int, int>& a,
                                  const std::map<int, int>& b) {
  if (a.size() != b.size()) throw EvalError("plans cover different predicate sets");
  for (const auto& [p, g] : a)
    if (!b.count(p)) throw EvalError("plans cover different predicate sets");
}

inline bool same_partition(const Plan& a, const Plan& b) {
  auto canon = [](const Plan& p) {
    std::set<std::set<int>> out;
    for (const auto& g : p.groups) out.insert(std::set<int>(g.begin(), g.end()));
    return out;
  };
  return canon(a) == canon(b);
}

}  // namespace detail

// Normalized mutual information between two plans viewed as clusterings of
// the same predicates (group order ignored). Normalization by the geometric
// mean of the entropies; if either clustering is degenerate (zero entropy),
// the value is 1 for identical partitions and 0 otherwise.
inline double nmi(const Plan& a, const Plan& b) {
  auto ga = detail::group_index_of(a);
  auto gb = detail::group_index_of(b);
  detail::check_same_predicates(ga, gb);
  const double n = static_cast<double>(ga.size());
  std::map<int, int> ca, cb;
  std::map<std::pair<int, int>, int> joint;
  for (const auto& [p, g] : ga) {
    ++ca[g];
    ++cb[gb.at(p)];
    ++joint[{g, gb.at(p)}];
  }
  double ha = 0.0, hb = 0.0;
  for (const auto& [g, c] : ca) ha -= (c / n) * std::log(c / n);
  for (const auto& [g, c] : cb) hb -= (c / n) * std::log(c / n);
  if (ha < 1e-12 || hb < 1e-12) return detail::same_partition(a, b) ? 1.0 : 0.0;
  double mi = 0.0;
  for (const auto& [gg, c] : joint) {
    const double pab = c / n;
    const double pa = ca[gg.first] / n;
    const double pb = cb[gg.second] / n;
    mi += pab * std::log(pab / (pa * pb));
  }
  double value = mi / std::sqrt(ha * hb);
  return std::clamp(value, 0.0, 1.0);
}

// Kendall's tau-b over predicate ranks, where a predicate's rank is the index
// of its group. Aggregated predicates share a rank, so the tie-corrected
// variant applies. With no untied pairs the value is 1 for identical rank
// vectors and 0 otherwise.
inline double kendall_tau(const Plan& a, const Plan& b) {
  auto ga = detail::group_index_of(a);
  auto gb = detail::group_index_of(b);
  detail::check_same_predicates(ga, gb);
  std::vector<int> preds;
  for (const auto& [p, g] : ga) preds.push_back(p);
  const int n = static_cast<int>(preds.size());
  if (n <= 1) return 1.0;
  std::int64_t concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const int ra1 = ga.at(preds[i]), ra2 = ga.at(preds[j]);
      const int rb1 = gb.at(preds[i]), rb2 = gb.at(preds[j]);
      const int da = ra1 == ra2 ? 0 : (ra1 < ra2 ? 1 : -1);
      const int db = rb1 == rb2 ? 0 : (rb1 < rb2 ? 1 : -1);
      if (da == 0 && db == 0) {
        ++ties_a;
        ++ties_b;
      } else if (da == 0) {
        ++ties_a;
      } else if (db == 0) {
        ++ties_b;
      } else if (da == db) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const std::int64_t n0 = static_cast<std::int64_t>(n) * (n - 1) / 2;
  const double denom = std::sqrt(static_cast<double>(n0 - ties_a)) *
                       std::sqrt(static_cast<double>(n0 - ties_b));
  if (denom < 1e-12) {
    for (const auto& [p, g] : ga)
      if (gb.at(p) != g) return 0.0;
    return 1.0;
  }
  return static_cast<double>(concordant - discordant) / denom;
}

// ---------------------------------------------------------------------------
// Alignment precision/recall/F1
// ---------------------------------------------------------------------------

struct PrfReport {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
  std::int64_t correct = 0, predicted = 0, gold = 0;
};

// A (triple, fact) link is the unit. Empty predictions score precision 0
// unless the gold is empty too.
inline PrfReport align_prf(const Alignment& predicted, const Alignment& gold) {
  auto links = [](const Alignment& a) {
    std::set<std::pair<int, int>> out;
    for (std::size_t t = 0; t < a.size(); ++t)
      for (int p : a[t]) out.insert({static_cast<int>(t), p});
    return out;
  };
  auto lp = links(predicted), lg = links(gold);
  PrfReport r;
  r.predicted = static_cast<std::int64_t>(lp.size());
  r.gold = static_cast<std::int64_t>(lg.size());
  for (const auto& l : lp) r.correct += lg.count(l);
  r.precision = lp.empty() ? (lg.empty() ? 1.0 : 0.0)
                           : static_cast<double>(r.correct) / lp.size();
  r.recall = lg.empty() ? (lp.empty() ? 1.0 : 0.0)
                        : static_cast<double>(r.correct) / lg.size();
  r.f1 = (r.precision + r.recall) > 0.0
             ? 2.0 * r.precision * r.recall / (r.precision + r.recall)
             : 0.0;
  return r;
}

// Gold alignment implied by a plan: fact t verbalizes exactly group t.
inline Alignment alignment_from_plan(const Plan& plan) {
  Alignment out;
  for (const auto& g : plan.groups) {
    std::vector<int> preds = g;
    std::sort(preds.begin(), preds.end());
    out.push_back(std::move(preds));
  }
  return out;
}

}  // namespace factgen
