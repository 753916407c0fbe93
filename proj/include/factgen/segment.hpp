#pragma once

// Splits a target text into an ordered sequence of facts. A deterministic
// heuristic: unconditional splits after sentence-final punctuation, plus
// splits before a fixed connective set when both sides of the split contain
// a verb-like token.

#include "factgen/data.hpp"

#include <fstream>
#include <string>
#include <unordered_set>
#include <vector>

namespace factgen {

struct SegmenterConfig {
  std::vector<std::vector<std::string>> connectives;  // tokenized
  std::unordered_set<std::string> verb_like;

  static SegmenterConfig defaults() {
    SegmenterConfig cfg;
    for (const char* c : {", and", ", which", ", where", ", who", "that is"})
      cfg.connectives.push_back(tokenize(c));
    for (const char* v :
         {"is",      "are",    "was",     "were",   "be",       "been",  "has",
          "have",    "had",    "serves",  "served", "located",  "lies",  "stands",
          "retired", "earned", "answers", "offers", "operated", "built", "runs",
          "makes",   "provides"})
      cfg.verb_like.insert(v);
    return cfg;
  }

  // One entry per line: `connective<TAB>text` or `verb<TAB>token`.
  static SegmenterConfig load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open segmenter config: " + path);
    SegmenterConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty() || line[0] == '#') continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos)
        throw DataError("bad segmenter config line " + std::to_string(line_no));
      std::string kind = line.substr(0, tab);
      std::string rest = line.substr(tab + 1);
      if (kind == "connective")
        cfg.connectives.push_back(tokenize(rest));
      else if (kind == "verb")
        cfg.verb_like.insert(normalize_whitespace(rest));
      else
        throw DataError("unknown segmenter config kind: " + kind);
    }
    return cfg;
  }
};

namespace detail {

inline bool contains_verb(const std::vector<std::string>& tokens, std::size_t begin,
                          std::size_t end, const SegmenterConfig& cfg) {
  for (std::size_t i = begin; i < end; ++i)
    if (cfg.verb_like.count(tokens[i])) return true;
  return false;
}

inline bool matches_at(const std::vector<std::string>& tokens, std::size_t pos,
                       const std::vector<std::string>& pattern) {
  if (pos + pattern.size() > tokens.size()) return false;
  for (std::size_t i = 0; i < pattern.size(); ++i)
    if (tokens[pos + i] != pattern[i]) return false;
  return true;
}

}  // namespace detail

inline std::vector<std::string> segment_facts(const std::string& text,
                                              const SegmenterConfig& cfg =
                                                  SegmenterConfig::defaults()) {
  std::vector<std::string> tokens = tokenize(text);
  if (tokens.empty()) throw DataError("segment_facts: empty text");

  // Sentence boundaries first.
  std::vector<std::pair<std::size_t, std::size_t>> sentences;
  std::size_t start = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    bool final_punct = tokens[i] == "." || tokens[i] == "!" || tokens[i] == "?";
    if (final_punct && i + 1 < tokens.size()) {
      sentences.emplace_back(start, i + 1);
      start = i + 1;
    }
  }
  if (start < tokens.size()) sentences.emplace_back(start, tokens.size());

  // Connective splits inside each sentence, scanning left to right.
  std::vector<std::string> facts;
  for (auto [s_begin, s_end] : sentences) {
    std::size_t seg_begin = s_begin;
    std::size_t i = s_begin + 1;
    while (i < s_end) {
      bool split_here = false;
      for (const auto& conn : cfg.connectives) {
        if (i + conn.size() <= s_end && detail::matches_at(tokens, i, conn) &&
            detail::contains_verb(tokens, seg_begin, i, cfg) &&
            detail::contains_verb(tokens, i, s_end, cfg)) {
          split_here = true;
          break;
        }
      }
      if (split_here) {
        facts.push_back(join_tokens({tokens.begin() + seg_begin, tokens.begin() + i}));
        seg_begin = i;
      }
      ++i;
    }
    facts.push_back(join_tokens({tokens.begin() + seg_begin, tokens.begin() + s_end}));
  }
  return facts;
}

// Ordered token-id sequences, each wrapped with fact-start/fact-end markers.
struct FactSequence {
  std::vector<std::vector<int>> facts;

  int count() const { return static_cast<int>(facts.size()); }
  int content_length(int t) const { return static_cast<int>(facts[t].size()) - 2; }
};

inline FactSequence wrap_facts(const std::vector<std::string>& facts,
                               const TokenVocab& tv) {
  if (facts.empty()) throw DataError("wrap_facts: no facts");
  FactSequence out;
  for (const auto& f : facts) {
    std::vector<std::string> toks = tokenize(f);
    if (toks.empty()) throw DataError("wrap_facts: empty fact string");
    std::vector<int> ids;
    ids.reserve(toks.size() + 2);
    ids.push_back(TokenVocab::kFactStart);
    for (const auto& t : toks) ids.push_back(tv.id(t));
    ids.push_back(TokenVocab::kFactEnd);
    out.facts.push_back(std::move(ids));
  }
  return out;
}

// Gold facts take precedence over the heuristic.
inline std::vector<std::string> instance_facts(const Instance& inst,
                                               const SegmenterConfig& cfg =
                                                   SegmenterConfig::defaults()) {
  if (inst.has_facts()) return inst.facts;
  return segment_facts(inst.text, cfg);
}

}  // namespace factgen
