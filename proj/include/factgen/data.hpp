#pragma once

// Corpus ingestion, vocabularies, input linearization, and the bracketed
// plan-string notation.

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace factgen {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Lowercases and splits on whitespace; punctuation characters become their
// own tokens. Underscore counts as a word character so predicate names like
// "customer_rating" stay whole.
inline std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (unsigned char ch : text) {
    if (std::isspace(ch)) {
      flush();
    } else if (std::isalnum(ch) || ch == '_') {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else {
      flush();
      out.push_back(std::string(1, static_cast<char>(ch)));
    }
  }
  flush();
  return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

inline std::string normalize_whitespace(const std::string& text) {
  return join_tokens(tokenize(text));
}

struct Triple {
  std::string subject;
  std::string predicate;
  std::string object;
};

struct Instance {
  std::vector<Triple> triples;
  std::string text;
  std::vector<std::string> facts;  // optional gold segmentation

  bool has_facts() const { return !facts.empty(); }
};

using Corpus = std::vector<Instance>;

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline void validate_instance(const Instance& inst, std::size_t line_no) {
  auto where = [&] { return " (line " + std::to_string(line_no) + ")"; };
  if (inst.triples.empty()) throw DataError("instance has no triples" + where());
  std::vector<std::string> preds;
  for (const auto& t : inst.triples) {
    if (trim(t.subject).empty() || trim(t.predicate).empty() || trim(t.object).empty())
      throw DataError("triple has an empty field" + where());
    if (t.predicate.find('[') != std::string::npos ||
        t.predicate.find(']') != std::string::npos)
      throw DataError("predicate contains a reserved bracket character" + where());
    preds.push_back(normalize_whitespace(t.predicate));
  }
  std::sort(preds.begin(), preds.end());
  if (std::adjacent_find(preds.begin(), preds.end()) != preds.end())
    throw DataError("duplicate predicate within instance" + where());
  if (inst.has_facts()) {
    std::string joined;
    for (const auto& f : inst.facts) {
      if (trim(f).empty()) throw DataError("empty fact string" + where());
      joined += f;
      joined.push_back(' ');
    }
    if (normalize_whitespace(joined) != normalize_whitespace(inst.text))
      throw DataError("facts do not concatenate to text" + where());
  }
}

}  // namespace detail

// One JSON record per line with fields `triples` ([{s,p,o}...]), `text`,
// and optional `facts` ([...]).
inline Corpus load_corpus(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open corpus file: " + path);
  Corpus corpus;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError("parse error at line " + std::to_string(line_no) + ": " + e.what());
    }
    Instance inst;
    try {
      for (const auto& t : rec.at("triples")) {
        inst.triples.push_back({t.at("s").get<std::string>(),
                                t.at("p").get<std::string>(),
                                t.at("o").get<std::string>()});
      }
      inst.text = rec.at("text").get<std::string>();
      if (rec.contains("facts"))
        for (const auto& f : rec["facts"]) inst.facts.push_back(f.get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw DataError("bad record at line " + std::to_string(line_no) + ": " + e.what());
    }
    detail::validate_instance(inst, line_no);
    corpus.push_back(std::move(inst));
  }
  return corpus;
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open corpus file for writing: " + path);
  for (const auto& inst : corpus) {
    nlohmann::json rec;
    rec["triples"] = nlohmann::json::array();
    for (const auto& t : inst.triples)
      rec["triples"].push_back({{"s", t.subject}, {"p", t.predicate}, {"o", t.object}});
    rec["text"] = inst.text;
    if (inst.has_facts()) rec["facts"] = inst.facts;
    out << rec.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Vocabularies
// ---------------------------------------------------------------------------

class TokenVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kCls = 2;
  static constexpr int kSep = 3;
  static constexpr int kFactStart = 4;
  static constexpr int kFactEnd = 5;
  static constexpr int kNumReserved = 6;

  TokenVocab() {
    for (const char* s : {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[FSTART]", "[FEND]"})
      push(s);
  }

  int add(const std::string& token) {
    auto it = ids_.find(token);
    if (it != ids_.end()) return it->second;
    return push(token);
  }

  int id(const std::string& token) const {
    auto it = ids_.find(token);
    return it == ids_.end() ? kUnk : it->second;
  }
  const std::string& token(int id) const { return tokens_.at(id); }
  int size() const { return static_cast<int>(tokens_.size()); }

  std::vector<int> encode(const std::vector<std::string>& toks) const {
    std::vector<int> out;
    out.reserve(toks.size());
    for (const auto& t : toks) out.push_back(id(t));
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocab: " + path);
    out << "#factgen-vocab v1 tokens\n";
    for (std::size_t i = 0; i < tokens_.size(); ++i) out << i << '\t' << tokens_[i] << '\n';
  }

  static TokenVocab load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocab: " + path);
    std::string header;
    std::getline(in, header);
    if (header != "#factgen-vocab v1 tokens") throw DataError("bad vocab header in " + path);
    TokenVocab v;
    std::string line;
    std::size_t expect = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos) throw DataError("bad vocab line in " + path);
      std::size_t id = std::stoul(line.substr(0, tab));
      std::string tok = line.substr(tab + 1);
      if (id != expect) throw DataError("non-contiguous vocab ids in " + path);
      if (id < kNumReserved) {
        if (tok != v.tokens_[id]) throw DataError("reserved token mismatch in " + path);
      } else {
        v.push(tok);
      }
      ++expect;
    }
    return v;
  }

 private:
  int push(const std::string& token) {
    int id = static_cast<int>(tokens_.size());
    tokens_.push_back(token);
    ids_[token] = id;
    return id;
  }
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

class PredicateVocab {
 public:
  static constexpr int kStart = 0;  // reserved start-state marker

  PredicateVocab() { push("[START]"); }

  int add(const std::string& name) {
    std::string norm = normalize_name(name);
    auto it = ids_.find(norm);
    if (it != ids_.end()) return it->second;
    return push(norm);
  }

  // -1 when unknown.
  int find(const std::string& name) const {
    auto it = ids_.find(normalize_name(name));
    return it == ids_.end() ? -1 : it->second;
  }
  int id(const std::string& name) const {
    int r = find(name);
    if (r < 0) throw DataError("unknown predicate: " + name);
    return r;
  }
  const std::string& name(int id) const { return names_.at(id); }
  int size() const { return static_cast<int>(names_.size()); }  // K, start included

  static std::string normalize_name(const std::string& name) {
    std::string out;
    for (unsigned char ch : name) {
      if (std::isspace(ch))
        out.push_back('_');
      else
        out.push_back(static_cast<char>(std::tolower(ch)));
    }
    return out;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write vocab: " + path);
    out << "#factgen-vocab v1 predicates\n";
    for (std::size_t i = 0; i < names_.size(); ++i) out << i << '\t' << names_[i] << '\n';
  }

  static PredicateVocab load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open vocab: " + path);
    std::string header;
    std::getline(in, header);
    if (header != "#factgen-vocab v1 predicates")
      throw DataError("bad vocab header in " + path);
    PredicateVocab v;
    std::string line;
    std::size_t expect = 0;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      auto tab = line.find('\t');
      if (tab == std::string::npos) throw DataError("bad vocab line in " + path);
      std::size_t id = std::stoul(line.substr(0, tab));
      std::string name = line.substr(tab + 1);
      if (id != expect) throw DataError("non-contiguous vocab ids in " + path);
      if (id == 0) {
        if (name != "[START]") throw DataError("reserved predicate mismatch in " + path);
      } else {
        v.push(name);
      }
      ++expect;
    }
    return v;
  }

 private:
  int push(const std::string& name) {
    int id = static_cast<int>(names_.size());
    names_.push_back(name);
    ids_[name] = id;
    return id;
  }
  std::vector<std::string> names_;
  std::unordered_map<std::string, int> ids_;
};

// Tokens with corpus frequency below min_freq map to [UNK]. Ids are assigned
// by descending frequency, ties broken lexicographically, so rebuilding from
// the same corpus reproduces the same tables.
inline std::pair<TokenVocab, PredicateVocab> build_vocabs(const Corpus& corpus,
                                                          int min_freq = 1) {
  if (corpus.empty()) throw DataError("build_vocabs: empty corpus");
  std::map<std::string, std::int64_t> tok_freq;
  std::map<std::string, std::int64_t> pred_freq;
  for (const auto& inst : corpus) {
    for (const auto& tok : tokenize(inst.text)) ++tok_freq[tok];
    for (const auto& tr : inst.triples) {
      for (const auto& tok : tokenize(tr.subject)) ++tok_freq[tok];
      for (const auto& tok : tokenize(tr.predicate)) ++tok_freq[tok];
      for (const auto& tok : tokenize(tr.object)) ++tok_freq[tok];
      ++pred_freq[PredicateVocab::normalize_name(tr.predicate)];
    }
  }
  auto by_freq = [](const auto& freq_map) {
    std::vector<std::pair<std::string, std::int64_t>> items(freq_map.begin(),
                                                            freq_map.end());
    std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) {
      if (a.second != b.second) return a.second > b.second;
      return a.first < b.first;
    });
    return items;
  };
  TokenVocab tv;
  for (const auto& [tok, freq] : by_freq(tok_freq))
    if (freq >= min_freq) tv.add(tok);
  PredicateVocab pv;
  for (const auto& [name, freq] : by_freq(pred_freq)) pv.add(name);
  return {tv, pv};
}

// ---------------------------------------------------------------------------
// Input linearization
// ---------------------------------------------------------------------------

struct LinearizedInput {
  std::vector<int> tokens;
  std::vector<std::pair<int, int>> triple_spans;  // [begin, end), end past [SEP]
  std::vector<int> triple_predicates;             // predicate id per span
  int cls_index = 0;

  int length() const { return static_cast<int>(tokens.size()); }
};

// Layout: [CLS], then per triple its subject, predicate, and object tokens
// followed by [SEP].
inline LinearizedInput linearize_input(const Instance& inst, const TokenVocab& tv,
                                       const PredicateVocab& pv) {
  LinearizedInput lin;
  lin.tokens.push_back(TokenVocab::kCls);
  lin.cls_index = 0;
  for (const auto& tr : inst.triples) {
    int begin = static_cast<int>(lin.tokens.size());
    for (const auto& t : tokenize(tr.subject)) lin.tokens.push_back(tv.id(t));
    for (const auto& t : tokenize(tr.predicate)) lin.tokens.push_back(tv.id(t));
    for (const auto& t : tokenize(tr.object)) lin.tokens.push_back(tv.id(t));
    lin.tokens.push_back(TokenVocab::kSep);
    lin.triple_spans.emplace_back(begin, static_cast<int>(lin.tokens.size()));
    lin.triple_predicates.push_back(pv.id(tr.predicate));
  }
  return lin;
}

// ---------------------------------------------------------------------------
// Plans
// ---------------------------------------------------------------------------

using PlanGroup = std::vector<int>;  // ordered predicate ids

struct Plan {
  std::vector<PlanGroup> groups;

  bool operator==(const Plan& other) const { return groups == other.groups; }

  std::vector<int> flattened() const {
    std::vector<int> out;
    for (const auto& g : groups) out.insert(out.end(), g.begin(), g.end());
    return out;
  }
};

// Grammar: plan := group+ ; group := '[' pred (ws pred)* ']'. Predicate names
// are matched case-insensitively; multi-word names use underscores.
inline Plan parse_plan(const std::string& text, const PredicateVocab& pv,
                       int max_group_size = 3) {
  Plan plan;
  std::vector<bool> seen(pv.size(), false);
  std::size_t i = 0;
  auto skip_ws = [&] {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
  };
  skip_ws();
  if (i >= text.size()) throw DataError("empty plan string");
  while (i < text.size()) {
    if (text[i] != '[') throw DataError("expected '[' in plan string");
    ++i;
    PlanGroup group;
    std::string name;
    while (i < text.size() && text[i] != ']' && text[i] != '[') {
      if (std::isspace(static_cast<unsigned char>(text[i]))) {
        if (!name.empty()) {
          group.push_back(pv.id(name));
          name.clear();
        }
      } else {
        name.push_back(text[i]);
      }
      ++i;
    }
    if (i >= text.size() || text[i] != ']') throw DataError("unbalanced brackets in plan string");
    ++i;
    if (!name.empty()) group.push_back(pv.id(name));
    if (group.empty()) throw DataError("empty group in plan string");
    if (static_cast<int>(group.size()) > max_group_size)
      throw DataError("plan group exceeds max group size " + std::to_string(max_group_size));
    for (int p : group) {
      if (seen[p]) throw DataError("duplicate predicate in plan: " + pv.name(p));
      seen[p] = true;
    }
    plan.groups.push_back(std::move(group));
    skip_ws();
  }
  return plan;
}

inline std::string format_plan(const Plan& plan, const PredicateVocab& pv) {
  std::string out;
  for (const auto& g : plan.groups) {
    out.push_back('[');
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (i) out.push_back(' ');
      out += pv.name(g[i]);
    }
    out.push_back(']');
  }
  return out;
}

}  // namespace factgen
