#pragma once

// Synthetic-corpus generation for end-to-end verification. The predicate
// inventory is partitioned into aggregation units (pairs, optionally one
// triple, and lone predicates). An instance samples a subset of units, so
// whether two predicates share a fact never depends on the rest of the
// instance, which keeps the gold plans representable by masked bigram
// transitions. Units are realized with fused surface templates (a head
// clause followed by a tail clause), every clause mentions its predicate
// name and object value verbatim, and lone units verbalize last.

#include <json.hpp>

#include "factgen/data.hpp"
#include "factgen/evaluation.hpp"

#include <fstream>
#include <random>
#include <string>
#include <vector>

namespace factgen {

struct SynthPredicate {
  std::string name;
  std::vector<std::string> values;
  std::string head;  // clause with {OBJECT}; solo and group-initial use
  std::string tail;  // clause with {OBJECT}; group-final use
};

// An aggregation unit: the ordered predicate names it covers and, for
// triples, an explicit fused template plus per-predicate slot patterns.
struct SynthUnit {
  std::vector<std::string> names;     // size 1, 2, or 3
  std::string template_text;          // triples only: {SUBJECT}, {OBJECT1..3}
  std::vector<std::string> patterns;  // triples only: per-predicate patterns
};

struct SynthSpec {
  std::vector<std::string> subjects;
  std::vector<SynthPredicate> predicates;  // canonical inventory order
  std::vector<SynthUnit> units;            // partition of the inventory
  std::string solo_template = "{SUBJECT} {C1} .";
  std::string pair_template = "{SUBJECT} {C1} {C2} .";
  double canonical_weight = 0.8;  // remaining mass reverses one pair unit
  int j_min = 1;
  int j_max = 5;

  void validate() const {
    if (subjects.empty()) throw DataError("SynthSpec: no subjects");
    if (predicates.empty()) throw DataError("SynthSpec: no predicates");
    for (const auto& p : predicates) {
      if (p.values.empty())
        throw DataError("SynthSpec: predicate without values: " + p.name);
      if (p.head.find("{OBJECT}") == std::string::npos)
        throw DataError("SynthSpec: solo template must mention {OBJECT}: " + p.name);
    }
    if (units.empty()) throw DataError("SynthSpec: no units");
    std::vector<bool> covered(predicates.size(), false);
    for (const auto& u : units) {
      if (u.names.empty() || u.names.size() > 3)
        throw DataError("SynthSpec: unit size must be 1..3");
      if (u.names.size() == 3 &&
          (u.template_text.empty() || u.patterns.size() != 3))
        throw DataError("SynthSpec: triple unit needs a template and three patterns");
      for (const auto& n : u.names) {
        int idx = find_predicate(n);
        if (idx < 0) throw DataError("SynthSpec: unit names unknown predicate " + n);
        if (covered[idx]) throw DataError("SynthSpec: predicate in two units: " + n);
        covered[idx] = true;
      }
    }
    for (std::size_t i = 0; i < covered.size(); ++i)
      if (!covered[i])
        throw DataError("SynthSpec: predicate not covered by a unit: " +
                        predicates[i].name);
    if (j_min < 1 || j_max < j_min || j_max > static_cast<int>(predicates.size()))
      throw DataError("SynthSpec: bad instance-size range");
    if (canonical_weight < 0.0 || canonical_weight > 1.0)
      throw DataError("SynthSpec: canonical_weight must be in [0,1]");
  }

  int find_predicate(const std::string& name) const {
    for (std::size_t i = 0; i < predicates.size(); ++i)
      if (predicates[i].name == name) return static_cast<int>(i);
    return -1;
  }

  static SynthSpec defaults();
  static SynthSpec load_file(const std::string& path);
  void save(const std::string& path) const;
};

inline SynthSpec SynthSpec::defaults() {
  SynthSpec s;
  s.subjects = {"alimentum", "aromi",  "cotto",    "fitzbillies",
                "giraffe",   "strada", "wildwood", "zizzi"};
  s.predicates = {
      {"venue", {"pub", "restaurant", "bistro", "tavern"},
       "is a {OBJECT} venue", "at a {OBJECT} venue"},
      {"food", {"french", "chinese", "english", "italian", "indian"},
       "serves {OBJECT} food", "serving {OBJECT} food"},
      {"prices", {"cheap", "moderate", "expensive"},
       "has {OBJECT} prices", "with {OBJECT} prices"},
      {"rating", {"poor", "average", "excellent"},
       "earned a {OBJECT} rating", "with a {OBJECT} rating"},
      {"area", {"riverside", "downtown", "midtown"},
       "lies in the {OBJECT} area", "in the {OBJECT} area"},
      {"kids", {"great", "bad"},
       "is {OBJECT} for kids", "and is {OBJECT} for kids"},
      {"near", {"greenpark", "cityhall", "riverplaza"},
       "stands near {OBJECT}", "near the {OBJECT} spot"},
      {"calls", {"5550100", "5550123", "5550147"},
       "answers calls at {OBJECT}", "taking calls at {OBJECT}"},
  };
  s.units = {
      {{"venue", "food"}, "", {}},
      {{"prices", "rating", "area"},
       "{SUBJECT} has {OBJECT1} prices with a {OBJECT2} rating in the {OBJECT3} area .",
       {"has {OBJECT} prices", "with a {OBJECT} rating", "in the {OBJECT} area"}},
      {{"kids", "near"}, "", {}},
      {{"calls"}, "", {}},
  };
  return s;
}

inline SynthSpec SynthSpec::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open synth spec: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("bad synth spec json: ") + e.what());
  }
  SynthSpec s;
  s.subjects = j.at("subjects").get<std::vector<std::string>>();
  for (const auto& p : j.at("predicates")) {
    s.predicates.push_back({p.at("name").get<std::string>(),
                            p.at("values").get<std::vector<std::string>>(),
                            p.at("head").get<std::string>(),
                            p.value("tail", std::string())});
  }
  for (const auto& u : j.at("units")) {
    SynthUnit unit;
    unit.names = u.at("names").get<std::vector<std::string>>();
    unit.template_text = u.value("template", std::string());
    if (u.contains("patterns"))
      unit.patterns = u["patterns"].get<std::vector<std::string>>();
    s.units.push_back(std::move(unit));
  }
  s.solo_template = j.value("solo_template", s.solo_template);
  s.pair_template = j.value("pair_template", s.pair_template);
  s.canonical_weight = j.value("canonical_weight", s.canonical_weight);
  s.j_min = j.value("j_min", s.j_min);
  s.j_max = j.value("j_max", s.j_max);
  s.validate();
  return s;
}

inline void SynthSpec::save(const std::string& path) const {
  nlohmann::json j;
  j["subjects"] = subjects;
  j["predicates"] = nlohmann::json::array();
  for (const auto& p : predicates)
    j["predicates"].push_back(
        {{"name", p.name}, {"values", p.values}, {"head", p.head}, {"tail", p.tail}});
  j["units"] = nlohmann::json::array();
  for (const auto& u : units)
    j["units"].push_back(
        {{"names", u.names}, {"template", u.template_text}, {"patterns", u.patterns}});
  j["solo_template"] = solo_template;
  j["pair_template"] = pair_template;
  j["canonical_weight"] = canonical_weight;
  j["j_min"] = j_min;
  j["j_max"] = j_max;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write synth spec: " + path);
  out << j.dump(2) << '\n';
}

struct SynthOutput {
  Corpus corpus;
  std::vector<std::string> plan_strings;  // gold plan per instance
  SlotPatternFile patterns;
};

namespace detail {

inline std::string replace_all(std::string text, const std::string& from,
                               const std::string& to) {
  std::size_t pos = 0;
  while ((pos = text.find(from, pos)) != std::string::npos) {
    text.replace(pos, from.size(), to);
    pos += to.size();
  }
  return text;
}

}  // namespace detail

// Deterministic under the seed. Instances carry gold facts (one per plan
// group), and the emitted pattern file covers every clause variant the
// generator can produce.
inline SynthOutput synth_corpus(const SynthSpec& spec, int count, std::uint64_t seed) {
  spec.validate();
  SynthOutput out;
  for (const auto& p : spec.predicates) {
    out.patterns.add(p.name, p.head);
    if (!p.tail.empty()) out.patterns.add(p.name, p.tail);
  }
  for (const auto& u : spec.units)
    for (std::size_t k = 0; k < u.patterns.size(); ++k)
      out.patterns.add(u.names[k], u.patterns[k]);

  std::mt19937_64 rng(seed);
  const int n_units = static_cast<int>(spec.units.size());
  for (int i = 0; i < count; ++i) {
    const std::string& subject =
        spec.subjects[std::uniform_int_distribution<int>(
            0, static_cast<int>(spec.subjects.size()) - 1)(rng)];

    // Sample unit-inclusion flags until the size range is honored.
    std::vector<int> chosen_units;
    for (;;) {
      chosen_units.clear();
      int j = 0;
      for (int u = 0; u < n_units; ++u) {
        if (std::uniform_int_distribution<int>(0, 1)(rng)) {
          chosen_units.push_back(u);
          j += static_cast<int>(spec.units[u].names.size());
        }
      }
      if (j >= spec.j_min && j <= spec.j_max) break;
    }

    // Groups: non-lone units in inventory order, then lone units.
    std::vector<std::vector<int>> groups;
    for (int pass = 0; pass < 2; ++pass) {
      for (int u : chosen_units) {
        const auto& unit = spec.units[u];
        const bool lone = unit.names.size() == 1;
        if ((pass == 0) == lone) continue;
        std::vector<int> group;
        for (const auto& n : unit.names) group.push_back(spec.find_predicate(n));
        groups.push_back(std::move(group));
      }
    }

    // Plan noise: with the complementary weight, reverse one pair group.
    if (std::uniform_real_distribution<double>(0.0, 1.0)(rng) >=
        spec.canonical_weight) {
      std::vector<int> pair_indices;
      for (std::size_t g = 0; g < groups.size(); ++g)
        if (groups[g].size() == 2) pair_indices.push_back(static_cast<int>(g));
      if (!pair_indices.empty()) {
        int g = pair_indices[std::uniform_int_distribution<int>(
            0, static_cast<int>(pair_indices.size()) - 1)(rng)];
        std::reverse(groups[g].begin(), groups[g].end());
      }
    }

    std::vector<std::string> objects(spec.predicates.size());
    std::vector<int> chosen_preds;
    for (const auto& g : groups)
      for (int p : g) chosen_preds.push_back(p);
    std::sort(chosen_preds.begin(), chosen_preds.end());
    for (int p : chosen_preds) {
      const auto& values = spec.predicates[p].values;
      objects[p] = values[std::uniform_int_distribution<int>(
          0, static_cast<int>(values.size()) - 1)(rng)];
    }

    Instance inst;
    for (int p : chosen_preds)
      inst.triples.push_back({subject, spec.predicates[p].name, objects[p]});
    std::string plan_string;
    for (std::size_t g = 0; g < groups.size(); ++g) {
      const auto& group = groups[g];
      const std::string subj = g == 0 ? subject : "it";
      std::string fact;
      if (group.size() == 1) {
        const auto& p = spec.predicates[group[0]];
        std::string clause = detail::replace_all(p.head, "{OBJECT}", objects[group[0]]);
        fact = detail::replace_all(
            detail::replace_all(spec.solo_template, "{SUBJECT}", subj), "{C1}", clause);
      } else if (group.size() == 2) {
        const auto& first = spec.predicates[group[0]];
        const auto& second = spec.predicates[group[1]];
        if (second.tail.empty())
          throw DataError("synth spec has no pair template position for predicate " +
                          second.name);
        std::string c1 = detail::replace_all(first.head, "{OBJECT}", objects[group[0]]);
        std::string c2 = detail::replace_all(second.tail, "{OBJECT}", objects[group[1]]);
        fact = detail::replace_all(
            detail::replace_all(
                detail::replace_all(spec.pair_template, "{SUBJECT}", subj), "{C1}", c1),
            "{C2}", c2);
      } else {
        // Triple groups come from a unit that carries its own template.
        const SynthUnit* unit = nullptr;
        for (const auto& u : spec.units) {
          if (u.names.size() != 3) continue;
          bool match = true;
          for (int k = 0; k < 3; ++k)
            if (spec.find_predicate(u.names[k]) != group[k]) match = false;
          if (match) {
            unit = &u;
            break;
          }
        }
        if (!unit || unit->template_text.empty())
          throw DataError("synth spec has no template for a sampled triple group");
        fact = detail::replace_all(unit->template_text, "{SUBJECT}", subj);
        for (int k = 0; k < 3; ++k)
          fact = detail::replace_all(fact, "{OBJECT" + std::to_string(k + 1) + "}",
                                     objects[group[k]]);
      }
      inst.facts.push_back(normalize_whitespace(fact));
      plan_string.push_back('[');
      for (std::size_t k = 0; k < group.size(); ++k) {
        if (k) plan_string.push_back(' ');
        plan_string += spec.predicates[group[k]].name;
      }
      plan_string.push_back(']');
    }
    std::string text;
    for (std::size_t f = 0; f < inst.facts.size(); ++f) {
      if (f) text.push_back(' ');
      text += inst.facts[f];
    }
    inst.text = text;
    out.corpus.push_back(std::move(inst));
    out.plan_strings.push_back(std::move(plan_string));
  }
  return out;
}

inline void save_plans(const std::vector<std::string>& plans, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write plans file: " + path);
  for (const auto& p : plans) {
    nlohmann::json j;
    j["plan"] = p;
    out << j.dump() << '\n';
  }
}

inline std::vector<std::string> load_plans(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open plans file: " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(nlohmann::json::parse(line).at("plan").get<std::string>());
  }
  return out;
}

}  // namespace factgen
