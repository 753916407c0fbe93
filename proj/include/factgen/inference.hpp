#pragma once

// The three-stage inference pipeline (input ordering, input aggregation, text
// generation), plan-controlled generation, ablation modes, and the Viterbi
// and rule-based aligners.

#include "factgen/data.hpp"
#include "factgen/emission.hpp"
#include "factgen/training.hpp"
#include "factgen/transition.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace factgen {

// ---------------------------------------------------------------------------
// Input ordering
// ---------------------------------------------------------------------------

struct OrderingHypothesis {
  std::vector<int> predicates;  // a full permutation of the instance predicates
  double log_score = 0.0;
};

// Left-to-right beam search over in-parameter transition rows. Emitted
// predicates are removed from the masking set, so every hypothesis is a
// permutation: no omission, no duplication. Ties break lexicographically on
// the predicate sequence.
inline std::vector<OrderingHypothesis> order_predicates(const TransitionParams& tp,
                                                        const MaskContext& ctx, int k) {
  if (k < 1) throw DataError("order_predicates: beam width must be >= 1");
  NoGradGuard no_grad;
  const int n = static_cast<int>(ctx.preds.size());

  struct Hyp {
    std::vector<int> seq;
    std::vector<std::uint8_t> remaining;  // over ctx.k
    double score = 0.0;
  };
  auto better = [](const Hyp& a, const Hyp& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.seq < b.seq;
  };

  Hyp root;
  root.remaining.assign(ctx.k, 0);
  for (int p : ctx.preds) root.remaining[p] = 1;
  std::vector<Hyp> live = {root};
  // Row cache keyed by (from, remaining-set bitmask over ctx.preds).
  std::map<std::pair<int, std::uint64_t>, std::vector<double>> row_cache;
  auto remaining_bits = [&](const std::vector<std::uint8_t>& rem) {
    std::uint64_t bits = 0;
    for (int i = 0; i < n; ++i)
      if (rem[ctx.preds[i]]) bits |= (1ull << i);
    return bits;
  };

  for (int step = 0; step < n; ++step) {
    std::vector<Hyp> expansions;
    for (const auto& hyp : live) {
      const int from = hyp.seq.empty() ? PredicateVocab::kStart : hyp.seq.back();
      const auto key = std::make_pair(from, remaining_bits(hyp.remaining));
      auto it = row_cache.find(key);
      if (it == row_cache.end()) {
        Tensor row = transition_log_row(tp, ParamSet::kIn, from, hyp.remaining);
        it = row_cache.emplace(key, row.values()).first;
      }
      for (int p : ctx.preds) {
        if (!hyp.remaining[p]) continue;
        Hyp next = hyp;
        next.seq.push_back(p);
        next.remaining[p] = 0;
        next.score += it->second[p];
        expansions.push_back(std::move(next));
      }
    }
    std::sort(expansions.begin(), expansions.end(), better);
    if (static_cast<int>(expansions.size()) > k) expansions.resize(k);
    live = std::move(expansions);
  }
  std::vector<OrderingHypothesis> out;
  out.reserve(live.size());
  for (auto& hyp : live) out.push_back({std::move(hyp.seq), hyp.score});
  return out;
}

// ---------------------------------------------------------------------------
// Input aggregation
// ---------------------------------------------------------------------------

struct ScoredPlan {
  Plan plan;
  double log_score = 0.0;
};

namespace detail {

inline std::vector<std::vector<int>> compositions_with_cap(int n, int cap) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  auto recurse = [&](auto&& self, int left) -> void {
    if (left == 0) {
      out.push_back(cur);
      return;
    }
    for (int part = 1; part <= std::min(cap, left); ++part) {
      cur.push_back(part);
      self(self, left - part);
      cur.pop_back();
    }
  };
  recurse(recurse, n);
  return out;
}

}  // namespace detail

// Enumerates every wait/emit grouping of the ordering (final position always
// emits), discards groupings with a group above max_group_size, and ranks by
// the summed out-parameter boundary transitions. The first group contributes
// no score; single-group plans score 0. When score_in_params is set, the
// within-group in-parameter chains are added as well (the full latent plan
// probability). Ties break toward fewer groups, then lexicographically.
inline std::vector<ScoredPlan> aggregate(const std::vector<int>& ordering,
                                         const TransitionParams& tp,
                                         const MaskContext& ctx, int top_n,
                                         int max_group_size,
                                         bool score_in_params = false) {
  if (ordering.empty()) throw DataError("aggregate: empty ordering");
  if (top_n < 1) throw DataError("aggregate: top_n must be >= 1");
  NoGradGuard no_grad;
  TransitionScorer scorer(tp, ctx);
  const int len = static_cast<int>(ordering.size());

  std::vector<ScoredPlan> plans;
  for (const auto& comp : detail::compositions_with_cap(len, max_group_size)) {
    Plan plan;
    int pos = 0;
    for (int part : comp) {
      plan.groups.emplace_back(ordering.begin() + pos, ordering.begin() + pos + part);
      pos += part;
    }
    double score = 0.0;
    for (std::size_t g = 1; g < plan.groups.size(); ++g)
      score += scorer
                   .log_prob(ParamSet::kOut, plan.groups[g - 1].back(),
                             plan.groups[g][0])
                   .value();
    if (score_in_params)
      for (const auto& group : plan.groups)
        score += scorer.log_state_prob(group).value();
    plans.push_back({std::move(plan), score});
  }
  std::sort(plans.begin(), plans.end(), [](const ScoredPlan& a, const ScoredPlan& b) {
    if (a.log_score != b.log_score) return a.log_score > b.log_score;
    if (a.plan.groups.size() != b.plan.groups.size())
      return a.plan.groups.size() < b.plan.groups.size();
    return a.plan.groups < b.plan.groups;
  });
  if (static_cast<int>(plans.size()) > top_n) plans.resize(top_n);
  return plans;
}

// Full latent plan probability log p(z | x): each group's generation chain
// plus the out-parameter links between consecutive groups.
inline double plan_log_prob(const Plan& plan, const TransitionParams& tp,
                            const MaskContext& ctx) {
  NoGradGuard no_grad;
  TransitionScorer scorer(tp, ctx);
  double total = 0.0;
  for (const auto& group : plan.groups) total += scorer.log_state_prob(group).value();
  for (std::size_t g = 1; g < plan.groups.size(); ++g)
    total += scorer
                 .log_prob(ParamSet::kOut, plan.groups[g - 1].back(), plan.groups[g][0])
                 .value();
  return total;
}

// ---------------------------------------------------------------------------
// Text generation
// ---------------------------------------------------------------------------

enum class GenerationMode { kFull, kNoOrdering, kNoAggregation };

inline GenerationMode parse_mode(const std::string& name) {
  if (name == "full") return GenerationMode::kFull;
  if (name == "no-ordering" || name == "no_ordering") return GenerationMode::kNoOrdering;
  if (name == "no-aggregation" || name == "no_aggregation")
    return GenerationMode::kNoAggregation;
  throw DataError("unknown generation mode: " + name);
}

struct GenerateOptions {
  int k = 3;           // orderings kept
  int n = 3;           // aggregations kept per ordering
  int beam_width = 5;  // token beam
  int max_fact_len = 32;
  GenerationMode mode = GenerationMode::kFull;
  std::optional<int> max_group_size_override;  // aggregation-level control
  int max_group_size = 3;
  bool agg_score_in_params = false;
  std::uint64_t shuffle_seed = 0;  // used by the no-ordering ablation
};

struct GenerationResult {
  Plan plan;
  std::string text;
  std::vector<std::string> fact_texts;
  double log_joint = 0.0;
  double log_text = 0.0;
  double log_plan = 0.0;
};

namespace detail {

struct DecodedPlan {
  std::vector<std::string> fact_texts;
  double log_text = 0.0;
};

inline DecodedPlan decode_plan(const EmissionModel& m, const Encoded& enc,
                               const Plan& plan, const TokenVocab& tv, int beam_width,
                               int max_fact_len) {
  DecodedPlan out;
  std::vector<int> history;
  for (const auto& group : plan.groups) {
    DecodeResult res = decode_fact(m, enc, group, history, beam_width, max_fact_len);
    out.log_text += res.log_prob;
    std::vector<int> content = res.tokens;
    if (!content.empty() && content.back() == TokenVocab::kFactEnd) content.pop_back();
    std::vector<std::string> words;
    for (int id : content) words.push_back(tv.token(id));
    out.fact_texts.push_back(join_tokens(words));
    history.push_back(TokenVocab::kFactStart);
    history.insert(history.end(), content.begin(), content.end());
    history.push_back(TokenVocab::kFactEnd);
  }
  return out;
}

}  // namespace detail

// Joint prediction: builds the candidate plan set for the requested mode,
// decodes each plan fact by fact with a growing history, and returns the
// candidate maximizing log p(y|z,x) + log p(z|x).
inline GenerationResult generate(Model& model, const Instance& inst,
                                 const TokenVocab& tv, const PredicateVocab& pv,
                                 const GenerateOptions& opts) {
  if (inst.triples.empty()) throw DataError("generate: no input triples");
  LinearizedInput lin = linearize_input(inst, tv, pv);
  MaskContext ctx = MaskContext::from_instance(inst, pv);
  const int cap = opts.max_group_size_override.value_or(opts.max_group_size);

  std::vector<Plan> candidates;
  auto add_plan = [&](Plan plan) {
    if (std::find(candidates.begin(), candidates.end(), plan) == candidates.end())
      candidates.push_back(std::move(plan));
  };
  switch (opts.mode) {
    case GenerationMode::kFull: {
      for (const auto& ordering : order_predicates(model.transition, ctx, opts.k))
        for (auto& sp : aggregate(ordering.predicates, model.transition, ctx, opts.n,
                                  cap, opts.agg_score_in_params))
          add_plan(std::move(sp.plan));
      break;
    }
    case GenerationMode::kNoOrdering: {
      std::vector<int> shuffled = ctx.preds;
      std::mt19937_64 rng(opts.shuffle_seed);
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      for (auto& sp : aggregate(shuffled, model.transition, ctx, opts.n, cap,
                                opts.agg_score_in_params))
        add_plan(std::move(sp.plan));
      break;
    }
    case GenerationMode::kNoAggregation: {
      for (const auto& ordering : order_predicates(model.transition, ctx, opts.k)) {
        Plan plan;
        for (int p : ordering.predicates) plan.groups.push_back({p});
        add_plan(std::move(plan));
      }
      break;
    }
  }

  NoGradGuard no_grad;
  Encoded enc = encode(model.emission, lin);
  GenerationResult best;
  bool have_best = false;
  for (const auto& plan : candidates) {
    detail::DecodedPlan dec = detail::decode_plan(model.emission, enc, plan, tv,
                                                  opts.beam_width, opts.max_fact_len);
    const double lp_plan = plan_log_prob(plan, model.transition, ctx);
    const double joint = dec.log_text + lp_plan;
    if (!have_best || joint > best.log_joint) {
      best.plan = plan;
      best.fact_texts = dec.fact_texts;
      best.text = join_tokens(best.fact_texts);
      best.log_text = dec.log_text;
      best.log_plan = lp_plan;
      best.log_joint = joint;
      have_best = true;
    }
  }
  return best;
}

// Decodes a human-written plan. The plan must cover the instance predicates
// exactly once and respect the group-size cap.
inline GenerationResult generate_with_plan(Model& model, const Instance& inst,
                                           const Plan& plan, const TokenVocab& tv,
                                           const PredicateVocab& pv, int beam_width = 5,
                                           int max_fact_len = 32, int max_group_size = 3) {
  LinearizedInput lin = linearize_input(inst, tv, pv);
  MaskContext ctx = MaskContext::from_instance(inst, pv);
  std::vector<int> flat = plan.flattened();
  std::sort(flat.begin(), flat.end());
  if (flat != ctx.preds)
    throw DataError("plan is not an exact cover of the instance predicates");
  for (const auto& g : plan.groups)
    if (static_cast<int>(g.size()) > max_group_size)
      throw DataError("plan group exceeds max group size");

  NoGradGuard no_grad;
  Encoded enc = encode(model.emission, lin);
  detail::DecodedPlan dec =
      detail::decode_plan(model.emission, enc, plan, tv, beam_width, max_fact_len);
  GenerationResult out;
  out.plan = plan;
  out.fact_texts = dec.fact_texts;
  out.text = join_tokens(out.fact_texts);
  out.log_text = dec.log_text;
  out.log_plan = plan_log_prob(plan, model.transition, ctx);
  out.log_joint = out.log_text + out.log_plan;
  return out;
}

// ---------------------------------------------------------------------------
// Alignment
// ---------------------------------------------------------------------------

// Per-fact predicate sets (sorted ids).
using Alignment = std::vector<std::vector<int>>;

struct ViterbiResult {
  Alignment alignment;
  std::vector<StateCandidate> path;
  double log_score = 0.0;
};

// Max-product analogue of the backward recurrence over the unpruned candidate
// space. Ties resolve toward the earlier candidate in enumeration order.
inline ViterbiResult viterbi_align(Model& model, const Instance& inst,
                                   const TokenVocab& tv, const PredicateVocab& pv,
                                   int max_group_size = 3) {
  NoGradGuard no_grad;
  PreparedInstance p =
      prepare_instance(inst, tv, pv, max_group_size, /*hard_pruning=*/false);
  const int t_count = p.facts.count();
  const int n_cand = static_cast<int>(p.candidates.size());

  Encoded enc = encode(model.emission, p.lin);
  detail::EmissionCache emis_cache(model.emission, enc, p.facts);
  TransitionScorer scorer(model.transition, p.ctx);

  std::vector<double> gen(n_cand);
  for (int ci = 0; ci < n_cand; ++ci)
    gen[ci] = scorer.log_state_prob(p.candidates[ci]).value();
  std::vector<std::vector<double>> emis(t_count, std::vector<double>(n_cand));
  for (int t = 0; t < t_count; ++t)
    for (int ci = 0; ci < n_cand; ++ci)
      emis[t][ci] = emis_cache.get(t, p.candidates[ci]).value();

  std::vector<std::vector<double>> delta(t_count, std::vector<double>(n_cand));
  std::vector<std::vector<int>> back(t_count, std::vector<int>(n_cand, -1));
  for (int ci = 0; ci < n_cand; ++ci) delta[0][ci] = gen[ci] + emis[0][ci];
  for (int t = 1; t < t_count; ++t) {
    for (int ci = 0; ci < n_cand; ++ci) {
      double best = -std::numeric_limits<double>::infinity();
      int arg = -1;
      for (int cp = 0; cp < n_cand; ++cp) {
        const double cand =
            delta[t - 1][cp] +
            scorer.log_prob(ParamSet::kOut, p.candidates[cp].back(), p.candidates[ci][0])
                .value();
        if (cand > best) {
          best = cand;
          arg = cp;
        }
      }
      delta[t][ci] = best + gen[ci] + emis[t][ci];
      back[t][ci] = arg;
    }
  }
  double best = -std::numeric_limits<double>::infinity();
  int arg = -1;
  for (int ci = 0; ci < n_cand; ++ci) {
    if (delta[t_count - 1][ci] > best) {
      best = delta[t_count - 1][ci];
      arg = ci;
    }
  }
  ViterbiResult out;
  out.log_score = best;
  std::vector<int> path_idx(t_count);
  for (int t = t_count - 1; t >= 0; --t) {
    path_idx[t] = arg;
    if (t > 0) arg = back[t][arg];
  }
  for (int t = 0; t < t_count; ++t) {
    out.path.push_back(p.candidates[path_idx[t]]);
    std::vector<int> preds = p.candidates[path_idx[t]];
    std::sort(preds.begin(), preds.end());
    out.alignment.push_back(std::move(preds));
  }
  return out;
}

// Aligns each triple to the fact with the greatest predicate+object token
// overlap; every triple is aligned, ties go to the earlier fact.
inline Alignment rule_align(const Instance& inst, const std::vector<std::string>& facts,
                            const PredicateVocab& pv) {
  if (facts.empty()) throw DataError("rule_align: no facts");
  std::vector<std::set<std::string>> fact_tokens;
  for (const auto& f : facts) {
    auto toks = tokenize(f);
    fact_tokens.emplace_back(toks.begin(), toks.end());
  }
  Alignment out(facts.size());
  for (const auto& tr : inst.triples) {
    std::set<std::string> ref;
    for (const auto& t : tokenize(tr.predicate)) ref.insert(t);
    for (const auto& t : tokenize(tr.object)) ref.insert(t);
    int best_overlap = -1;
    std::size_t best_fact = 0;
    for (std::size_t f = 0; f < facts.size(); ++f) {
      int overlap = 0;
      for (const auto& t : ref) overlap += fact_tokens[f].count(t);
      if (overlap > best_overlap) {
        best_overlap = overlap;
        best_fact = f;
      }
    }
    out[best_fact].push_back(pv.id(tr.predicate));
  }
  for (auto& f : out) std::sort(f.begin(), f.end());
  return out;
}

}  // namespace factgen
