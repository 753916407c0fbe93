#pragma once

// Latent-state machinery: masked predicate transition rows, state
// enumeration, state generation probability, and cross-state transitions.
// Within-state chains use the "in" parameter pair, the link between the last
// predicate of one state and the first predicate of the next uses "out".

#include "factgen/data.hpp"
#include "factgen/numeric.hpp"

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

namespace factgen {

struct TransitionParams {
  Tensor a_in, b_in, a_out, b_out;
  int k = 0;  // predicate vocabulary size, start marker included
  int m = 0;  // embedding dimension

  static TransitionParams create(ParamStore& store, int k, int m,
                                 std::mt19937_64& rng, double init_std = 0.1) {
    TransitionParams tp;
    tp.k = k;
    tp.m = m;
    tp.a_in = store.add("transition.a_in", {k, m});
    tp.b_in = store.add("transition.b_in", {m, k});
    tp.a_out = store.add("transition.a_out", {k, m});
    tp.b_out = store.add("transition.b_out", {m, k});
    fill_normal(tp.a_in, init_std, rng);
    fill_normal(tp.b_in, init_std, rng);
    fill_normal(tp.a_out, init_std, rng);
    fill_normal(tp.b_out, init_std, rng);
    return tp;
  }

  static TransitionParams attach(ParamStore& store) {
    TransitionParams tp;
    tp.a_in = store.at("transition.a_in");
    tp.b_in = store.at("transition.b_in");
    tp.a_out = store.at("transition.a_out");
    tp.b_out = store.at("transition.b_out");
    tp.k = tp.a_in.rows();
    tp.m = tp.a_in.cols();
    return tp;
  }
};

enum class ParamSet { kIn, kOut };

// The set q of predicate ids present in one instance, plus the start marker.
struct MaskContext {
  std::vector<int> preds;  // sorted distinct instance predicates, start excluded
  int k = 0;

  static MaskContext from_predicates(std::vector<int> predicate_ids, int k) {
    MaskContext ctx;
    ctx.k = k;
    std::sort(predicate_ids.begin(), predicate_ids.end());
    predicate_ids.erase(std::unique(predicate_ids.begin(), predicate_ids.end()),
                        predicate_ids.end());
    for (int p : predicate_ids) {
      if (p <= 0 || p >= k) throw DataError("MaskContext: predicate id out of range");
    }
    ctx.preds = std::move(predicate_ids);
    return ctx;
  }

  static MaskContext from_instance(const Instance& inst, const PredicateVocab& pv) {
    std::vector<int> ids;
    for (const auto& t : inst.triples) ids.push_back(pv.id(t.predicate));
    return from_predicates(std::move(ids), pv.size());
  }

  bool in_q(int id) const {
    if (id == PredicateVocab::kStart) return true;
    return std::binary_search(preds.begin(), preds.end(), id);
  }

  // Column mask of M(q): valid transition targets, start excluded.
  std::vector<std::uint8_t> target_mask() const {
    std::vector<std::uint8_t> mask(k, 0);
    for (int p : preds) mask[p] = 1;
    return mask;
  }
};

// An ordered group of distinct instance predicates: one latent state.
using StateCandidate = std::vector<int>;

namespace detail {

inline Tensor transition_logits_row(const TransitionParams& tp, ParamSet set, int from) {
  const Tensor& a = set == ParamSet::kIn ? tp.a_in : tp.a_out;
  const Tensor& b = set == ParamSet::kIn ? tp.b_in : tp.b_out;
  return matmul(rows_gather(a, {from}), b);  // [1 x K]
}

}  // namespace detail

// Log-probability row over an explicit target set. The beam stages shrink the
// target set as predicates are emitted, so this is the shared primitive.
inline Tensor transition_log_row(const TransitionParams& tp, ParamSet set, int from,
                                 const std::vector<std::uint8_t>& allowed_targets) {
  return masked_log_softmax(detail::transition_logits_row(tp, set, from),
                            allowed_targets);
}

// Probability row of the masked-softmax transition matrix for `from` under
// M(q): support is exactly q minus the start marker.
inline Tensor transition_row(const TransitionParams& tp, ParamSet set, int from,
                             const MaskContext& ctx) {
  if (!ctx.in_q(from)) throw DataError("transition_row: from-predicate not in q");
  Tensor logits = detail::transition_logits_row(tp, set, from);
  std::vector<double> mask_values(tp.k, 0.0);
  for (int p : ctx.preds) mask_values[p] = 1.0;
  Tensor mask = Tensor::from_values({1, tp.k}, std::move(mask_values));
  return masked_softmax(logits, mask);
}

// All ordered tuples of distinct instance predicates with length in
// [1, max_group_size], ordered by length then lexicographically by ids.
inline std::vector<StateCandidate> enumerate_states(const MaskContext& ctx,
                                                    int max_group_size) {
  std::vector<StateCandidate> out;
  const int n = static_cast<int>(ctx.preds.size());
  const int cap = std::min(max_group_size, n);
  StateCandidate cur;
  std::vector<bool> used(n, false);
  auto recurse = [&](auto&& self, int remaining) -> void {
    if (remaining == 0) {
      out.push_back(cur);
      return;
    }
    for (int i = 0; i < n; ++i) {
      if (used[i]) continue;
      used[i] = true;
      cur.push_back(ctx.preds[i]);
      self(self, remaining - 1);
      cur.pop_back();
      used[i] = false;
    }
  };
  for (int len = 1; len <= cap; ++len) recurse(recurse, len);
  return out;
}

// Caches log transition rows and per-state log generation probabilities for
// one instance so dynamic programs reuse graph nodes instead of rebuilding
// them per recurrence term.
class TransitionScorer {
 public:
  TransitionScorer(const TransitionParams& tp, const MaskContext& ctx)
      : tp_(tp), ctx_(ctx), targets_(ctx.target_mask()) {}

  const Tensor& log_row(ParamSet set, int from) {
    auto& cache = set == ParamSet::kIn ? rows_in_ : rows_out_;
    auto it = cache.find(from);
    if (it != cache.end()) return it->second;
    if (!ctx_.in_q(from)) throw DataError("TransitionScorer: from-predicate not in q");
    return cache.emplace(from, transition_log_row(tp_, set, from, targets_))
        .first->second;
  }

  // log p(entry | from) under the given parameter set.
  Tensor log_prob(ParamSet set, int from, int to) {
    auto& cache = set == ParamSet::kIn ? picks_in_ : picks_out_;
    const std::int64_t key = static_cast<std::int64_t>(from) * ctx_.k + to;
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
    return cache.emplace(key, pick(log_row(set, from), to)).first->second;
  }

  // log of the state generation probability: the within-state chain from the
  // start marker through the ordered group, in-parameters throughout.
  Tensor log_state_prob(const StateCandidate& state) {
    auto it = state_cache_.find(state);
    if (it != state_cache_.end()) return it->second;
    Tensor total = log_prob(ParamSet::kIn, PredicateVocab::kStart, state[0]);
    for (std::size_t i = 1; i < state.size(); ++i)
      total = add(total, log_prob(ParamSet::kIn, state[i - 1], state[i]));
    state_cache_.emplace(state, total);
    return total;
  }

  // log p(next | prev): the next state's generation probability times the
  // out-parameter boundary link from last(prev) to first(next).
  Tensor log_state_transition(const StateCandidate& prev, const StateCandidate& next) {
    return add(log_state_prob(next), log_prob(ParamSet::kOut, prev.back(), next[0]));
  }

  const MaskContext& ctx() const { return ctx_; }

 private:
  struct VecHash {
    std::size_t operator()(const std::vector<int>& v) const {
      std::size_t h = 1469598103934665603ull;
      for (int x : v) {
        h ^= static_cast<std::size_t>(x) + 0x9e3779b9;
        h *= 1099511628211ull;
      }
      return h;
    }
  };
  const TransitionParams& tp_;
  MaskContext ctx_;
  std::vector<std::uint8_t> targets_;
  std::unordered_map<int, Tensor> rows_in_, rows_out_;
  std::unordered_map<std::int64_t, Tensor> picks_in_, picks_out_;
  std::unordered_map<std::vector<int>, Tensor, VecHash> state_cache_;
};

// Probability-domain wrappers for the spec-level contracts.

inline Tensor state_prob(const StateCandidate& state, const MaskContext& ctx,
                         const TransitionParams& tp) {
  for (int p : state)
    if (!ctx.in_q(p) || p == PredicateVocab::kStart)
      throw DataError("state_prob: predicate outside context");
  Tensor total =
      pick(transition_row(tp, ParamSet::kIn, PredicateVocab::kStart, ctx), state[0]);
  for (std::size_t i = 1; i < state.size(); ++i)
    total = mul(total, pick(transition_row(tp, ParamSet::kIn, state[i - 1], ctx),
                            state[i]));
  return total;
}

inline Tensor state_transition_prob(const StateCandidate& prev, const StateCandidate& next,
                                    const MaskContext& ctx, const TransitionParams& tp) {
  Tensor gen = state_prob(next, ctx, tp);
  Tensor link = pick(transition_row(tp, ParamSet::kOut, prev.back(), ctx), next[0]);
  return mul(gen, link);
}

}  // namespace factgen
