#pragma once

// Baseline seq2seq pretraining, hard-alignment pruning, the backward-algorithm
// marginal likelihood (log domain), a brute-force enumeration oracle, and the
// Adam-based optimization loop with separate learning rates for the
// encoder/decoder and the transition parameters.

#include "factgen/data.hpp"
#include "factgen/emission.hpp"
#include "factgen/numeric.hpp"
#include "factgen/segment.hpp"
#include "factgen/transition.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace factgen {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Model bundle
// ---------------------------------------------------------------------------

struct Model {
  ParamStore store;
  ModelConfig config;
  EmissionModel emission;
  TransitionParams transition;

  static Model create(const ModelConfig& cfg, int vocab_size, int pred_count,
                      std::uint64_t seed) {
    Model m;
    m.config = cfg;
    std::mt19937_64 rng(seed);
    m.emission = EmissionModel::create(m.store, cfg, vocab_size, rng);
    m.transition = TransitionParams::create(m.store, pred_count, cfg.pred_emb_dim, rng);
    return m;
  }

  static Model from_store(ParamStore store, const ModelConfig& cfg) {
    Model m;
    m.store = std::move(store);
    m.config = cfg;
    m.emission = EmissionModel::attach(m.store, cfg);
    m.transition = TransitionParams::attach(m.store);
    return m;
  }

  static Model load(const std::string& path, const ModelConfig& cfg) {
    return from_store(ParamStore::load(path), cfg);
  }

  std::vector<Tensor> emission_params() {
    std::vector<Tensor> out;
    for (auto& [name, t] : store.entries())
      if (name.rfind("transition.", 0) != 0) out.push_back(t);
    return out;
  }
  std::vector<Tensor> transition_params() {
    std::vector<Tensor> out;
    for (auto& [name, t] : store.entries())
      if (name.rfind("transition.", 0) == 0) out.push_back(t);
    return out;
  }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

struct AdamGroup {
  std::vector<Tensor> params;
  double lr = 1e-3;
};

class Adam {
 public:
  explicit Adam(std::vector<AdamGroup> groups, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : groups_(std::move(groups)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto& g : groups_) {
      for (auto& p : g.params) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
      }
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    std::size_t slot = 0;
    for (auto& g : groups_) {
      for (auto& p : g.params) {
        auto& m = m_[slot];
        auto& v = v_[slot];
        ++slot;
        if (g.lr == 0.0) continue;
        auto& vals = p.values();
        auto& grads = p.grad();
        for (std::size_t i = 0; i < vals.size(); ++i) {
          const double gi = grads[i];
          m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
          v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
          vals[i] -= g.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
        }
      }
    }
  }

  void zero_grad() {
    for (auto& g : groups_)
      for (auto& p : g.params) p.zero_grad();
  }

 private:
  std::vector<AdamGroup> groups_;
  double beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// ---------------------------------------------------------------------------
// Hard alignment
// ---------------------------------------------------------------------------

struct HardAlignment {
  // Per fact: sorted predicate ids whose triples are forced into that fact's
  // state. May be empty for a fact.
  std::vector<std::vector<int>> forced;
};

// Coverage of a triple by a fact: the fraction of the triple's distinct
// predicate+object tokens that appear in the fact. Strictly above 0.5 forces
// the predicate into the best-covered fact; ties go to the earlier fact.
inline HardAlignment hard_align(const Instance& inst,
                                const std::vector<std::string>& facts,
                                const PredicateVocab& pv) {
  HardAlignment out;
  out.forced.resize(facts.size());
  std::vector<std::set<std::string>> fact_tokens;
  for (const auto& f : facts) {
    auto toks = tokenize(f);
    fact_tokens.emplace_back(toks.begin(), toks.end());
  }
  for (const auto& tr : inst.triples) {
    std::set<std::string> ref;
    for (const auto& t : tokenize(tr.predicate)) ref.insert(t);
    for (const auto& t : tokenize(tr.object)) ref.insert(t);
    double best = 0.0;
    int best_fact = -1;
    for (std::size_t f = 0; f < facts.size(); ++f) {
      int hits = 0;
      for (const auto& t : ref) hits += fact_tokens[f].count(t);
      const double cov = ref.empty() ? 0.0 : static_cast<double>(hits) / ref.size();
      if (cov > best) {
        best = cov;
        best_fact = static_cast<int>(f);
      }
    }
    if (best > 0.5 && best_fact >= 0)
      out.forced[best_fact].push_back(pv.id(tr.predicate));
  }
  for (auto& f : out.forced) std::sort(f.begin(), f.end());
  return out;
}

// ---------------------------------------------------------------------------
// Prepared instances and the marginal DP
// ---------------------------------------------------------------------------

struct PreparedInstance {
  LinearizedInput lin;
  FactSequence facts;
  MaskContext ctx;
  std::vector<StateCandidate> candidates;   // deterministic enumeration order
  std::vector<std::vector<int>> allowed_at; // candidate indices allowed per fact
};

inline PreparedInstance prepare_instance(const Instance& inst, const TokenVocab& tv,
                                         const PredicateVocab& pv, int max_group_size,
                                         bool hard_pruning,
                                         const SegmenterConfig& seg_cfg =
                                             SegmenterConfig::defaults()) {
  PreparedInstance p;
  p.lin = linearize_input(inst, tv, pv);
  std::vector<std::string> fact_strings = instance_facts(inst, seg_cfg);
  p.facts = wrap_facts(fact_strings, tv);
  p.ctx = MaskContext::from_instance(inst, pv);
  p.candidates = enumerate_states(p.ctx, max_group_size);
  const int t_count = p.facts.count();
  p.allowed_at.assign(t_count, {});
  HardAlignment hard;
  if (hard_pruning) hard = hard_align(inst, fact_strings, pv);
  for (int t = 0; t < t_count; ++t) {
    for (std::size_t ci = 0; ci < p.candidates.size(); ++ci) {
      bool ok = true;
      if (hard_pruning && !hard.forced[t].empty()) {
        for (int needed : hard.forced[t]) {
          if (std::find(p.candidates[ci].begin(), p.candidates[ci].end(), needed) ==
              p.candidates[ci].end()) {
            ok = false;
            break;
          }
        }
      }
      if (ok) p.allowed_at[t].push_back(static_cast<int>(ci));
    }
    if (p.allowed_at[t].empty())
      throw TrainingError("hard alignment leaves no candidate states at fact " +
                          std::to_string(t));
  }
  return p;
}

namespace detail {

// Emission log-probabilities are shared between candidates whose predicate
// sets coincide: the cross-attention mask ignores within-state order.
class EmissionCache {
 public:
  EmissionCache(const EmissionModel& m, const Encoded& enc, const FactSequence& fs)
      : m_(m), enc_(enc), fs_(fs) {}

  Tensor get(int t, const StateCandidate& cand) {
    std::vector<int> key = cand;
    std::sort(key.begin(), key.end());
    key.push_back(t);
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    Tensor lp = fact_log_prob(m_, enc_, cand, t, fs_);
    cache_.emplace(std::move(key), lp);
    return lp;
  }

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
  const EmissionModel& m_;
  const Encoded& enc_;
  const FactSequence& fs_;
  std::unordered_map<std::vector<int>, Tensor, VecHash> cache_;
};

}  // namespace detail

// Log marginal likelihood log p(y | x) over all (pruned) state sequences,
// computed with the backward recurrence in log domain. Differentiable with
// respect to all model parameters.
inline Tensor backward_marginal(Model& model, const PreparedInstance& p) {
  const int t_count = p.facts.count();
  Encoded enc = encode(model.emission, p.lin);
  detail::EmissionCache emis(model.emission, enc, p.facts);
  TransitionScorer scorer(model.transition, p.ctx);

  // beta[ci] = log p(y_{t+1:T} | z_t = candidate ci, x) for the current t.
  std::unordered_map<int, Tensor> beta;
  for (int ci : p.allowed_at[t_count - 1]) beta[ci] = Tensor::scalar(0.0);
  for (int t = t_count - 1; t >= 1; --t) {
    std::unordered_map<int, Tensor> prev_beta;
    // Precompute per-candidate terms that do not depend on the predecessor.
    std::vector<std::pair<int, Tensor>> partial;
    for (int ci : p.allowed_at[t]) {
      Tensor term = add(beta.at(ci),
                        add(emis.get(t, p.candidates[ci]),
                            scorer.log_state_prob(p.candidates[ci])));
      partial.emplace_back(ci, term);
    }
    for (int cp : p.allowed_at[t - 1]) {
      std::vector<Tensor> terms;
      terms.reserve(partial.size());
      const int from = p.candidates[cp].back();
      for (auto& [ci, term] : partial)
        terms.push_back(
            add(term, scorer.log_prob(ParamSet::kOut, from, p.candidates[ci][0])));
      prev_beta.emplace(cp, logsumexp(terms));
    }
    beta = std::move(prev_beta);
  }
  std::vector<Tensor> first_terms;
  for (int ci : p.allowed_at[0]) {
    first_terms.push_back(add(beta.at(ci),
                              add(emis.get(0, p.candidates[ci]),
                                  scorer.log_state_prob(p.candidates[ci]))));
  }
  return logsumexp(first_terms);
}

inline Tensor backward_marginal(Model& model, const Instance& inst, const TokenVocab& tv,
                                const PredicateVocab& pv, int max_group_size,
                                bool hard_pruning) {
  PreparedInstance p = prepare_instance(inst, tv, pv, max_group_size, hard_pruning);
  return backward_marginal(model, p);
}

// Explicitly enumerates every unpruned state sequence and sums path
// probabilities in log domain. Oracle counterpart of backward_marginal.
inline double brute_force_marginal(Model& model, const PreparedInstance& p,
                                   std::int64_t max_sequences = 1000000) {
  NoGradGuard no_grad;
  const int t_count = p.facts.count();
  const std::int64_t n_cand = static_cast<std::int64_t>(p.candidates.size());
  std::int64_t total = 1;
  for (int t = 0; t < t_count; ++t) {
    total *= n_cand;
    if (total > max_sequences)
      throw TrainingError("brute_force_marginal: search-space bound exceeded");
  }

  Encoded enc = encode(model.emission, p.lin);
  detail::EmissionCache emis_cache(model.emission, enc, p.facts);
  TransitionScorer scorer(model.transition, p.ctx);

  std::vector<std::vector<double>> emis(t_count, std::vector<double>(n_cand));
  for (int t = 0; t < t_count; ++t)
    for (std::int64_t ci = 0; ci < n_cand; ++ci)
      emis[t][ci] = emis_cache.get(t, p.candidates[ci]).value();
  std::vector<double> gen(n_cand);
  for (std::int64_t ci = 0; ci < n_cand; ++ci)
    gen[ci] = scorer.log_state_prob(p.candidates[ci]).value();
  std::vector<std::vector<double>> link(n_cand, std::vector<double>(n_cand));
  for (std::int64_t a = 0; a < n_cand; ++a)
    for (std::int64_t b = 0; b < n_cand; ++b)
      link[a][b] = scorer
                       .log_prob(ParamSet::kOut, p.candidates[a].back(),
                                 p.candidates[b][0])
                       .value();

  std::vector<double> scores;
  scores.reserve(total);
  std::vector<std::int64_t> seq(t_count, 0);
  while (true) {
    double s = gen[seq[0]] + emis[0][seq[0]];
    for (int t = 1; t < t_count; ++t)
      s += gen[seq[t]] + link[seq[t - 1]][seq[t]] + emis[t][seq[t]];
    scores.push_back(s);
    int pos = t_count - 1;
    while (pos >= 0 && ++seq[pos] == n_cand) {
      seq[pos] = 0;
      --pos;
    }
    if (pos < 0) break;
  }
  const double mx = *std::max_element(scores.begin(), scores.end());
  if (!std::isfinite(mx)) return mx;
  double z = 0.0;
  for (double s : scores) z += std::exp(s - mx);
  return mx + std::log(z);
}

inline double brute_force_marginal(Model& model, const Instance& inst,
                                   const TokenVocab& tv, const PredicateVocab& pv,
                                   int max_group_size,
                                   std::int64_t max_sequences = 1000000) {
  PreparedInstance p =
      prepare_instance(inst, tv, pv, max_group_size, /*hard_pruning=*/false);
  return brute_force_marginal(model, p, max_sequences);
}

// ---------------------------------------------------------------------------
// Training loops
// ---------------------------------------------------------------------------

struct PretrainOptions {
  int epochs = 15;
  double lr = 0.002;
  std::uint64_t seed = 1;
  bool verbose = true;
};

// Vanilla seq2seq: linearized triples to full text, no latent states, and
// unmasked cross-attention. Mean per-token cross-entropy.
inline Tensor baseline_loss(Model& model, const LinearizedInput& lin,
                            const std::vector<int>& text_tokens) {
  Encoded enc = encode(model.emission, lin);
  std::vector<double> allowed(lin.length(), 1.0);
  std::vector<int> input_ids;
  input_ids.push_back(TokenVocab::kFactStart);
  input_ids.insert(input_ids.end(), text_tokens.begin(), text_tokens.end());
  std::vector<int> targets = text_tokens;
  targets.push_back(TokenVocab::kFactEnd);
  Tensor logits = decoder_logits(model.emission, enc, allowed, input_ids);
  Tensor lp = sequence_log_prob(logits, targets, 0);
  return scale(neg(lp), 1.0 / static_cast<double>(targets.size()));
}

inline void pretrain_baseline(Model& model, const Corpus& corpus, const TokenVocab& tv,
                              const PredicateVocab& pv, const PretrainOptions& opts) {
  if (corpus.empty()) throw TrainingError("pretrain_baseline: empty corpus");
  std::vector<LinearizedInput> lins;
  std::vector<std::vector<int>> texts;
  for (const auto& inst : corpus) {
    lins.push_back(linearize_input(inst, tv, pv));
    texts.push_back(tv.encode(tokenize(inst.text)));
  }
  Adam opt({AdamGroup{model.emission_params(), opts.lr}});
  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t idx : order) {
      Tensor loss = baseline_loss(model, lins[idx], texts[idx]);
      if (!std::isfinite(loss.value()))
        throw TrainingError("pretrain diverged (non-finite loss) at instance " +
                            std::to_string(idx));
      model.store.zero_grads();
      loss.backward();
      opt.step();
      total += loss.value();
    }
    if (opts.verbose)
      std::cerr << "[pretrain] epoch " << epoch + 1 << "/" << opts.epochs
                << " mean loss " << total / corpus.size() << "\n";
  }
}

struct TrainOptions {
  int epochs = 30;
  int patience = 5;
  double lr_finetune = 0.002;
  double lr_transition = 0.01;
  int max_group_size = 3;
  int grad_accumulation = 1;
  std::uint64_t seed = 1;
  bool hard_pruning = true;
  bool verbose = true;
  std::string checkpoint_prefix;  // when set, saves <prefix>.epochN.ckpt
};

struct TrainReport {
  std::vector<double> train_loss_per_epoch;
  std::vector<double> val_loss_per_epoch;
  int best_epoch = -1;
};

// Maximizes the marginal likelihood of observed facts with the backward DP.
// The encoder/decoder group and the transition group use separate learning
// rates. Single-threaded and deterministic under a fixed seed.
inline TrainReport train(Model& model, const Corpus& corpus, const TokenVocab& tv,
                         const PredicateVocab& pv, const TrainOptions& opts,
                         const Corpus* validation = nullptr) {
  if (corpus.empty()) throw TrainingError("train: empty corpus");
  std::vector<PreparedInstance> prepared;
  prepared.reserve(corpus.size());
  for (const auto& inst : corpus)
    prepared.push_back(
        prepare_instance(inst, tv, pv, opts.max_group_size, opts.hard_pruning));
  std::vector<PreparedInstance> val_prepared;
  if (validation)
    for (const auto& inst : *validation)
      val_prepared.push_back(
          prepare_instance(inst, tv, pv, opts.max_group_size, opts.hard_pruning));

  Adam opt({AdamGroup{model.emission_params(), opts.lr_finetune},
            AdamGroup{model.transition_params(), opts.lr_transition}});
  std::mt19937_64 rng(opts.seed);
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);

  TrainReport report;
  double best_val = std::numeric_limits<double>::infinity();
  int since_best = 0;
  for (int epoch = 0; epoch < opts.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int accumulated = 0;
    model.store.zero_grads();
    for (std::size_t idx : order) {
      Tensor loss = neg(backward_marginal(model, prepared[idx]));
      if (!std::isfinite(loss.value()))
        throw TrainingError("train: non-finite loss at instance " + std::to_string(idx));
      loss.backward();
      total += loss.value();
      if (++accumulated == opts.grad_accumulation) {
        opt.step();
        model.store.zero_grads();
        accumulated = 0;
      }
    }
    if (accumulated > 0) {
      opt.step();
      model.store.zero_grads();
    }
    const double mean_train = total / corpus.size();
    report.train_loss_per_epoch.push_back(mean_train);

    double mean_val = mean_train;
    if (!val_prepared.empty()) {
      NoGradGuard no_grad;
      double vtotal = 0.0;
      for (auto& p : val_prepared) vtotal -= backward_marginal(model, p).value();
      mean_val = vtotal / val_prepared.size();
    }
    report.val_loss_per_epoch.push_back(mean_val);
    if (opts.verbose)
      std::cerr << "[train] epoch " << epoch + 1 << "/" << opts.epochs << " train "
                << mean_train << " val " << mean_val << "\n";
    if (!opts.checkpoint_prefix.empty())
      model.store.save(opts.checkpoint_prefix + ".epoch" + std::to_string(epoch + 1) +
                       ".ckpt");
    if (mean_val < best_val - 1e-12) {
      best_val = mean_val;
      report.best_epoch = epoch;
      since_best = 0;
    } else if (++since_best >= opts.patience) {
      if (opts.verbose) std::cerr << "[train] early stop after epoch " << epoch + 1 << "\n";
      break;
    }
  }
  return report;
}

}  // namespace factgen
