#pragma once

// Transformer encoder over linearized triples and autoregressive decoder
// emitting one fact at a time. Encoder self-attention is restricted to each
// triple's own span (the [CLS] position attends only to itself), so a span's
// contextual vectors depend only on its own tokens and positions. The decoder
// conditions on the full generated history through causal self-attention
// while cross-attention sees only the triples of the current latent state
// plus [CLS].

#include "factgen/data.hpp"
#include "factgen/numeric.hpp"
#include "factgen/segment.hpp"
#include "factgen/transition.hpp"

#include <algorithm>
#include <set>
#include <string>
#include <vector>

namespace factgen {

struct ModelConfig {
  int hidden_dim = 64;
  int ffn_dim = 128;
  int num_layers = 2;
  int num_heads = 2;
  int pred_emb_dim = 32;
  int max_positions = 256;

  void validate() const {
    if (hidden_dim <= 0 || ffn_dim <= 0 || num_layers <= 0 || num_heads <= 0 ||
        pred_emb_dim <= 0 || max_positions <= 0)
      throw DataError("ModelConfig: all dimensions must be positive");
    if (hidden_dim % num_heads != 0)
      throw DataError("ModelConfig: hidden_dim must be divisible by num_heads");
  }
};

namespace detail {

struct AttnWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};
struct LayerNormWeights {
  Tensor g, b;
};
struct FfnWeights {
  Tensor w1, b1, w2, b2;
};

struct EncoderLayer {
  LayerNormWeights ln1, ln2;
  AttnWeights attn;
  FfnWeights ffn;
};

struct DecoderLayer {
  LayerNormWeights ln1, lnx, ln2;
  AttnWeights self_attn, cross_attn;
  FfnWeights ffn;
};

}  // namespace detail

class EmissionModel {
 public:
  ModelConfig config;
  int vocab_size = 0;

  Tensor tok_emb, enc_pos, dec_pos;
  std::vector<detail::EncoderLayer> enc_layers;
  std::vector<detail::DecoderLayer> dec_layers;
  detail::LayerNormWeights enc_final_ln, dec_final_ln;
  Tensor out_w, out_b;

  static EmissionModel create(ParamStore& store, const ModelConfig& cfg, int vocab_size,
                              std::mt19937_64& rng, double init_std = 0.02) {
    cfg.validate();
    EmissionModel m;
    m.config = cfg;
    m.vocab_size = vocab_size;
    const int d = cfg.hidden_dim, f = cfg.ffn_dim;
    auto weight = [&](const std::string& name, std::vector<int> shape) -> Tensor {
      Tensor t = store.add(name, std::move(shape));
      fill_normal(t, init_std, rng);
      return t;
    };
    auto bias = [&](const std::string& name, int n) -> Tensor {
      return store.add(name, {n});
    };
    auto ln = [&](const std::string& prefix) -> detail::LayerNormWeights {
      Tensor g = store.add(prefix + ".g", {d});
      fill_constant(g, 1.0);
      Tensor b = store.add(prefix + ".b", {d});
      return {g, b};
    };
    auto attn = [&](const std::string& prefix) -> detail::AttnWeights {
      return {weight(prefix + ".wq", {d, d}), bias(prefix + ".bq", d),
              weight(prefix + ".wk", {d, d}), bias(prefix + ".bk", d),
              weight(prefix + ".wv", {d, d}), bias(prefix + ".bv", d),
              weight(prefix + ".wo", {d, d}), bias(prefix + ".bo", d)};
    };
    auto ffn = [&](const std::string& prefix) -> detail::FfnWeights {
      return {weight(prefix + ".w1", {d, f}), bias(prefix + ".b1", f),
              weight(prefix + ".w2", {f, d}), bias(prefix + ".b2", d)};
    };

    m.tok_emb = weight("emb.tok", {vocab_size, d});
    m.enc_pos = weight("emb.enc_pos", {cfg.max_positions, d});
    m.dec_pos = weight("emb.dec_pos", {cfg.max_positions, d});
    for (int i = 0; i < cfg.num_layers; ++i) {
      std::string p = "enc.l" + std::to_string(i);
      m.enc_layers.push_back({ln(p + ".ln1"), ln(p + ".ln2"), attn(p + ".attn"),
                              ffn(p + ".ffn")});
    }
    m.enc_final_ln = ln("enc.final_ln");
    for (int i = 0; i < cfg.num_layers; ++i) {
      std::string p = "dec.l" + std::to_string(i);
      m.dec_layers.push_back({ln(p + ".ln1"), ln(p + ".lnx"), ln(p + ".ln2"),
                              attn(p + ".self"), attn(p + ".cross"), ffn(p + ".ffn")});
    }
    m.dec_final_ln = ln("dec.final_ln");
    m.out_w = weight("out.w", {d, vocab_size});
    m.out_b = bias("out.b", vocab_size);
    return m;
  }

  static EmissionModel attach(ParamStore& store, const ModelConfig& cfg) {
    cfg.validate();
    EmissionModel m;
    m.config = cfg;
    auto ln = [&](const std::string& prefix) -> detail::LayerNormWeights {
      return {store.at(prefix + ".g"), store.at(prefix + ".b")};
    };
    auto attn = [&](const std::string& prefix) -> detail::AttnWeights {
      return {store.at(prefix + ".wq"), store.at(prefix + ".bq"),
              store.at(prefix + ".wk"), store.at(prefix + ".bk"),
              store.at(prefix + ".wv"), store.at(prefix + ".bv"),
              store.at(prefix + ".wo"), store.at(prefix + ".bo")};
    };
    auto ffn = [&](const std::string& prefix) -> detail::FfnWeights {
      return {store.at(prefix + ".w1"), store.at(prefix + ".b1"),
              store.at(prefix + ".w2"), store.at(prefix + ".b2")};
    };
    m.tok_emb = store.at("emb.tok");
    m.enc_pos = store.at("emb.enc_pos");
    m.dec_pos = store.at("emb.dec_pos");
    m.vocab_size = m.tok_emb.rows();
    for (int i = 0; i < cfg.num_layers; ++i) {
      std::string p = "enc.l" + std::to_string(i);
      m.enc_layers.push_back({ln(p + ".ln1"), ln(p + ".ln2"), attn(p + ".attn"),
                              ffn(p + ".ffn")});
    }
    m.enc_final_ln = ln("enc.final_ln");
    for (int i = 0; i < cfg.num_layers; ++i) {
      std::string p = "dec.l" + std::to_string(i);
      m.dec_layers.push_back({ln(p + ".ln1"), ln(p + ".lnx"), ln(p + ".ln2"),
                              attn(p + ".self"), attn(p + ".cross"), ffn(p + ".ffn")});
    }
    m.dec_final_ln = ln("dec.final_ln");
    m.out_w = store.at("out.w");
    m.out_b = store.at("out.b");
    if (m.tok_emb.cols() != cfg.hidden_dim)
      throw DataError("EmissionModel::attach: hidden_dim mismatch with checkpoint");
    return m;
  }
};

namespace detail {

inline Tensor multi_head_attention(const AttnWeights& w, const Tensor& x_q,
                                   const Tensor& x_kv, const Tensor& mask,
                                   int num_heads) {
  Tensor q = add_row_broadcast(matmul(x_q, w.wq), w.bq);
  Tensor k = add_row_broadcast(matmul(x_kv, w.wk), w.bk);
  Tensor v = add_row_broadcast(matmul(x_kv, w.wv), w.bv);
  const int d = q.cols();
  const int dh = d / num_heads;
  std::vector<Tensor> heads;
  heads.reserve(num_heads);
  for (int h = 0; h < num_heads; ++h) {
    Tensor qh = slice_cols(q, h * dh, dh);
    Tensor kh = slice_cols(k, h * dh, dh);
    Tensor vh = slice_cols(v, h * dh, dh);
    heads.push_back(attention(qh, kh, vh, mask));
  }
  return add_row_broadcast(matmul(concat_cols(heads), w.wo), w.bo);
}

inline Tensor ffn_block(const FfnWeights& w, const Tensor& x) {
  Tensor h = gelu(add_row_broadcast(matmul(x, w.w1), w.b1));
  return add_row_broadcast(matmul(h, w.w2), w.b2);
}

inline Tensor embed_sequence(const Tensor& tok_emb, const Tensor& pos_emb,
                             const std::vector<int>& ids) {
  if (static_cast<int>(ids.size()) > pos_emb.rows())
    throw NumericError("sequence exceeds max_positions");
  std::vector<int> positions(ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  return add(rows_gather(tok_emb, ids), rows_gather(pos_emb, positions));
}

inline Tensor causal_mask(int n) {
  std::vector<double> m(static_cast<std::size_t>(n) * n, 0.0);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j <= i; ++j) m[static_cast<std::size_t>(i) * n + j] = 1.0;
  return Tensor::from_values({n, n}, std::move(m));
}

// Per-triple block mask: each span attends within itself, [CLS] only to
// itself, keeping span vectors independent of other triples' content.
inline Tensor encoder_self_mask(const LinearizedInput& lin) {
  const int n = lin.length();
  std::vector<double> m(static_cast<std::size_t>(n) * n, 0.0);
  m[static_cast<std::size_t>(lin.cls_index) * n + lin.cls_index] = 1.0;
  for (const auto& [begin, end] : lin.triple_spans)
    for (int i = begin; i < end; ++i)
      for (int j = begin; j < end; ++j) m[static_cast<std::size_t>(i) * n + j] = 1.0;
  return Tensor::from_values({n, n}, std::move(m));
}

}  // namespace detail

// Binary vector over encoder positions: a position is attendable iff it lies
// in a span whose predicate belongs to the state, or it is [CLS].
inline std::vector<double> cross_attention_allowed(const LinearizedInput& lin,
                                                   const std::vector<int>& state_preds) {
  std::vector<double> allowed(lin.length(), 0.0);
  allowed[lin.cls_index] = 1.0;
  std::set<int> wanted(state_preds.begin(), state_preds.end());
  for (std::size_t j = 0; j < lin.triple_spans.size(); ++j) {
    if (!wanted.count(lin.triple_predicates[j])) continue;
    wanted.erase(lin.triple_predicates[j]);
    for (int i = lin.triple_spans[j].first; i < lin.triple_spans[j].second; ++i)
      allowed[i] = 1.0;
  }
  if (!wanted.empty())
    throw DataError("state references a predicate absent from the instance");
  return allowed;
}

struct Encoded {
  Tensor states;  // [input length x hidden]
  LinearizedInput lin;
};

inline Encoded encode(const EmissionModel& m, const LinearizedInput& lin) {
  Tensor x = detail::embed_sequence(m.tok_emb, m.enc_pos, lin.tokens);
  Tensor mask = detail::encoder_self_mask(lin);
  for (const auto& layer : m.enc_layers) {
    Tensor normed = layer_norm(x, layer.ln1.g, layer.ln1.b);
    x = add(x, detail::multi_head_attention(layer.attn, normed, normed, mask,
                                            m.config.num_heads));
    Tensor normed2 = layer_norm(x, layer.ln2.g, layer.ln2.b);
    x = add(x, detail::ffn_block(layer.ffn, normed2));
  }
  x = layer_norm(x, m.enc_final_ln.g, m.enc_final_ln.b);
  return {x, lin};
}

// Full decoder pass over `input_ids`, returning logits [len x vocab].
// `cross_allowed` holds 0/1 over encoder positions.
inline Tensor decoder_logits(const EmissionModel& m, const Encoded& enc,
                             const std::vector<double>& cross_allowed,
                             const std::vector<int>& input_ids) {
  const int n = static_cast<int>(input_ids.size());
  const int e = enc.states.rows();
  Tensor x = detail::embed_sequence(m.tok_emb, m.dec_pos, input_ids);
  Tensor self_mask = detail::causal_mask(n);
  std::vector<double> xm(static_cast<std::size_t>(n) * e);
  for (int i = 0; i < n; ++i)
    std::copy(cross_allowed.begin(), cross_allowed.end(),
              xm.begin() + static_cast<std::size_t>(i) * e);
  Tensor cross_mask = Tensor::from_values({n, e}, std::move(xm));
  for (const auto& layer : m.dec_layers) {
    Tensor a = layer_norm(x, layer.ln1.g, layer.ln1.b);
    x = add(x, detail::multi_head_attention(layer.self_attn, a, a, self_mask,
                                            m.config.num_heads));
    Tensor c = layer_norm(x, layer.lnx.g, layer.lnx.b);
    x = add(x, detail::multi_head_attention(layer.cross_attn, c, enc.states, cross_mask,
                                            m.config.num_heads));
    Tensor f = layer_norm(x, layer.ln2.g, layer.ln2.b);
    x = add(x, detail::ffn_block(layer.ffn, f));
  }
  x = layer_norm(x, m.dec_final_ln.g, m.dec_final_ln.b);
  return add_row_broadcast(matmul(x, m.out_w), m.out_b);
}

// Teacher-forced log p(y_t | y_{1:t-1}, z_t = state, x). The decoder input is
// the concatenated wrapped history plus fact t's prefix; the summed token
// log-probabilities cover fact t's content tokens and its fact-end marker.
inline Tensor fact_log_prob(const EmissionModel& m, const Encoded& enc,
                            const StateCandidate& state, int t,
                            const FactSequence& fs) {
  if (t < 0 || t >= fs.count()) throw DataError("fact_log_prob: fact index out of range");
  std::vector<int> input_ids;
  for (int i = 0; i < t; ++i)
    input_ids.insert(input_ids.end(), fs.facts[i].begin(), fs.facts[i].end());
  const auto& fact = fs.facts[t];
  // All of fact t except the trailing fact-end marker is decoder input.
  input_ids.insert(input_ids.end(), fact.begin(), fact.end() - 1);
  std::vector<int> targets(fact.begin() + 1, fact.end());
  const int first_row = static_cast<int>(input_ids.size()) - static_cast<int>(targets.size());

  std::vector<double> allowed = cross_attention_allowed(enc.lin, state);
  Tensor logits = decoder_logits(m, enc, allowed, input_ids);
  return sequence_log_prob(logits, targets, first_row);
}

inline Tensor fact_log_prob(const EmissionModel& m, const StateCandidate& state, int t,
                            const FactSequence& fs, const LinearizedInput& lin) {
  Encoded enc = encode(m, lin);
  return fact_log_prob(m, enc, state, t, fs);
}

// ---------------------------------------------------------------------------
// Beam-search decoding of a single fact
// ---------------------------------------------------------------------------

struct DecodeResult {
  std::vector<int> tokens;  // includes the trailing fact-end marker if emitted
  double log_prob = 0.0;
  bool completed = false;  // false when truncated at max_len
};

// Highest-scoring hypothesis by unnormalized summed token log-probability.
// Ties break toward token-id lexicographic order.
inline DecodeResult decode_fact(const EmissionModel& m, const Encoded& enc,
                                const StateCandidate& state,
                                const std::vector<int>& history, int beam_width,
                                int max_len) {
  if (beam_width < 1) throw DataError("decode_fact: beam_width must be >= 1");
  if (max_len < 1) throw DataError("decode_fact: max_len must be >= 1");
  NoGradGuard no_grad;
  std::vector<double> allowed = cross_attention_allowed(enc.lin, state);

  struct Hyp {
    std::vector<int> tokens;
    double score = 0.0;
  };
  auto better = [](const Hyp& a, const Hyp& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
  };

  std::vector<Hyp> live = {Hyp{}};
  std::vector<Hyp> completed;
  const int vocab = m.vocab_size;
  for (int step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Hyp> expansions;
    expansions.reserve(live.size() * vocab);
    for (const auto& hyp : live) {
      std::vector<int> input_ids = history;
      input_ids.push_back(TokenVocab::kFactStart);
      input_ids.insert(input_ids.end(), hyp.tokens.begin(), hyp.tokens.end());
      Tensor logits = decoder_logits(m, enc, allowed, input_ids);
      const int last = static_cast<int>(input_ids.size()) - 1;
      // log softmax of the last row
      double mx = logits.at(last, 0);
      for (int v = 1; v < vocab; ++v) mx = std::max(mx, logits.at(last, v));
      double z = 0.0;
      for (int v = 0; v < vocab; ++v) z += std::exp(logits.at(last, v) - mx);
      const double log_z = mx + std::log(z);
      for (int v = 0; v < vocab; ++v) {
        Hyp next = hyp;
        next.tokens.push_back(v);
        next.score += logits.at(last, v) - log_z;
        expansions.push_back(std::move(next));
      }
    }
    std::sort(expansions.begin(), expansions.end(), better);
    if (static_cast<int>(expansions.size()) > beam_width) expansions.resize(beam_width);
    live.clear();
    for (auto& hyp : expansions) {
      if (hyp.tokens.back() == TokenVocab::kFactEnd)
        completed.push_back(std::move(hyp));
      else
        live.push_back(std::move(hyp));
    }
  }
  // Hypotheses that hit max_len count as complete without the end marker.
  for (auto& hyp : live) completed.push_back(std::move(hyp));
  if (completed.empty()) throw DataError("decode_fact: no hypotheses");
  auto best = std::min_element(completed.begin(), completed.end(),
                               [&](const Hyp& a, const Hyp& b) { return better(a, b); });
  DecodeResult out;
  out.tokens = best->tokens;
  out.log_prob = best->score;
  out.completed = !out.tokens.empty() && out.tokens.back() == TokenVocab::kFactEnd;
  return out;
}

}  // namespace factgen
