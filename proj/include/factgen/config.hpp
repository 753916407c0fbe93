#pragma once

// Flat key=value run configuration. Unknown keys are errors so config drift
// is caught immediately.

#include "factgen/data.hpp"
#include "factgen/emission.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <string>

namespace factgen {

struct RunConfig {
  // model dimensions
  int hidden_dim = 64;
  int ffn_dim = 128;
  int num_layers = 2;
  int num_heads = 2;
  int pred_emb_dim = 32;
  int max_positions = 256;
  // data
  int min_freq = 1;
  // optimization
  double pretrain_lr = 0.002;
  int pretrain_epochs = 15;
  double finetune_lr = 0.002;
  double transition_lr = 0.01;
  int train_epochs = 30;
  int patience = 5;
  int grad_accumulation = 1;
  int hard_pruning = 1;
  // inference
  int k_orderings = 3;
  int n_aggregations = 3;
  int beam_width = 5;
  int max_fact_len = 32;
  int max_group_size = 3;
  int agg_score_in_params = 0;
  // reproducibility (mandatory for any stochastic step)
  std::uint64_t seed = 1;

  ModelConfig model_config() const {
    ModelConfig mc;
    mc.hidden_dim = hidden_dim;
    mc.ffn_dim = ffn_dim;
    mc.num_layers = num_layers;
    mc.num_heads = num_heads;
    mc.pred_emb_dim = pred_emb_dim;
    mc.max_positions = max_positions;
    return mc;
  }

  void set(const std::string& key, const std::string& value) {
    auto as_int = [&] { return std::stoi(value); };
    auto as_double = [&] { return std::stod(value); };
    if (key == "hidden_dim") hidden_dim = as_int();
    else if (key == "ffn_dim") ffn_dim = as_int();
    else if (key == "num_layers") num_layers = as_int();
    else if (key == "num_heads") num_heads = as_int();
    else if (key == "pred_emb_dim") pred_emb_dim = as_int();
    else if (key == "max_positions") max_positions = as_int();
    else if (key == "min_freq") min_freq = as_int();
    else if (key == "pretrain_lr") pretrain_lr = as_double();
    else if (key == "pretrain_epochs") pretrain_epochs = as_int();
    else if (key == "finetune_lr") finetune_lr = as_double();
    else if (key == "transition_lr") transition_lr = as_double();
    else if (key == "train_epochs") train_epochs = as_int();
    else if (key == "patience") patience = as_int();
    else if (key == "grad_accumulation") grad_accumulation = as_int();
    else if (key == "hard_pruning") hard_pruning = as_int();
    else if (key == "k_orderings") k_orderings = as_int();
    else if (key == "n_aggregations") n_aggregations = as_int();
    else if (key == "beam_width") beam_width = as_int();
    else if (key == "max_fact_len") max_fact_len = as_int();
    else if (key == "max_group_size") max_group_size = as_int();
    else if (key == "agg_score_in_params") agg_score_in_params = as_int();
    else if (key == "seed") seed = std::stoull(value);
    else throw DataError("unknown config key: " + key);
  }

  void check() const {
    if (hidden_dim < 1 || ffn_dim < 1 || num_layers < 1 || num_heads < 1 ||
        pred_emb_dim < 1 || max_positions < 1 || min_freq < 1 ||
        pretrain_epochs < 1 || train_epochs < 1 || patience < 1 ||
        grad_accumulation < 1 || k_orderings < 1 || n_aggregations < 1 ||
        beam_width < 1 || max_fact_len < 1 || max_group_size < 1)
      throw DataError("config: all counts must be >= 1");
  }

  static RunConfig load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open config file: " + path);
    RunConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      std::string trimmed = detail::trim(line);
      if (trimmed.empty() || trimmed[0] == '#') continue;
      auto eq = trimmed.find('=');
      if (eq == std::string::npos)
        throw DataError("bad config line " + std::to_string(line_no) + " in " + path);
      std::string key = detail::trim(trimmed.substr(0, eq));
      std::string value = detail::trim(trimmed.substr(eq + 1));
      try {
        cfg.set(key, value);
      } catch (const std::invalid_argument&) {
        throw DataError("bad value for config key " + key + " at line " +
                        std::to_string(line_no));
      }
    }
    cfg.check();
    return cfg;
  }
};

}  // namespace factgen
