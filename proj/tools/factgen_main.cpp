// Command-line driver: corpus synthesis, preprocessing, training, planned
// generation, alignment, and evaluation. Data goes to files or stdout, logs
// to stderr.

#include <CLI11.hpp>
#include <json.hpp>

#include "factgen/config.hpp"
#include "factgen/data.hpp"
#include "factgen/evaluation.hpp"
#include "factgen/inference.hpp"
#include "factgen/segment.hpp"
#include "factgen/synth.hpp"
#include "factgen/training.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct LoadedModel {
  factgen::RunConfig cfg;
  factgen::TokenVocab tokens;
  factgen::PredicateVocab predicates;
  factgen::Model model;
};

LoadedModel load_model(const std::string& config_path, const std::string& tokens_path,
                       const std::string& predicates_path,
                       const std::string& model_path) {
  LoadedModel lm{factgen::RunConfig::load_file(config_path),
                 factgen::TokenVocab::load_file(tokens_path),
                 factgen::PredicateVocab::load_file(predicates_path),
                 {}};
  lm.model = factgen::Model::load(model_path, lm.cfg.model_config());
  return lm;
}

std::unique_ptr<std::ostream> open_output(const std::string& path) {
  if (path == "-") return nullptr;  // caller uses std::cout
  auto out = std::make_unique<std::ofstream>(path);
  if (!*out) throw factgen::DataError("cannot open output file: " + path);
  return out;
}

std::vector<json> read_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw factgen::DataError("cannot open file: " + path);
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(json::parse(line));
  }
  return out;
}

factgen::Alignment alignment_from_names(const json& facts,
                                        const factgen::PredicateVocab& pv) {
  factgen::Alignment out;
  for (const auto& fact : facts) {
    std::vector<int> ids;
    for (const auto& name : fact) ids.push_back(pv.id(name.get<std::string>()));
    std::sort(ids.begin(), ids.end());
    out.push_back(std::move(ids));
  }
  return out;
}

int run_synth(const std::string& out_dir, const std::string& prefix, int count,
              std::uint64_t seed, const std::string& spec_path) {
  factgen::SynthSpec spec =
      spec_path.empty() ? factgen::SynthSpec::defaults()
                        : factgen::SynthSpec::load_file(spec_path);
  factgen::SynthOutput out = factgen::synth_corpus(spec, count, seed);
  fs::create_directories(out_dir);
  factgen::save_corpus(out.corpus, out_dir + "/" + prefix + ".jsonl");
  factgen::save_plans(out.plan_strings, out_dir + "/" + prefix + ".plans.jsonl");
  out.patterns.save(out_dir + "/patterns.tsv");
  std::cerr << "wrote " << out.corpus.size() << " instances to " << out_dir << "/"
            << prefix << ".jsonl\n";
  return 0;
}

int run_preprocess(const std::string& corpus_path, const std::string& out_dir,
                   int min_freq, const std::string& seg_config) {
  factgen::Corpus corpus = factgen::load_corpus(corpus_path);
  auto [tokens, predicates] = factgen::build_vocabs(corpus, min_freq);
  factgen::SegmenterConfig seg = seg_config.empty()
                                     ? factgen::SegmenterConfig::defaults()
                                     : factgen::SegmenterConfig::load_file(seg_config);
  for (auto& inst : corpus)
    if (!inst.has_facts()) inst.facts = factgen::segment_facts(inst.text, seg);
  fs::create_directories(out_dir);
  tokens.save(out_dir + "/tokens.vocab");
  predicates.save(out_dir + "/predicates.vocab");
  factgen::save_corpus(corpus, out_dir + "/segmented.jsonl");
  std::cerr << "vocab: " << tokens.size() << " tokens, " << predicates.size()
            << " predicates (start included)\n";
  return 0;
}

int run_pretrain(const std::string& corpus_path, const std::string& tokens_path,
                 const std::string& predicates_path, const std::string& config_path,
                 const std::string& out_path) {
  factgen::RunConfig cfg = factgen::RunConfig::load_file(config_path);
  factgen::TokenVocab tokens = factgen::TokenVocab::load_file(tokens_path);
  factgen::PredicateVocab predicates = factgen::PredicateVocab::load_file(predicates_path);
  factgen::Corpus corpus = factgen::load_corpus(corpus_path);
  factgen::Model model = factgen::Model::create(cfg.model_config(), tokens.size(),
                                                predicates.size(), cfg.seed);
  factgen::PretrainOptions opts;
  opts.epochs = cfg.pretrain_epochs;
  opts.lr = cfg.pretrain_lr;
  opts.seed = cfg.seed;
  factgen::pretrain_baseline(model, corpus, tokens, predicates, opts);
  model.store.save(out_path);
  std::cerr << "saved baseline checkpoint to " << out_path << "\n";
  return 0;
}

int run_train(const std::string& corpus_path, const std::string& tokens_path,
              const std::string& predicates_path, const std::string& config_path,
              const std::string& init_path, const std::string& out_path,
              const std::string& val_path, const std::string& checkpoint_prefix) {
  factgen::RunConfig cfg = factgen::RunConfig::load_file(config_path);
  factgen::TokenVocab tokens = factgen::TokenVocab::load_file(tokens_path);
  factgen::PredicateVocab predicates = factgen::PredicateVocab::load_file(predicates_path);
  factgen::Corpus corpus = factgen::load_corpus(corpus_path);
  factgen::Model model = factgen::Model::load(init_path, cfg.model_config());
  factgen::TrainOptions opts;
  opts.epochs = cfg.train_epochs;
  opts.patience = cfg.patience;
  opts.lr_finetune = cfg.finetune_lr;
  opts.lr_transition = cfg.transition_lr;
  opts.max_group_size = cfg.max_group_size;
  opts.grad_accumulation = cfg.grad_accumulation;
  opts.hard_pruning = cfg.hard_pruning != 0;
  opts.seed = cfg.seed;
  opts.checkpoint_prefix = checkpoint_prefix;
  std::optional<factgen::Corpus> val;
  if (!val_path.empty()) val = factgen::load_corpus(val_path);
  factgen::train(model, corpus, tokens, predicates, opts, val ? &*val : nullptr);
  model.store.save(out_path);
  std::cerr << "saved trained checkpoint to " << out_path << "\n";
  return 0;
}

int run_generate(const std::string& corpus_path, const std::string& tokens_path,
                 const std::string& predicates_path, const std::string& config_path,
                 const std::string& model_path, const std::string& out_path,
                 const std::string& mode, const std::string& plan_string,
                 int max_group_size_override) {
  LoadedModel lm = load_model(config_path, tokens_path, predicates_path, model_path);
  factgen::Corpus corpus = factgen::load_corpus(corpus_path);
  auto out_file = open_output(out_path);
  std::ostream& out = out_file ? *out_file : std::cout;

  factgen::GenerateOptions opts;
  opts.k = lm.cfg.k_orderings;
  opts.n = lm.cfg.n_aggregations;
  opts.beam_width = lm.cfg.beam_width;
  opts.max_fact_len = lm.cfg.max_fact_len;
  opts.max_group_size = lm.cfg.max_group_size;
  opts.agg_score_in_params = lm.cfg.agg_score_in_params != 0;
  opts.mode = factgen::parse_mode(mode);
  if (max_group_size_override > 0) opts.max_group_size_override = max_group_size_override;

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    factgen::GenerationResult res;
    if (!plan_string.empty()) {
      factgen::Plan plan =
          factgen::parse_plan(plan_string, lm.predicates, opts.max_group_size);
      res = factgen::generate_with_plan(lm.model, corpus[i], plan, lm.tokens,
                                        lm.predicates, opts.beam_width,
                                        opts.max_fact_len, opts.max_group_size);
    } else {
      opts.shuffle_seed = lm.cfg.seed * 1000003ull + i;
      res = factgen::generate(lm.model, corpus[i], lm.tokens, lm.predicates, opts);
    }
    json rec;
    rec["plan"] = factgen::format_plan(res.plan, lm.predicates);
    rec["text"] = res.text;
    rec["facts"] = res.fact_texts;
    rec["log_joint"] = res.log_joint;
    rec["log_text"] = res.log_text;
    rec["log_plan"] = res.log_plan;
    out << rec.dump() << '\n';
  }
  return 0;
}

int run_plan(const std::string& corpus_path, const std::string& tokens_path,
             const std::string& predicates_path, const std::string& config_path,
             const std::string& model_path, const std::string& out_path) {
  LoadedModel lm = load_model(config_path, tokens_path, predicates_path, model_path);
  factgen::Corpus corpus = factgen::load_corpus(corpus_path);
  auto out_file = open_output(out_path);
  std::ostream& out = out_file ? *out_file : std::cout;
  for (const auto& inst : corpus) {
    factgen::MaskContext ctx = factgen::MaskContext::from_instance(inst, lm.predicates);
    json plans = json::array();
    for (const auto& ordering :
         factgen::order_predicates(lm.model.transition, ctx, lm.cfg.k_orderings)) {
      for (const auto& sp :
           factgen::aggregate(ordering.predicates, lm.model.transition, ctx,
                              lm.cfg.n_aggregations, lm.cfg.max_group_size,
                              lm.cfg.agg_score_in_params != 0)) {
        json rec;
        rec["plan"] = factgen::format_plan(sp.plan, lm.predicates);
        rec["agg_score"] = sp.log_score;
        rec["log_plan"] =
            factgen::plan_log_prob(sp.plan, lm.model.transition, ctx);
        plans.push_back(std::move(rec));
      }
    }
    json rec;
    rec["plans"] = std::move(plans);
    out << rec.dump() << '\n';
  }
  return 0;
}

int run_align(const std::string& method, const std::string& corpus_path,
              const std::string& tokens_path, const std::string& predicates_path,
              const std::string& config_path, const std::string& model_path,
              const std::string& out_path) {
  factgen::Corpus corpus = factgen::load_corpus(corpus_path);
  auto out_file = open_output(out_path);
  std::ostream& out = out_file ? *out_file : std::cout;

  if (method == "rule") {
    factgen::PredicateVocab predicates =
        factgen::PredicateVocab::load_file(predicates_path);
    for (const auto& inst : corpus) {
      factgen::Alignment a =
          factgen::rule_align(inst, factgen::instance_facts(inst), predicates);
      json facts = json::array();
      for (const auto& f : a) {
        json names = json::array();
        for (int p : f) names.push_back(predicates.name(p));
        facts.push_back(std::move(names));
      }
      json rec;
      rec["facts"] = std::move(facts);
      out << rec.dump() << '\n';
    }
    return 0;
  }
  if (method != "viterbi") throw factgen::DataError("unknown align method: " + method);
  LoadedModel lm = load_model(config_path, tokens_path, predicates_path, model_path);
  for (const auto& inst : corpus) {
    factgen::ViterbiResult v = factgen::viterbi_align(lm.model, inst, lm.tokens,
                                                      lm.predicates,
                                                      lm.cfg.max_group_size);
    json facts = json::array();
    for (const auto& f : v.alignment) {
      json names = json::array();
      for (int p : f) names.push_back(lm.predicates.name(p));
      facts.push_back(std::move(names));
    }
    json rec;
    rec["facts"] = std::move(facts);
    rec["log_score"] = v.log_score;
    out << rec.dump() << '\n';
  }
  return 0;
}

int run_evaluate(const std::string& metric, const std::string& refs_path,
                 const std::string& hyps_path, const std::string& corpus_path,
                 const std::string& patterns_path, const std::string& gold_plans_path,
                 const std::string& alignments_path,
                 const std::string& predicates_path) {
  if (metric == "bleu") {
    factgen::Corpus refs = factgen::load_corpus(refs_path);
    std::vector<json> hyps = read_jsonl(hyps_path);
    if (refs.size() != hyps.size())
      throw factgen::EvalError("bleu: corpus and hypothesis counts differ");
    std::vector<std::vector<std::vector<std::string>>> ref_tokens;
    std::vector<std::vector<std::string>> hyp_tokens;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      ref_tokens.push_back({factgen::tokenize(refs[i].text)});
      hyp_tokens.push_back(factgen::tokenize(hyps[i].at("text").get<std::string>()));
    }
    std::cout << "BLEU " << factgen::bleu(ref_tokens, hyp_tokens) << "\n";
    return 0;
  }
  if (metric == "ser") {
    factgen::Corpus corpus = factgen::load_corpus(corpus_path);
    std::vector<json> hyps = read_jsonl(hyps_path);
    if (corpus.size() != hyps.size())
      throw factgen::EvalError("ser: corpus and hypothesis counts differ");
    factgen::SlotPatternFile patterns = factgen::SlotPatternFile::load_file(patterns_path);
    factgen::SerReport total;
    for (std::size_t i = 0; i < corpus.size(); ++i)
      total += factgen::ser(hyps[i].at("text").get<std::string>(), corpus[i].triples,
                            patterns);
    std::cout << "ADD " << total.add << "\nMISS " << total.miss << "\nWRONG "
              << total.wrong << "\nSLOTS " << total.total_slots << "\nSER "
              << total.ser() << "\n";
    return 0;
  }
  if (metric == "plan") {
    factgen::PredicateVocab predicates =
        factgen::PredicateVocab::load_file(predicates_path);
    std::vector<std::string> gold = factgen::load_plans(gold_plans_path);
    std::vector<json> hyps = read_jsonl(hyps_path);
    if (gold.size() != hyps.size())
      throw factgen::EvalError("plan: gold and hypothesis counts differ");
    double nmi_sum = 0.0, tau_sum = 0.0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      factgen::Plan g = factgen::parse_plan(gold[i], predicates, 1000);
      factgen::Plan h = factgen::parse_plan(hyps[i].at("plan").get<std::string>(),
                                            predicates, 1000);
      nmi_sum += factgen::nmi(h, g);
      tau_sum += factgen::kendall_tau(h, g);
    }
    std::cout << "NMI " << nmi_sum / gold.size() << "\nKENDALL_TAU "
              << tau_sum / gold.size() << "\n";
    return 0;
  }
  if (metric == "align-prf") {
    factgen::PredicateVocab predicates =
        factgen::PredicateVocab::load_file(predicates_path);
    std::vector<std::string> gold = factgen::load_plans(gold_plans_path);
    std::vector<json> predicted = read_jsonl(alignments_path);
    if (gold.size() != predicted.size())
      throw factgen::EvalError("align-prf: gold and prediction counts differ");
    std::int64_t correct = 0, pred_links = 0, gold_links = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
      factgen::Plan g = factgen::parse_plan(gold[i], predicates, 1000);
      factgen::Alignment ga = factgen::alignment_from_plan(g);
      factgen::Alignment pa = alignment_from_names(predicted[i].at("facts"), predicates);
      factgen::PrfReport r = factgen::align_prf(pa, ga);
      correct += r.correct;
      pred_links += r.predicted;
      gold_links += r.gold;
    }
    const double p = pred_links ? static_cast<double>(correct) / pred_links : 1.0;
    const double r = gold_links ? static_cast<double>(correct) / gold_links : 1.0;
    const double f1 = (p + r) > 0 ? 2 * p * r / (p + r) : 0.0;
    std::cout << "PRECISION " << p << "\nRECALL " << r << "\nF1 " << f1 << "\n";
    return 0;
  }
  throw factgen::DataError("unknown metric: " + metric);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"joint sentence planning and data-to-text generation"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  std::string s_out_dir, s_prefix = "synth", s_spec;
  int s_count = 0;
  std::uint64_t s_seed = 0;
  synth->add_option("--out-dir", s_out_dir)->required();
  synth->add_option("--prefix", s_prefix);
  synth->add_option("--count", s_count)->required();
  synth->add_option("--seed", s_seed)->required();
  synth->add_option("--spec", s_spec);

  // preprocess
  auto* preprocess = app.add_subcommand("preprocess", "build vocabularies and segments");
  std::string p_corpus, p_out_dir, p_seg;
  int p_min_freq = 1;
  preprocess->add_option("--corpus", p_corpus)->required();
  preprocess->add_option("--out-dir", p_out_dir)->required();
  preprocess->add_option("--min-freq", p_min_freq);
  preprocess->add_option("--seg-config", p_seg);

  // pretrain
  auto* pretrain = app.add_subcommand("pretrain", "train the baseline seq2seq");
  std::string pt_corpus, pt_tokens, pt_preds, pt_config, pt_out;
  pretrain->add_option("--corpus", pt_corpus)->required();
  pretrain->add_option("--tokens", pt_tokens)->required();
  pretrain->add_option("--predicates", pt_preds)->required();
  pretrain->add_option("--config", pt_config)->required();
  pretrain->add_option("--out", pt_out)->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "train by marginal likelihood");
  std::string t_corpus, t_tokens, t_preds, t_config, t_init, t_out, t_val, t_ckpt;
  train_cmd->add_option("--corpus", t_corpus)->required();
  train_cmd->add_option("--tokens", t_tokens)->required();
  train_cmd->add_option("--predicates", t_preds)->required();
  train_cmd->add_option("--config", t_config)->required();
  train_cmd->add_option("--init", t_init)->required();
  train_cmd->add_option("--out", t_out)->required();
  train_cmd->add_option("--val", t_val);
  train_cmd->add_option("--checkpoint-prefix", t_ckpt);

  // generate
  auto* generate = app.add_subcommand("generate", "plan and generate text");
  std::string g_corpus, g_tokens, g_preds, g_config, g_model, g_out = "-";
  std::string g_mode = "full", g_plan;
  int g_max_group = 0;
  generate->add_option("--corpus", g_corpus)->required();
  generate->add_option("--tokens", g_tokens)->required();
  generate->add_option("--predicates", g_preds)->required();
  generate->add_option("--config", g_config)->required();
  generate->add_option("--model", g_model)->required();
  generate->add_option("--out", g_out);
  generate->add_option("--mode", g_mode)
      ->check(CLI::IsMember({"full", "no-ordering", "no-aggregation"}));
  generate->add_option("--plan", g_plan);
  generate->add_option("--max-group-size", g_max_group);

  // plan
  auto* plan_cmd = app.add_subcommand("plan", "emit top plans without decoding");
  std::string pl_corpus, pl_tokens, pl_preds, pl_config, pl_model, pl_out = "-";
  plan_cmd->add_option("--corpus", pl_corpus)->required();
  plan_cmd->add_option("--tokens", pl_tokens)->required();
  plan_cmd->add_option("--predicates", pl_preds)->required();
  plan_cmd->add_option("--config", pl_config)->required();
  plan_cmd->add_option("--model", pl_model)->required();
  plan_cmd->add_option("--out", pl_out);

  // align
  auto* align = app.add_subcommand("align", "align facts to triples");
  std::string a_method = "viterbi", a_corpus, a_tokens, a_preds, a_config, a_model,
              a_out = "-";
  align->add_option("--method", a_method)->check(CLI::IsMember({"viterbi", "rule"}));
  align->add_option("--corpus", a_corpus)->required();
  align->add_option("--tokens", a_tokens);
  align->add_option("--predicates", a_preds)->required();
  align->add_option("--config", a_config);
  align->add_option("--model", a_model);
  align->add_option("--out", a_out);

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "compute metrics");
  std::string e_metric, e_refs, e_hyps, e_corpus, e_patterns, e_gold_plans,
      e_alignments, e_preds;
  evaluate->add_option("--metric", e_metric)
      ->required()
      ->check(CLI::IsMember({"bleu", "ser", "plan", "align-prf"}));
  evaluate->add_option("--refs", e_refs);
  evaluate->add_option("--hyps", e_hyps);
  evaluate->add_option("--corpus", e_corpus);
  evaluate->add_option("--patterns", e_patterns);
  evaluate->add_option("--gold-plans", e_gold_plans);
  evaluate->add_option("--alignments", e_alignments);
  evaluate->add_option("--predicates", e_preds);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed())
      return run_synth(s_out_dir, s_prefix, s_count, s_seed, s_spec);
    if (preprocess->parsed())
      return run_preprocess(p_corpus, p_out_dir, p_min_freq, p_seg);
    if (pretrain->parsed())
      return run_pretrain(pt_corpus, pt_tokens, pt_preds, pt_config, pt_out);
    if (train_cmd->parsed())
      return run_train(t_corpus, t_tokens, t_preds, t_config, t_init, t_out, t_val,
                       t_ckpt);
    if (generate->parsed())
      return run_generate(g_corpus, g_tokens, g_preds, g_config, g_model, g_out, g_mode,
                          g_plan, g_max_group);
    if (plan_cmd->parsed())
      return run_plan(pl_corpus, pl_tokens, pl_preds, pl_config, pl_model, pl_out);
    if (align->parsed())
      return run_align(a_method, a_corpus, a_tokens, a_preds, a_config, a_model, a_out);
    if (evaluate->parsed())
      return run_evaluate(e_metric, e_refs, e_hyps, e_corpus, e_patterns, e_gold_plans,
                          e_alignments, e_preds);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
