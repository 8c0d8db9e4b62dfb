#include "hdlm/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

#include "hdlm/errors.hpp"
#include "hdlm/io.hpp"

namespace hdlm::cli {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string rng_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void require_file(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string(what) + " path is not set");
  if (!fs::exists(path)) throw DataError(std::string(what) + " " + path + " does not exist");
}

}  // namespace

tasks::Tokenizer tokenizer_from_vocab(int depth, const std::vector<std::string>& vocab) {
  tasks::Tokenizer tok(depth);
  if (vocab.size() < static_cast<std::size_t>(tok.size())) throw DataError("checkpoint vocabulary is incomplete");
  for (std::size_t i = 0; i < vocab.size(); ++i) {
    if (i < static_cast<std::size_t>(tok.size())) {
      if (vocab[i] != tok.token(static_cast<int>(i))) throw DataError("checkpoint vocabulary has unexpected reserved entries");
    } else {
      tok.add(vocab[i]);
    }
  }
  return tok;
}

infer::GenerationConfig with_stop_tokens(infer::GenerationConfig gen, const tasks::Tokenizer& tok) {
  if (gen.stop_tokens.empty()) {
    for (int d = 1; d <= tok.depth(); ++d) gen.stop_tokens.push_back(tok.end_token(d));
  }
  return gen;
}

TrainResult cmd_train(const persist::RunConfig& cfg_in) {
  persist::RunConfig cfg = cfg_in;
  cfg.model.validate();
  const auto report = model::validate_schedule(cfg.model);
  if (!report.feasible) {
    throw ConfigError("infeasible decoding-layer schedule: " + persist::to_json(report).dump());
  }
  require_file(cfg.train_data, "train_data");
  const auto text = tasks::read_jsonl(cfg.train_data);
  if (text.empty()) throw DataError("training set " + cfg.train_data + " is empty");

  const tasks::Tokenizer tok = tasks::build_tokenizer(cfg.model.depth, text);
  if (cfg.auto_vocab) {
    cfg.model.vocab_size = tok.size();
  } else if (tok.size() > cfg.model.vocab_size) {
    throw ConfigError("training data needs " + std::to_string(tok.size()) + " tokens but vocab_size is " +
                      std::to_string(cfg.model.vocab_size));
  }
  const auto samples = tasks::encode_samples(tok, text);
  for (const auto& s : samples) train::validate_sample(s, cfg.model);

  model::Parameters params = model::init_model(cfg.model, cfg.seed, cfg.head_init, cfg.seed + 1);
  train::OptimizerState opt = train::init_optimizer(params);

  const auto n = static_cast<std::int64_t>(samples.size());
  const std::int64_t batch = std::min<std::int64_t>(cfg.train.batch_size, n);
  const std::int64_t per_epoch = (n + batch - 1) / batch;
  const std::int64_t total = cfg.max_steps > 0 ? cfg.max_steps : cfg.train.epochs * per_epoch;
  if (total <= 0) throw ConfigError("nothing to train: set epochs or max_steps");
  cfg.train.total_steps = total;
  if (cfg.train.seed == 0) cfg.train.seed = cfg.seed;

  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(samples.size());

  std::string csv = "step,lr";
  for (int d = 1; d <= cfg.model.depth; ++d) csv += ",L_" + std::to_string(d);
  csv += ",total\n";

  auto checkpoint = [&](const fs::path& path) {
    persist::Checkpoint ck{params, opt, opt.step, rng_state(rng), tok.tokens()};
    persist::save_checkpoint(ck, path);
  };

  TrainResult result;
  std::vector<train::HierSample> chunk;
  for (std::int64_t step = 0; step < total; ++step) {
    const std::int64_t pos = step % per_epoch;
    if (pos == 0) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::shuffle(order.begin(), order.end(), rng);
    }
    chunk.clear();
    const auto begin = static_cast<std::size_t>(pos * batch);
    const auto end = std::min(order.size(), begin + static_cast<std::size_t>(batch));
    for (std::size_t i = begin; i < end; ++i) chunk.push_back(samples[order[i]]);

    result.last = train::train_step(params, chunk, opt, cfg.train);
    csv += std::to_string(opt.step) + "," + fmt(result.last.learning_rate);
    for (double l : result.last.per_level) csv += "," + fmt(l);
    csv += "," + fmt(result.last.total) + "\n";
    if (cfg.checkpoint_every > 0 && opt.step % cfg.checkpoint_every == 0 && opt.step != total) {
      checkpoint(out / "checkpoints" / ("step_" + std::to_string(opt.step) + ".ckpt"));
    }
  }

  result.steps = opt.step;
  result.final_checkpoint = out / "final.ckpt";
  result.loss_log = out / "losses.csv";
  checkpoint(result.final_checkpoint);
  io::write_file_atomic(result.loss_log, csv);

  json summary{{"steps", opt.step},
               {"samples", samples.size()},
               {"vocab_size", cfg.model.vocab_size},
               {"weight_count", params.weight_count()},
               {"parameter_count", params.parameter_count()},
               {"final_per_level", result.last.per_level},
               {"final_total", result.last.total},
               {"config", persist::to_json(cfg)}};
  io::write_file_atomic(out / "train_report.json", summary.dump(2) + "\n");
  return result;
}

void cmd_gen_data(const persist::RunConfig& cfg, const fs::path& out_dir) {
  tasks::SyntheticSpec spec = cfg.data.spec;
  if (spec.seed == 0) spec.seed = cfg.seed;
  spec.validate();

  std::vector<tasks::TextSample> train_set, eval_set;
  if (cfg.data.task == "htc") {
    // One draw split in two, so both splits share the hierarchy and the
    // per-leaf signatures.
    const auto h = tasks::gen_hierarchy(spec.depth, spec.branching, spec.seed);
    tasks::SyntheticSpec both = spec;
    both.samples = spec.samples + cfg.data.eval_samples;
    auto pool = tasks::gen_htc_samples(h, both);
    train_set.assign(pool.begin(), pool.begin() + spec.samples);
    eval_set.assign(pool.begin() + spec.samples, pool.end());
  } else {
    train_set = tasks::gen_htg_samples(spec);
    tasks::SyntheticSpec eval_spec = spec;
    eval_spec.seed = spec.seed + 1;
    eval_spec.samples = cfg.data.eval_samples;
    eval_set = tasks::gen_htg_samples(eval_spec);
  }
  tasks::write_jsonl(out_dir / "train.jsonl", train_set);
  tasks::write_jsonl(out_dir / "eval.jsonl", eval_set);
}

std::string cmd_generate(const fs::path& checkpoint, const fs::path& input, const fs::path& output,
                         infer::GenerationConfig gen) {
  const auto ck = persist::load_checkpoint(checkpoint);
  const auto& mc = ck.params.config;
  const auto tok = tokenizer_from_vocab(mc.depth, ck.vocab);
  gen = with_stop_tokens(std::move(gen), tok);
  const auto records = tasks::read_jsonl(input);

  std::string out;
  for (const auto& r : records) {
    const auto missing = tok.unknown_words(r.query);
    if (!missing.empty()) {
      throw VocabularyError("query '" + r.query + "' has out-of-vocabulary tokens: " + tasks::join_words(missing));
    }
    const auto query = tok.encode_query(r.query);
    const auto result = infer::generate(query, ck.params, gen);
    std::vector<std::string> responses;
    for (const auto& resp : result.responses) responses.push_back(tok.decode(resp));
    out += json{{"query", r.query},
                {"responses", responses},
                {"lengths", result.lengths},
                {"mean_logprob", result.mean_logprob}}
               .dump();
    out += '\n';
  }
  if (!output.empty()) io::write_file_atomic(output, out);
  return out;
}

json cmd_eval(const fs::path& checkpoint, const fs::path& dataset, infer::GenerationConfig gen,
              metrics::RougeOptions rouge, const fs::path& output) {
  const auto ck = persist::load_checkpoint(checkpoint);
  const auto& mc = ck.params.config;
  const auto tok = tokenizer_from_vocab(mc.depth, ck.vocab);
  gen = with_stop_tokens(std::move(gen), tok);
  const auto records = tasks::read_jsonl(dataset);
  if (records.empty()) throw DataError("evaluation set " + dataset.string() + " is empty");

  const auto depth = static_cast<std::size_t>(mc.depth);
  std::vector<std::vector<std::string>> preds(depth), golds(depth);
  for (const auto& r : records) {
    if (r.responses.size() != depth) {
      throw DataError("dataset depth " + std::to_string(r.responses.size()) + " does not match model depth " +
                      std::to_string(depth));
    }
    const auto result = infer::generate(tok.encode_query(r.query), ck.params, gen);
    for (std::size_t d = 0; d < depth; ++d) {
      preds[d].push_back(tok.decode(result.responses[d]));
      golds[d].push_back(r.responses[d]);
    }
  }

  json levels = json::array();
  for (std::size_t d = 0; d < depth; ++d) {
    const auto m = metrics::score_level(static_cast<int>(d + 1), preds[d], golds[d], rouge);
    levels.push_back(json{{"level", m.level},
                          {"accuracy", 100 * m.accuracy},
                          {"micro_f1", 100 * m.micro_f1},
                          {"macro_f1", 100 * m.macro_f1},
                          {"bleu2", 100 * m.bleu2},
                          {"rouge_l", 100 * m.rouge_l},
                          {"cider", 100 * m.cider},
                          {"cider_x10", m.cider_x10 ? json(*m.cider_x10) : json(nullptr)}});
  }
  json report{{"samples", records.size()},
              {"mode", train::mode_name(gen.mode)},
              {"levels", levels},
              {"bottom_level", levels.back()}};
  if (!output.empty()) io::write_file_atomic(output, report.dump(2) + "\n");
  return report;
}

CostOutput cmd_cost(const cost::CostParams& params, const Sweep& sweep) {
  params.validate();
  CostOutput out;
  out.report = persist::to_json(cost::savings_report(params));
  out.report["params"] = persist::to_json(params);
  if (sweep.variable.empty()) return out;
  if (sweep.variable != "L2" && sweep.variable != "k1") {
    throw ConfigError("sweep variable must be L2 or k1, got '" + sweep.variable + "'");
  }
  std::string csv =
      sweep.variable +
      ",train_baseline,train_hdlm,train_savings,train_reduction_pct,infer_baseline,infer_hdlm,infer_savings,"
      "infer_reduction_pct,three_f_k1_L2\n";
  for (cost::Flops v : sweep.values) {
    cost::CostParams p = params;
    if (sweep.variable == "L2") {
      p.level_lengths.back() = v;
    } else {
      p.schedule.at(0) = v;
    }
    const auto r = cost::savings_report(p);
    const cost::Flops echo = 3 * p.f() * p.schedule.at(0) * p.level_lengths.back();
    csv += std::to_string(v) + "," + std::to_string(r.train_baseline) + "," + std::to_string(r.train_hdlm) + "," +
           std::to_string(r.train_savings) + "," + fmt(r.train_reduction_pct) + "," +
           std::to_string(r.infer_baseline) + "," + std::to_string(r.infer_hdlm) + "," +
           std::to_string(r.infer_savings) + "," + fmt(r.infer_reduction_pct) + "," + std::to_string(echo) + "\n";
  }
  out.sweep_csv = std::move(csv);
  return out;
}

json cmd_validate_schedule(const model::ModelConfig& config) {
  return persist::to_json(model::validate_schedule(config));
}

}  // namespace hdlm::cli
