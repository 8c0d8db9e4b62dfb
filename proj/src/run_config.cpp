#include "hdlm/run_config.hpp"

#include <set>

#include "hdlm/errors.hpp"
#include "hdlm/io.hpp"

namespace hdlm::persist {

namespace {

// Reads optional keys of one JSON object and rejects keys nobody asked for,
// so a typo in a config file is an error rather than a silent default.
class Reader {
 public:
  Reader(const json& j, std::string context) : j_(j), context_(std::move(context)) {
    if (!j_.is_object()) throw ConfigError(context_ + " must be a JSON object");
  }

  template <typename T>
  void opt(const std::string& key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(context_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw ConfigError("unknown key " + context_ + "." + it.key());
    }
  }

 private:
  const json& j_;
  std::string context_;
  std::set<std::string> seen_;
};

const char* head_init_name(model::HeadInit h) { return h == model::HeadInit::kCopy ? "copy" : "random"; }

model::HeadInit parse_head_init(const std::string& s) {
  if (s == "copy") return model::HeadInit::kCopy;
  if (s == "random") return model::HeadInit::kRandom;
  throw ConfigError("head_init must be 'copy' or 'random', got '" + s + "'");
}

}  // namespace

json to_json(const model::ModelConfig& c) {
  return json{{"num_layers", c.num_layers}, {"hidden", c.hidden},       {"num_heads", c.num_heads},
              {"ffn_ratio", c.ffn_ratio},   {"vocab_size", c.vocab_size}, {"depth", c.depth},
              {"schedule", c.schedule},     {"loss_weights", c.loss_weights}, {"max_positions", c.max_positions}};
}

model::ModelConfig model_config_from_json(const json& j) {
  model::ModelConfig c;
  Reader r(j, "model");
  r.opt("num_layers", c.num_layers);
  r.opt("hidden", c.hidden);
  r.opt("num_heads", c.num_heads);
  r.opt("ffn_ratio", c.ffn_ratio);
  r.opt("vocab_size", c.vocab_size);
  r.opt("depth", c.depth);
  r.opt("schedule", c.schedule);
  r.opt("loss_weights", c.loss_weights);
  r.opt("max_positions", c.max_positions);
  r.finish();
  return c;
}

json to_json(const train::TrainConfig& c) {
  return json{{"learning_rate", c.learning_rate},
              {"weight_decay", c.weight_decay},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_eps", c.adam_eps},
              {"batch_size", c.batch_size},
              {"epochs", c.epochs},
              {"total_steps", c.total_steps},
              {"warmup_fraction", c.warmup_fraction},
              {"loss_weights", c.loss_weights},
              {"seed", c.seed},
              {"mode", train::mode_name(c.mode)},
              {"detach_latents", c.detach_latents},
              {"threads", c.threads}};
}

train::TrainConfig train_config_from_json(const json& j) {
  train::TrainConfig c;
  Reader r(j, "train");
  r.opt("learning_rate", c.learning_rate);
  r.opt("weight_decay", c.weight_decay);
  r.opt("beta1", c.beta1);
  r.opt("beta2", c.beta2);
  r.opt("adam_eps", c.adam_eps);
  r.opt("batch_size", c.batch_size);
  r.opt("epochs", c.epochs);
  r.opt("total_steps", c.total_steps);
  r.opt("warmup_fraction", c.warmup_fraction);
  r.opt("loss_weights", c.loss_weights);
  r.opt("seed", c.seed);
  std::string mode = train::mode_name(c.mode);
  r.opt("mode", mode);
  c.mode = train::parse_mode(mode);
  r.opt("detach_latents", c.detach_latents);
  r.opt("threads", c.threads);
  r.finish();
  if (c.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (c.epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (!(c.learning_rate >= 0.0)) throw ConfigError("train.learning_rate must be >= 0");
  return c;
}

json to_json(const infer::GenerationConfig& c) {
  return json{{"max_len", c.max_len},         {"temperature", c.temperature}, {"top_k", c.top_k},
              {"stop_tokens", c.stop_tokens}, {"seed", c.seed},               {"mode", train::mode_name(c.mode)}};
}

infer::GenerationConfig generation_config_from_json(const json& j) {
  infer::GenerationConfig c;
  Reader r(j, "generation");
  r.opt("max_len", c.max_len);
  r.opt("temperature", c.temperature);
  r.opt("top_k", c.top_k);
  r.opt("stop_tokens", c.stop_tokens);
  r.opt("seed", c.seed);
  std::string mode = train::mode_name(c.mode);
  r.opt("mode", mode);
  c.mode = train::parse_mode(mode);
  r.finish();
  return c;
}

json to_json(const tasks::SyntheticSpec& s) {
  return json{{"depth", s.depth},
              {"branching", s.branching},
              {"content_vocab", s.content_vocab},
              {"samples", s.samples},
              {"noise", s.noise},
              {"seed", s.seed},
              {"signature_per_level", s.signature_per_level},
              {"shared_child_words", s.shared_child_words},
              {"ordered", s.ordered},
              {"facts", s.facts},
              {"objects", s.objects},
              {"locations", s.locations}};
}

tasks::SyntheticSpec synthetic_spec_from_json(const json& j) {
  tasks::SyntheticSpec s;
  Reader r(j, "data.spec");
  r.opt("depth", s.depth);
  r.opt("branching", s.branching);
  r.opt("content_vocab", s.content_vocab);
  r.opt("samples", s.samples);
  r.opt("noise", s.noise);
  r.opt("seed", s.seed);
  r.opt("signature_per_level", s.signature_per_level);
  r.opt("shared_child_words", s.shared_child_words);
  r.opt("ordered", s.ordered);
  r.opt("facts", s.facts);
  r.opt("objects", s.objects);
  r.opt("locations", s.locations);
  r.finish();
  s.validate();
  return s;
}

json to_json(const RunConfig& c) {
  return json{{"model", to_json(c.model)},
              {"train", to_json(c.train)},
              {"generation", to_json(c.generation)},
              {"data", {{"task", c.data.task}, {"spec", to_json(c.data.spec)}, {"eval_samples", c.data.eval_samples}}},
              {"train_data", c.train_data},
              {"eval_data", c.eval_data},
              {"output_dir", c.output_dir},
              {"seed", c.seed},
              {"head_init", head_init_name(c.head_init)},
              {"checkpoint_every", c.checkpoint_every},
              {"max_steps", c.max_steps},
              {"auto_vocab", c.auto_vocab}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Reader r(j, "config");
  if (const json* m = r.child("model")) c.model = model_config_from_json(*m);
  if (const json* t = r.child("train")) c.train = train_config_from_json(*t);
  if (const json* g = r.child("generation")) c.generation = generation_config_from_json(*g);
  if (const json* d = r.child("data")) {
    Reader dr(*d, "data");
    dr.opt("task", c.data.task);
    dr.opt("eval_samples", c.data.eval_samples);
    if (const json* s = dr.child("spec")) c.data.spec = synthetic_spec_from_json(*s);
    dr.finish();
    if (c.data.task != "htc" && c.data.task != "htg") throw ConfigError("data.task must be 'htc' or 'htg'");
  }
  r.opt("train_data", c.train_data);
  r.opt("eval_data", c.eval_data);
  r.opt("output_dir", c.output_dir);
  r.opt("seed", c.seed);
  std::string head = head_init_name(c.head_init);
  r.opt("head_init", head);
  c.head_init = parse_head_init(head);
  r.opt("checkpoint_every", c.checkpoint_every);
  r.opt("max_steps", c.max_steps);
  r.opt("auto_vocab", c.auto_vocab);
  r.finish();
  if (c.checkpoint_every < 0 || c.max_steps < 0) throw ConfigError("checkpoint_every and max_steps must be >= 0");
  return c;
}

json to_json(const cost::CostParams& p) {
  return json{{"B", p.batch},      {"L", p.input_length},  {"level_lengths", p.level_lengths},
              {"E", p.hidden},     {"V", p.vocab},         {"K", p.layers},
              {"schedule", p.schedule}, {"c", p.ffn_ratio}, {"mode", cost::cost_mode_name(p.mode)}};
}

cost::CostParams cost_params_from_json(const json& j) {
  cost::CostParams p;
  Reader r(j, "cost");
  r.opt("B", p.batch);
  r.opt("L", p.input_length);
  r.opt("level_lengths", p.level_lengths);
  r.opt("E", p.hidden);
  r.opt("V", p.vocab);
  r.opt("K", p.layers);
  r.opt("schedule", p.schedule);
  r.opt("c", p.ffn_ratio);
  std::string mode = cost::cost_mode_name(p.mode);
  r.opt("mode", mode);
  p.mode = cost::parse_cost_mode(mode);
  r.finish();
  p.validate();
  return p;
}

json to_json(const cost::CostReport& r) {
  json j{{"mode", cost::cost_mode_name(r.mode)},
         {"train_baseline", r.train_baseline},
         {"train_hdlm", r.train_hdlm},
         {"train_savings", r.train_savings},
         {"train_reduction_pct", r.train_reduction_pct},
         {"infer_baseline", r.infer_baseline},
         {"infer_hdlm", r.infer_hdlm},
         {"infer_savings", r.infer_savings},
         {"infer_reduction_pct", r.infer_reduction_pct},
         {"extrapolated", r.extrapolated}};
  j["counter_measured"] = r.counter_measured ? json(*r.counter_measured) : json(nullptr);
  j["counter_delta"] = r.counter_delta ? json(*r.counter_delta) : json(nullptr);
  auto lin = [](const std::optional<cost::Linearity>& l) -> json {
    if (!l) return nullptr;
    return json{{"x", l->x}, {"savings", l->savings}, {"second_difference", l->second_difference},
                {"r_squared", l->r_squared}};
  };
  j["linearity"] = {{"last_level_length", lin(r.vs_last_length)}, {"first_boundary", lin(r.vs_first_boundary)}};
  return j;
}

json to_json(const model::LayerScheduleReport& r) {
  return json{{"feasible", r.feasible}, {"min_layers_bound", r.min_layers_bound}, {"violations", r.violations}};
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = json::parse(io::read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  RunConfig c = run_config_from_json(j);
  const auto base = path.parent_path();
  for (std::string* p : {&c.train_data, &c.eval_data}) {
    if (!p->empty() && std::filesystem::path(*p).is_relative()) *p = (base / *p).string();
  }
  if (std::filesystem::path(c.output_dir).is_relative()) c.output_dir = (base / c.output_dir).string();
  return c;
}

}  // namespace hdlm::persist
