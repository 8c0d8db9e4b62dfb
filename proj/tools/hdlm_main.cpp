// hdlm: train, sample and cost hierarchical-decoding transformers.

#include <CLI11.hpp>
#include <iostream>

#include "hdlm/commands.hpp"
#include "hdlm/errors.hpp"
#include "hdlm/io.hpp"

namespace {

using namespace hdlm;
namespace fs = std::filesystem;

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> mode;
  std::optional<int> k1;
  std::vector<int> schedule;
  std::optional<int> depth;
  std::optional<int> max_len;
  std::optional<double> temperature;
  std::optional<std::uint64_t> max_steps;
};

persist::RunConfig resolve(const Flags& f) {
  persist::RunConfig cfg = f.config.empty() ? persist::RunConfig{} : persist::load_run_config(f.config);
  if (f.seed) {
    cfg.seed = *f.seed;
    cfg.train.seed = *f.seed;
  }
  if (f.mode) {
    cfg.train.mode = train::parse_mode(*f.mode);
    cfg.generation.mode = cfg.train.mode;
  }
  if (f.depth) {
    cfg.model.depth = *f.depth;
    cfg.data.spec.depth = *f.depth;
  }
  if (!f.schedule.empty()) cfg.model.schedule = f.schedule;
  if (f.k1) {
    if (cfg.model.schedule.empty()) throw ConfigError("--k1 needs a depth >= 2 schedule");
    cfg.model.schedule[0] = *f.k1;
  }
  if (f.max_len) cfg.generation.max_len = {*f.max_len};
  if (f.temperature) cfg.generation.temperature = *f.temperature;
  if (f.max_steps) cfg.max_steps = static_cast<std::int64_t>(*f.max_steps);
  return cfg;
}

void add_common(CLI::App* app, Flags& f) {
  app->add_option("--config", f.config, "Run configuration (JSON)");
  app->add_option("--seed", f.seed, "Override every seed");
  app->add_option("--mode", f.mode, "hier or flat")->check(CLI::IsMember({"hier", "flat"}));
  app->add_option("--k1", f.k1, "First decoding layer");
  app->add_option("--depth", f.depth, "Number of response levels");
  app->add_option("--schedule", f.schedule, "Decoding layers k_1 .. k_{D-1}");
}

void add_generation(CLI::App* app, Flags& f) {
  app->add_option("--max-len", f.max_len, "Per-level decode cap");
  app->add_option("--temperature", f.temperature, "0 for greedy");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hierarchical-decoding transformer toolkit"};
  app.require_subcommand(1);
  Flags flags;

  auto* train_cmd = app.add_subcommand("train", "Train from a run config");
  add_common(train_cmd, flags);
  train_cmd->add_option("--max-steps", flags.max_steps, "Stop after N optimizer steps");

  std::string out_dir;
  auto* gen_data = app.add_subcommand("gen-data", "Write synthetic train/eval JSONL");
  add_common(gen_data, flags);
  gen_data->add_option("--out", out_dir, "Output directory")->required();

  std::string checkpoint, input, output;
  auto* generate = app.add_subcommand("generate", "Decode every query of a JSONL file");
  add_common(generate, flags);
  add_generation(generate, flags);
  generate->add_option("--checkpoint", checkpoint)->required();
  generate->add_option("--input", input)->required();
  generate->add_option("--output", output, "Defaults to stdout");

  double beta = 1.0;
  bool duc = false;
  auto* eval = app.add_subcommand("eval", "Score generations against a labelled JSONL file");
  add_common(eval, flags);
  add_generation(eval, flags);
  eval->add_option("--checkpoint", checkpoint)->required();
  eval->add_option("--data", input)->required();
  eval->add_option("--output", output, "Report path; defaults to stdout only");
  eval->add_option("--beta", beta, "ROUGE-L recall weight");
  eval->add_flag("--duc", duc, "ROUGE-L as pure recall");

  std::string cost_config, sweep_var, sweep_csv;
  std::optional<std::string> cost_mode;
  std::vector<cost::Flops> sweep_values, lengths, schedule;
  std::optional<cost::Flops> B, L, E, V, K, c, k1;
  auto* cost_cmd = app.add_subcommand("cost", "FLOPs of baseline vs hierarchical decoding");
  cost_cmd->add_option("--config", cost_config, "CostParams JSON; flags override it");
  cost_cmd->add_option("--cost-mode", cost_mode)->check(CLI::IsMember({"paper", "asymptotic", "exact", "full"}));
  cost_cmd->add_option("--B", B);
  cost_cmd->add_option("--L", L);
  cost_cmd->add_option("--level-lengths", lengths, "L_1 .. L_D");
  cost_cmd->add_option("--E", E);
  cost_cmd->add_option("--V", V);
  cost_cmd->add_option("--K", K);
  cost_cmd->add_option("--schedule", schedule, "k_1 .. k_{D-1}");
  cost_cmd->add_option("--k1", k1);
  cost_cmd->add_option("--c", c);
  cost_cmd->add_option("--sweep", sweep_var, "L2 or k1")->check(CLI::IsMember({"L2", "k1"}));
  cost_cmd->add_option("--values", sweep_values, "Sweep points");
  cost_cmd->add_option("--csv", sweep_csv, "Sweep table path; defaults to stdout");

  auto* validate = app.add_subcommand("validate-schedule", "Check a decoding-layer schedule");
  add_common(validate, flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ExitCode::kConfig);
  }

  try {
    if (*train_cmd) {
      const auto r = cli::cmd_train(resolve(flags));
      std::cout << "trained " << r.steps << " steps; final loss " << r.last.total << "\n"
                << "checkpoint: " << r.final_checkpoint.string() << "\n";
    } else if (*gen_data) {
      cli::cmd_gen_data(resolve(flags), out_dir);
    } else if (*generate) {
      const auto cfg = resolve(flags);
      const auto text = cli::cmd_generate(checkpoint, input, output, cfg.generation);
      if (output.empty()) std::cout << text;
    } else if (*eval) {
      const auto cfg = resolve(flags);
      const auto report = cli::cmd_eval(checkpoint, input, cfg.generation, {beta, duc}, output);
      std::cout << report.dump(2) << "\n";
    } else if (*cost_cmd) {
      cost::CostParams p;
      if (!cost_config.empty()) {
        try {
          p = persist::cost_params_from_json(persist::json::parse(io::read_file(cost_config)));
        } catch (const persist::json::exception& e) {
          throw ConfigError(cost_config + ": " + e.what());
        }
      }
      if (B) p.batch = *B;
      if (L) p.input_length = *L;
      if (E) p.hidden = *E;
      if (V) p.vocab = *V;
      if (K) p.layers = *K;
      if (c) p.ffn_ratio = *c;
      if (!lengths.empty()) p.level_lengths = lengths;
      if (!schedule.empty()) p.schedule = schedule;
      if (k1) p.schedule.at(0) = *k1;
      if (cost_mode) p.mode = cost::parse_cost_mode(*cost_mode);
      const auto out = cli::cmd_cost(p, {sweep_var, sweep_values});
      std::cout << out.report.dump(2) << "\n";
      if (!out.sweep_csv.empty()) {
        if (sweep_csv.empty()) {
          std::cout << out.sweep_csv;
        } else {
          io::write_file_atomic(sweep_csv, out.sweep_csv);
        }
      }
    } else if (*validate) {
      const auto cfg = resolve(flags);
      const auto report = cli::cmd_validate_schedule(cfg.model);
      std::cout << report.dump(2) << "\n";
      if (!report.at("feasible").get<bool>()) return static_cast<int>(ExitCode::kConfig);
    }
  } catch (const Error& e) {
    std::cerr << "hdlm: " << e.what() << "\n";
    return static_cast<int>(e.exit_code());
  } catch (const std::exception& e) {
    std::cerr << "hdlm: " << e.what() << "\n";
    return static_cast<int>(ExitCode::kFailure);
  }
  return 0;
}
