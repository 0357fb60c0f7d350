// dram: synth | train | eval | gradcheck | experiment

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "dram/commands.hpp"

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool config_required = true) {
  auto* opt = cmd->add_option("--config", c.config, "run configuration (JSON) or a run manifest");
  if (config_required) opt->required();
  cmd->add_option("--out", c.out, "output directory (default: eval.out_dir from the config)");
  cmd->add_option("--seed", c.seed, "override the global seed");
}

dram::RunConfig load(const Common& c) {
  if (!std::filesystem::exists(c.config)) throw dram::ConfigError("config file not found: " + c.config);
  dram::RunConfig cfg = dram::load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

std::string out_dir(const Common& c, const dram::RunConfig& cfg) { return c.out.empty() ? cfg.eval.out_dir : c.out; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Dyadic residual-attention pose forecasting toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(dram::kToolVersion));

  Common synth_o, train_o, eval_o, exp_o, grad_o;
  std::optional<std::string> checkpoint;
  std::size_t grad_seeds = 20;
  bool inject_fault = false;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dyadic dataset");
  add_common(synth, synth_o);
  auto* train = app.add_subcommand("train", "train one variant and write a checkpoint");
  add_common(train, train_o);
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common(eval, eval_o);
  eval->add_option("--checkpoint", checkpoint, "checkpoint file (default: eval.checkpoint)");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  add_common(grad, grad_o, false);
  grad->add_option("--seeds", grad_seeds, "random instances per op")->check(CLI::PositiveNumber);
  grad->add_flag("--inject-fault", inject_fault)->group("");
  auto* exp = app.add_subcommand("experiment", "train and compare variants over several seeds");
  add_common(exp, exp_o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (*synth) {
      const auto cfg = load(synth_o);
      dram::cmd_synth(cfg, out_dir(synth_o, cfg), std::cout);
    } else if (*train) {
      const auto cfg = load(train_o);
      dram::cmd_train(cfg, out_dir(train_o, cfg), std::cout);
    } else if (*eval) {
      const auto cfg = load(eval_o);
      dram::cmd_eval(cfg, checkpoint, out_dir(eval_o, cfg), std::cout);
    } else if (*grad) {
      std::ostringstream table;
      const bool ok = dram::cmd_gradcheck(grad_seeds, inject_fault, table);
      std::cout << table.str();
      if (!grad_o.out.empty()) {
        std::filesystem::create_directories(grad_o.out);
        dram::write_file_atomic((std::filesystem::path(grad_o.out) / "gradcheck.txt").string(), table.str());
      }
      return ok ? 0 : 2;
    } else if (*exp) {
      const auto cfg = load(exp_o);
      dram::cmd_experiment(cfg, out_dir(exp_o, cfg), std::cout);
    }
  } catch (const dram::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
