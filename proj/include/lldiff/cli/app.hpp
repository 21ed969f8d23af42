#pragma once

#include <CLI11.hpp>

#include <algorithm>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "lldiff/cli/commands.hpp"

namespace lldiff::cli {

/// Error line printed for any failure: `error: <TOKEN>: <message>`.
inline void print_error(std::ostream& err, std::string_view token, std::string message) {
  std::replace(message.begin(), message.end(), '\n', ' ');
  err << "error: " << token << ": " << message << '\n';
}

/// Parses the command line, resolves configuration and runs one subcommand.
/// Precedence, lowest first: built-in defaults, --config file, --set pairs,
/// dedicated flags. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Low-light diffusion restoration toolkit", "lldiff"};
  app.require_subcommand(1, 1);

  std::string config_file, out_dir;
  std::optional<std::uint64_t> seed;
  std::vector<std::string> sets;
  app.add_option("--config", config_file, "key = value configuration file");
  app.add_option("--seed", seed, "master seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_option("--set", sets, "override one setting, key=value (repeatable)");

  // Dedicated flags write straight into these config keys.
  std::vector<std::pair<std::string, std::string>> flag_keys;
  std::map<std::string, std::string> flag_values;
  auto keyed = [&](CLI::App* sub, const std::string& name, const std::string& key, const std::string& help) {
    return sub->add_option_function<std::string>(
        name, [&flag_values, key](const std::string& v) { flag_values[key] = v; }, help);
  };

  auto* synth = app.add_subcommand("synth", "synthesize a paired low-light dataset");
  keyed(synth, "--corpus", "corpus", "\"toy\" or a directory of PNG images");
  keyed(synth, "--num-scenes", "num_scenes", "number of scenes");

  auto* train = app.add_subcommand("train", "train the conditional denoiser");
  keyed(train, "--data", "data", "dataset directory");
  keyed(train, "--condition", "condition", "condition path")->check(CLI::IsMember({"srgb", "raw"}));
  train->add_option_function<std::string>(
           "--ablate", [&flag_values](const std::string&) { flag_values["tmc_mode"] = "disabled"; },
           "ablation preset")
      ->check(CLI::IsMember({"no-tmc"}));
  keyed(train, "--resume", "resume", "continue from a checkpoint");
  keyed(train, "--steps", "steps", "optimization steps");

  auto* smp = app.add_subcommand("sample", "restore every input of a split");
  keyed(smp, "--data", "data", "dataset directory");
  keyed(smp, "--checkpoint", "checkpoint", "trained checkpoint");
  keyed(smp, "--split", "split", "manifest split");
  keyed(smp, "--eta", "eta", "sampler stochasticity");
  keyed(smp, "--tmc-init", "tmc_init", "TMC slot at step T")->check(CLI::IsMember({"condition", "zeros"}));
  smp->add_flag_function("--trace", [&flag_values](std::int64_t) { flag_values["trace"] = "true"; },
                         "write per-step images");

  auto* eval = app.add_subcommand("eval", "score samples and baselines against ground truth");
  keyed(eval, "--data", "data", "dataset directory");
  keyed(eval, "--split", "split", "manifest split");
  eval->add_option_function<std::vector<std::string>>(
      "--samples",
      [&flag_values](const std::vector<std::string>& v) {
        std::string joined;
        for (const auto& d : v) joined += (joined.empty() ? "" : ",") + d;
        flag_values["samples"] = joined;
      },
      "sample directories (repeatable)");

  auto* analyze = app.add_subcommand("analyze", "degradation and intensity statistics of a dataset");
  keyed(analyze, "--data", "data", "dataset directory");
  keyed(analyze, "--split", "split", "manifest split");
  keyed(analyze, "--bins", "bins", "gradient histogram bins");

  for (auto* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      out << app.help();
      return 0;
    }
    print_error(err, "E_USAGE", e.what());
    return 2;
  }

  try {
    io::KeyValueConfig config = config_file.empty() ? io::KeyValueConfig{} : io::KeyValueConfig::load(config_file);
    for (const auto& s : sets) config.assign(s, "--set");
    for (const auto& [k, v] : flag_values) config.set(k, v);
    if (seed) config.set("seed", std::to_string(*seed));
    RunContext ctx{config, out, err, out_dir};

    const std::string name = app.get_subcommands().front()->get_name();
    if (name == "synth") cmd_synth(ctx);
    else if (name == "train") cmd_train(ctx);
    else if (name == "sample") cmd_sample(ctx);
    else if (name == "eval") cmd_eval(ctx);
    else cmd_analyze(ctx);
  } catch (const Error& e) {
    print_error(err, error_token(e.code()), e.what());
    return 1;
  } catch (const std::exception& e) {
    print_error(err, "E_INTERNAL", e.what());
    return 1;
  }
  return 0;
}

}  // namespace lldiff::cli
