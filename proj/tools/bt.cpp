#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bullettrain/checkpoint.hpp"
#include "bullettrain/config.hpp"
#include "bullettrain/errors.hpp"
#include "bullettrain/evaluation.hpp"
#include "bullettrain/experiment.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

// Options shared by every verb: config file, per-field flags and --set overrides.
struct ConfigOptions {
  std::string config_path;
  std::string out_dir;
  std::vector<std::string> sets;
  std::map<std::string, std::string> fields;
  std::map<std::string, CLI::Option*> flags;

  void attach(CLI::App* app, bool seed_required) {
    app->add_option("-c,--config", config_path, "Config file (key/value or JSON)");
    app->add_option("-o,--out", out_dir, "Output directory");
    app->add_option("--set", sets, "Override a field: section.key=value")->take_all();
    for (const auto& name : bt::ExperimentConfig::field_names()) {
      std::string flag = "--" + name;
      if (name == "run.seed") flag = "--seed," + flag;
      auto* opt = app->add_option(flag, fields[name], "Config field " + name);
      if (name == "run.seed" && seed_required) opt->required();
      flags[name] = opt;
    }
  }

  bt::ExperimentConfig resolve() const {
    bt::ExperimentConfig config = config_path.empty() ? bt::ExperimentConfig{} : bt::load_config(config_path);
    for (const auto& [name, opt] : flags) {
      if (opt->count() > 0) config.set(name, fields.at(name));
    }
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw bt::ConfigError("--set expects section.key=value, got '" + s + "'");
      config.set(s.substr(0, eq), s.substr(eq + 1));
    }
    config.validate();
    return config;
  }
};

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto comma = text.find(',', start);
    const std::string item = text.substr(start, comma == std::string::npos ? std::string::npos : comma - start);
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

void print_summary(const bt::RunSummary& s) { std::cout << bt::summary_json(s); }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BulletTrain robust-training lab"};
  app.set_version_flag("--version", std::string(bt::version_string()));
  app.require_subcommand(1);

  ConfigOptions train_opts, eval_opts, sweep_opts, loo_opts, compare_opts;

  auto* train = app.add_subcommand("train", "Train one configuration and write run artifacts");
  train_opts.attach(train, false);

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the configured test split");
  eval_opts.attach(eval, false);
  std::string checkpoint_path;
  eval->add_option("--checkpoint", checkpoint_path, "checkpoint.json to evaluate")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "Run one configuration per value of a field");
  sweep_opts.attach(sweep_cmd, false);
  std::string sweep_key, sweep_values;
  sweep_cmd->add_option("--key", sweep_key, "Field to sweep, e.g. mining.gamma")->required();
  sweep_cmd->add_option("--values", sweep_values, "Comma-separated values")->required();

  auto* loo = app.add_subcommand("leaveoneout", "Oracle-separated per-class budget study");
  loo_opts.attach(loo, false);
  std::string levels_text = "0";
  bool grid = false;
  loo->add_option("--levels", levels_text, "Comma-separated reduced step counts");
  loo->add_flag("--grid", grid, "Also run every (N_R, N_O) pair of levels");

  auto* compare = app.add_subcommand("compare", "Baseline versus the configured algorithm, same seed");
  compare_opts.attach(compare, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*train) {
      const auto config = train_opts.resolve();
      const auto out = train_opts.out_dir.empty() ? std::filesystem::path("runs") / config.algorithm
                                                  : std::filesystem::path(train_opts.out_dir);
      const auto run = bt::run_experiment(config, out);
      print_summary(run.summary);
      std::cerr << "wrote " << out.string() << "\n";
    } else if (*eval) {
      const auto config = eval_opts.resolve();
      const auto model = bt::load_checkpoint(checkpoint_path);
      const auto data = bt::load_datasets(config);
      const auto ec = config.eval_config(data.test);
      const double clean = bt::clean_accuracy(model, data.test.inputs, data.test.labels, ec.batch_size);
      const double robust = bt::robust_accuracy(model, data.test.inputs, data.test.labels, ec);
      std::cout << "{\"clean_acc\": " << clean << ", \"robust_acc\": " << robust << "}\n";
    } else if (*sweep_cmd) {
      const auto config = sweep_opts.resolve();
      const auto out = sweep_opts.out_dir.empty() ? std::filesystem::path("runs") / "sweep"
                                                  : std::filesystem::path(sweep_opts.out_dir);
      const auto points = bt::sweep(config, sweep_key, split_list(sweep_values), out);
      for (const auto& p : points) {
        std::cout << sweep_key << "=" << p.value << " clean=" << p.summary.clean_acc
                  << " robust=" << p.summary.robust_acc << " speedup=" << p.summary.measured_speedup << "\n";
      }
    } else if (*loo) {
      const auto config = loo_opts.resolve();
      const auto out = loo_opts.out_dir.empty() ? std::filesystem::path("runs") / "leaveoneout"
                                                : std::filesystem::path(loo_opts.out_dir);
      std::vector<std::size_t> levels;
      for (const auto& l : split_list(levels_text)) levels.push_back(std::stoul(l));
      const auto results = bt::leave_one_out(config, bt::leave_one_out_plan(config.steps, levels, grid), out);
      for (const auto& r : results) {
        std::cout << r.entry.label << " N_O=" << r.entry.outlier_steps << " N_R=" << r.entry.robust_steps
                  << " N_B=" << r.entry.boundary_steps << " clean=" << r.summary.clean_acc
                  << " robust=" << r.summary.robust_acc << "\n";
      }
    } else if (*compare) {
      const auto config = compare_opts.resolve();
      const auto out = compare_opts.out_dir.empty() ? std::filesystem::path("runs") / "compare"
                                                    : std::filesystem::path(compare_opts.out_dir);
      const auto c = bt::compare_runs(config, out);
      std::cout << "baseline robust=" << c.baseline.robust_acc << " clean=" << c.baseline.clean_acc << "\n"
                << config.algorithm << " robust=" << c.accelerated.robust_acc
                << " clean=" << c.accelerated.clean_acc << "\n"
                << "measured speedup " << c.measured_speedup << "x, theoretical " << c.theoretical_speedup
                << "x\n";
    }
  } catch (const bt::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const bt::ArgumentError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const bt::DivergenceError& e) {
    std::cerr << "numeric divergence: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const bt::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const bt::IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const bt::FormatError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return EXIT_FAILURE;
  }
  return kExitOk;
}
