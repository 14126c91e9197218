// entk: train models, compute eNTK spectra and write the analysis figures.

#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"

#include "entk/config.hpp"
#include "entk/errors.hpp"
#include "entk/pipeline.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Empirical NTK spectra, cliffs and feature alignment"};
  app.require_subcommand(1, 1);

  std::optional<std::string> config_path, preset, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> epochs;
  std::optional<std::string> checkpoint;
  entk::RunOptions opts;

  app.add_option("--config", config_path, "INI config file");
  app.add_option("--preset", preset, "tms-dense | tms-sparse | modadd-p29 | modadd-small");
  app.add_option("--seed", seed, "Seed for data, split and initialization");
  app.add_option("--out", out, "Output directory");
  app.add_option("--epochs", epochs, "Override the training epoch budget");
  app.add_option("--checkpoint", checkpoint, "Checkpoint used instead of the run's final one");
  app.add_flag("--force", opts.force, "Recompute outputs even when cached");
  app.add_flag("--dry-run", opts.dry_run, "Print the step plan and exit");
  app.add_flag("--resume", opts.resume, "Continue training from the last checkpoint");

  const char* descriptions[][2] = {{"train", "Train the model and write checkpoints"},
                                   {"kernel", "Compute kernel spectra for the configured kernels"},
                                   {"analyze", "Cliffs, heatmaps, disentanglement and time series"},
                                   {"report", "Summarize the analysis into report.md and report.json"},
                                   {"all", "train, kernel, analyze and report"}};
  for (const auto& d : descriptions) app.add_subcommand(d[0], d[1])->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return entk::kExitInvalidConfig;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  entk::ExperimentConfig cfg;
  try {
    cfg = entk::preset_config(preset.value_or("modadd-p29"));
    if (config_path) cfg = entk::load_config(*config_path, cfg);
    if (preset && cfg.preset != *preset)
      throw entk::ConfigError("--preset " + *preset + " conflicts with preset '" + cfg.preset + "' in the config file");
    // Command-line values win over the file.
    if (seed) cfg.seed = *seed;
    if (out) cfg.out = *out;
    if (epochs) cfg.train.epochs = *epochs;
    if (checkpoint) opts.checkpoint = *checkpoint;
    entk::validate(cfg);
  } catch (const entk::ConfigError& e) {
    std::cerr << "error: invalid configuration: " << e.what() << "\n";
    return entk::kExitInvalidConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return entk::kExitFailure;
  }
  return entk::run_command(command, cfg, opts, std::cout, std::cerr);
}
