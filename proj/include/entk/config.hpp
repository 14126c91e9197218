#pragma once

// Experiment configuration: presets, INI files, validation.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "entk/data.hpp"
#include "entk/entk.hpp"
#include "entk/training.hpp"

namespace entk {

struct ExperimentConfig {
  DatasetKind experiment = DatasetKind::modadd;
  std::string preset;
  std::uint64_t seed = 0;
  std::filesystem::path out = "runs/default";

  // data
  int p = 29;
  double alpha = 0.7;
  int n = 50;
  int num_points = 500;
  double sparsity = 0.9;
  double importance_base = 0.8;

  // training (hidden width lives in train.hidden)
  TrainConfig train = modadd_default_config();
  int checkpoint_every = 5;

  // kernels: "collapse[:class]/layers[/beta=B]", e.g. "class_trace/layer1"
  std::vector<std::string> kernel_specs;
  std::string eval_set = "default";  // default | train | lattice
  Index dense_cap = 6000;
  Index topk = 200;

  // analysis
  std::vector<std::string> steps = {"cliffs", "heatmaps", "disentangle", "timeseries"};
  double cliff_threshold = 5.0;
  double cliff_floor = 1e-12;
  std::vector<double> betas = {1.0, 0.3};
  Index disentangle_offset = 0;
  double recon_threshold = 0.75;
  /// Epoch stride of the sum/diff disentanglement frames.
  int frame_every = 50;
};

/// Names: tms-dense, tms-sparse, modadd-p29, modadd-small.
ExperimentConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();

/// Reads an INI file on top of `base` (or of the preset named inside it).
ExperimentConfig load_config(const std::filesystem::path& path, const ExperimentConfig& base);
ExperimentConfig parse_config(const std::string& text, const ExperimentConfig& base);

/// Throws ConfigError describing the first violated constraint.
void validate(const ExperimentConfig& cfg);

std::string to_ini(const ExperimentConfig& cfg);
/// Hash of the INI form with the output directory left out.
std::string config_hash(const ExperimentConfig& cfg);

/// "collapse[:class]/layers[/beta=B]".
KernelSpec parse_kernel_spec(const std::string& s);
std::vector<std::string> default_kernel_specs(const ExperimentConfig& cfg);

}  // namespace entk
