#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "entk/data.hpp"
#include "entk/models.hpp"

namespace entk {

enum class Optimizer { adam, adamw };
std::string to_string(Optimizer opt);
Optimizer optimizer_from_string(const std::string& s);

struct TrainConfig {
  int epochs = 0;
  double lr = 1e-3;
  Optimizer optimizer = Optimizer::adam;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 0;
  /// Hidden width: m for TMS, n_hid for the modular MLP.
  int hidden = 10;
  /// Epochs (after that many updates) at which parameters are checkpointed.
  std::vector<int> checkpoint_epochs;
  /// Where checkpoint files go (epoch_NNNNNN.ckpt, plus last.ckpt carrying
  /// the optimizer moments for resuming); empty disables files.
  std::filesystem::path checkpoint_dir;
  /// Keep checkpointed parameters in TrainHistory::snapshots.
  bool keep_snapshots = false;
  /// TMS only: stop once the loss improved by less than `early_stop_tol`
  /// over the last `early_stop_window` epochs.
  bool early_stop = true;
  int early_stop_window = 500;
  double early_stop_tol = 1e-9;
  /// Only "fan_in_gaussian" is defined.
  std::string init_scale_rule = "fan_in_gaussian";

  /// Throws ConfigError on violated invariants.
  void validate() const;
};

TrainConfig tms_default_config();
TrainConfig modadd_default_config();

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> test_loss;
  std::optional<double> train_acc;
  std::optional<double> test_acc;
};

struct TrainHistory {
  /// One record per epoch; record e holds the metrics after e updates.
  std::vector<EpochRecord> records;
  std::vector<std::filesystem::path> checkpoint_paths;
  std::vector<std::pair<int, ModelParams>> snapshots;
  /// Set when TMS training stopped early.
  std::optional<int> stopped_at;

  std::string to_csv() const;
  static TrainHistory from_csv(const std::string& text);
  void save_csv(const std::filesystem::path& path) const;
};

/// Gaussian init with std 1/sqrt(fan_in) per weight matrix; TMS bias is zero.
/// The modular MLP draws W1 row-major, then W2.
TmsParams init_tms_params(int m, int n, std::uint64_t seed);
ModMlpParams init_modmlp_params(int p, int n_hid, std::uint64_t seed);
/// Hash of the generator state right after initialization (checkpoint metadata).
std::string init_rng_state_hash(std::uint64_t seed, Index draws);

/// Adam with optional decoupled weight decay, on flattened parameter vectors.
class Adam {
 public:
  Adam(Optimizer kind, double lr, double weight_decay, double beta1, double beta2, double eps);
  explicit Adam(const TrainConfig& cfg);

  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad);

  const OptimizerState& state() const noexcept { return state_; }
  void set_state(OptimizerState state) { state_ = std::move(state); }

 private:
  Optimizer kind_;
  double lr_, wd_, beta1_, beta2_, eps_;
  OptimizerState state_;
};

/// Full-batch training on the importance-weighted reconstruction loss.
/// `resume` continues from a checkpoint (params, optimizer moments, epoch).
std::pair<TmsParams, TrainHistory> train_tms(const Dataset& ds, const ImportanceSpec& imp, const TrainConfig& cfg,
                                             const std::optional<Checkpoint>& resume = std::nullopt);

/// Full-batch training on the train split; accuracy is tracked on both splits.
std::pair<ModMlpParams, TrainHistory> train_modadd(const Dataset& ds, const TrainConfig& cfg,
                                                   const std::optional<Checkpoint>& resume = std::nullopt);

/// First epoch with test accuracy >= 0.99 after at least 5 consecutive prior
/// epochs of train accuracy >= 0.99.
std::optional<int> detect_grokking(const TrainHistory& history);

}  // namespace entk
