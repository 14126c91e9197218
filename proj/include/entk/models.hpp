#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "entk/data.hpp"
#include "entk/linalg.hpp"

namespace entk {

/// Tied-weight ReLU autoencoder f(x) = ReLU(W^T W x + b).
struct TmsParams {
  Eigen::MatrixXd W;  // m x n
  Eigen::VectorXd b;  // n

  Index m() const noexcept { return W.rows(); }
  Index n() const noexcept { return W.cols(); }
  Index num_params() const noexcept { return W.size() + b.size(); }
};

/// Two-layer MLP with quadratic activation and no biases, f(x) = W2 (W1 x)^2.
struct ModMlpParams {
  Eigen::MatrixXd W1;  // n_hid x 2p
  Eigen::MatrixXd W2;  // p x n_hid

  Index p() const noexcept { return W2.rows(); }
  Index n_hid() const noexcept { return W1.rows(); }
  Index layer1_size() const noexcept { return W1.size(); }
  Index num_params() const noexcept { return W1.size() + W2.size(); }
};

enum class Arch { tms, modmlp };
std::string to_string(Arch arch);

enum class LayerSel { all, layer1, layer2 };
std::string to_string(LayerSel layers);
LayerSel layer_sel_from_string(const std::string& s);

/// Per-feature loss weights I_i = base^i.
struct ImportanceSpec {
  double base = 0.8;
  Eigen::VectorXd weights(Index n) const;
};

// --- TMS -----------------------------------------------------------------

Eigen::VectorXd tms_forward(const TmsParams& params, const Eigen::VectorXd& x);
/// Row-wise forward pass over an N x n input matrix.
Eigen::MatrixXd tms_forward_batch(const TmsParams& params, const Eigen::MatrixXd& X);
/// Mean over data points of sum_i I_i (x_i - f_i(x))^2.
double tms_loss(const TmsParams& params, const Dataset& ds, const ImportanceSpec& imp);
TmsParams tms_grad(const TmsParams& params, const Dataset& ds, const ImportanceSpec& imp);
/// n x (m n + n); columns: W row-major, then b.
Eigen::MatrixXd tms_jacobian(const TmsParams& params, const Eigen::VectorXd& x);
/// Number of diagonal entries of W^T W strictly above `threshold`.
int reconstructed_feature_count(const TmsParams& params, double threshold = 0.75);

// --- modular-addition MLP ------------------------------------------------

Eigen::VectorXd modmlp_forward(const ModMlpParams& params, const Eigen::VectorXd& x);
Eigen::MatrixXd modmlp_forward_batch(const ModMlpParams& params, const Eigen::MatrixXd& X);
/// Mean over rows of the squared error summed over outputs.
double modmlp_loss(const ModMlpParams& params, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y);
ModMlpParams modmlp_grad(const ModMlpParams& params, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y);
/// p x P for the selected layer(s); `all` is the layer-1 block followed by
/// the layer-2 block. Columns follow the W1 then W2 row-major flattening.
Eigen::MatrixXd modmlp_jacobian(const ModMlpParams& params, const Eigen::VectorXd& x, LayerSel layers = LayerSel::all);

/// Fraction of rows where argmax(outputs) == argmax(labels).
double argmax_accuracy(const Eigen::MatrixXd& outputs, const Eigen::MatrixXd& labels);

struct GroundTruthOptions {
  double scale = 1.0;
  /// Test hook: break phi3 = phi1 + phi2 by a random offset per frequency group.
  bool violate_phase_constraint = false;
};

/// Hand-built Fourier solution of modular addition.
///
/// Hidden units come in groups of eight that share a frequency k and base
/// phases (phi1, phi2). Inside a group the phases are offset by quarter turns
/// so that every term of (W1 x)^2 except the cos(phi1 + phi2 + ...) cross
/// term cancels exactly; with phi3 = phi1 + phi2 the output is then
/// proportional to sum_k cos(2 pi k (a + b - q) / p). Units beyond the last
/// full group get a zero output weight. Needs n_hid >= 8.
ModMlpParams ground_truth_weights(int p, int n_hid, std::uint64_t seed, const GroundTruthOptions& opts = {});

/// Least-squares output scale s minimizing ||s f(X) - Y||.
double calibrate_output_scale(const ModMlpParams& params, const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y);

// --- flattening and checkpoints ------------------------------------------

Eigen::VectorXd flatten(const TmsParams& params);
Eigen::VectorXd flatten(const ModMlpParams& params);
TmsParams unflatten_tms(const Eigen::VectorXd& theta, Index m, Index n);
ModMlpParams unflatten_modmlp(const Eigen::VectorXd& theta, Index n_hid, Index p);

using ModelParams = std::variant<TmsParams, ModMlpParams>;

Arch arch_of(const ModelParams& params);

/// Optional optimizer moments saved alongside the weights so a resumed run
/// continues bit-for-bit.
struct OptimizerState {
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  std::int64_t step = 0;

  bool empty() const noexcept { return m.size() == 0; }
};

struct Checkpoint {
  ModelParams params;
  int epoch = 0;
  std::uint64_t seed = 0;
  std::string rng_state_hash;
  OptimizerState optimizer;
};

/// "ENTKCKPT", u64 LE header length, JSON header, float64 LE blocks.
/// Written atomically.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws CheckpointError on any structural or hash mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a of the checkpoint payload; stable identity for kernel caching.
std::string params_hash(const ModelParams& params);

}  // namespace entk
