#pragma once

// Empirical NTK assembly from closed-form Jacobian contractions.

#include <Eigen/Dense>

#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include "entk/data.hpp"
#include "entk/linalg.hpp"
#include "entk/models.hpp"

namespace entk {

enum class Collapse { per_class, flattened, class_trace };
std::string to_string(Collapse c);
Collapse collapse_from_string(const std::string& s);

struct KernelSpec {
  Collapse collapse = Collapse::class_trace;
  /// Class index for the per_class collapse.
  int cls = 0;
  LayerSel layers = LayerSel::all;
  /// Importance rescaling exponent (TMS only).
  double beta = 0.0;
  double importance_base = 0.8;
  /// Free-form tags carried into provenance.
  std::string eval_set = "default";
  int epoch = -1;

  /// Stable one-line description, used in file names and cache keys.
  std::string key() const;
};

/// Row of the flattened kernel for (data point, class): cls * N + data.
inline Index flat_index(Index data, Index cls, Index num_points) { return cls * num_points + data; }

struct KernelMatrix {
  KernelSpec spec;
  SymMatrix<double> matrix;
  Index num_points = 0;
  Index num_classes = 0;
  /// Relative asymmetry before symmetrization.
  double asymmetry = 0.0;

  Index dim() const noexcept { return matrix.dim(); }
  Index index(Index data, Index cls) const { return flat_index(data, cls, num_points); }
};

/// C x C kernel block K_ij(x1, x2) from the closed forms.
Eigen::MatrixXd entk_block(const TmsParams& params, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2);
Eigen::MatrixXd entk_block(const ModMlpParams& params, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                           LayerSel layers = LayerSel::all);
Eigen::MatrixXd entk_block(const ModelParams& params, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                           LayerSel layers = LayerSel::all);

struct AssembleOptions {
  /// Largest flattened dimension assembled densely without `force`.
  Index dense_cap = 6000;
  bool force = false;
};

/// Throws MemoryGuard for flattened kernels above the cap unless forced.
KernelMatrix assemble_kernel(const ModelParams& params, const Dataset& eval, const KernelSpec& spec,
                             const AssembleOptions& opts = {});

/// Matrix-free flattened kernel: apply(V) = K V. When `factor` is set,
/// K = factor * factor^T exactly.
struct KernelOperator {
  KernelSpec spec;
  Index dim = 0;
  Index num_points = 0;
  Index num_classes = 0;
  std::function<Eigen::MatrixXd(const Eigen::MatrixXd&)> apply;
  std::optional<Eigen::MatrixXd> factor;
};

KernelOperator make_kernel_operator(const ModelParams& params, const Dataset& eval, const KernelSpec& spec);

/// Top-k eigenpairs of a kernel operator via eigh_topk. With an explicit
/// factor J (dim x P, P < dim) the iteration runs on the P x P Gram J^T J
/// and the vectors are mapped back through J.
Spectrum<double> kernel_topk(const KernelOperator& op, Index k, const TopkOptions& opts = {});

/// Stacked Jacobian rows (class-major) for the TMS flattened kernel, with
/// rows of class i scaled by I_i^{beta/2}.
Eigen::MatrixXd tms_flat_jacobian(const TmsParams& params, const Eigen::MatrixXd& X, double beta,
                                  double importance_base);

/// Kernel-regression predictor K_test_train (K_train_train + ridge I)^-1 Y.
/// The default ridge is 1e-8 * trace(K) / dim. With ridge 0 a singular
/// system raises SingularKernel.
Eigen::MatrixXd ntk_predict(const Eigen::MatrixXd& k_train_train, const Eigen::MatrixXd& k_test_train,
                            const Eigen::MatrixXd& y_train, std::optional<double> ridge = std::nullopt);

/// Reference kernel: Jacobians by central differences, then contraction.
Eigen::MatrixXd finite_diff_kernel_oracle(const ModelParams& params, const Eigen::VectorXd& x1,
                                          const Eigen::VectorXd& x2, double h = 1e-5,
                                          LayerSel layers = LayerSel::all);

// Kernel files: <base>.json sidecar, <base>.f64 row-major payload and
// <base>.csv when dim <= 2000.
void save_kernel(const KernelMatrix& k, const std::filesystem::path& base, const std::string& extra_json = "{}");
KernelMatrix load_kernel(const std::filesystem::path& base);

}  // namespace entk
