#pragma once

// Torus graph Laplacians and the per-axis smoothness rotation of a cliff
// eigenspace.

#include <Eigen/Dense>

#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "entk/data.hpp"
#include "entk/entk.hpp"
#include "entk/linalg.hpp"
#include "entk/models.hpp"
#include "entk/spectral.hpp"

namespace entk {

enum class Axis { a, b, sum, diff };
std::string to_string(Axis axis);
Axis axis_from_string(const std::string& s);

/// Circulant second difference: 2 on the diagonal, -1 on both neighbours
/// (with wrap-around).
Eigen::MatrixXd cycle_laplacian_1d(int p);

struct TorusLaplacian {
  int p = 0;
  Axis axis = Axis::a;
  SymMatrix<double> matrix;  // p^2 x p^2 on the index a * p + b
};

/// a: L1 (x) I, b: I (x) L1; sum/diff: the graphs with edges
/// (a, b) ~ (a+1, b+1) and (a, b) ~ (a+1, b-1), mod p.
TorusLaplacian axis_laplacian(int p, Axis axis);

/// v^T L v.
double laplacian_energy(const TorusLaplacian& L, const Eigen::VectorXd& v);

struct RotatedBasis {
  Eigen::MatrixXd columns;     // N x k, orthonormal
  Eigen::VectorXd energies;    // Rayleigh quotient of each column under its stage Laplacian
  std::vector<int> stage;      // 1 or 2 per column
};

/// c' = c U where c^T L c = U diag(sigma) U^T, sigma ascending.
RotatedBasis compress_and_rotate(const Eigen::MatrixXd& cliff_basis, const TorusLaplacian& L);

struct TwoStageOptions {
  /// Columns kept after stage 1; unset means half of the basis.
  std::optional<Index> keep;
  Index offset = 0;
};

/// Stage 1 rotates by L_first and keeps the smoothest keep + offset columns;
/// stage 2 rotates those by L_second. Output: stage-2 columns, then the
/// stage-1 remainder.
RotatedBasis two_stage_rotation(const Eigen::MatrixXd& cliff_basis, const TorusLaplacian& L_first,
                                const TorusLaplacian& L_second, const TwoStageOptions& opts = {});

/// Picks the cliff basis out of a kernel spectrum.
using CliffSelector = std::function<Eigen::MatrixXd(const Spectrum<double>&)>;

/// Eigenvectors [begin, end) with the constant direction projected out when
/// `drop_uniform` is set.
CliffSelector range_selector(Index begin, Index end, bool drop_uniform);

struct DisentangleFrame {
  int epoch = 0;
  RotatedBasis rotated;
  AlignmentHeatmap heatmap;
  MatchResult match;
};

std::vector<DisentangleFrame> disentangle_over_time(const std::vector<std::pair<int, ModelParams>>& checkpoints,
                                                    const Dataset& eval, const KernelSpec& spec,
                                                    const CliffSelector& selector, const TorusLaplacian& L_first,
                                                    const TorusLaplacian& L_second,
                                                    const std::vector<FamilyPair>& families,
                                                    const TwoStageOptions& opts = {});

std::string rotated_basis_energies_csv(const RotatedBasis& r);

}  // namespace entk
