#pragma once

// Cliff detection, eigenvector-feature alignment and feature matching.

#include <Eigen/Dense>

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "entk/data.hpp"
#include "entk/entk.hpp"
#include "entk/linalg.hpp"
#include "entk/models.hpp"

namespace entk {

struct CliffReport {
  /// 1-based: boundary k means the drop between lambda_k and lambda_{k+1}.
  std::vector<Index> boundaries;
  std::vector<double> ratios;
  double threshold = 5.0;
  double floor = 1e-12;

  bool has(Index k) const;
  /// lambda_k / max(lambda_{k+1}, floor * lambda_1) from the last call, for any k.
  std::vector<double> all_ratios;
  double ratio_at(Index k) const;
};

/// Boundary at k iff lambda_k / max(lambda_{k+1}, floor * lambda_1) >= threshold.
/// Entries below floor * lambda_1 never start a boundary.
CliffReport detect_cliffs(const Eigen::VectorXd& eigenvalues, double threshold = 5.0, double floor = 1e-12);

struct AlignmentHeatmap {
  std::vector<Index> rows;         // eigenvector indices (0-based)
  std::vector<std::string> cols;   // feature or family names
  Eigen::MatrixXd values;          // rows x cols, in [0, 1]
  std::string normalization;       // "abs_cosine" or "subspace_projection"
};

/// |cos| between eigenvectors [row_begin, row_end) and each feature column.
AlignmentHeatmap alignment_heatmap(const Spectrum<double>& spectrum, const FeatureMatrix& features, Index row_begin,
                                   Index row_end);
AlignmentHeatmap alignment_heatmap(const Eigen::MatrixXd& vectors, const FeatureMatrix& features);

/// A (cos_k, sin_k) pair, stored orthonormalized.
struct FamilyPair {
  std::string name;
  Eigen::MatrixXd basis;  // N x 2, orthonormal
};

/// Consecutive (cos, sin) columns of a Fourier feature matrix as pairs.
std::vector<FamilyPair> family_pairs(const FeatureMatrix& fourier);

/// value(i, k) = squared norm of the projection of basis column i onto pair k.
AlignmentHeatmap family_heatmap(const Eigen::MatrixXd& basis, const std::vector<FamilyPair>& families);

/// (N C) x C block matrix: entry (class i, datum a; column c) = delta_ic x_ac,
/// columns unit-normalized. All-zero columns stay zero and are listed in
/// `excluded`.
FeatureMatrix expanded_data_matrix(const Dataset& ds);

struct MatchResult {
  /// Per feature column: matched row position in the heatmap, or -1.
  std::vector<Index> assignment;
  std::vector<double> scores;
  double mean_score = 0.0;
  double min_score = 0.0;
};

/// Greedy one-to-one assignment: visit cells by descending value, accept a
/// cell when both its row and its column are still free. Columns listed in
/// `skip_cols` are left unmatched and do not enter the statistics.
MatchResult match_features(const AlignmentHeatmap& heatmap, const std::vector<Index>& skip_cols = {});

struct SpectrumSeries {
  std::vector<int> epochs;
  Eigen::MatrixXd eigenvalues;  // epochs x k

  std::string to_csv() const;
};

/// Top-k kernel spectrum at every checkpoint.
SpectrumSeries spectrum_over_time(const std::vector<std::pair<int, ModelParams>>& checkpoints, const Dataset& eval,
                                  const KernelSpec& spec, Index k);

/// |cos| between v and the constant vector.
double uniform_overlap(const Eigen::VectorXd& v);
/// Number of leading eigenvectors (within the first `limit`) whose overlap
/// with the constant vector is at least `min_overlap`, counted while
/// consecutive from the top.
Index leading_uniform_modes(const Eigen::MatrixXd& eigenvectors, Index limit, double min_overlap = 0.99);
/// Orthonormal basis (k - 1 columns) of span(basis) with the constant
/// direction projected out.
Eigen::MatrixXd project_out_uniform(const Eigen::MatrixXd& basis);

// Exporters.
std::string spectrum_csv(const Eigen::VectorXd& eigenvalues);
std::string heatmap_csv(const AlignmentHeatmap& h);
std::string cliff_report_json(const CliffReport& r);
void write_heatmap(const AlignmentHeatmap& h, const std::filesystem::path& base);

}  // namespace entk
