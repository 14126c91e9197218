#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "entk/linalg.hpp"

namespace entk {

enum class DatasetKind { tms, modadd };

std::string to_string(DatasetKind kind);
DatasetKind dataset_kind_from_string(const std::string& s);

struct Split {
  std::vector<Index> train;
  std::vector<Index> test;
};

/// Inputs (N x d) and labels (N x C). For modadd the canonical row order is
/// a * p + b; every kernel, Laplacian and feature matrix uses that index.
struct Dataset {
  Eigen::MatrixXd inputs;
  Eigen::MatrixXd labels;
  DatasetKind kind = DatasetKind::tms;
  int size_param = 0;  // n for tms, p for modadd
  std::uint64_t seed = 0;
  std::optional<Split> split;

  Index num_points() const noexcept { return inputs.rows(); }
  Index input_dim() const noexcept { return inputs.cols(); }
  Index num_classes() const noexcept { return labels.cols(); }

  /// Rows selected by `idx`, without split metadata.
  Dataset subset(const std::vector<Index>& idx) const;
};

/// Named length-N feature vectors, one per column.
struct FeatureMatrix {
  std::vector<std::string> names;
  Eigen::MatrixXd vectors;
  bool raw = false;
  /// Source columns dropped because they were identically zero.
  std::vector<Index> excluded;

  Index size() const noexcept { return vectors.cols(); }
};

enum class FourierFamily { a, b, sum, diff };

std::string to_string(FourierFamily family);

/// TMS inputs: each entry is 0 with probability `sparsity`, else U[0,1).
Dataset gen_tms_dataset(int n, int num_points, double sparsity, std::uint64_t seed);

/// All p^2 pairs (a, b), input onehot(a) ++ onehot(b), label onehot((a+b) mod p).
Dataset gen_modadd_dataset(int p);

/// Random train/test partition: first floor(alpha * N) of a seeded permutation train.
Dataset split_train_test(const Dataset& ds, double alpha, std::uint64_t seed);

/// cos/sin(2 pi k s / p) for k = 1..floor(p/2), s chosen by `family`, columns
/// unit-normalized. Column order: cos k=1, sin k=1, cos k=2, ...
FeatureMatrix fourier_feature_matrix(int p, FourierFamily family, const Dataset& eval_points);

/// Column-normalized TMS inputs. All-zero columns are dropped (with a warning)
/// and listed in `excluded`.
FeatureMatrix tms_feature_matrix(const Dataset& ds);

/// (a, b) for a modadd row index.
inline std::pair<int, int> lattice_coords(Index row, int p) {
  return {static_cast<int>(row / p), static_cast<int>(row % p)};
}

// Persistence: inputs.csv, labels.csv and meta.json inside `dir`.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

}  // namespace entk
