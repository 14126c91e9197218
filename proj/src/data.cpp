#include "entk/data.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "entk/errors.hpp"
#include "entk/io.hpp"
#include "json.hpp"

namespace entk {

using json = nlohmann::json;

std::string to_string(DatasetKind kind) { return kind == DatasetKind::tms ? "tms" : "modadd"; }

DatasetKind dataset_kind_from_string(const std::string& s) {
  if (s == "tms") return DatasetKind::tms;
  if (s == "modadd") return DatasetKind::modadd;
  throw Error("unknown dataset kind '" + s + "'");
}

std::string to_string(FourierFamily family) {
  switch (family) {
    case FourierFamily::a: return "a";
    case FourierFamily::b: return "b";
    case FourierFamily::sum: return "sum";
    case FourierFamily::diff: return "diff";
  }
  return "?";
}

Dataset Dataset::subset(const std::vector<Index>& idx) const {
  Dataset out;
  out.kind = kind;
  out.size_param = size_param;
  out.seed = seed;
  out.inputs.resize(static_cast<Index>(idx.size()), inputs.cols());
  out.labels.resize(static_cast<Index>(idx.size()), labels.cols());
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Index i = idx[r];
    if (i < 0 || i >= num_points()) throw ShapeError("subset index out of range");
    out.inputs.row(static_cast<Index>(r)) = inputs.row(i);
    out.labels.row(static_cast<Index>(r)) = labels.row(i);
  }
  return out;
}

Dataset gen_tms_dataset(int n, int num_points, double sparsity, std::uint64_t seed) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) {
    std::ostringstream msg;
    msg << "sparsity must lie in [0, 1), got " << sparsity;
    throw InvalidSparsity(msg.str());
  }
  if (n < 1 || num_points < 1) throw ShapeError("gen_tms_dataset: need n >= 1 and N >= 1");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Dataset ds;
  ds.kind = DatasetKind::tms;
  ds.size_param = n;
  ds.seed = seed;
  ds.inputs.resize(num_points, n);
  // Row by row, so a dataset is a prefix of any larger one drawn with the same seed.
  for (Index r = 0; r < num_points; ++r) {
    for (Index c = 0; c < n; ++c) {
      const double keep = unif(rng);
      const double value = unif(rng);
      ds.inputs(r, c) = keep < sparsity ? 0.0 : value;
    }
  }
  ds.labels = ds.inputs;
  return ds;
}

Dataset gen_modadd_dataset(int p) {
  if (p < 2) throw ShapeError("gen_modadd_dataset: need p >= 2");
  const Index n = static_cast<Index>(p) * p;
  Dataset ds;
  ds.kind = DatasetKind::modadd;
  ds.size_param = p;
  ds.inputs = Eigen::MatrixXd::Zero(n, 2 * p);
  ds.labels = Eigen::MatrixXd::Zero(n, p);
  for (int a = 0; a < p; ++a) {
    for (int b = 0; b < p; ++b) {
      const Index row = static_cast<Index>(a) * p + b;
      ds.inputs(row, a) = 1.0;
      ds.inputs(row, p + b) = 1.0;
      ds.labels(row, (a + b) % p) = 1.0;
    }
  }
  return ds;
}

Dataset split_train_test(const Dataset& ds, double alpha, std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    std::ostringstream msg;
    msg << "train fraction must lie in (0, 1), got " << alpha;
    throw InvalidFraction(msg.str());
  }
  if (ds.kind != DatasetKind::modadd) throw Error("split_train_test expects a modadd dataset");
  const Index n = ds.num_points();
  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  // Fisher-Yates with an explicit uniform draw; std::shuffle is not portable across libraries.
  std::mt19937_64 rng(seed);
  for (Index i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<Index> pick(0, i);
    std::swap(perm[static_cast<std::size_t>(i)], perm[static_cast<std::size_t>(pick(rng))]);
  }
  const auto ntrain = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(n)));
  Dataset out = ds;
  Split split;
  split.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(ntrain));
  split.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(ntrain), perm.end());
  out.split = std::move(split);
  return out;
}

FeatureMatrix fourier_feature_matrix(int p, FourierFamily family, const Dataset& eval_points) {
  if (eval_points.kind != DatasetKind::modadd || eval_points.size_param != p)
    throw ShapeError("fourier_feature_matrix: evaluation set must be a modadd dataset with the same p");
  const int half = p / 2;
  const Index n = eval_points.num_points();
  FeatureMatrix fm;
  fm.vectors.resize(n, 2 * half);
  for (Index r = 0; r < n; ++r) {
    int a = 0, b = 0;
    for (int c = 0; c < p; ++c) {
      if (eval_points.inputs(r, c) > 0.5) a = c;
      if (eval_points.inputs(r, p + c) > 0.5) b = c;
    }
    int s = 0;
    switch (family) {
      case FourierFamily::a: s = a; break;
      case FourierFamily::b: s = b; break;
      case FourierFamily::sum: s = a + b; break;
      case FourierFamily::diff: s = a - b; break;
    }
    for (int k = 1; k <= half; ++k) {
      const double theta = 2.0 * std::numbers::pi * k * s / p;
      fm.vectors(r, 2 * (k - 1)) = std::cos(theta);
      fm.vectors(r, 2 * (k - 1) + 1) = std::sin(theta);
    }
  }
  for (int k = 1; k <= half; ++k) {
    fm.names.push_back(to_string(family) + ":cos" + std::to_string(k));
    fm.names.push_back(to_string(family) + ":sin" + std::to_string(k));
  }
  for (Index j = 0; j < fm.vectors.cols(); ++j) {
    const double norm = fm.vectors.col(j).norm();
    if (norm > 0.0) fm.vectors.col(j) /= norm;
  }
  return fm;
}

FeatureMatrix tms_feature_matrix(const Dataset& ds) {
  if (ds.kind != DatasetKind::tms) throw Error("tms_feature_matrix expects a tms dataset");
  FeatureMatrix fm;
  std::vector<Index> kept;
  for (Index j = 0; j < ds.input_dim(); ++j) {
    if (ds.inputs.col(j).squaredNorm() > 0.0)
      kept.push_back(j);
    else
      fm.excluded.push_back(j);
  }
  if (!fm.excluded.empty()) {
    std::ostringstream msg;
    msg << fm.excluded.size() << " TMS feature column(s) are identically zero and were excluded:";
    for (Index j : fm.excluded) msg << " x" << j;
    io::warn(msg.str());
  }
  fm.vectors.resize(ds.num_points(), static_cast<Index>(kept.size()));
  for (std::size_t c = 0; c < kept.size(); ++c) {
    fm.vectors.col(static_cast<Index>(c)) = ds.inputs.col(kept[c]).normalized();
    fm.names.push_back("x" + std::to_string(kept[c]));
  }
  return fm;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  io::write_csv(dir / "inputs.csv", ds.inputs);
  io::write_csv(dir / "labels.csv", ds.labels);
  json meta;
  meta["kind"] = to_string(ds.kind);
  meta[ds.kind == DatasetKind::tms ? "n" : "p"] = ds.size_param;
  meta["seed"] = ds.seed;
  if (ds.split) {
    meta["split"]["train"] = ds.split->train;
    meta["split"]["test"] = ds.split->test;
  }
  io::write_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  const json meta = json::parse(io::read_file(dir / "meta.json"));
  ds.kind = dataset_kind_from_string(meta.at("kind").get<std::string>());
  ds.size_param = meta.at(ds.kind == DatasetKind::tms ? "n" : "p").get<int>();
  ds.seed = meta.value("seed", std::uint64_t{0});
  ds.inputs = io::read_csv(dir / "inputs.csv");
  ds.labels = io::read_csv(dir / "labels.csv");
  if (ds.inputs.rows() != ds.labels.rows()) throw ShapeError("inputs.csv and labels.csv disagree on row count");
  if (meta.contains("split")) {
    Split split;
    split.train = meta["split"].at("train").get<std::vector<Index>>();
    split.test = meta["split"].at("test").get<std::vector<Index>>();
    ds.split = std::move(split);
  }
  return ds;
}

}  // namespace entk
