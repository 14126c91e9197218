#include "entk/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <tuple>

#include "entk/errors.hpp"
#include "entk/io.hpp"
#include "json.hpp"

namespace entk {

bool CliffReport::has(Index k) const { return std::find(boundaries.begin(), boundaries.end(), k) != boundaries.end(); }

double CliffReport::ratio_at(Index k) const {
  if (k < 1 || static_cast<std::size_t>(k) > all_ratios.size()) return 0.0;
  return all_ratios[static_cast<std::size_t>(k - 1)];
}

CliffReport detect_cliffs(const Eigen::VectorXd& eigenvalues, double threshold, double floor) {
  if (eigenvalues.size() < 2) throw EmptySpectrum("detect_cliffs needs at least two eigenvalues");
  if (!eigenvalues.allFinite()) throw NonFiniteInput("detect_cliffs: non-finite eigenvalues");
  CliffReport r;
  r.threshold = threshold;
  r.floor = floor;
  const double top = eigenvalues(0);
  if (!(top > 0.0)) return r;
  const double clamp = floor * top;
  for (Index k = 1; k < eigenvalues.size(); ++k) {
    const double hi = eigenvalues(k - 1);
    const double lo = std::max(eigenvalues(k), clamp);
    const double ratio = hi >= clamp ? hi / lo : 1.0;
    r.all_ratios.push_back(ratio);
    if (hi >= clamp && ratio >= threshold) {
      r.boundaries.push_back(k);
      r.ratios.push_back(ratio);
    }
  }
  return r;
}

AlignmentHeatmap alignment_heatmap(const Eigen::MatrixXd& vectors, const FeatureMatrix& features) {
  if (vectors.rows() != features.vectors.rows())
    throw ShapeError("alignment_heatmap: eigenvectors and features have different lengths");
  AlignmentHeatmap h;
  h.normalization = "abs_cosine";
  h.cols = features.names;
  const Eigen::VectorXd vn = vectors.colwise().norm().transpose();
  const Eigen::VectorXd fn = features.vectors.colwise().norm().transpose();
  h.values = (vectors.transpose() * features.vectors).cwiseAbs();
  for (Index i = 0; i < h.values.rows(); ++i)
    for (Index j = 0; j < h.values.cols(); ++j) {
      const double d = vn(i) * fn(j);
      h.values(i, j) = d > 0.0 ? std::min(1.0, h.values(i, j) / d) : 0.0;
    }
  h.rows.resize(static_cast<std::size_t>(vectors.cols()));
  std::iota(h.rows.begin(), h.rows.end(), Index{0});
  return h;
}

AlignmentHeatmap alignment_heatmap(const Spectrum<double>& spectrum, const FeatureMatrix& features, Index row_begin,
                                   Index row_end) {
  if (row_begin < 0 || row_end > spectrum.k() || row_begin > row_end)
    throw ShapeError("alignment_heatmap: row range outside the spectrum");
  AlignmentHeatmap h = alignment_heatmap(spectrum.eigenvectors.middleCols(row_begin, row_end - row_begin), features);
  for (auto& r : h.rows) r += row_begin;
  return h;
}

std::vector<FamilyPair> family_pairs(const FeatureMatrix& fourier) {
  if (fourier.size() % 2 != 0) throw ShapeError("family_pairs: expected (cos, sin) column pairs");
  std::vector<FamilyPair> out;
  for (Index j = 0; j < fourier.size(); j += 2) {
    FamilyPair fp;
    std::string name = fourier.names[static_cast<std::size_t>(j)];
    if (const auto pos = name.find(":cos"); pos != std::string::npos) name = name.substr(0, pos) + ":k" + name.substr(pos + 4);
    fp.name = name;
    fp.basis = orthonormalize_columns(fourier.vectors.middleCols(j, 2));
    out.push_back(std::move(fp));
  }
  return out;
}

AlignmentHeatmap family_heatmap(const Eigen::MatrixXd& basis, const std::vector<FamilyPair>& families) {
  AlignmentHeatmap h;
  h.normalization = "subspace_projection";
  h.values.resize(basis.cols(), static_cast<Index>(families.size()));
  for (std::size_t k = 0; k < families.size(); ++k) {
    if (families[k].basis.rows() != basis.rows()) throw ShapeError("family_heatmap: length mismatch");
    h.cols.push_back(families[k].name);
    h.values.col(static_cast<Index>(k)) = (families[k].basis.transpose() * basis).colwise().squaredNorm().transpose();
  }
  h.values = h.values.cwiseMin(1.0);
  h.rows.resize(static_cast<std::size_t>(basis.cols()));
  std::iota(h.rows.begin(), h.rows.end(), Index{0});
  return h;
}

FeatureMatrix expanded_data_matrix(const Dataset& ds) {
  if (ds.kind != DatasetKind::tms) throw Error("expanded_data_matrix expects a tms dataset");
  const Index N = ds.num_points(), C = ds.input_dim();
  FeatureMatrix fm;
  fm.vectors = Eigen::MatrixXd::Zero(N * C, C);
  for (Index c = 0; c < C; ++c) {
    fm.vectors.block(c * N, c, N, 1) = ds.inputs.col(c);
    const double norm = ds.inputs.col(c).norm();
    if (norm > 0.0)
      fm.vectors.col(c) /= norm;
    else
      fm.excluded.push_back(c);
    fm.names.push_back("x" + std::to_string(c));
  }
  if (!fm.excluded.empty())
    io::warn(std::to_string(fm.excluded.size()) + " all-zero feature column(s) in the expanded data matrix");
  return fm;
}

MatchResult match_features(const AlignmentHeatmap& heatmap, const std::vector<Index>& skip_cols) {
  const Index R = heatmap.values.rows(), C = heatmap.values.cols();
  std::vector<std::tuple<double, Index, Index>> cells;
  cells.reserve(static_cast<std::size_t>(R * C));
  std::vector<bool> skip(static_cast<std::size_t>(C), false);
  for (Index j : skip_cols)
    if (j >= 0 && j < C) skip[static_cast<std::size_t>(j)] = true;
  for (Index i = 0; i < R; ++i)
    for (Index j = 0; j < C; ++j)
      if (!skip[static_cast<std::size_t>(j)]) cells.emplace_back(heatmap.values(i, j), i, j);
  // Descending value; ties broken by lowest row, then lowest column.
  std::sort(cells.begin(), cells.end(), [](const auto& x, const auto& y) {
    if (std::get<0>(x) != std::get<0>(y)) return std::get<0>(x) > std::get<0>(y);
    if (std::get<1>(x) != std::get<1>(y)) return std::get<1>(x) < std::get<1>(y);
    return std::get<2>(x) < std::get<2>(y);
  });
  MatchResult m;
  m.assignment.assign(static_cast<std::size_t>(C), -1);
  m.scores.assign(static_cast<std::size_t>(C), 0.0);
  std::vector<bool> row_used(static_cast<std::size_t>(R), false);
  for (const auto& [v, i, j] : cells) {
    if (row_used[static_cast<std::size_t>(i)] || m.assignment[static_cast<std::size_t>(j)] >= 0) continue;
    row_used[static_cast<std::size_t>(i)] = true;
    m.assignment[static_cast<std::size_t>(j)] = i;
    m.scores[static_cast<std::size_t>(j)] = v;
  }
  double sum = 0.0, lo = 1.0;
  Index counted = 0;
  for (Index j = 0; j < C; ++j) {
    if (skip[static_cast<std::size_t>(j)]) continue;
    const double s = m.scores[static_cast<std::size_t>(j)];  // unmatched columns count as 0
    sum += s;
    lo = std::min(lo, s);
    ++counted;
  }
  m.mean_score = counted ? sum / static_cast<double>(counted) : 0.0;
  m.min_score = counted ? lo : 0.0;
  return m;
}

std::string SpectrumSeries::to_csv() const {
  std::string out = "epoch";
  for (Index i = 0; i < eigenvalues.cols(); ++i) out += ",lambda_" + std::to_string(i + 1);
  out += "\n";
  for (std::size_t t = 0; t < epochs.size(); ++t) {
    out += std::to_string(epochs[t]);
    for (Index i = 0; i < eigenvalues.cols(); ++i) out += "," + io::format_double(eigenvalues(static_cast<Index>(t), i));
    out += "\n";
  }
  return out;
}

SpectrumSeries spectrum_over_time(const std::vector<std::pair<int, ModelParams>>& checkpoints, const Dataset& eval,
                                  const KernelSpec& spec, Index k) {
  SpectrumSeries s;
  s.eigenvalues.resize(static_cast<Index>(checkpoints.size()), k);
  for (std::size_t t = 0; t < checkpoints.size(); ++t) {
    KernelSpec sp = spec;
    sp.epoch = checkpoints[t].first;
    const KernelMatrix K = assemble_kernel(checkpoints[t].second, eval, sp);
    const Eigen::VectorXd ev = eigenvalues_descending(K.matrix);
    if (ev.size() < k) throw ShapeError("spectrum_over_time: k exceeds the kernel dimension");
    s.epochs.push_back(checkpoints[t].first);
    s.eigenvalues.row(static_cast<Index>(t)) = ev.head(k).transpose();
  }
  return s;
}

double uniform_overlap(const Eigen::VectorXd& v) {
  const double n = v.norm();
  if (n == 0.0 || v.size() == 0) return 0.0;
  return std::abs(v.sum()) / (n * std::sqrt(static_cast<double>(v.size())));
}

Index leading_uniform_modes(const Eigen::MatrixXd& eigenvectors, Index limit, double min_overlap) {
  Index count = 0;
  for (Index j = 0; j < std::min(limit, eigenvectors.cols()); ++j) {
    if (uniform_overlap(eigenvectors.col(j)) < min_overlap) break;
    ++count;
  }
  return count;
}

Eigen::MatrixXd project_out_uniform(const Eigen::MatrixXd& basis) {
  if (basis.cols() == 0) throw EmptyBasis("project_out_uniform: empty basis");
  const Index N = basis.rows();
  const Eigen::VectorXd u = Eigen::VectorXd::Constant(N, 1.0 / std::sqrt(static_cast<double>(N)));
  const Eigen::MatrixXd r = basis - u * (u.transpose() * basis);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(r, Eigen::ComputeThinU);
  return svd.matrixU().leftCols(basis.cols() - 1);
}

std::string spectrum_csv(const Eigen::VectorXd& eigenvalues) {
  std::string out = "index,eigenvalue\n";
  for (Index i = 0; i < eigenvalues.size(); ++i)
    out += std::to_string(i + 1) + "," + io::format_double(eigenvalues(i)) + "\n";
  return out;
}

std::string heatmap_csv(const AlignmentHeatmap& h) {
  std::string out = "eigenvector";
  for (const auto& c : h.cols) out += "," + c;
  out += "\n";
  for (Index i = 0; i < h.values.rows(); ++i) {
    out += std::to_string(h.rows.empty() ? i : h.rows[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < h.values.cols(); ++j) out += "," + io::format_double(h.values(i, j));
    out += "\n";
  }
  return out;
}

std::string cliff_report_json(const CliffReport& r) {
  nlohmann::json j;
  j["boundaries"] = r.boundaries;
  j["ratios"] = r.ratios;
  j["threshold"] = r.threshold;
  j["floor"] = r.floor;
  return j.dump(2) + "\n";
}

void write_heatmap(const AlignmentHeatmap& h, const std::filesystem::path& base) {
  io::write_atomic(std::filesystem::path(base.string() + ".csv"), heatmap_csv(h));
  io::write_pgm(std::filesystem::path(base.string() + ".pgm"), h.values);
}

}  // namespace entk
