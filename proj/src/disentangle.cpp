#include "entk/disentangle.hpp"

#include <cmath>
#include <sstream>

#include "entk/errors.hpp"
#include "entk/io.hpp"

namespace entk {

std::string to_string(Axis axis) {
  switch (axis) {
    case Axis::a: return "a";
    case Axis::b: return "b";
    case Axis::sum: return "sum";
    case Axis::diff: return "diff";
  }
  return "?";
}

Axis axis_from_string(const std::string& s) {
  if (s == "a") return Axis::a;
  if (s == "b") return Axis::b;
  if (s == "sum") return Axis::sum;
  if (s == "diff") return Axis::diff;
  throw Error("unknown Laplacian axis '" + s + "'");
}

Eigen::MatrixXd cycle_laplacian_1d(int p) {
  if (p < 1) throw ShapeError("cycle_laplacian_1d: need p >= 1");
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i < p; ++i) {
    L(i, i) += 2.0;
    L(i, (i + 1) % p) -= 1.0;
    L(i, (i + p - 1) % p) -= 1.0;
  }
  return L;
}

namespace {

Eigen::MatrixXd kron(const Eigen::MatrixXd& A, const Eigen::MatrixXd& B) {
  Eigen::MatrixXd out(A.rows() * B.rows(), A.cols() * B.cols());
  for (Index i = 0; i < A.rows(); ++i)
    for (Index j = 0; j < A.cols(); ++j) out.block(i * B.rows(), j * B.cols(), B.rows(), B.cols()) = A(i, j) * B;
  return out;
}

Eigen::MatrixXd edge_laplacian(int p, int da, int db) {
  const Index n = static_cast<Index>(p) * p;
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(n, n);
  for (int a = 0; a < p; ++a) {
    for (int b = 0; b < p; ++b) {
      const Index u = static_cast<Index>(a) * p + b;
      const Index v = static_cast<Index>((a + da + p) % p) * p + (b + db + p) % p;
      L(u, u) += 1.0;
      L(v, v) += 1.0;
      L(u, v) -= 1.0;
      L(v, u) -= 1.0;
    }
  }
  return L;
}

}  // namespace

TorusLaplacian axis_laplacian(int p, Axis axis) {
  if (p < 2) throw ShapeError("axis_laplacian: need p >= 2");
  TorusLaplacian L;
  L.p = p;
  L.axis = axis;
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(p, p);
  switch (axis) {
    case Axis::a: L.matrix = SymMatrix<double>(kron(cycle_laplacian_1d(p), I)); break;
    case Axis::b: L.matrix = SymMatrix<double>(kron(I, cycle_laplacian_1d(p))); break;
    case Axis::sum: L.matrix = SymMatrix<double>(edge_laplacian(p, 1, 1)); break;
    case Axis::diff: L.matrix = SymMatrix<double>(edge_laplacian(p, 1, -1)); break;
  }
  return L;
}

double laplacian_energy(const TorusLaplacian& L, const Eigen::VectorXd& v) {
  if (v.size() != L.matrix.dim()) throw ShapeError("laplacian_energy: length mismatch");
  return v.dot(L.matrix.matrix() * v);
}

RotatedBasis compress_and_rotate(const Eigen::MatrixXd& cliff_basis, const TorusLaplacian& L) {
  if (cliff_basis.cols() == 0) throw EmptyBasis("compress_and_rotate: empty cliff basis");
  if (cliff_basis.rows() != L.matrix.dim()) throw ShapeError("compress_and_rotate: basis length differs from Laplacian");
  Eigen::MatrixXd c = cliff_basis;
  const Index k = c.cols();
  if ((c.transpose() * c - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff() > 1e-8) c = orthonormalize_columns(c);

  const Eigen::MatrixXd A = c.transpose() * L.matrix.matrix() * c;
  Spectrum<double> s = eigh_descending(SymMatrix<double>(A));
  RotatedBasis out;
  out.energies = s.eigenvalues.reverse();
  out.columns = c * s.eigenvectors.rowwise().reverse();
  out.stage.assign(static_cast<std::size_t>(k), 1);
  return out;
}

RotatedBasis two_stage_rotation(const Eigen::MatrixXd& cliff_basis, const TorusLaplacian& L_first,
                                const TorusLaplacian& L_second, const TwoStageOptions& opts) {
  const Index k = cliff_basis.cols();
  if (k == 0) throw EmptyBasis("two_stage_rotation: empty cliff basis");
  const Index keep = opts.keep.value_or(k / 2) + opts.offset;
  if (keep >= k || keep < 1) {
    std::ostringstream msg;
    msg << "two_stage_rotation: keep " << keep << " must lie in [1, " << k - 1 << "] for a basis of " << k
        << " columns";
    throw InvalidSplit(msg.str());
  }
  const RotatedBasis first = compress_and_rotate(cliff_basis, L_first);
  const RotatedBasis second = compress_and_rotate(first.columns.leftCols(keep), L_second);
  RotatedBasis out;
  out.columns.resize(cliff_basis.rows(), k);
  out.columns << second.columns, first.columns.rightCols(k - keep);
  out.energies.resize(k);
  out.energies << second.energies, first.energies.tail(k - keep);
  out.stage.assign(static_cast<std::size_t>(keep), 2);
  out.stage.insert(out.stage.end(), static_cast<std::size_t>(k - keep), 1);
  return out;
}

CliffSelector range_selector(Index begin, Index end, bool drop_uniform) {
  return [=](const Spectrum<double>& s) -> Eigen::MatrixXd {
    if (begin < 0 || end > s.k() || begin >= end) throw ShapeError("range_selector: range outside the spectrum");
    Eigen::MatrixXd c = s.eigenvectors.middleCols(begin, end - begin);
    return drop_uniform ? project_out_uniform(c) : c;
  };
}

std::vector<DisentangleFrame> disentangle_over_time(const std::vector<std::pair<int, ModelParams>>& checkpoints,
                                                    const Dataset& eval, const KernelSpec& spec,
                                                    const CliffSelector& selector, const TorusLaplacian& L_first,
                                                    const TorusLaplacian& L_second,
                                                    const std::vector<FamilyPair>& families,
                                                    const TwoStageOptions& opts) {
  std::vector<DisentangleFrame> frames;
  for (const auto& [epoch, params] : checkpoints) {
    KernelSpec sp = spec;
    sp.epoch = epoch;
    const KernelMatrix K = assemble_kernel(params, eval, sp);
    const Spectrum<double> s = eigh_descending(K.matrix);
    DisentangleFrame f;
    f.epoch = epoch;
    f.rotated = two_stage_rotation(selector(s), L_first, L_second, opts);
    f.heatmap = family_heatmap(f.rotated.columns, families);
    f.match = match_features(f.heatmap);
    frames.push_back(std::move(f));
  }
  return frames;
}

std::string rotated_basis_energies_csv(const RotatedBasis& r) {
  std::string out = "column,stage,energy\n";
  for (Index i = 0; i < r.energies.size(); ++i)
    out += std::to_string(i) + "," + std::to_string(r.stage[static_cast<std::size_t>(i)]) + "," +
           io::format_double(r.energies(i)) + "\n";
  return out;
}

}  // namespace entk
