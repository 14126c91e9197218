#include "entk/entk.hpp"

#include <cmath>
#include <memory>
#include <sstream>

#include "entk/errors.hpp"
#include "entk/io.hpp"
#include "json.hpp"

namespace entk {

using json = nlohmann::json;

std::string to_string(Collapse c) {
  switch (c) {
    case Collapse::per_class: return "per_class";
    case Collapse::flattened: return "flattened";
    case Collapse::class_trace: return "class_trace";
  }
  return "?";
}

Collapse collapse_from_string(const std::string& s) {
  if (s == "per_class") return Collapse::per_class;
  if (s == "flattened") return Collapse::flattened;
  if (s == "class_trace") return Collapse::class_trace;
  throw Error("unknown collapse '" + s + "'");
}

std::string KernelSpec::key() const {
  std::ostringstream out;
  out << to_string(collapse);
  if (collapse == Collapse::per_class) out << cls;
  out << "_" << to_string(layers);
  if (beta != 0.0) out << "_beta" << io::format_double(beta);
  return out.str();
}

// --- closed-form blocks --------------------------------------------------

Eigen::MatrixXd entk_block(const TmsParams& params, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2) {
  if (x1.size() != params.n() || x2.size() != params.n()) throw ShapeError("entk_block: input width mismatch");
  const Eigen::MatrixXd G = params.W.transpose() * params.W;
  const Eigen::VectorXd gx1 = G * x1, gx2 = G * x2;
  const Eigen::VectorXd g1 = ((gx1 + params.b).array() > 0.0).cast<double>();
  const Eigen::VectorXd g2 = ((gx2 + params.b).array() > 0.0).cast<double>();
  Eigen::MatrixXd k = G * x1.dot(x2) + gx2 * x1.transpose() + x2 * gx1.transpose();
  // W-diagonal term plus the bias block.
  k.diagonal().array() += (params.W * x1).dot(params.W * x2) + 1.0;
  return g1.asDiagonal() * k * g2.asDiagonal();
}

Eigen::MatrixXd entk_block(const ModMlpParams& params, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                           LayerSel layers) {
  if (x1.size() != params.W1.cols() || x2.size() != params.W1.cols())
    throw ShapeError("entk_block: input width mismatch");
  const Index p = params.p();
  const Eigen::VectorXd h1 = params.W1 * x1, h2 = params.W1 * x2;
  Eigen::MatrixXd k = Eigen::MatrixXd::Zero(p, p);
  if (layers != LayerSel::layer2) {
    const Eigen::VectorXd hh = h1.cwiseProduct(h2);
    k += (4.0 * x1.dot(x2)) * (params.W2 * hh.asDiagonal() * params.W2.transpose());
  }
  if (layers != LayerSel::layer1) k.diagonal().array() += h1.cwiseAbs2().dot(h2.cwiseAbs2());
  return k;
}

Eigen::MatrixXd entk_block(const ModelParams& params, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2,
                           LayerSel layers) {
  if (const auto* t = std::get_if<TmsParams>(&params)) {
    if (layers != LayerSel::all) throw Error("layer selection applies to the modular MLP only");
    return entk_block(*t, x1, x2);
  }
  return entk_block(std::get<ModMlpParams>(params), x1, x2, layers);
}

// --- dense assembly ------------------------------------------------------

namespace {

void validate_spec(const ModelParams& params, const Dataset& eval, const KernelSpec& spec) {
  const bool tms = arch_of(params) == Arch::tms;
  if (tms && spec.layers != LayerSel::all) throw Error("layer selection applies to the modular MLP only");
  if (!tms && spec.beta != 0.0) throw Error("importance rescaling applies to TMS kernels only");
  if (!(spec.beta >= 0.0 && spec.beta <= 1.0)) throw Error("beta must lie in [0, 1]");
  const Index classes = tms ? std::get<TmsParams>(params).n() : std::get<ModMlpParams>(params).p();
  if (spec.collapse == Collapse::per_class && (spec.cls < 0 || spec.cls >= classes))
    throw ShapeError("per_class kernel: class index out of range");
  const Index width = tms ? std::get<TmsParams>(params).n() : std::get<ModMlpParams>(params).W1.cols();
  if (eval.input_dim() != width) throw ShapeError("evaluation set width does not match the model");
}

/// Gate matrix (N x n) with column c scaled by I_c^{beta/2}.
struct TmsTerms {
  Eigen::MatrixXd X, XG, S, SW1, g;
  Eigen::MatrixXd G;
};

TmsTerms tms_terms(const TmsParams& params, const Eigen::MatrixXd& X, const KernelSpec& spec) {
  TmsTerms t;
  t.X = X;
  t.G = params.W.transpose() * params.W;
  t.XG = X * t.G;
  Eigen::MatrixXd pre = t.XG;
  pre.rowwise() += params.b.transpose();
  t.g = (pre.array() > 0.0).cast<double>();
  if (spec.beta != 0.0) {
    const Eigen::VectorXd w = ImportanceSpec{spec.importance_base}.weights(params.n()).array().pow(spec.beta / 2.0);
    t.g = t.g * w.asDiagonal();
  }
  t.S = X * X.transpose();
  const Eigen::MatrixXd WX = X * params.W.transpose();
  t.SW1 = (WX * WX.transpose()).array() + 1.0;
  return t;
}

Eigen::MatrixXd tms_pair_block(const TmsTerms& t, Index i, Index j) {
  Eigen::MatrixXd B = t.G(i, j) * t.S + t.X.col(j) * t.XG.col(i).transpose() + t.XG.col(j) * t.X.col(i).transpose();
  if (i == j) B += t.SW1;
  return t.g.col(i).asDiagonal() * B * t.g.col(j).asDiagonal();
}

Eigen::MatrixXd tms_dense(const TmsParams& params, const Eigen::MatrixXd& X, const KernelSpec& spec) {
  const TmsTerms t = tms_terms(params, X, spec);
  const Index N = X.rows(), n = params.n();
  switch (spec.collapse) {
    case Collapse::per_class: return tms_pair_block(t, spec.cls, spec.cls);
    case Collapse::class_trace: {
      const Eigen::MatrixXd A = t.g * t.G.diagonal().asDiagonal() * t.g.transpose();
      const Eigen::MatrixXd P = t.g.cwiseProduct(t.X) * t.g.cwiseProduct(t.XG).transpose();
      return t.S.cwiseProduct(A) + P + P.transpose() + t.SW1.cwiseProduct(t.g * t.g.transpose());
    }
    case Collapse::flattened: {
      Eigen::MatrixXd K(N * n, N * n);
      for (Index i = 0; i < n; ++i) {
        for (Index j = i; j < n; ++j) {
          const Eigen::MatrixXd B = tms_pair_block(t, i, j);
          K.block(i * N, j * N, N, N) = B;
          if (j != i) K.block(j * N, i * N, N, N) = B.transpose();
        }
      }
      return K;
    }
  }
  return {};
}

Eigen::MatrixXd modmlp_dense(const ModMlpParams& params, const Eigen::MatrixXd& X, const KernelSpec& spec) {
  const Index N = X.rows(), p = params.p();
  const Eigen::MatrixXd H = X * params.W1.transpose();
  const bool l1 = spec.layers != LayerSel::layer2, l2 = spec.layers != LayerSel::layer1;
  Eigen::MatrixXd S, K2;
  if (l1) S = X * X.transpose();
  if (l2) {
    const Eigen::MatrixXd Q = H.cwiseAbs2();
    K2 = Q * Q.transpose();
  }
  auto layer1 = [&](const Eigen::VectorXd& weights) -> Eigen::MatrixXd {
    return 4.0 * (H * weights.asDiagonal() * H.transpose()).cwiseProduct(S);
  };
  switch (spec.collapse) {
    case Collapse::per_class: {
      Eigen::MatrixXd K = Eigen::MatrixXd::Zero(N, N);
      if (l1) K += layer1(params.W2.row(spec.cls).cwiseAbs2().transpose());
      if (l2) K += K2;
      return K;
    }
    case Collapse::class_trace: {
      Eigen::MatrixXd K = Eigen::MatrixXd::Zero(N, N);
      if (l1) K += layer1(params.W2.cwiseAbs2().colwise().sum().transpose());
      if (l2) K += static_cast<double>(p) * K2;
      return K;
    }
    case Collapse::flattened: {
      Eigen::MatrixXd K = Eigen::MatrixXd::Zero(N * p, N * p);
      for (Index i = 0; i < p; ++i) {
        for (Index j = i; j < p; ++j) {
          Eigen::MatrixXd B = Eigen::MatrixXd::Zero(N, N);
          if (l1) B += layer1(params.W2.row(i).cwiseProduct(params.W2.row(j)).transpose());
          if (l2 && i == j) B += K2;
          K.block(i * N, j * N, N, N) = B;
          if (j != i) K.block(j * N, i * N, N, N) = B.transpose();
        }
      }
      return K;
    }
  }
  return {};
}

}  // namespace

KernelMatrix assemble_kernel(const ModelParams& params, const Dataset& eval, const KernelSpec& spec,
                             const AssembleOptions& opts) {
  validate_spec(params, eval, spec);
  const bool tms = arch_of(params) == Arch::tms;
  KernelMatrix out;
  out.spec = spec;
  out.num_points = eval.num_points();
  out.num_classes = tms ? std::get<TmsParams>(params).n() : std::get<ModMlpParams>(params).p();
  if (spec.collapse == Collapse::flattened) {
    const Index dim = out.num_points * out.num_classes;
    if (dim > opts.dense_cap && !opts.force) {
      std::ostringstream msg;
      msg << "flattened kernel of dimension " << dim << " exceeds the dense cap " << opts.dense_cap
          << " (" << (static_cast<double>(dim) * dim * 8.0 / 1e9) << " GB); use --force or the iterative path";
      throw MemoryGuard(msg.str());
    }
  }
  const Eigen::MatrixXd K = tms ? tms_dense(std::get<TmsParams>(params), eval.inputs, spec)
                                : modmlp_dense(std::get<ModMlpParams>(params), eval.inputs, spec);
  out.asymmetry = relative_asymmetry(K);
  out.matrix = SymMatrix<double>(K);
  return out;
}

// --- matrix-free flattened kernels ---------------------------------------

Eigen::MatrixXd tms_flat_jacobian(const TmsParams& params, const Eigen::MatrixXd& X, double beta,
                                  double importance_base) {
  const Index N = X.rows(), n = params.n();
  const Eigen::VectorXd scale = ImportanceSpec{importance_base}.weights(n).array().pow(beta / 2.0);
  Eigen::MatrixXd J(N * n, params.num_params());
  for (Index a = 0; a < N; ++a) {
    const Eigen::MatrixXd Ja = tms_jacobian(params, X.row(a).transpose());
    for (Index c = 0; c < n; ++c) J.row(flat_index(a, c, N)) = scale(c) * Ja.row(c);
  }
  return J;
}

KernelOperator make_kernel_operator(const ModelParams& params, const Dataset& eval, const KernelSpec& spec) {
  validate_spec(params, eval, spec);
  KernelOperator op;
  op.spec = spec;
  op.num_points = eval.num_points();
  const Index N = op.num_points;
  if (spec.collapse != Collapse::flattened) {
    auto dense = std::make_shared<KernelMatrix>(assemble_kernel(params, eval, spec));
    op.num_classes = dense->num_classes;
    op.dim = dense->dim();
    op.apply = [dense](const Eigen::MatrixXd& v) { return dense->matrix.apply(v); };
    return op;
  }
  if (const auto* t = std::get_if<TmsParams>(&params)) {
    op.num_classes = t->n();
    op.dim = N * t->n();
    op.factor = tms_flat_jacobian(*t, eval.inputs, spec.beta, spec.importance_base);
    auto J = std::make_shared<Eigen::MatrixXd>(*op.factor);
    op.apply = [J](const Eigen::MatrixXd& v) -> Eigen::MatrixXd { return *J * (J->transpose() * v); };
    return op;
  }
  const auto& mm = std::get<ModMlpParams>(params);
  const Index p = mm.p();
  op.num_classes = p;
  op.dim = N * p;
  auto X = std::make_shared<Eigen::MatrixXd>(eval.inputs);
  auto H = std::make_shared<Eigen::MatrixXd>(eval.inputs * mm.W1.transpose());
  auto W2 = std::make_shared<Eigen::MatrixXd>(mm.W2);
  const bool l1 = spec.layers != LayerSel::layer2, l2 = spec.layers != LayerSel::layer1;
  op.apply = [=](const Eigen::MatrixXd& v) -> Eigen::MatrixXd {
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(v.rows(), v.cols());
    const Eigen::MatrixXd Q = H->cwiseAbs2();
    for (Index r = 0; r < v.cols(); ++r) {
      // Column r as an N x p matrix (data, class).
      const Eigen::Map<const Eigen::MatrixXd> vm(v.col(r).data(), N, p);
      Eigen::Map<Eigen::MatrixXd> om(out.col(r).data(), N, p);
      if (l1) {
        const Eigen::MatrixXd T = H->cwiseProduct(vm * *W2);          // N x n_hid
        const Eigen::MatrixXd R = H->cwiseProduct(*X * (X->transpose() * T));
        om += 4.0 * R * W2->transpose();
      }
      if (l2) om += Q * (Q.transpose() * vm);
    }
    return out;
  };
  return op;
}

Spectrum<double> kernel_topk(const KernelOperator& op, Index k, const TopkOptions& opts) {
  if (op.factor && op.factor->cols() < op.dim && k <= op.factor->cols()) {
    const Eigen::MatrixXd& J = *op.factor;
    const SymMatrix<double> gram(J.transpose() * J);
    const Spectrum<double> small = eigh_topk_operator<double>(
        [&gram](const Eigen::MatrixXd& v) { return gram.apply(v); }, gram.dim(), k, opts);
    const double floor = 1e-10 * std::max(small.eigenvalues(0), 0.0);
    if (small.eigenvalues(k - 1) > floor) {
      Spectrum<double> out;
      out.solver = SolverTag::iterative;
      out.eigenvalues = small.eigenvalues;
      out.eigenvectors = J * small.eigenvectors;
      for (Index i = 0; i < k; ++i) out.eigenvectors.col(i) /= std::sqrt(small.eigenvalues(i));
      normalize_signs(out.eigenvectors);
      return out;
    }
    // Rank-deficient factor: fall through to the full-space iteration.
  }
  return eigh_topk_operator<double>(op.apply, op.dim, k, opts);
}

// --- predictor -----------------------------------------------------------

Eigen::MatrixXd ntk_predict(const Eigen::MatrixXd& k_train_train, const Eigen::MatrixXd& k_test_train,
                            const Eigen::MatrixXd& y_train, std::optional<double> ridge) {
  const Index n = k_train_train.rows();
  if (k_train_train.cols() != n || k_test_train.cols() != n || y_train.rows() != n)
    throw ShapeError("ntk_predict: kernel blocks and labels disagree in shape");
  if (!k_train_train.allFinite() || !k_test_train.allFinite()) throw NonFiniteInput("ntk_predict: non-finite kernel");
  const double lam = ridge ? *ridge : 1e-8 * k_train_train.trace() / static_cast<double>(std::max<Index>(n, 1));
  if (lam < 0.0) throw Error("ntk_predict: ridge must be >= 0");
  Eigen::MatrixXd A = (k_train_train + k_train_train.transpose()) / 2.0;
  A.diagonal().array() += lam;
  Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
  const double scale = A.cwiseAbs().maxCoeff();
  if (ldlt.info() != Eigen::Success || scale == 0.0 ||
      ldlt.vectorD().cwiseAbs().minCoeff() <= 1e-14 * scale) {
    std::ostringstream msg;
    msg << "kernel system is singular at ridge " << lam << "; retry with a positive ridge (e.g. "
        << 1e-8 * A.trace() / static_cast<double>(std::max<Index>(n, 1)) << ")";
    throw SingularKernel(msg.str());
  }
  Eigen::MatrixXd alpha = ldlt.solve(y_train);
  // Two rounds of iterative refinement recover accuracy on ill-conditioned kernels.
  for (int it = 0; it < 2; ++it) alpha += ldlt.solve(y_train - A * alpha);
  return k_test_train * alpha;
}

Eigen::MatrixXd finite_diff_kernel_oracle(const ModelParams& params, const Eigen::VectorXd& x1,
                                          const Eigen::VectorXd& x2, double h, LayerSel layers) {
  const bool tms = arch_of(params) == Arch::tms;
  Eigen::VectorXd theta;
  Index lo = 0, hi = 0;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> forward;
  if (tms) {
    if (layers != LayerSel::all) throw Error("layer selection applies to the modular MLP only");
    const auto& t = std::get<TmsParams>(params);
    theta = flatten(t);
    hi = theta.size();
    forward = [m = t.m(), n = t.n()](const Eigen::VectorXd& th, const Eigen::VectorXd& x) {
      return tms_forward(unflatten_tms(th, m, n), x);
    };
  } else {
    const auto& mm = std::get<ModMlpParams>(params);
    theta = flatten(mm);
    lo = layers == LayerSel::layer2 ? mm.layer1_size() : 0;
    hi = layers == LayerSel::layer1 ? mm.layer1_size() : theta.size();
    forward = [nh = mm.n_hid(), p = mm.p()](const Eigen::VectorXd& th, const Eigen::VectorXd& x) {
      return modmlp_forward(unflatten_modmlp(th, nh, p), x);
    };
  }
  const Index C = forward(theta, x1).size();
  Eigen::MatrixXd J1(C, hi - lo), J2(C, hi - lo);
  for (Index mu = lo; mu < hi; ++mu) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp(mu) += h;
    tm(mu) -= h;
    J1.col(mu - lo) = (forward(tp, x1) - forward(tm, x1)) / (2.0 * h);
    J2.col(mu - lo) = (forward(tp, x2) - forward(tm, x2)) / (2.0 * h);
  }
  return J1 * J2.transpose();
}

// --- persistence ---------------------------------------------------------

namespace {
// Spec keys contain dots (beta0.3), so extensions are appended, never replaced.
std::filesystem::path with_suffix(const std::filesystem::path& base, const char* ext) {
  return std::filesystem::path(base.string() + ext);
}
}  // namespace

void save_kernel(const KernelMatrix& k, const std::filesystem::path& base, const std::string& extra_json) {
  const std::string payload = io::encode_f64_row_major(k.matrix.matrix());
  json meta;
  meta["collapse"] = to_string(k.spec.collapse);
  meta["class"] = k.spec.cls;
  meta["layers"] = to_string(k.spec.layers);
  meta["beta"] = k.spec.beta;
  meta["importance_base"] = k.spec.importance_base;
  meta["eval_set"] = k.spec.eval_set;
  meta["epoch"] = k.spec.epoch;
  meta["dim"] = k.dim();
  meta["num_points"] = k.num_points;
  meta["num_classes"] = k.num_classes;
  meta["asymmetry"] = k.asymmetry;
  meta["payload_hash"] = io::hex64(io::fnv1a64(payload));
  meta["extra"] = json::parse(extra_json);
  io::write_atomic(with_suffix(base, ".f64"), payload);
  if (k.dim() <= 2000) io::write_csv(with_suffix(base, ".csv"), k.matrix.matrix());
  io::write_atomic(with_suffix(base, ".json"), meta.dump(2) + "\n");
}

KernelMatrix load_kernel(const std::filesystem::path& base) {
  const json meta = json::parse(io::read_file(with_suffix(base, ".json")));
  KernelMatrix k;
  k.spec.collapse = collapse_from_string(meta.at("collapse").get<std::string>());
  k.spec.cls = meta.at("class").get<int>();
  k.spec.layers = layer_sel_from_string(meta.at("layers").get<std::string>());
  k.spec.beta = meta.at("beta").get<double>();
  k.spec.importance_base = meta.at("importance_base").get<double>();
  k.spec.eval_set = meta.at("eval_set").get<std::string>();
  k.spec.epoch = meta.at("epoch").get<int>();
  k.num_points = meta.at("num_points").get<Index>();
  k.num_classes = meta.at("num_classes").get<Index>();
  k.asymmetry = meta.at("asymmetry").get<double>();
  const Index dim = meta.at("dim").get<Index>();
  const std::string payload = io::read_file(with_suffix(base, ".f64"));
  if (io::hex64(io::fnv1a64(payload)) != meta.at("payload_hash").get<std::string>())
    throw Error("kernel payload hash mismatch for " + base.string());
  k.matrix = SymMatrix<double>(io::decode_f64_row_major(payload, dim, dim));
  return k;
}

}  // namespace entk
