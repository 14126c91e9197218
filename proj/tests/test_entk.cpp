#include "doctest.h"

#include <filesystem>
#include <random>

#include "entk/data.hpp"
#include "entk/entk.hpp"
#include "entk/errors.hpp"
#include "entk/models.hpp"
#include "entk/training.hpp"
#include "oracles.hpp"

using namespace entk;

namespace {

TmsParams random_tms(Index m, Index n, std::mt19937_64& rng) {
  TmsParams t;
  t.W = oracle::random_matrix(m, n, rng, 0.6);
  t.b = oracle::random_matrix(n, 1, rng, 0.05);
  return t;
}

ModMlpParams random_modmlp(Index p, Index nh, std::mt19937_64& rng) {
  ModMlpParams mm;
  mm.W1 = oracle::random_matrix(nh, 2 * p, rng, 0.5);
  mm.W2 = oracle::random_matrix(p, nh, rng, 0.5);
  return mm;
}

// J(x1) J(x2)^T with both Jacobians by central differences of the forward pass.
Eigen::MatrixXd fd_block(const ModelParams& params, const Eigen::VectorXd& x1, const Eigen::VectorXd& x2) {
  if (const auto* t = std::get_if<TmsParams>(&params)) {
    auto f = [&](const Eigen::VectorXd& x) {
      return [&, x](const Eigen::VectorXd& th) { return tms_forward(unflatten_tms(th, t->m(), t->n()), x); };
    };
    return oracle::fd_jacobian(f(x1), flatten(*t)) * oracle::fd_jacobian(f(x2), flatten(*t)).transpose();
  }
  const auto& mm = std::get<ModMlpParams>(params);
  auto f = [&](const Eigen::VectorXd& x) {
    return [&, x](const Eigen::VectorXd& th) { return modmlp_forward(unflatten_modmlp(th, mm.n_hid(), mm.p()), x); };
  };
  return oracle::fd_jacobian(f(x1), flatten(mm)) * oracle::fd_jacobian(f(x2), flatten(mm)).transpose();
}

Dataset tms_points(Index n, Index N, std::uint64_t seed) { return gen_tms_dataset(static_cast<int>(n), static_cast<int>(N), 0.5, seed); }

}  // namespace

TEST_CASE("closed-form blocks match the finite-difference oracle") {
  std::mt19937_64 rng(31);
  for (int trial = 0; trial < 8; ++trial) {
    const TmsParams t = random_tms(3, 5, rng);
    const Dataset ds = tms_points(5, 2, static_cast<std::uint64_t>(trial) + 100);
    const Eigen::VectorXd x1 = ds.inputs.row(0).transpose(), x2 = ds.inputs.row(1).transpose();
    const Eigen::MatrixXd K = entk_block(t, x1, x2);
    CHECK(oracle::max_rel_diff(K, fd_block(ModelParams{t}, x1, x2)) < 1e-4);
    CHECK(oracle::max_rel_diff(K, tms_jacobian(t, x1) * tms_jacobian(t, x2).transpose()) < 1e-12);
    CHECK(oracle::max_rel_diff(K, finite_diff_kernel_oracle(ModelParams{t}, x1, x2)) < 1e-4);

    const ModMlpParams mm = random_modmlp(4, 5, rng);
    const Eigen::VectorXd y1 = oracle::random_matrix(8, 1, rng), y2 = oracle::random_matrix(8, 1, rng);
    const Eigen::MatrixXd M = entk_block(mm, y1, y2);
    CHECK(oracle::max_rel_diff(M, fd_block(ModelParams{mm}, y1, y2)) < 1e-4);
    for (LayerSel l : {LayerSel::layer1, LayerSel::layer2}) {
      const Eigen::MatrixXd Jl1 = modmlp_jacobian(mm, y1, l), Jl2 = modmlp_jacobian(mm, y2, l);
      CHECK(oracle::max_rel_diff(entk_block(mm, y1, y2, l), Jl1 * Jl2.transpose()) < 1e-12);
    }
  }
}

TEST_CASE("collapses are consistent with each other") {
  std::mt19937_64 rng(32);
  const ModMlpParams mm = random_modmlp(5, 7, rng);
  const Dataset ds = gen_modadd_dataset(5);
  const Dataset sub = ds.subset({0, 3, 7, 11, 24});
  KernelSpec flat;
  flat.collapse = Collapse::flattened;
  const KernelMatrix F = assemble_kernel(mm, sub, flat);
  CHECK(F.dim() == 25);
  KernelSpec trace;
  const KernelMatrix T = assemble_kernel(mm, sub, trace);
  Eigen::MatrixXd sum = Eigen::MatrixXd::Zero(5, 5);
  for (int c = 0; c < 5; ++c) {
    KernelSpec pc;
    pc.collapse = Collapse::per_class;
    pc.cls = c;
    const KernelMatrix P = assemble_kernel(mm, sub, pc);
    CHECK(oracle::max_rel_diff(P.matrix.matrix(), F.matrix.matrix().block(c * 5, c * 5, 5, 5)) < 1e-12);
    sum += P.matrix.matrix();
  }
  CHECK(oracle::max_rel_diff(T.matrix.matrix(), sum) < 1e-12);
  // Flattened entries are the per-pair blocks.
  const Eigen::MatrixXd B = entk_block(mm, sub.inputs.row(1).transpose(), sub.inputs.row(3).transpose());
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) CHECK(F.matrix(F.index(1, i), F.index(3, j)) == doctest::Approx(B(i, j)));
}

TEST_CASE("kernels are symmetric and PSD for every spec") {
  std::mt19937_64 rng(33);
  const TmsParams t = random_tms(3, 6, rng);
  const Dataset tds = tms_points(6, 15, 4);
  const ModMlpParams mm = random_modmlp(5, 9, rng);
  const Dataset mds = gen_modadd_dataset(5);
  std::vector<std::pair<ModelParams, const Dataset*>> cases = {{t, &tds}, {mm, &mds}};
  for (const auto& [params, ds] : cases) {
    for (Collapse c : {Collapse::per_class, Collapse::flattened, Collapse::class_trace}) {
      for (LayerSel l : {LayerSel::all, LayerSel::layer1, LayerSel::layer2}) {
        if (arch_of(params) == Arch::tms && l != LayerSel::all) continue;
        KernelSpec spec;
        spec.collapse = c;
        spec.layers = l;
        spec.cls = 1;
        const KernelMatrix K = assemble_kernel(params, *ds, spec);
        CHECK(K.asymmetry <= 1e-10);
        const Eigen::VectorXd ev = eigenvalues_descending(K.matrix);
        CHECK(ev(ev.size() - 1) >= -1e-8 * ev(0));
      }
    }
  }
}

TEST_CASE("importance rescaling commutes with flattening") {
  std::mt19937_64 rng(34);
  const TmsParams t = random_tms(3, 4, rng);
  const Dataset ds = tms_points(4, 6, 5);
  KernelSpec plain;
  plain.collapse = Collapse::flattened;
  KernelSpec scaled = plain;
  scaled.beta = 0.3;
  scaled.importance_base = 0.8;
  const Eigen::MatrixXd K0 = assemble_kernel(t, ds, plain).matrix.matrix();
  const Eigen::MatrixXd Kb = assemble_kernel(t, ds, scaled).matrix.matrix();
  Eigen::VectorXd d(24);
  for (Index c = 0; c < 4; ++c)
    for (Index a = 0; a < 6; ++a) d(flat_index(a, c, 6)) = std::pow(std::pow(0.8, static_cast<double>(c)), 0.15);
  CHECK(oracle::max_rel_diff(Kb, d.asDiagonal() * K0 * d.asDiagonal()) < 1e-12);
  const Eigen::MatrixXd J = tms_flat_jacobian(t, ds.inputs, 0.3, 0.8);
  CHECK(oracle::max_rel_diff(J * J.transpose(), Kb) < 1e-12);
}

TEST_CASE("layer additivity and layer-1 sparsity") {
  std::mt19937_64 rng(35);
  for (int p : {5, 7}) {
    const ModMlpParams mm = random_modmlp(p, 11, rng);
    const Dataset ds = gen_modadd_dataset(p);
    for (Collapse c : {Collapse::class_trace, Collapse::flattened}) {
      KernelSpec all, l1, l2;
      all.collapse = l1.collapse = l2.collapse = c;
      l1.layers = LayerSel::layer1;
      l2.layers = LayerSel::layer2;
      const Eigen::MatrixXd Ka = assemble_kernel(mm, ds, all).matrix.matrix();
      const Eigen::MatrixXd K1 = assemble_kernel(mm, ds, l1).matrix.matrix();
      const Eigen::MatrixXd K2 = assemble_kernel(mm, ds, l2).matrix.matrix();
      CHECK(oracle::max_rel_diff(K1 + K2, Ka) < 1e-12);
      if (c != Collapse::class_trace) continue;
      for (Index r = 0; r < ds.num_points(); ++r)
        for (Index s = 0; s < ds.num_points(); ++s) {
          const auto [a, b] = lattice_coords(r, p);
          const auto [a2, b2] = lattice_coords(s, p);
          if (a != a2 && b != b2) CHECK(K1(r, s) == 0.0);
        }
    }
  }
}

TEST_CASE("spec validation and the memory guard") {
  std::mt19937_64 rng(36);
  const TmsParams t = random_tms(2, 4, rng);
  const Dataset ds = tms_points(4, 10, 1);
  KernelSpec bad;
  bad.layers = LayerSel::layer1;
  CHECK_THROWS_AS(assemble_kernel(t, ds, bad), Error);
  KernelSpec beta_mod;
  beta_mod.beta = 0.5;
  CHECK_THROWS_AS(assemble_kernel(random_modmlp(3, 4, rng), gen_modadd_dataset(3), beta_mod), Error);
  KernelSpec cls;
  cls.collapse = Collapse::per_class;
  cls.cls = 4;
  CHECK_THROWS_AS(assemble_kernel(t, ds, cls), ShapeError);
  KernelSpec flat;
  flat.collapse = Collapse::flattened;
  AssembleOptions small;
  small.dense_cap = 39;
  CHECK_THROWS_AS(assemble_kernel(t, ds, flat, small), MemoryGuard);
  small.force = true;
  CHECK(assemble_kernel(t, ds, flat, small).dim() == 40);
  CHECK_THROWS_AS(assemble_kernel(t, gen_tms_dataset(5, 3, 0.1, 0), flat), ShapeError);
}

TEST_CASE("kernel operators match dense assembly") {
  std::mt19937_64 rng(37);
  const ModMlpParams mm = random_modmlp(5, 8, rng);
  const Dataset mds = gen_modadd_dataset(5);
  const TmsParams t = random_tms(3, 6, rng);
  const Dataset tds = tms_points(6, 12, 3);
  for (LayerSel l : {LayerSel::all, LayerSel::layer1, LayerSel::layer2}) {
    KernelSpec spec;
    spec.collapse = Collapse::flattened;
    spec.layers = l;
    const KernelMatrix K = assemble_kernel(mm, mds, spec);
    const KernelOperator op = make_kernel_operator(mm, mds, spec);
    const Eigen::MatrixXd V = oracle::random_matrix(op.dim, 3, rng);
    CHECK(oracle::max_rel_diff(op.apply(V), K.matrix.matrix() * V) < 1e-12);
  }
  KernelSpec ts;
  ts.collapse = Collapse::flattened;
  ts.beta = 1.0;
  const KernelMatrix K = assemble_kernel(t, tds, ts);
  const KernelOperator op = make_kernel_operator(t, tds, ts);
  REQUIRE(op.factor);
  CHECK(oracle::max_rel_diff(*op.factor * op.factor->transpose(), K.matrix.matrix()) < 1e-12);

  // Top-k via the Gram of the factor equals the dense spectrum.
  const auto dense = eigh_descending(K.matrix);
  TopkOptions to;
  to.max_iter = 20000;
  to.tol = 1e-10;
  const Spectrum<double> top = kernel_topk(op, 5, to);
  CHECK(oracle::max_rel_diff(top.eigenvalues, dense.eigenvalues.head(5)) < 1e-6);
  CHECK(max_principal_angle_sine<double>(top.eigenvectors, dense.eigenvectors.leftCols(5)) < 1e-5);
  KernelSpec mflat;
  mflat.collapse = Collapse::flattened;
  const auto mdense = eigh_descending(assemble_kernel(mm, mds, mflat).matrix);
  const Spectrum<double> mtop = kernel_topk(make_kernel_operator(mm, mds, mflat), 4, to);
  CHECK(oracle::max_rel_diff(mtop.eigenvalues, mdense.eigenvalues.head(4)) < 1e-6);
}

TEST_CASE("predictor interpolates and flags singular systems") {
  std::mt19937_64 rng(38);
  const int p = 5;
  const ModMlpParams mm = random_modmlp(p, 40, rng);
  const Dataset ds = gen_modadd_dataset(p);
  const Dataset train = ds.subset({0, 1, 2, 6, 8, 12, 13, 19});
  KernelSpec spec;
  spec.collapse = Collapse::flattened;
  const Eigen::MatrixXd K = assemble_kernel(mm, train, spec).matrix.matrix();
  // Flattened targets: class-major stacking of the labels.
  Eigen::VectorXd y(K.rows());
  for (Index c = 0; c < p; ++c)
    for (Index a = 0; a < train.num_points(); ++a) y(flat_index(a, c, train.num_points())) = train.labels(a, c);
  const Eigen::MatrixXd pred = ntk_predict(K, K, y, 0.0);
  CHECK((pred - y).cwiseAbs().maxCoeff() < 1e-6);

  Eigen::MatrixXd rank1 = Eigen::VectorXd::Ones(4) * Eigen::RowVectorXd::Ones(4);
  CHECK_THROWS_AS(ntk_predict(rank1, rank1, Eigen::VectorXd::Ones(4), 0.0), SingularKernel);
  CHECK_NOTHROW(ntk_predict(rank1, rank1, Eigen::VectorXd::Ones(4)));
  CHECK_THROWS_AS(ntk_predict(rank1, rank1, Eigen::VectorXd::Ones(3)), ShapeError);
}

TEST_CASE("kernel files round-trip") {
  std::mt19937_64 rng(39);
  const ModMlpParams mm = random_modmlp(3, 4, rng);
  KernelSpec spec;
  spec.layers = LayerSel::layer1;
  const KernelMatrix K = assemble_kernel(mm, gen_modadd_dataset(3), spec);
  const auto base = std::filesystem::temp_directory_path() / "entk_test_kernel" / spec.key();
  std::filesystem::create_directories(base.parent_path());
  save_kernel(K, base);
  const KernelMatrix back = load_kernel(base);
  CHECK(back.matrix.matrix() == K.matrix.matrix());
  CHECK(back.spec.key() == spec.key());
  CHECK(back.num_classes == 3);
  CHECK(std::filesystem::exists(base.string() + ".csv"));
  CHECK(spec.key() == "class_trace_layer1");
  KernelSpec b;
  b.collapse = Collapse::flattened;
  b.beta = 0.3;
  CHECK(b.key() == "flattened_all_beta0.3");
}
