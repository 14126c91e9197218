#include "doctest.h"

#include <random>

#include "entk/data.hpp"
#include "entk/errors.hpp"
#include "entk/spectral.hpp"
#include "oracles.hpp"

using namespace entk;

TEST_CASE("cliff detection on hand-made spectra") {
  Eigen::VectorXd ev(6);
  ev << 100, 90, 80, 8, 7, 0.1;
  const CliffReport r = detect_cliffs(ev);
  CHECK(r.boundaries == std::vector<Index>{3, 5});
  CHECK(r.ratios[0] == doctest::Approx(10.0));
  CHECK(r.ratio_at(5) == doctest::Approx(70.0));
  CHECK(r.has(3));
  CHECK(!r.has(4));
  CHECK(r.ratio_at(0) == 0.0);
  CHECK(r.all_ratios.size() == 5);

  // Entries under floor * lambda_1 never start a boundary; drops into the floor do.
  Eigen::VectorXd z(5);
  z << 1.0, 1e-14, 0.0, 0.0, 0.0;
  const CliffReport rz = detect_cliffs(z);
  CHECK(rz.boundaries == std::vector<Index>{1});
  CHECK(rz.ratio_at(1) == doctest::Approx(1e12));

  Eigen::VectorXd flat = Eigen::VectorXd::Ones(4);
  CHECK(detect_cliffs(flat).boundaries.empty());
  CHECK_THROWS_AS(detect_cliffs(Eigen::VectorXd::Ones(1)), EmptySpectrum);
  CHECK_THROWS_AS(detect_cliffs(Eigen::VectorXd()), EmptySpectrum);
}

TEST_CASE("cliff detection is scale invariant") {
  std::mt19937_64 rng(50);
  std::uniform_real_distribution<double> u(0.0, 3.0);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd ev(20);
    double v = 1.0;
    for (Index i = 0; i < 20; ++i) {
      ev(i) = v;
      v /= std::exp(u(rng));
    }
    const CliffReport a = detect_cliffs(ev);
    for (double c : {1e-6, 3.0, 1e8}) {
      const CliffReport b = detect_cliffs(c * ev);
      CHECK(a.boundaries == b.boundaries);
      for (std::size_t i = 0; i < a.ratios.size(); ++i) CHECK(b.ratios[i] == doctest::Approx(a.ratios[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("alignment heatmap values and sign invariance") {
  FeatureMatrix fm;
  fm.vectors = Eigen::MatrixXd::Identity(3, 3);
  fm.names = {"f0", "f1", "f2"};
  Spectrum<double> s;
  s.eigenvalues = Eigen::Vector3d(3, 2, 1);
  s.eigenvectors = Eigen::MatrixXd::Identity(3, 3);
  const AlignmentHeatmap h = alignment_heatmap(s, fm, 0, 3);
  CHECK(h.values.isApprox(Eigen::MatrixXd::Identity(3, 3)));
  CHECK(h.normalization == "abs_cosine");
  const AlignmentHeatmap part = alignment_heatmap(s, fm, 1, 3);
  CHECK(part.rows == std::vector<Index>{1, 2});
  CHECK_THROWS_AS(alignment_heatmap(s, fm, 2, 4), ShapeError);

  std::mt19937_64 rng(51);
  const Eigen::MatrixXd V = oracle::random_matrix(6, 4, rng);
  FeatureMatrix g;
  g.vectors = oracle::random_matrix(6, 3, rng);
  g.names = {"a", "b", "c"};
  Eigen::MatrixXd flipped = V;
  flipped.col(1) *= -1;
  flipped.col(3) *= -1;
  CHECK(alignment_heatmap(V, g).values.isApprox(alignment_heatmap(flipped, g).values));
}

TEST_CASE("family heatmap is a subspace projection") {
  const int p = 13;
  const Dataset full = gen_modadd_dataset(p);
  auto fams = family_pairs(fourier_feature_matrix(p, FourierFamily::a, full));
  for (auto& f : family_pairs(fourier_feature_matrix(p, FourierFamily::b, full))) fams.push_back(f);
  REQUIRE(fams.size() == 12);
  CHECK(fams[0].name == "a:k1");
  CHECK(fams[6].name == "b:k1");

  std::mt19937_64 rng(52);
  const Eigen::MatrixXd V = orthonormalize_columns(oracle::random_matrix(p * p, 5, rng));
  const AlignmentHeatmap h = family_heatmap(V, fams);
  // Row sums over an orthonormal family set never exceed 1.
  CHECK((h.values.rowwise().sum().array() <= 1.0 + 1e-12).all());
  // Invariant under rotating the (cos, sin) basis of each pair.
  auto rotated = fams;
  for (auto& f : rotated) f.basis = f.basis * oracle::random_orthogonal(2, rng);
  CHECK(oracle::max_rel_diff(family_heatmap(V, rotated).values, h.values) < 1e-10);

  // A vector inside the union span has row sum exactly 1, and phase-shifted
  // cosines land entirely in their pair.
  Eigen::VectorXd v(p * p);
  for (Index r = 0; r < p * p; ++r) {
    const auto [a, b] = lattice_coords(r, p);
    v(r) = std::cos(2 * M_PI * 3 * a / p + 0.7) + 0.5 * std::sin(2 * M_PI * 5 * b / p - 0.2);
  }
  v.normalize();
  const AlignmentHeatmap hv = family_heatmap(v, fams);
  CHECK(hv.values.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(hv.values(0, 2) == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(hv.values(0, 10) == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("greedy matching") {
  AlignmentHeatmap id;
  id.values = Eigen::MatrixXd::Identity(4, 4);
  id.rows = {0, 1, 2, 3};
  const MatchResult m = match_features(id);
  CHECK(m.assignment == std::vector<Index>{0, 1, 2, 3});
  CHECK(m.mean_score == 1.0);
  CHECK(m.min_score == 1.0);

  AlignmentHeatmap perm;
  perm.values = Eigen::MatrixXd::Zero(3, 3);
  perm.values(0, 2) = 0.9;
  perm.values(1, 0) = 0.8;
  perm.values(2, 1) = 0.7;
  const MatchResult mp = match_features(perm);
  CHECK(mp.assignment == std::vector<Index>{1, 2, 0});
  CHECK(mp.min_score == doctest::Approx(0.7));

  // Ties go to the lowest row, then the lowest column.
  AlignmentHeatmap tie;
  tie.values = Eigen::MatrixXd::Constant(2, 2, 0.5);
  const MatchResult mt = match_features(tie);
  CHECK(mt.assignment == std::vector<Index>{0, 1});

  // Greedy takes the best cell first even when that lowers the total.
  AlignmentHeatmap greedy;
  greedy.values.resize(2, 2);
  greedy.values << 0.9, 0.8, 0.7, 0.0;
  const MatchResult mg = match_features(greedy);
  CHECK(mg.assignment == std::vector<Index>{0, 1});
  CHECK(mg.scores[1] == 0.0);

  // More columns than rows: leftovers stay unmatched; skipped columns are ignored.
  AlignmentHeatmap wide;
  wide.values.resize(1, 3);
  wide.values << 0.2, 0.9, 0.4;
  const MatchResult mw = match_features(wide, {1});
  CHECK(mw.assignment == std::vector<Index>{-1, -1, 0});
  CHECK(mw.mean_score == doctest::Approx(0.2));
}

TEST_CASE("expanded data matrix layout") {
  Dataset ds = gen_tms_dataset(3, 4, 0.0, 1);
  ds.inputs.col(1).setZero();
  ds.labels = ds.inputs;
  const FeatureMatrix fm = expanded_data_matrix(ds);
  REQUIRE(fm.vectors.rows() == 12);
  REQUIRE(fm.vectors.cols() == 3);
  CHECK(fm.excluded == std::vector<Index>{1});
  CHECK(fm.vectors.col(1).isZero());
  for (Index a = 0; a < 4; ++a) {
    CHECK(fm.vectors(flat_index(a, 0, 4), 0) == doctest::Approx(ds.inputs(a, 0) / ds.inputs.col(0).norm()));
    CHECK(fm.vectors(flat_index(a, 2, 4), 0) == 0.0);
  }
  CHECK(fm.vectors.col(2).norm() == doctest::Approx(1.0));
}

TEST_CASE("uniform mode helpers") {
  Eigen::VectorXd c = Eigen::VectorXd::Constant(9, -2.0);
  CHECK(uniform_overlap(c) == doctest::Approx(1.0));
  Eigen::VectorXd alt(4);
  alt << 1, -1, 1, -1;
  CHECK(uniform_overlap(alt) == 0.0);
  Eigen::MatrixXd V(4, 3);
  V.col(0) = Eigen::VectorXd::Constant(4, 0.5);
  V.col(1) = alt / 2.0;
  V.col(2) << 1, 1, -1, -1;
  V.col(2) /= 2.0;
  CHECK(leading_uniform_modes(V, 3) == 1);
  CHECK(leading_uniform_modes(V.rightCols(2), 3) == 0);
  const Eigen::MatrixXd P = project_out_uniform(V);
  CHECK(P.cols() == 2);
  CHECK((P.transpose() * Eigen::VectorXd::Ones(4)).norm() < 1e-12);
  CHECK(max_principal_angle_sine<double>(P, V.rightCols(2)) < 1e-12);
  CHECK_THROWS_AS(project_out_uniform(Eigen::MatrixXd(4, 0)), EmptyBasis);
}

TEST_CASE("exporters") {
  CHECK(spectrum_csv(Eigen::Vector2d(2.5, 1)) == "index,eigenvalue\n1,2.5\n2,1\n");
  AlignmentHeatmap h;
  h.values = Eigen::MatrixXd::Identity(2, 2);
  h.rows = {3, 4};
  h.cols = {"a", "b"};
  CHECK(heatmap_csv(h) == "eigenvector,a,b\n3,1,0\n4,0,1\n");
  Eigen::VectorXd ev(3);
  ev << 10, 1, 0.5;
  CHECK(cliff_report_json(detect_cliffs(ev)).find("\"boundaries\": [\n    1\n  ]") != std::string::npos);
}
