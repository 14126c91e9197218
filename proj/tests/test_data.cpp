#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <set>

#include "entk/data.hpp"
#include "entk/errors.hpp"
#include "oracles.hpp"

using namespace entk;

TEST_CASE("TMS sparsity matches the binomial law") {
  for (double s : {0.0, 0.3, 0.9}) {
    const Dataset ds = gen_tms_dataset(50, 400, s, 7);
    CHECK(ds.inputs.rows() == 400);
    CHECK(ds.inputs.cols() == 50);
    CHECK(ds.labels == ds.inputs);
    const long zeros = static_cast<long>((ds.inputs.array() == 0.0).count());
    CHECK(oracle::within_binomial(zeros, 400 * 50, s));
    CHECK(ds.inputs.minCoeff() >= 0.0);
    CHECK(ds.inputs.maxCoeff() < 1.0);
  }
  CHECK_THROWS_AS(gen_tms_dataset(5, 5, 1.0, 0), InvalidSparsity);
  CHECK_THROWS_AS(gen_tms_dataset(5, 5, -0.1, 0), InvalidSparsity);
}

TEST_CASE("TMS generation is deterministic and prefix-stable") {
  const Dataset a = gen_tms_dataset(8, 30, 0.5, 99);
  const Dataset b = gen_tms_dataset(8, 30, 0.5, 99);
  const Dataset c = gen_tms_dataset(8, 60, 0.5, 99);
  const Dataset d = gen_tms_dataset(8, 30, 0.5, 100);
  CHECK(a.inputs == b.inputs);
  CHECK(c.inputs.topRows(30) == a.inputs);
  CHECK(a.inputs != d.inputs);
}

TEST_CASE("modadd lattice structure") {
  for (int p : {2, 5, 13}) {
    const Dataset ds = gen_modadd_dataset(p);
    REQUIRE(ds.num_points() == p * p);
    CHECK((ds.inputs.rowwise().sum().array() == 2.0).all());
    CHECK((ds.labels.rowwise().sum().array() == 1.0).all());
    for (Index r = 0; r < ds.num_points(); ++r) {
      const auto [a, b] = lattice_coords(r, p);
      CHECK(ds.inputs(r, a) == 1.0);
      CHECK(ds.inputs(r, p + b) == 1.0);
      CHECK(ds.labels(r, (a + b) % p) == 1.0);
    }
  }
  // p = 3: the row for (2, 2) has label 1.
  const Dataset ds = gen_modadd_dataset(3);
  CHECK(ds.labels(8, 1) == 1.0);
}

TEST_CASE("split is a seeded partition") {
  const Dataset full = gen_modadd_dataset(13);
  const Dataset s = split_train_test(full, 0.7, 3);
  REQUIRE(s.split);
  CHECK(s.split->train.size() == 118);  // floor(0.7 * 169)
  CHECK(s.split->test.size() == 51);
  std::set<Index> all(s.split->train.begin(), s.split->train.end());
  for (Index i : s.split->test) CHECK(all.insert(i).second);
  CHECK(all.size() == 169);
  CHECK(*all.begin() == 0);
  CHECK(*all.rbegin() == 168);
  CHECK(split_train_test(full, 0.7, 3).split->train == s.split->train);
  CHECK(split_train_test(full, 0.7, 4).split->train != s.split->train);
  CHECK_THROWS_AS(split_train_test(full, 1.0, 0), InvalidFraction);
  CHECK_THROWS_AS(split_train_test(full, 0.0, 0), InvalidFraction);
}

TEST_CASE("Fourier feature columns") {
  const int p = 13;
  const Dataset full = gen_modadd_dataset(p);
  for (auto fam : {FourierFamily::a, FourierFamily::b, FourierFamily::sum, FourierFamily::diff}) {
    const FeatureMatrix fm = fourier_feature_matrix(p, fam, full);
    REQUIRE(fm.size() == 12);
    const Eigen::MatrixXd gram = fm.vectors.transpose() * fm.vectors;
    // Every family is an orthonormal set on the full lattice.
    CHECK((gram - Eigen::MatrixXd::Identity(12, 12)).cwiseAbs().maxCoeff() < 1e-10);
    const int which = fam == FourierFamily::a ? 0 : fam == FourierFamily::b ? 1 : fam == FourierFamily::sum ? 2 : 3;
    const Eigen::MatrixXd ref = oracle::fourier_family(p, which);
    for (Index j = 0; j < 12; ++j) CHECK((fm.vectors.col(j) - ref.col(j).normalized()).norm() < 1e-12);
  }
  const FeatureMatrix fa = fourier_feature_matrix(p, FourierFamily::a, full);
  CHECK(fa.names.front() == "a:cos1");
  CHECK(fa.names[1] == "a:sin1");
  CHECK_THROWS_AS(fourier_feature_matrix(7, FourierFamily::a, full), ShapeError);
}

TEST_CASE("TMS feature matrix drops zero columns") {
  Dataset ds = gen_tms_dataset(4, 20, 0.2, 1);
  ds.inputs.col(2).setZero();
  ds.labels = ds.inputs;
  const FeatureMatrix fm = tms_feature_matrix(ds);
  CHECK(fm.size() == 3);
  CHECK(fm.excluded == std::vector<Index>{2});
  CHECK(fm.names == std::vector<std::string>{"x0", "x1", "x3"});
  for (Index j = 0; j < 3; ++j) CHECK(fm.vectors.col(j).norm() == doctest::Approx(1.0));
}

TEST_CASE("dataset persistence round-trips") {
  const auto dir = std::filesystem::temp_directory_path() / "entk_test_data";
  const Dataset s = split_train_test(gen_modadd_dataset(5), 0.6, 11);
  save_dataset(s, dir);
  const Dataset back = load_dataset(dir);
  CHECK(back.inputs == s.inputs);
  CHECK(back.labels == s.labels);
  CHECK(back.kind == DatasetKind::modadd);
  CHECK(back.size_param == 5);
  REQUIRE(back.split);
  CHECK(back.split->train == s.split->train);
  CHECK(back.split->test == s.split->test);

  const Dataset t = gen_tms_dataset(6, 10, 0.5, 2);
  save_dataset(t, dir / "tms");
  const Dataset tb = load_dataset(dir / "tms");
  CHECK(tb.inputs == t.inputs);
  CHECK(tb.kind == DatasetKind::tms);
  CHECK(!tb.split);
}
