#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "capflow/classify.hpp"
#include "capflow/rng.hpp"

using namespace capflow;
using namespace capflow::classify;

namespace {

// gaussian blobs, one per class
void make_blobs(int n_per_class, int n_classes, double spread, std::uint64_t seed,
                Eigen::MatrixXd& X, std::vector<int>& y) {
  Rng r(seed);
  X.resize(n_per_class * n_classes, 2);
  y.clear();
  for (int c = 0; c < n_classes; ++c) {
    double cx = 3.0 * c, cy = 2.0 * (c % 2);
    for (int i = 0; i < n_per_class; ++i) {
      int row = c * n_per_class + i;
      X(row, 0) = cx + spread * r.normal();
      X(row, 1) = cy + spread * r.normal();
      y.push_back(c);
    }
  }
}

}  // namespace

TEST_CASE("a lone unbagged tree memorizes separable data") {
  Eigen::MatrixXd X;
  std::vector<int> y;
  make_blobs(40, 3, 0.15, 1, X, y);
  ForestConfig cfg;
  cfg.n_trees = 1;
  cfg.bootstrap = false;
  cfg.max_features = 2;
  cfg.seed = 5;
  Forest f = fit_forest(X, y, 3, cfg);
  auto pred = f.predict_all(X);
  int correct = 0;
  for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
  CHECK(correct == int(y.size()));
}

TEST_CASE("forest generalizes on noisy blobs and is seed deterministic") {
  Eigen::MatrixXd X, Xe;
  std::vector<int> y, ye;
  make_blobs(120, 4, 0.8, 2, X, y);
  make_blobs(60, 4, 0.8, 3, Xe, ye);
  ForestConfig cfg;
  cfg.n_trees = 50;
  cfg.seed = 9;
  Forest f = fit_forest(X, y, 4, cfg);
  auto pred = f.predict_all(Xe);
  int correct = 0;
  for (std::size_t i = 0; i < ye.size(); ++i) correct += pred[i] == ye[i];
  CHECK(double(correct) / ye.size() > 0.9);

  Forest f2 = fit_forest(X, y, 4, cfg);
  CHECK(f2.predict_all(Xe) == pred);

  ForestConfig cfg3 = cfg;
  cfg3.seed = 10;
  Forest f3 = fit_forest(X, y, 4, cfg3);
  bool any_diff = false;
  for (Eigen::Index i = 0; i < Xe.rows(); ++i)
    any_diff |= (f3.predict_proba(Xe.row(i).transpose()) - f.predict_proba(Xe.row(i).transpose()))
                    .cwiseAbs()
                    .maxCoeff() > 0.0;
  CHECK(any_diff);
}

TEST_CASE("vote fractions are a distribution and argmax ties break low") {
  Eigen::MatrixXd X;
  std::vector<int> y;
  make_blobs(50, 3, 1.5, 4, X, y);
  ForestConfig cfg;
  cfg.n_trees = 30;
  cfg.seed = 1;
  Forest f = fit_forest(X, y, 3, cfg);
  Eigen::VectorXd x(2);
  x << 1.5, 1.0;
  Eigen::VectorXd p = f.predict_proba(x);
  CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(p.minCoeff() >= 0.0);
  int arg = f.predict(x);
  for (int c = 0; c < 3; ++c)
    if (c < arg) CHECK(p[c] < p[arg]);  // lower index would have won a tie
}

TEST_CASE("vote-fraction scatter shrinks as trees are added") {
  // two heavily overlapping classes; the vote fraction at the midpoint is
  // noisy for small ensembles and settles as 1/sqrt(T)
  Rng r(6);
  Eigen::MatrixXd X(300, 2);
  std::vector<int> y;
  for (int i = 0; i < 300; ++i) {
    int c = i % 2;
    X(i, 0) = (c ? 1.0 : 0.0) + r.normal();
    X(i, 1) = r.normal();
    y.push_back(c);
  }
  Eigen::VectorXd probe(2);
  probe << 0.5, 0.0;

  std::vector<int> tree_counts = {1, 5, 25, 100};
  std::vector<double> stds;
  for (int T : tree_counts) {
    double s1 = 0, s2 = 0;
    const int reps = 24;
    for (int k = 0; k < reps; ++k) {
      ForestConfig cfg;
      cfg.n_trees = T;
      cfg.seed = 1000 + k;
      double p = fit_forest(X, y, 2, cfg).predict_proba(probe)[0];
      s1 += p;
      s2 += p * p;
    }
    stds.push_back(std::sqrt(std::max(0.0, s2 / reps - (s1 / reps) * (s1 / reps))));
  }
  for (std::size_t i = 1; i < stds.size(); ++i) CHECK(stds[i] < stds[i - 1]);
}

TEST_CASE("forest files round trip") {
  Eigen::MatrixXd X;
  std::vector<int> y;
  make_blobs(60, 3, 0.6, 7, X, y);
  ForestConfig cfg;
  cfg.n_trees = 20;
  cfg.seed = 3;
  Forest f = fit_forest(X, y, 3, cfg);

  auto path = std::filesystem::temp_directory_path() / "capflow_forest_test.txt";
  f.save(path);
  Forest g = Forest::load(path);
  CHECK(g.n_features == f.n_features);
  CHECK(g.n_classes == f.n_classes);
  CHECK(g.cfg.seed == f.cfg.seed);
  Rng r(8);
  for (int k = 0; k < 100; ++k) {
    Eigen::VectorXd x(2);
    x << r.uniform(-2.0, 8.0), r.uniform(-2.0, 4.0);
    CHECK(f.predict(x) == g.predict(x));
    CHECK((f.predict_proba(x) - g.predict_proba(x)).cwiseAbs().maxCoeff() == 0.0);
  }
  std::filesystem::remove(path);
}

TEST_CASE("joint evaluation decomposes container and substance accuracy") {
  // truth: (c=0,s=0), (c=1,s=2), (c=2,s=2)
  std::vector<int> truth = {joint_label(0, 0), joint_label(1, 2), joint_label(2, 2)};
  std::vector<int> pred = {joint_label(0, 0), joint_label(1, 1), joint_label(0, 2)};
  EvalReport r = evaluate_joint(pred, truth);
  CHECK(r.joint_acc == doctest::Approx(1.0 / 3));
  CHECK(r.container_acc == doctest::Approx(2.0 / 3));
  CHECK(r.substance_acc == doctest::Approx(2.0 / 3));
  CHECK(r.confusion_container(2, 0) == 1);
  CHECK(r.confusion_substance(2, 2) == 1);
  CHECK(r.confusion_substance(2, 1) == 1);
  CHECK(r.confusion_container.sum() == 3);
}

TEST_CASE("electrode subsets slice the grasp feature blocks") {
  const int block = 400;
  Eigen::MatrixXd X(3, 10 * block);
  for (int i = 0; i < X.rows(); ++i)
    for (int j = 0; j < X.cols(); ++j) X(i, j) = i * 10000 + j;
  auto S = electrode_subset(X, {1, 4, 10});
  REQUIRE(S.cols() == 3 * block);
  CHECK(S(1, 0) == X(1, 0));
  CHECK(S(2, block) == X(2, 3 * block));
  CHECK(S(0, 2 * block + 7) == X(0, 9 * block + 7));
  CHECK_THROWS_AS(electrode_subset(X, {4, 1}), std::invalid_argument);
  CHECK_THROWS_AS(electrode_subset(X, {}), std::invalid_argument);
  CHECK_THROWS_AS(electrode_subset(Eigen::MatrixXd(2, 100), {1}), std::invalid_argument);
}
