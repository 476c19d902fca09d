#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace capflow::classify {

struct ForestConfig {
  int n_trees = 100;
  int max_features = 0;  // 0 picks round(sqrt(n_features)) per split
  int min_samples_split = 2;
  bool bootstrap = true;
  std::uint64_t seed = 0;
};

// Flat node array; feature == -1 marks a leaf carrying its majority class.
struct TreeNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1, right = -1;
  int majority = -1;
};

struct Tree {
  std::vector<TreeNode> nodes;
  int predict(const double* x) const;
};

// Gini-split random forest, majority vote over trees.  All ties (leaf
// majorities, vote argmax) break toward the lowest class index.
struct Forest {
  ForestConfig cfg;
  int n_features = 0;
  int n_classes = 0;
  std::vector<Tree> trees;

  int predict(const Eigen::VectorXd& x) const;
  // per-class vote fractions, sums to 1
  Eigen::VectorXd predict_proba(const Eigen::VectorXd& x) const;
  std::vector<int> predict_all(const Eigen::MatrixXd& X) const;

  void save(const std::filesystem::path& path) const;
  static Forest load(const std::filesystem::path& path);
};

// X is samples x features (one row per sample), y holds class ids in
// [0, n_classes).
Forest fit_forest(const Eigen::MatrixXd& X, const std::vector<int>& y, int n_classes,
                  const ForestConfig& cfg);

// Joint container/substance labels packed as container * 9 + substance.
inline constexpr int kNumContainers = 9;
inline constexpr int kNumSubstances = 9;
inline constexpr int kNumJointClasses = kNumContainers * kNumSubstances;

inline int joint_label(int container, int substance) {
  return container * kNumSubstances + substance;
}

struct EvalReport {
  int n = 0;
  double joint_acc = 0.0, container_acc = 0.0, substance_acc = 0.0;
  Eigen::MatrixXi confusion_container;  // rows true, cols predicted
  Eigen::MatrixXi confusion_substance;
};

EvalReport evaluate_joint(const std::vector<int>& predicted, const std::vector<int>& truth);

// Slice a 4000-dim grasp feature matrix down to the [value, gradient]
// blocks of the chosen 1-based electrodes (ascending).
Eigen::MatrixXd electrode_subset(const Eigen::MatrixXd& X, const std::vector<int>& electrodes);

}  // namespace capflow::classify
