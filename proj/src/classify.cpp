#include "capflow/classify.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "capflow/rng.hpp"
#include "capflow/signals.hpp"

namespace capflow::classify {

namespace {

int majority_class(const std::vector<int>& counts) {
  int best = 0;
  for (int c = 1; c < int(counts.size()); ++c)
    if (counts[c] > counts[best]) best = c;
  return best;
}

struct TreeBuilder {
  const Eigen::MatrixXd& X;
  const std::vector<int>& y;
  int n_classes;
  int k_features;
  int min_split;
  Rng rng;
  std::vector<TreeNode> nodes;
  std::vector<int> feat_pool;

  TreeBuilder(const Eigen::MatrixXd& X_, const std::vector<int>& y_, int n_classes_,
              int k_features_, int min_split_, std::uint64_t seed)
      : X(X_), y(y_), n_classes(n_classes_), k_features(k_features_), min_split(min_split_),
        rng(seed) {
    feat_pool.resize(X.cols());
    std::iota(feat_pool.begin(), feat_pool.end(), 0);
  }

  int make_leaf(const std::vector<int>& counts) {
    TreeNode n;
    n.majority = majority_class(counts);
    nodes.push_back(n);
    return int(nodes.size()) - 1;
  }

  int build(std::vector<int>&& idx) {
    std::vector<int> counts(n_classes, 0);
    for (int i : idx) ++counts[y[i]];
    const int n = int(idx.size());
    int max_c = *std::max_element(counts.begin(), counts.end());
    if (max_c == n || n < min_split) return make_leaf(counts);

    double ss_total = 0.0;
    for (int c : counts) ss_total += double(c) * c;
    const double q_parent = ss_total / n;

    // draw k features without replacement
    const int d = int(X.cols());
    for (int i = 0; i < k_features; ++i)
      std::swap(feat_pool[i], feat_pool[i + int(rng.below(std::uint64_t(d - i)))]);

    double best_q = q_parent + 1e-12;
    int best_feat = -1, best_pos = -1;
    double best_thr = 0.0;
    std::vector<std::pair<double, int>> vals(n);
    std::vector<std::pair<double, int>> best_vals;
    std::vector<int> left_cnt(n_classes), right_cnt(n_classes);

    for (int fi = 0; fi < k_features; ++fi) {
      const int f = feat_pool[fi];
      for (int i = 0; i < n; ++i) vals[i] = {X(idx[i], f), y[idx[i]]};
      std::sort(vals.begin(), vals.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      if (vals.front().first == vals.back().first) continue;

      std::fill(left_cnt.begin(), left_cnt.end(), 0);
      right_cnt = counts;
      double ssl = 0.0, ssr = ss_total;
      for (int i = 0; i < n - 1; ++i) {
        int c = vals[i].second;
        ssl += 2.0 * left_cnt[c] + 1.0;
        ++left_cnt[c];
        ssr -= 2.0 * right_cnt[c] - 1.0;
        --right_cnt[c];
        if (vals[i].first == vals[i + 1].first) continue;
        double q = ssl / (i + 1) + ssr / (n - i - 1);
        if (q > best_q) {
          best_q = q;
          best_feat = f;
          best_pos = i;
          best_thr = 0.5 * (vals[i].first + vals[i + 1].first);
          best_vals = vals;
        }
      }
    }

    if (best_feat < 0) return make_leaf(counts);

    std::vector<int> left_idx, right_idx;
    left_idx.reserve(best_pos + 1);
    right_idx.reserve(n - best_pos - 1);
    for (int i : idx)
      (X(i, best_feat) <= best_thr ? left_idx : right_idx).push_back(i);
    idx.clear();
    idx.shrink_to_fit();

    // midpoints can collapse onto a boundary value under extreme ties
    if (left_idx.empty() || right_idx.empty()) return make_leaf(counts);

    int self = int(nodes.size());
    nodes.push_back({});
    nodes[self].feature = best_feat;
    nodes[self].threshold = best_thr;
    int L = build(std::move(left_idx));
    int R = build(std::move(right_idx));
    nodes[self].left = L;
    nodes[self].right = R;
    return self;
  }
};

}  // namespace

int Tree::predict(const double* x) const {
  int i = 0;
  while (nodes[i].feature >= 0)
    i = x[nodes[i].feature] <= nodes[i].threshold ? nodes[i].left : nodes[i].right;
  return nodes[i].majority;
}

Forest fit_forest(const Eigen::MatrixXd& X, const std::vector<int>& y, int n_classes,
                  const ForestConfig& cfg) {
  const int n = int(X.rows());
  if (n == 0 || int(y.size()) != n)
    throw std::invalid_argument("fit_forest: bad training set shape");
  for (int c : y)
    if (c < 0 || c >= n_classes) throw std::invalid_argument("fit_forest: label out of range");

  int k = cfg.max_features > 0 ? cfg.max_features
                               : std::max(1, int(std::lround(std::sqrt(double(X.cols())))));
  k = std::min<int>(k, int(X.cols()));

  Forest fo;
  fo.cfg = cfg;
  fo.n_features = int(X.cols());
  fo.n_classes = n_classes;
  fo.trees.reserve(cfg.n_trees);
  for (int t = 0; t < cfg.n_trees; ++t) {
    std::uint64_t tree_seed = Rng::mix(cfg.seed, std::uint64_t(t));
    Rng boot(Rng::mix(tree_seed, 0xb007ull));
    std::vector<int> idx(n);
    if (cfg.bootstrap)
      for (int i = 0; i < n; ++i) idx[i] = int(boot.below(std::uint64_t(n)));
    else
      std::iota(idx.begin(), idx.end(), 0);
    TreeBuilder tb(X, y, n_classes, k, cfg.min_samples_split, tree_seed);
    tb.build(std::move(idx));
    Tree tr;
    tr.nodes = std::move(tb.nodes);
    fo.trees.push_back(std::move(tr));
  }
  return fo;
}

Eigen::VectorXd Forest::predict_proba(const Eigen::VectorXd& x) const {
  if (int(x.size()) != n_features)
    throw std::invalid_argument("predict: feature dimension mismatch");
  Eigen::VectorXd votes = Eigen::VectorXd::Zero(n_classes);
  for (const auto& t : trees) votes[t.predict(x.data())] += 1.0;
  return votes / double(trees.size());
}

int Forest::predict(const Eigen::VectorXd& x) const {
  Eigen::VectorXd p = predict_proba(x);
  int best = 0;
  for (int c = 1; c < n_classes; ++c)
    if (p[c] > p[best]) best = c;
  return best;
}

std::vector<int> Forest::predict_all(const Eigen::MatrixXd& X) const {
  std::vector<int> out(X.rows());
  for (Eigen::Index i = 0; i < X.rows(); ++i) out[i] = predict(X.row(i).transpose());
  return out;
}

void Forest::save(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path.string());
  f << "#forest v1\n";
  f << "n_trees " << trees.size() << " n_features " << n_features << " n_classes " << n_classes
    << "\n";
  f << "config max_features " << cfg.max_features << " min_samples_split " << cfg.min_samples_split
    << " bootstrap " << (cfg.bootstrap ? 1 : 0) << " seed " << cfg.seed << "\n";
  char buf[48];
  for (std::size_t t = 0; t < trees.size(); ++t) {
    f << "tree " << t << " nodes " << trees[t].nodes.size() << "\n";
    for (const auto& n : trees[t].nodes) {
      if (n.feature < 0) {
        f << "L " << n.majority << "\n";
      } else {
        std::snprintf(buf, sizeof(buf), "%a", n.threshold);
        f << "S " << n.feature << ' ' << buf << ' ' << n.left << ' ' << n.right << "\n";
      }
    }
  }
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Forest Forest::load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open forest: " + path.string());
  std::string line;
  auto next = [&]() -> std::string& {
    if (!std::getline(f, line)) throw std::runtime_error("forest file truncated");
    return line;
  };
  if (next() != "#forest v1") throw std::runtime_error("not a forest file: " + path.string());
  Forest fo;
  int n_trees = 0;
  {
    std::istringstream is(next());
    std::string k1, k2, k3;
    if (!(is >> k1 >> n_trees >> k2 >> fo.n_features >> k3 >> fo.n_classes) || k1 != "n_trees")
      throw std::runtime_error("forest file: bad size line");
  }
  {
    std::istringstream is(next());
    std::string kw, k1, k2, k3, k4;
    int bs = 0;
    if (!(is >> kw >> k1 >> fo.cfg.max_features >> k2 >> fo.cfg.min_samples_split >> k3 >> bs >>
          k4 >> fo.cfg.seed) ||
        kw != "config")
      throw std::runtime_error("forest file: bad config line");
    fo.cfg.bootstrap = bs != 0;
    fo.cfg.n_trees = n_trees;
  }
  for (int t = 0; t < n_trees; ++t) {
    std::istringstream is(next());
    std::string kw, kn;
    int idx = 0, n_nodes = 0;
    if (!(is >> kw >> idx >> kn >> n_nodes) || kw != "tree" || idx != t)
      throw std::runtime_error("forest file: bad tree header");
    Tree tr;
    tr.nodes.reserve(n_nodes);
    for (int i = 0; i < n_nodes; ++i) {
      std::istringstream ls(next());
      std::string tag;
      ls >> tag;
      TreeNode n;
      if (tag == "L") {
        if (!(ls >> n.majority)) throw std::runtime_error("forest file: bad leaf");
      } else if (tag == "S") {
        std::string thr;
        if (!(ls >> n.feature >> thr >> n.left >> n.right))
          throw std::runtime_error("forest file: bad split");
        n.threshold = std::strtod(thr.c_str(), nullptr);
      } else {
        throw std::runtime_error("forest file: unknown node tag '" + tag + "'");
      }
      tr.nodes.push_back(n);
    }
    fo.trees.push_back(std::move(tr));
  }
  return fo;
}

EvalReport evaluate_joint(const std::vector<int>& predicted, const std::vector<int>& truth) {
  if (predicted.size() != truth.size() || truth.empty())
    throw std::invalid_argument("evaluate_joint: size mismatch");
  EvalReport r;
  r.n = int(truth.size());
  r.confusion_container = Eigen::MatrixXi::Zero(kNumContainers, kNumContainers);
  r.confusion_substance = Eigen::MatrixXi::Zero(kNumSubstances, kNumSubstances);
  int jc = 0, cc = 0, sc = 0;
  for (int i = 0; i < r.n; ++i) {
    int tc = truth[i] / kNumSubstances, ts = truth[i] % kNumSubstances;
    int pc = predicted[i] / kNumSubstances, ps = predicted[i] % kNumSubstances;
    jc += predicted[i] == truth[i];
    cc += pc == tc;
    sc += ps == ts;
    r.confusion_container(tc, pc) += 1;
    r.confusion_substance(ts, ps) += 1;
  }
  r.joint_acc = double(jc) / r.n;
  r.container_acc = double(cc) / r.n;
  r.substance_acc = double(sc) / r.n;
  return r;
}

Eigen::MatrixXd electrode_subset(const Eigen::MatrixXd& X, const std::vector<int>& electrodes) {
  const int block = 2 * signals::kGraspFrames;
  if (X.cols() != signals::kNumElectrodes * block)
    throw std::invalid_argument("electrode_subset: expected full grasp feature matrix");
  if (electrodes.empty()) throw std::invalid_argument("electrode_subset: empty electrode list");
  for (std::size_t i = 0; i < electrodes.size(); ++i) {
    if (electrodes[i] < 1 || electrodes[i] > signals::kNumElectrodes)
      throw std::invalid_argument("electrode_subset: id out of range");
    if (i > 0 && electrodes[i] <= electrodes[i - 1])
      throw std::invalid_argument("electrode_subset: ids must be strictly ascending");
  }
  Eigen::MatrixXd out(X.rows(), Eigen::Index(electrodes.size()) * block);
  for (std::size_t k = 0; k < electrodes.size(); ++k)
    out.middleCols(Eigen::Index(k) * block, block) =
        X.middleCols(Eigen::Index(electrodes[k] - 1) * block, block);
  return out;
}

}  // namespace capflow::classify
