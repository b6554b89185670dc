/*
 * Copyright 2026 The dkgp Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "dkgp/gbt.hpp"

#include <algorithm>
#include <numeric>
#include <string>

#include "dkgp/error.hpp"
#include "dkgp/io_util.hpp"

namespace dkgp {

double RegressionTree::predict(const double* x) const {
  int index = 0;
  while (!nodes[static_cast<std::size_t>(index)].is_leaf()) {
    const TreeNode& node = nodes[static_cast<std::size_t>(index)];
    index = x[node.feature] <= node.threshold ? node.left : node.right;
  }
  return nodes[static_cast<std::size_t>(index)].leaf_value;
}

int RegressionTree::depth() const {
  std::vector<int> level(nodes.size(), 0);
  int deepest = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    if (nodes[i].is_leaf()) continue;
    level[static_cast<std::size_t>(nodes[i].left)] = level[i] + 1;
    level[static_cast<std::size_t>(nodes[i].right)] = level[i] + 1;
    deepest = std::max(deepest, level[i] + 1);
  }
  return deepest;
}

void GbtConfig::validate() const {
  if (rounds < 0) throw Error(ErrorKind::Config, "rounds must be >= 0");
  if (max_depth < 0) throw Error(ErrorKind::Config, "max_depth must be >= 0");
  if (!(learning_rate > 0)) throw Error(ErrorKind::Config, "boosting learning rate must be > 0");
  if (min_leaf < 1) throw Error(ErrorKind::Config, "min_leaf must be >= 1");
}

double GbtModel::predict_raw(const double* x) const {
  double sum = 0;
  for (const auto& tree : trees) sum += tree.predict(x);
  return base_prediction + learning_rate * sum;
}

namespace {

using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Split {
  int feature = -1;
  double threshold = 0;
  double gain = 0;
};

class TreeBuilder {
 public:
  TreeBuilder(const RowMatrixXd& x, const VectorXd& residual, const GbtConfig& config,
              std::vector<double>& importance)
      : x_(x), residual_(residual), config_(config), importance_(importance) {}

  RegressionTree build(std::vector<std::size_t> rows) {
    tree_.nodes.clear();
    grow(std::move(rows), 0);
    return std::move(tree_);
  }

 private:
  int grow(std::vector<std::size_t> rows, int depth) {
    const int index = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    double sum = 0;
    for (std::size_t r : rows) sum += residual_[static_cast<Index>(r)];
    const double mean = sum / static_cast<double>(rows.size());

    const Split split = depth < config_.max_depth ? best_split(rows, sum) : Split{};
    if (split.feature < 0) {
      tree_.nodes[static_cast<std::size_t>(index)].leaf_value = mean;
      return index;
    }
    importance_[static_cast<std::size_t>(split.feature)] += split.gain;
    std::vector<std::size_t> left, right;
    for (std::size_t r : rows) {
      (x_(static_cast<Index>(r), split.feature) <= split.threshold ? left : right).push_back(r);
    }
    const int l = grow(std::move(left), depth + 1);
    const int rnode = grow(std::move(right), depth + 1);
    TreeNode& node = tree_.nodes[static_cast<std::size_t>(index)];
    node.feature = split.feature;
    node.threshold = split.threshold;
    node.left = l;
    node.right = rnode;
    node.leaf_value = mean;
    return index;
  }

  Split best_split(const std::vector<std::size_t>& rows, double total) const {
    const std::size_t n = rows.size();
    Split best;
    if (n < 2 * config_.min_leaf) return best;
    const double parent = total * total / static_cast<double>(n);
    std::vector<std::size_t> order(rows);
    for (Index f = 0; f < x_.cols(); ++f) {
      // Rows arrive in canonical order; stable sorting keeps ties canonical.
      std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return x_(static_cast<Index>(a), f) < x_(static_cast<Index>(b), f);
      });
      double left_sum = 0;
      for (std::size_t i = 0; i + 1 < n; ++i) {
        left_sum += residual_[static_cast<Index>(order[i])];
        const double here = x_(static_cast<Index>(order[i]), f);
        const double next = x_(static_cast<Index>(order[i + 1]), f);
        if (!(here < next)) continue;
        const std::size_t n_left = i + 1;
        const std::size_t n_right = n - n_left;
        if (n_left < config_.min_leaf || n_right < config_.min_leaf) continue;
        const double right_sum = total - left_sum;
        const double gain = left_sum * left_sum / static_cast<double>(n_left) +
                            right_sum * right_sum / static_cast<double>(n_right) - parent;
        if (gain > best.gain) best = {static_cast<int>(f), 0.5 * (here + next), gain};
      }
    }
    // Gains at round-off level are not real structure.
    if (best.gain <= 1e-12 * std::max(1.0, parent)) return Split{};
    return best;
  }

  const RowMatrixXd& x_;
  const VectorXd& residual_;
  const GbtConfig& config_;
  std::vector<double>& importance_;
  RegressionTree tree_;
};

}  // namespace

GbtModel gbt_fit_matrix(const MatrixXd& features, const VectorXd& targets, const GbtConfig& config) {
  config.validate();
  const auto n = static_cast<std::size_t>(features.rows());
  if (targets.size() != features.rows()) throw Error(ErrorKind::Shape, "features and targets differ in length");
  if (n < 2 * config.min_leaf) {
    throw Error(ErrorKind::Shape, "boosting needs at least " + std::to_string(2 * config.min_leaf) + " rows");
  }

  std::vector<std::size_t> canonical(n);
  std::iota(canonical.begin(), canonical.end(), 0);
  std::sort(canonical.begin(), canonical.end(), [&](std::size_t a, std::size_t b) {
    for (Index f = 0; f < features.cols(); ++f) {
      const double fa = features(static_cast<Index>(a), f);
      const double fb = features(static_cast<Index>(b), f);
      if (fa != fb) return fa < fb;
    }
    return targets[static_cast<Index>(a)] < targets[static_cast<Index>(b)];
  });
  RowMatrixXd x(features.rows(), features.cols());
  VectorXd y(targets.size());
  for (std::size_t i = 0; i < n; ++i) {
    x.row(static_cast<Index>(i)) = features.row(static_cast<Index>(canonical[i]));
    y[static_cast<Index>(i)] = targets[static_cast<Index>(canonical[i])];
  }

  GbtModel model;
  model.learning_rate = config.learning_rate;
  model.base_prediction = y.mean();
  model.feature_importance.assign(static_cast<std::size_t>(features.cols()), 0.0);

  VectorXd prediction = VectorXd::Constant(y.size(), model.base_prediction);
  auto mse = [&] { return (y - prediction).squaredNorm() / static_cast<double>(n); };
  model.training_mse.push_back(mse());

  bool all_rows_identical = true;
  for (Index r = 1; r < x.rows() && all_rows_identical; ++r) all_rows_identical = x.row(r) == x.row(0);
  if (all_rows_identical) {
    if ((y.array() != y[0]).any()) {
      model.degenerate = true;
      log_progress("warning: all feature rows are identical; boosting returns the base prediction only");
    }
    return model;
  }

  std::vector<std::size_t> all(n);
  std::iota(all.begin(), all.end(), 0);
  for (int round = 0; round < config.rounds; ++round) {
    const VectorXd residual = y - prediction;
    TreeBuilder builder(x, residual, config, model.feature_importance);
    RegressionTree tree = builder.build(all);
    for (Index r = 0; r < x.rows(); ++r) prediction[r] += config.learning_rate * tree.predict(x.row(r).data());
    model.trees.push_back(std::move(tree));
    model.training_mse.push_back(mse());
  }
  return model;
}

}  // namespace dkgp
