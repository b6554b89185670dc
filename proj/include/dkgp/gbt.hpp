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

#pragma once

#include <cstddef>
#include <vector>

#include "dkgp/numerics.hpp"

namespace dkgp {

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0;
  int left = -1;     // taken when x[feature] <= threshold
  int right = -1;
  double leaf_value = 0;

  bool is_leaf() const { return feature < 0; }
};

struct RegressionTree {
  std::vector<TreeNode> nodes;  // nodes[0] is the root

  double predict(const double* x) const;
  int depth() const;
};

struct GbtConfig {
  int rounds = 200;
  int max_depth = 3;
  double learning_rate = 0.05;
  std::size_t min_leaf = 5;

  void validate() const;
};

/// Squared-error gradient boosting over exact greedy variance-reduction splits.
struct GbtModel {
  std::vector<RegressionTree> trees;
  double learning_rate = 0.05;
  double base_prediction = 0;
  std::vector<double> feature_importance;  // cumulative split gain per feature
  std::vector<double> training_mse;        // after base (index 0) and after each round
  bool degenerate = false;

  /// base + lr * sum of tree outputs, unclamped.
  double predict_raw(const double* x) const;
};

/// Rows are samples. Fitting runs on a canonical (lexicographic) row order, so
/// the result does not depend on the order rows are supplied in; split ties go
/// to the lowest feature index, then the lowest threshold.
GbtModel gbt_fit_matrix(const MatrixXd& features, const VectorXd& targets, const GbtConfig& config);

}  // namespace dkgp
