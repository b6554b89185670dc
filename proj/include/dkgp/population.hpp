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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "dkgp/curve.hpp"
#include "dkgp/dataset.hpp"
#include "dkgp/gp.hpp"
#include "dkgp/mlp.hpp"

namespace dkgp {

/// Per-column input standardization (features, covariates, time) and target scaling.
struct NormStats {
  VectorXd input_mean;
  VectorXd input_sd;
  double y_mean = 0;
  double y_sd = 1;

  MatrixXd standardize_inputs(const MatrixXd& raw) const;
  double standardize_y(double y) const { return (y - y_mean) / y_sd; }
  double destandardize_y(double y) const { return y * y_sd + y_mean; }
  double destandardize_var(double v) const { return v * y_sd * y_sd; }
};

struct TrainConfig {
  int epochs = 500;
  double learning_rate = 0.01;
  double weight_decay = 0.01;
  double dropout = 0.2;
  Index latent_dim = 64;
  int hidden_layers = 1;
  std::uint64_t seed = 0;

  /// Subject-level refit defaults: 100 epochs, lr 0.01, weight decay 0.05, no dropout.
  static TrainConfig subject_defaults() {
    TrainConfig c;
    c.epochs = 100;
    c.weight_decay = 0.05;
    c.dropout = 0;
    return c;
  }
  void validate() const;
};

/// Raw network inputs (x, c, t) for one subject at the given times, one row per time.
MatrixXd input_rows(const SubjectRecord& subject, std::span<const double> times);

struct PopulationModel {
  MlpParams<double> mlp;
  GpHyper<double> hyper;
  MatrixXd train_latents;   // eval-mode latents of the standardized training rows
  VectorXd train_targets;   // standardized
  NormStats norm;
  TrainConfig config;
  Index feature_dim = 0;
  Index covariate_dim = 0;
  std::vector<std::string> train_subject_ids;
  std::vector<double> mll_trace;  // train-mode MLL before each update
  double initial_mll = 0;         // eval-mode MLL at initialization
  double final_mll = 0;           // eval-mode MLL after training

  /// Cached factor of the training kernel; filled by prepare().
  GpPredictor<double> predictor;

  void prepare();
  /// Stable identifier derived from the feature map and hyperparameters.
  std::string reference() const;
  /// Eval-mode latents for a subject at the given times.
  MatrixXd latents(const SubjectRecord& subject, std::span<const double> times) const;
  bool trained_on(std::string_view subject_id) const;
};

using EpochCallback = std::function<void(int epoch, double mll)>;

PopulationModel train_population(const Cohort& cohort, const TrainConfig& config,
                                 const EpochCallback& on_epoch = {});

PosteriorCurve predict_population(const PopulationModel& model, const SubjectRecord& subject,
                                  std::span<const double> time_grid);

/// Posterior of `predictor` over the feature map of `pop`, de-standardized.
/// Each distinct grid time is evaluated on its own, so an entry depends only
/// on the subject and its time.
PosteriorCurve predict_curve(const PopulationModel& pop, const GpPredictor<double>& predictor,
                             const SubjectRecord& subject, std::span<const double> time_grid);

inline constexpr int kModelFormatVersion = 1;

std::string model_to_json(const PopulationModel& model);
PopulationModel model_from_json(std::string_view text);
void save_model(const PopulationModel& model, const std::filesystem::path& path);
PopulationModel load_model(const std::filesystem::path& path);

}  // namespace dkgp
