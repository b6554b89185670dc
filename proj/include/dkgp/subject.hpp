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

#include <span>
#include <string>
#include <vector>

#include "dkgp/curve.hpp"
#include "dkgp/population.hpp"

namespace dkgp {

/// Lower bound on the subject GP noise variance (standardized units). With
/// baseline features and covariates fixed per subject, the subject GP is a
/// 1-D GP in warped time, and near-duplicate visit times need this floor.
inline constexpr double kSubjectNoiseFloor = 1e-5;

struct SubjectModel {
  std::string population_ref;
  GpHyper<double> hyper;
  MatrixXd observed_latents;
  VectorXd observed_targets;  // standardized with the population statistics
  double t_obs_months = 0;
  std::vector<double> mll_trace;
  GpPredictor<double> predictor;

  void prepare();
};

/// Refits only the three GP hyperparameters on the subject's observed visits,
/// starting from the population values; the feature map stays frozen.
SubjectModel fit_subject(const PopulationModel& pop, const SubjectRecord& observed,
                         const TrainConfig& config = TrainConfig::subject_defaults());

PosteriorCurve predict_subject(const SubjectModel& model, const PopulationModel& pop,
                               const SubjectRecord& subject, std::span<const double> time_grid);

/// Debug dump in the same JSON conventions as the population model file.
std::string subject_model_to_json(const SubjectModel& model);

}  // namespace dkgp
