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

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dkgp/curve.hpp"
#include "dkgp/gbt.hpp"
#include "dkgp/population.hpp"
#include "dkgp/subject.hpp"

namespace dkgp {

/// Grid averages of both posteriors plus the observation time: the five
/// inputs of the adaptive shrinkage regressor.
struct ShrinkageFeatures {
  double mean_yp = 0;
  double mean_ys = 0;
  double mean_vp = 0;
  double mean_vs = 0;
  double t_obs = 0;

  std::array<double, 5> to_array() const { return {mean_yp, mean_ys, mean_vp, mean_vs, t_obs}; }
};

inline constexpr std::array<std::string_view, 5> kShrinkageFeatureNames{"mean_yp", "mean_ys", "mean_vp",
                                                                        "mean_vs", "t_obs"};
inline constexpr std::size_t kTobsFeature = 4;

ShrinkageFeatures shrinkage_features(const PosteriorCurve& population, const PosteriorCurve& subject,
                                     double t_obs);

struct AlphaTrainingRow {
  ShrinkageFeatures features;
  double oracle_alpha = 1;
  std::string subject_id;
  std::size_t h = 0;
};

/// Sum over t of (truth_t - (a yp_t + (1 - a) ys_t))^2.
double shrinkage_objective(std::span<const double> truth, std::span<const double> yp,
                           std::span<const double> ys, double alpha);

/// Closed-form minimizer of the objective over [0, 1]. The objective is a
/// convex quadratic in alpha, so clamping the unconstrained root is exact.
/// Identical predictors give 1.
double oracle_alpha(std::span<const double> truth, std::span<const double> yp, std::span<const double> ys);

enum class VarianceMode { Independent, Covariance };

std::string_view to_string(VarianceMode mode);
VarianceMode parse_variance_mode(std::string_view text);

struct CombinedPosterior {
  VectorXd mean;
  VectorXd variance;
};

/// yc = a yp + (1 - a) ys; vc = a^2 vp + (1 - a)^2 vs, plus 2 a (1 - a) rho sqrt(vp vs)
/// in covariance mode.
CombinedPosterior combine_posterior(const VectorXd& yp, const VectorXd& vp, const VectorXd& ys,
                                    const VectorXd& vs, double alpha, VarianceMode mode, double rho = 0);

/// Regular grid 0, step, ... up to last_time, merged with `extra` times.
std::vector<double> trajectory_grid(double last_time, double step, std::span<const double> extra = {});

struct HistoryRange {
  std::size_t min = 2;
  std::size_t max = std::numeric_limits<std::size_t>::max();  // capped at visits - 1
};

struct ShrinkageTrainingOptions {
  HistoryRange histories;
  double grid_step_months = 6;
  TrainConfig subject_config = TrainConfig::subject_defaults();
  int workers = 1;
};

struct AlphaDataset {
  std::vector<AlphaTrainingRow> rows;  // sorted by (subject_id, h)
  std::size_t skipped_subjects = 0;
};

AlphaDataset build_alpha_dataset(const PopulationModel& pop, const Cohort& validation,
                                 const ShrinkageTrainingOptions& options = {});

/// Correlation of the two models' errors at held-out visits, pooled per h.
/// Histories with fewer than 10 pooled points are left out.
std::map<std::size_t, double> estimate_error_correlation(const PopulationModel& pop, const Cohort& validation,
                                                         const ShrinkageTrainingOptions& options = {});

inline constexpr std::size_t kMinCorrelationPoints = 10;

struct AlphaEstimator {
  GbtModel gbt;
  std::map<std::size_t, double> error_correlation_by_h;
  std::vector<std::string> validation_subject_ids;
  std::string population_ref;

  double importance(std::size_t feature) const { return gbt.feature_importance.at(feature); }
  /// Correlation for the nearest available history (ties go to the shorter); 0 if none.
  double correlation_for(std::size_t h) const;
  bool validated_on(std::string_view subject_id) const;
};

AlphaEstimator gbt_fit(const std::vector<AlphaTrainingRow>& rows, const GbtConfig& config = {});
double gbt_predict(const AlphaEstimator& estimator, const ShrinkageFeatures& features);

struct ShrinkageTraining {
  AlphaDataset dataset;
  AlphaEstimator estimator;
};

/// Builds the alpha dataset and the error correlations from one set of
/// subject fits, then fits the regressor.
ShrinkageTraining train_shrinkage(const PopulationModel& pop, const Cohort& validation,
                                  const ShrinkageTrainingOptions& options = {}, const GbtConfig& gbt = {});

enum class AlphaSource { Adaptive, Constant, Deterministic };

std::string_view to_string(AlphaSource source);
AlphaSource parse_alpha_source(std::string_view text);

struct PersonalizeOptions {
  VarianceMode variance_mode = VarianceMode::Covariance;
  AlphaSource alpha_source = AlphaSource::Adaptive;
  double constant_alpha = 1.0;
  TrainConfig subject_config = TrainConfig::subject_defaults();
};

struct Personalization {
  PosteriorCurve curve;
  double alpha = 1;
  double rho = 0;
  ShrinkageFeatures features;
  PosteriorCurve population;
  PosteriorCurve subject;
};

Personalization personalize(const PopulationModel& pop, const AlphaEstimator& estimator,
                            const SubjectRecord& observed, std::span<const double> time_grid,
                            const PersonalizeOptions& options = {});

inline constexpr int kEstimatorFormatVersion = 1;

std::string estimator_to_json(const AlphaEstimator& estimator);
AlphaEstimator estimator_from_json(std::string_view text);
void save_estimator(const AlphaEstimator& estimator, const std::filesystem::path& path);
AlphaEstimator load_estimator(const std::filesystem::path& path);

void write_alpha_dataset_csv(const std::vector<AlphaTrainingRow>& rows, std::ostream& out);

}  // namespace dkgp
