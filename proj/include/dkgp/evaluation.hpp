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
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dkgp/curve.hpp"
#include "dkgp/dataset.hpp"
#include "dkgp/shrinkage.hpp"

namespace dkgp {

inline constexpr double kTimeBucketMonths = 6.0;

struct CurveMetrics {
  double mae = 0;
  double coverage = 0;             // fraction of |error| <= 2 sd
  double mean_interval_width = 0;  // 4 sd averaged
  std::size_t n_heldout = 0;
  std::vector<double> abs_errors;
  std::vector<bool> covered;
  std::vector<int> time_buckets;  // floor((t - t_obs) / 6 months) * 6
};

/// Held-out visit times must be grid points of the curve exactly.
CurveMetrics evaluate_curve(const PosteriorCurve& curve, const SubjectRecord& heldout, double t_obs);

struct RecordEval {
  std::string subject_id;
  std::size_t h = 0;
  double alpha = 1;
  double mae = 0;
  double coverage = 0;
  double width = 0;
  double coverage_independent = 0;
  double coverage_covariance = 0;
  std::size_t n_heldout = 0;
  double t_obs = 0;
  double mean_yp = 0;
  double mean_ys = 0;
};

struct SubjectEval {
  std::string subject_id;
  double mae = 0;
  std::size_t n_heldout = 0;
  std::map<std::size_t, double> alpha_by_h;
};

struct Aggregate {
  std::size_t n_subjects = 0;
  double mean_mae = 0;
  double mae_ci95_low = 0;
  double mae_ci95_high = 0;
  double mean_coverage = 0;  // under the report's variance mode
  double mean_interval_width = 0;
  double mean_coverage_independent = 0;
  double mean_coverage_covariance = 0;
};

struct AlphaSummary {
  double mean = 0;
  double sd = 0;
  std::size_t count = 0;
};

struct EvalReport {
  std::string variance_mode;
  std::string alpha_mode;
  double constant_alpha = 1;
  std::vector<std::size_t> histories;
  std::vector<SubjectEval> per_subject;  // sorted by subject_id
  std::vector<RecordEval> records;       // sorted by (subject_id, h)
  Aggregate aggregate;
  std::map<int, double> ae_by_time_bucket;
  std::map<int, double> coverage_by_time_bucket;
  std::map<int, std::size_t> count_by_time_bucket;
  std::map<std::size_t, AlphaSummary> alpha_by_h;
  std::map<std::string, Aggregate> strata;
  std::optional<double> alpha_tobs_correlation_large_dev;
  double large_dev_threshold = 0;
  std::size_t skipped_subjects = 0;
};

struct BenchmarkConfig {
  std::vector<std::size_t> histories{4};
  PersonalizeOptions personalize;
  double grid_step_months = 6;
  int bootstrap_resamples = 1000;
  std::uint64_t seed = 0;
  std::vector<Index> strata_covariates;
  bool stratify_by_label = true;
  int workers = 1;
};

EvalReport run_benchmark(const PopulationModel& pop, const AlphaEstimator& estimator, const Cohort& test,
                         const BenchmarkConfig& config = {});

/// Percentile bootstrap over subjects for the mean of `values`.
std::pair<double, double> bootstrap_mean_ci95(const std::vector<double>& values, int resamples, std::uint64_t seed);

struct AlphaRecord {
  double t_obs = 0;
  double alpha = 0;
  double mean_yp = 0;
  double mean_ys = 0;
};

inline constexpr std::size_t kMinAlphaRecords = 20;
inline constexpr double kLargeDeviationPercentile = 75.0;

struct AlphaCorrelation {
  double correlation = 0;
  double threshold = 0;
  std::size_t selected = 0;
};

/// Pearson(t_obs, alpha) over records whose |mean_yp - mean_ys| is at or above
/// the 75th percentile. Empty when there are fewer than 20 records.
std::optional<AlphaCorrelation> alpha_correlation_analysis(const std::vector<AlphaRecord>& records);

std::string report_to_json(const EvalReport& report);
void write_report_csv(const EvalReport& report, std::ostream& out);

}  // namespace dkgp
