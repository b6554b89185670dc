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
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include "dkgp/numerics.hpp"

namespace dkgp {

struct Visit {
  double time_months = 0;  // months since the subject's first visit
  double value = 0;        // biomarker value, raw units
};

enum class ProgressionLabel { Stable, SlowProgressor, FastProgressor, Unknown };

std::string_view to_string(ProgressionLabel label);
ProgressionLabel parse_label(std::string_view text);

struct SubjectRecord {
  std::string subject_id;
  VectorXd baseline_features;
  VectorXd covariates;
  std::vector<Visit> visits;
  ProgressionLabel progression_label = ProgressionLabel::Unknown;

  std::size_t num_visits() const { return visits.size(); }
  /// Time of the last visit; T_obs when this record is an observed history.
  double last_time() const { return visits.empty() ? 0.0 : visits.back().time_months; }

  /// Throws unless visits are strictly increasing from 0 and all values finite.
  void validate() const;
};

struct Cohort {
  std::vector<SubjectRecord> subjects;
  Index feature_dim = 0;
  Index covariate_dim = 0;

  std::size_t size() const { return subjects.size(); }
  std::size_t total_visits() const;
  const SubjectRecord* find(std::string_view subject_id) const;
  void validate() const;
};

Cohort load_cohort_csv(const std::filesystem::path& path);
Cohort read_cohort_csv(std::istream& in);
void save_cohort_csv(const Cohort& cohort, const std::filesystem::path& path);
void write_cohort_csv(const Cohort& cohort, std::ostream& out);

struct SynthConfig {
  std::size_t n_subjects = 200;
  Index feature_dim = 20;
  int min_visits = 4;
  int max_visits = 8;
  double min_spacing_months = 6;
  double max_spacing_months = 18;
  double mix_stable = 0.5;
  double mix_slow = 0.3;
  double mix_fast = 0.2;
  double noise_sd = 0.05;
  double feature_noise_sd = 1.0;  // sd of the noise on every baseline feature
  std::uint64_t seed = 0;

  void validate() const;
};

/// Number of covariate columns the generator writes: age (decades from 70),
/// sex, baseline diagnosis (ordinal 0/1/2), risk-allele count, education flag.
inline constexpr Index kSynthCovariateDim = 5;

/// Baseline intercepts are N(0, kSynthInterceptSd^2).
inline constexpr double kSynthInterceptSd = 0.5;

/// Noiseless template for a fast progressor's decline: a logistic ramp in
/// months, anchored so the decline is 0 at month 0 and `amplitude` at month 120.
double fast_decline(double t_months, double amplitude, double midpoint_months, double width_months);

Cohort generate_synthetic_cohort(const SynthConfig& config);

struct CohortSplit {
  Cohort train;
  Cohort validation;
  Cohort test;
};

/// Partition by subject. Validation and test sizes are rounded to nearest,
/// the remainder goes to train.
CohortSplit split_cohort(const Cohort& cohort, double train_fraction, double validation_fraction,
                         double test_fraction, std::uint64_t seed);

struct HistorySplit {
  SubjectRecord observed;
  SubjectRecord heldout;
};

HistorySplit truncate_history(const SubjectRecord& subject, std::size_t h);

/// Subsets of a cohort that keep its dimensions.
Cohort with_subjects(const Cohort& like, std::vector<SubjectRecord> subjects);

}  // namespace dkgp
