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

#include "dkgp/evaluation.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

#include "dkgp/error.hpp"
#include "dkgp/parallel.hpp"
#include "dkgp/rng.hpp"
#include "dkgp/stats.hpp"

namespace dkgp {

using json = nlohmann::json;

CurveMetrics evaluate_curve(const PosteriorCurve& curve, const SubjectRecord& heldout, double t_obs) {
  CurveMetrics m;
  if (heldout.visits.empty()) return m;
  double abs_sum = 0, width_sum = 0;
  std::size_t covered = 0;
  for (const auto& visit : heldout.visits) {
    Index at = -1;
    for (Index i = 0; i < curve.size(); ++i) {
      if (curve.times[i] == visit.time_months) {
        at = i;
        break;
      }
    }
    if (at < 0) {
      char buffer[64];
      std::snprintf(buffer, sizeof buffer, "%g", visit.time_months);
      throw Error(ErrorKind::GridCoverage, "held-out month " + std::string(buffer) + " of " +
                                               heldout.subject_id + " is not on the curve grid");
    }
    const double err = std::abs(curve.mean[at] - visit.value);
    const double sd = std::sqrt(std::max(0.0, curve.variance[at]));
    const bool inside = err <= 2.0 * sd;
    abs_sum += err;
    width_sum += 4.0 * sd;
    covered += inside ? 1 : 0;
    m.abs_errors.push_back(err);
    m.covered.push_back(inside);
    m.time_buckets.push_back(static_cast<int>(std::floor((visit.time_months - t_obs) / kTimeBucketMonths)) *
                             static_cast<int>(kTimeBucketMonths));
  }
  const auto n = static_cast<double>(heldout.visits.size());
  m.n_heldout = heldout.visits.size();
  m.mae = abs_sum / n;
  m.coverage = static_cast<double>(covered) / n;
  m.mean_interval_width = width_sum / n;
  return m;
}

std::pair<double, double> bootstrap_mean_ci95(const std::vector<double>& values, int resamples, std::uint64_t seed) {
  if (values.empty()) return {0.0, 0.0};
  if (resamples <= 0) {
    const double m = mean_of(values);
    return {m, m};
  }
  Rng rng(seed);
  std::vector<double> means;
  means.reserve(static_cast<std::size_t>(resamples));
  for (int b = 0; b < resamples; ++b) {
    double s = 0;
    for (std::size_t i = 0; i < values.size(); ++i) s += values[rng.below(values.size())];
    means.push_back(s / static_cast<double>(values.size()));
  }
  return {percentile(means, 2.5), percentile(means, 97.5)};
}

std::optional<AlphaCorrelation> alpha_correlation_analysis(const std::vector<AlphaRecord>& records) {
  if (records.size() < kMinAlphaRecords) return std::nullopt;
  std::vector<double> deviation;
  for (const auto& r : records) deviation.push_back(std::abs(r.mean_yp - r.mean_ys));
  AlphaCorrelation out;
  out.threshold = percentile(deviation, kLargeDeviationPercentile);
  std::vector<double> t_obs, alpha;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (deviation[i] < out.threshold) continue;
    t_obs.push_back(records[i].t_obs);
    alpha.push_back(records[i].alpha);
  }
  out.selected = t_obs.size();
  out.correlation = pearson(t_obs, alpha);
  return out;
}

namespace {

struct SubjectOutcome {
  std::vector<RecordEval> records;
  std::vector<int> buckets;
  std::vector<double> abs_errors;
  std::vector<bool> covered;
};

Aggregate aggregate_of(const std::vector<const SubjectEval*>& subjects, const std::vector<const RecordEval*>& records,
                       int resamples, std::uint64_t seed) {
  Aggregate a;
  a.n_subjects = subjects.size();
  std::vector<double> maes;
  for (const auto* s : subjects) maes.push_back(s->mae);
  a.mean_mae = mean_of(maes);
  std::tie(a.mae_ci95_low, a.mae_ci95_high) = bootstrap_mean_ci95(maes, resamples, seed);
  double coverage = 0, width = 0, independent = 0, covariance = 0;
  for (const auto* r : records) {
    coverage += r->coverage;
    width += r->width;
    independent += r->coverage_independent;
    covariance += r->coverage_covariance;
  }
  if (!records.empty()) {
    const auto n = static_cast<double>(records.size());
    a.mean_coverage = coverage / n;
    a.mean_interval_width = width / n;
    a.mean_coverage_independent = independent / n;
    a.mean_coverage_covariance = covariance / n;
  }
  return a;
}

std::string format_value(double v) {
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "%g", v);
  return buffer;
}

}  // namespace

EvalReport run_benchmark(const PopulationModel& pop, const AlphaEstimator& estimator, const Cohort& test,
                         const BenchmarkConfig& config) {
  for (const auto& s : test.subjects) {
    if (pop.trained_on(s.subject_id) || estimator.validated_on(s.subject_id)) {
      throw Error(ErrorKind::Leakage, "test subject " + s.subject_id + " was seen during training or validation");
    }
  }
  if (config.histories.empty()) throw Error(ErrorKind::Benchmark, "no history lengths requested");

  std::vector<SubjectOutcome> outcomes(test.size());
  parallel_for(test.size(), config.workers, [&](std::size_t i) {
    const SubjectRecord& subject = test.subjects[i];
    std::vector<double> visit_times;
    for (const auto& v : subject.visits) visit_times.push_back(v.time_months);
    const std::vector<double> grid = trajectory_grid(subject.last_time(), config.grid_step_months, visit_times);
    for (std::size_t h : config.histories) {
      if (h < 1 || subject.visits.size() <= h) continue;
      const HistorySplit split = truncate_history(subject, h);
      const Personalization p = personalize(pop, estimator, split.observed, grid, config.personalize);
      const CurveMetrics m = evaluate_curve(p.curve, split.heldout, split.observed.last_time());
      RecordEval r;
      r.subject_id = subject.subject_id;
      r.h = h;
      r.alpha = p.alpha;
      r.mae = m.mae;
      r.coverage = m.coverage;
      r.width = m.mean_interval_width;
      r.n_heldout = m.n_heldout;
      r.t_obs = split.observed.last_time();
      for (const VarianceMode mode : {VarianceMode::Independent, VarianceMode::Covariance}) {
        const double rho = mode == VarianceMode::Covariance ? estimator.correlation_for(h) : 0.0;
        const CombinedPosterior alt = combine_posterior(p.population.mean, p.population.variance, p.subject.mean,
                                                        p.subject.variance, p.alpha, mode, rho);
        const PosteriorCurve curve{p.curve.times, alt.mean, alt.variance};
        const double coverage = evaluate_curve(curve, split.heldout, r.t_obs).coverage;
        (mode == VarianceMode::Independent ? r.coverage_independent : r.coverage_covariance) = coverage;
      }
      r.mean_yp = p.features.mean_yp;
      r.mean_ys = p.features.mean_ys;
      outcomes[i].records.push_back(r);
      outcomes[i].buckets.insert(outcomes[i].buckets.end(), m.time_buckets.begin(), m.time_buckets.end());
      outcomes[i].abs_errors.insert(outcomes[i].abs_errors.end(), m.abs_errors.begin(), m.abs_errors.end());
      outcomes[i].covered.insert(outcomes[i].covered.end(), m.covered.begin(), m.covered.end());
    }
  });

  EvalReport report;
  report.variance_mode = std::string(to_string(config.personalize.variance_mode));
  report.alpha_mode = std::string(to_string(config.personalize.alpha_source));
  report.constant_alpha = config.personalize.constant_alpha;
  report.histories = config.histories;

  std::vector<std::size_t> order(test.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return test.subjects[a].subject_id < test.subjects[b].subject_id;
  });

  std::map<int, std::pair<double, std::size_t>> ae_buckets;
  std::map<int, std::size_t> covered_buckets;
  std::vector<std::size_t> evaluated_index;  // test index per per_subject entry
  for (std::size_t i : order) {
    const SubjectOutcome& o = outcomes[i];
    if (o.records.empty()) {
      ++report.skipped_subjects;
      continue;
    }
    SubjectEval s;
    s.subject_id = test.subjects[i].subject_id;
    double mae_sum = 0;
    for (const auto& r : o.records) {
      mae_sum += r.mae;
      s.n_heldout += r.n_heldout;
      s.alpha_by_h[r.h] = r.alpha;
      report.records.push_back(r);
    }
    s.mae = mae_sum / static_cast<double>(o.records.size());
    report.per_subject.push_back(std::move(s));
    evaluated_index.push_back(i);
    for (std::size_t k = 0; k < o.buckets.size(); ++k) {
      auto& [sum, count] = ae_buckets[o.buckets[k]];
      sum += o.abs_errors[k];
      ++count;
      covered_buckets[o.buckets[k]] += o.covered[k] ? 1 : 0;
    }
  }
  if (report.per_subject.empty()) {
    throw Error(ErrorKind::Benchmark, "no test subject has more visits than the requested history");
  }

  for (const auto& [bucket, sc] : ae_buckets) {
    report.ae_by_time_bucket[bucket] = sc.first / static_cast<double>(sc.second);
    report.coverage_by_time_bucket[bucket] =
        static_cast<double>(covered_buckets[bucket]) / static_cast<double>(sc.second);
    report.count_by_time_bucket[bucket] = sc.second;
  }

  std::vector<const SubjectEval*> all_subjects;
  for (const auto& s : report.per_subject) all_subjects.push_back(&s);
  std::vector<const RecordEval*> all_records;
  for (const auto& r : report.records) all_records.push_back(&r);
  report.aggregate = aggregate_of(all_subjects, all_records, config.bootstrap_resamples, config.seed);

  std::map<std::size_t, std::vector<double>> alphas;
  std::vector<AlphaRecord> alpha_records;
  for (const auto& r : report.records) {
    alphas[r.h].push_back(r.alpha);
    alpha_records.push_back({r.t_obs, r.alpha, r.mean_yp, r.mean_ys});
  }
  for (const auto& [h, values] : alphas) {
    AlphaSummary summary;
    summary.count = values.size();
    summary.mean = mean_of(values);
    double ss = 0;
    for (double v : values) ss += (v - summary.mean) * (v - summary.mean);
    summary.sd = values.size() > 1 ? std::sqrt(ss / static_cast<double>(values.size() - 1)) : 0.0;
    report.alpha_by_h[h] = summary;
  }
  if (const auto corr = alpha_correlation_analysis(alpha_records)) {
    report.alpha_tobs_correlation_large_dev = corr->correlation;
    report.large_dev_threshold = corr->threshold;
  }

  // Strata: chosen covariate columns by value, and progression label.
  std::map<std::string, std::vector<std::size_t>> strata_members;  // key -> per_subject indices
  for (std::size_t k = 0; k < report.per_subject.size(); ++k) {
    const SubjectRecord& subject = test.subjects[evaluated_index[k]];
    for (Index c : config.strata_covariates) {
      if (c < 0 || c >= subject.covariates.size()) {
        throw Error(ErrorKind::Benchmark, "strata covariate c_" + std::to_string(c) + " does not exist");
      }
      strata_members["c_" + std::to_string(c) + "=" + format_value(subject.covariates[c])].push_back(k);
    }
    if (config.stratify_by_label) {
      strata_members["label=" + std::string(to_string(subject.progression_label))].push_back(k);
    }
  }
  for (const auto& [key, members] : strata_members) {
    std::vector<const SubjectEval*> subjects;
    std::vector<const RecordEval*> records;
    for (std::size_t k : members) {
      subjects.push_back(&report.per_subject[k]);
      for (const auto& r : report.records)
        if (r.subject_id == report.per_subject[k].subject_id) records.push_back(&r);
    }
    report.strata[key] = aggregate_of(subjects, records, config.bootstrap_resamples, config.seed);
  }
  return report;
}

namespace {

json aggregate_json(const Aggregate& a) {
  return {{"n_subjects", a.n_subjects},
          {"mean_mae", a.mean_mae},
          {"mae_ci95", {a.mae_ci95_low, a.mae_ci95_high}},
          {"mean_coverage", a.mean_coverage},
          {"mean_interval_width", a.mean_interval_width},
          {"mean_coverage_independent", a.mean_coverage_independent},
          {"mean_coverage_covariance", a.mean_coverage_covariance}};
}

}  // namespace

std::string report_to_json(const EvalReport& report) {
  json j;
  j["format"] = "dkgp-eval-report";
  j["version"] = 1;
  j["variance_mode"] = report.variance_mode;
  j["alpha_mode"] = report.alpha_mode;
  if (report.alpha_mode == "constant") j["constant_alpha"] = report.constant_alpha;
  j["histories"] = report.histories;
  j["aggregate"] = aggregate_json(report.aggregate);
  j["skipped_subjects"] = report.skipped_subjects;

  json per_subject = json::object();
  for (const auto& s : report.per_subject) {
    json alpha = json::object();
    for (const auto& [h, a] : s.alpha_by_h) alpha[std::to_string(h)] = a;
    per_subject[s.subject_id] = {{"mae", s.mae}, {"n_heldout", s.n_heldout}, {"alpha_by_h", alpha}};
  }
  j["per_subject"] = per_subject;

  json buckets = json::array();
  for (const auto& [bucket, ae] : report.ae_by_time_bucket) {
    buckets.push_back({{"months_from_last_observation", bucket},
                       {"mean_ae", ae},
                       {"coverage", report.coverage_by_time_bucket.at(bucket)},
                       {"count", report.count_by_time_bucket.at(bucket)}});
  }
  j["ae_by_time_bucket"] = buckets;

  json alpha_by_h = json::object();
  for (const auto& [h, s] : report.alpha_by_h) {
    alpha_by_h[std::to_string(h)] = {{"mean", s.mean}, {"sd", s.sd}, {"count", s.count}};
  }
  j["alpha_by_h"] = alpha_by_h;

  json strata = json::object();
  for (const auto& [key, a] : report.strata) strata[key] = aggregate_json(a);
  j["strata"] = strata;

  if (report.alpha_tobs_correlation_large_dev) {
    j["alpha_tobs_correlation_large_dev"] = *report.alpha_tobs_correlation_large_dev;
  } else {
    j["alpha_tobs_correlation_large_dev"] = nullptr;  // analysis skipped: too few records
  }
  j["large_dev_threshold"] = report.large_dev_threshold;
  j["large_dev_percentile"] = kLargeDeviationPercentile;
  return j.dump(2);
}

void write_report_csv(const EvalReport& report, std::ostream& out) {
  out << "subject_id,h,alpha,mae,coverage,width\n";
  char buffer[160];
  for (const auto& r : report.records) {
    std::snprintf(buffer, sizeof buffer, ",%zu,%.9g,%.9g,%.9g,%.9g\n", r.h, r.alpha, r.mae, r.coverage, r.width);
    out << r.subject_id << buffer;
  }
}

}  // namespace dkgp
