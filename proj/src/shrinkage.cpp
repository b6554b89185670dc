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

#include "dkgp/shrinkage.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <set>

#include "dkgp/error.hpp"
#include "dkgp/io_util.hpp"
#include "dkgp/parallel.hpp"
#include "dkgp/stats.hpp"

namespace dkgp {

using json = nlohmann::json;

ShrinkageFeatures shrinkage_features(const PosteriorCurve& population, const PosteriorCurve& subject,
                                     double t_obs) {
  if (population.size() != subject.size() || population.empty()) {
    throw Error(ErrorKind::Shape, "shrinkage features need two nonempty curves on the same grid");
  }
  return {population.mean.mean(), subject.mean.mean(), population.variance.mean(), subject.variance.mean(),
          t_obs};
}

namespace {

void require_same_length(std::span<const double> a, std::span<const double> b, std::span<const double> c) {
  if (a.size() != b.size() || a.size() != c.size() || a.empty()) {
    throw Error(ErrorKind::Shape, "shrinkage inputs must be nonempty and of equal length");
  }
}

std::span<const double> as_span(const VectorXd& v) {
  return {v.data(), static_cast<std::size_t>(v.size())};
}

}  // namespace

double shrinkage_objective(std::span<const double> truth, std::span<const double> yp,
                           std::span<const double> ys, double alpha) {
  require_same_length(truth, yp, ys);
  double j = 0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    const double r = truth[t] - (alpha * yp[t] + (1.0 - alpha) * ys[t]);
    j += r * r;
  }
  return j;
}

double oracle_alpha(std::span<const double> truth, std::span<const double> yp, std::span<const double> ys) {
  require_same_length(truth, yp, ys);
  double numerator = 0, denominator = 0;
  for (std::size_t t = 0; t < truth.size(); ++t) {
    const double gap = yp[t] - ys[t];
    numerator += (truth[t] - ys[t]) * gap;
    denominator += gap * gap;
  }
  if (denominator == 0) return 1.0;
  return std::clamp(numerator / denominator, 0.0, 1.0);
}

std::string_view to_string(VarianceMode mode) {
  return mode == VarianceMode::Independent ? "independent" : "covariance";
}

VarianceMode parse_variance_mode(std::string_view text) {
  if (text == "independent") return VarianceMode::Independent;
  if (text == "covariance") return VarianceMode::Covariance;
  throw Error(ErrorKind::Parameter, "unknown variance mode '" + std::string(text) + "'");
}

std::string_view to_string(AlphaSource source) {
  switch (source) {
    case AlphaSource::Adaptive: return "adaptive";
    case AlphaSource::Constant: return "constant";
    case AlphaSource::Deterministic: return "deterministic";
  }
  return "adaptive";
}

AlphaSource parse_alpha_source(std::string_view text) {
  if (text == "adaptive") return AlphaSource::Adaptive;
  if (text == "constant") return AlphaSource::Constant;
  if (text == "deterministic") return AlphaSource::Deterministic;
  throw Error(ErrorKind::Parameter, "unknown alpha mode '" + std::string(text) + "'");
}

CombinedPosterior combine_posterior(const VectorXd& yp, const VectorXd& vp, const VectorXd& ys,
                                    const VectorXd& vs, double alpha, VarianceMode mode, double rho) {
  if (yp.size() != vp.size() || yp.size() != ys.size() || yp.size() != vs.size()) {
    throw Error(ErrorKind::Shape, "posterior vectors differ in length");
  }
  if (!(alpha >= 0 && alpha <= 1)) throw Error(ErrorKind::Parameter, "alpha must lie in [0, 1]");
  if (!(rho >= -1 && rho <= 1)) throw Error(ErrorKind::Parameter, "correlation must lie in [-1, 1]");
  if ((vp.array() < 0).any() || (vs.array() < 0).any()) {
    throw Error(ErrorKind::Parameter, "variances must be non-negative");
  }
  const double beta = 1.0 - alpha;
  CombinedPosterior out;
  out.mean = alpha * yp + beta * ys;
  out.variance = alpha * alpha * vp + beta * beta * vs;
  if (mode == VarianceMode::Covariance) {
    out.variance.array() += 2.0 * alpha * beta * rho * (vp.array() * vs.array()).sqrt();
    out.variance = out.variance.cwiseMax(0.0);
  }
  return out;
}

std::vector<double> trajectory_grid(double last_time, double step, std::span<const double> extra) {
  if (!(step > 0)) throw Error(ErrorKind::Parameter, "grid step must be positive");
  std::vector<double> grid;
  for (int k = 0;; ++k) {
    const double t = step * k;
    if (t > last_time + 1e-9) break;
    grid.push_back(t);
  }
  grid.insert(grid.end(), extra.begin(), extra.end());
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());
  return grid;
}

double AlphaEstimator::correlation_for(std::size_t h) const {
  if (error_correlation_by_h.empty()) return 0.0;
  double best = 0;
  std::size_t best_gap = std::numeric_limits<std::size_t>::max();
  for (const auto& [key, rho] : error_correlation_by_h) {
    const std::size_t gap = key > h ? key - h : h - key;
    if (gap < best_gap) {
      best_gap = gap;
      best = rho;
    }
  }
  return best;
}

bool AlphaEstimator::validated_on(std::string_view subject_id) const {
  return std::find(validation_subject_ids.begin(), validation_subject_ids.end(), subject_id) !=
         validation_subject_ids.end();
}

namespace {

struct HistoryOutcome {
  std::string subject_id;
  std::size_t h = 0;
  ShrinkageFeatures features;
  double oracle = 1;
  std::vector<double> error_population;  // at held-out visits
  std::vector<double> error_subject;
};

struct Sweep {
  std::vector<HistoryOutcome> outcomes;
  std::size_t skipped = 0;
};

std::vector<Index> grid_positions(const std::vector<double>& grid, const std::vector<double>& times) {
  std::vector<Index> positions;
  for (double t : times) {
    const auto it = std::lower_bound(grid.begin(), grid.end(), t);
    if (it == grid.end() || *it != t) throw Error(ErrorKind::GridCoverage, "visit time missing from grid");
    positions.push_back(static_cast<Index>(it - grid.begin()));
  }
  return positions;
}

Sweep sweep_histories(const PopulationModel& pop, const Cohort& validation,
                      const ShrinkageTrainingOptions& options) {
  for (const auto& s : validation.subjects) {
    if (pop.trained_on(s.subject_id)) {
      throw Error(ErrorKind::Leakage, "validation subject " + s.subject_id + " was used to train the population model");
    }
  }
  const std::size_t h_min = std::max<std::size_t>(1, options.histories.min);
  std::vector<std::vector<HistoryOutcome>> per_subject(validation.size());
  std::vector<char> skipped(validation.size(), 0);

  parallel_for(validation.size(), options.workers, [&](std::size_t i) {
    const SubjectRecord& subject = validation.subjects[i];
    const std::size_t n = subject.visits.size();
    if (n < h_min + 1) {
      skipped[i] = 1;
      return;
    }
    std::vector<double> visit_times, truth;
    for (const auto& v : subject.visits) {
      visit_times.push_back(v.time_months);
      truth.push_back(v.value);
    }
    const std::vector<double> grid = trajectory_grid(subject.last_time(), options.grid_step_months, visit_times);
    const std::vector<Index> at_visit = grid_positions(grid, visit_times);
    const PosteriorCurve pop_curve = predict_population(pop, subject, grid);

    const std::size_t h_max = std::min(options.histories.max, n - 1);
    for (std::size_t h = h_min; h <= h_max; ++h) {
      const HistorySplit split = truncate_history(subject, h);
      const SubjectModel fitted = fit_subject(pop, split.observed, options.subject_config);
      const PosteriorCurve subj_curve = predict_subject(fitted, pop, subject, grid);

      HistoryOutcome out;
      out.subject_id = subject.subject_id;
      out.h = h;
      out.features = shrinkage_features(pop_curve, subj_curve, split.observed.last_time());
      std::vector<double> yp, ys;
      for (std::size_t v = 0; v < n; ++v) {
        yp.push_back(pop_curve.mean[at_visit[v]]);
        ys.push_back(subj_curve.mean[at_visit[v]]);
        if (v >= h) {
          out.error_population.push_back(yp.back() - truth[v]);
          out.error_subject.push_back(ys.back() - truth[v]);
        }
      }
      out.oracle = oracle_alpha(truth, yp, ys);
      per_subject[i].push_back(std::move(out));
    }
  });

  Sweep sweep;
  for (std::size_t i = 0; i < per_subject.size(); ++i) {
    sweep.skipped += static_cast<std::size_t>(skipped[i]);
    for (auto& o : per_subject[i]) sweep.outcomes.push_back(std::move(o));
  }
  std::sort(sweep.outcomes.begin(), sweep.outcomes.end(), [](const HistoryOutcome& a, const HistoryOutcome& b) {
    return a.subject_id != b.subject_id ? a.subject_id < b.subject_id : a.h < b.h;
  });
  if (sweep.skipped > 0) {
    log_progress("alpha dataset: skipped " + std::to_string(sweep.skipped) + " subjects with too few visits");
  }
  return sweep;
}

std::vector<AlphaTrainingRow> rows_from(const Sweep& sweep) {
  std::vector<AlphaTrainingRow> rows;
  rows.reserve(sweep.outcomes.size());
  for (const auto& o : sweep.outcomes) rows.push_back({o.features, o.oracle, o.subject_id, o.h});
  return rows;
}

std::map<std::size_t, double> correlations_from(const Sweep& sweep) {
  std::map<std::size_t, std::pair<std::vector<double>, std::vector<double>>> pooled;
  for (const auto& o : sweep.outcomes) {
    auto& [ep, es] = pooled[o.h];
    ep.insert(ep.end(), o.error_population.begin(), o.error_population.end());
    es.insert(es.end(), o.error_subject.begin(), o.error_subject.end());
  }
  std::map<std::size_t, double> out;
  for (const auto& [h, errors] : pooled) {
    if (errors.first.size() < kMinCorrelationPoints) continue;
    if (errors.first == errors.second) {
      out[h] = 1.0;
      continue;
    }
    out[h] = pearson(errors.first, errors.second);
  }
  return out;
}

}  // namespace

AlphaDataset build_alpha_dataset(const PopulationModel& pop, const Cohort& validation,
                                 const ShrinkageTrainingOptions& options) {
  const Sweep sweep = sweep_histories(pop, validation, options);
  return {rows_from(sweep), sweep.skipped};
}

std::map<std::size_t, double> estimate_error_correlation(const PopulationModel& pop, const Cohort& validation,
                                                         const ShrinkageTrainingOptions& options) {
  return correlations_from(sweep_histories(pop, validation, options));
}

AlphaEstimator gbt_fit(const std::vector<AlphaTrainingRow>& rows, const GbtConfig& config) {
  MatrixXd x(static_cast<Index>(rows.size()), 5);
  VectorXd y(static_cast<Index>(rows.size()));
  std::set<std::string> ids;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto f = rows[i].features.to_array();
    for (Index k = 0; k < 5; ++k) x(static_cast<Index>(i), k) = f[static_cast<std::size_t>(k)];
    y[static_cast<Index>(i)] = rows[i].oracle_alpha;
    ids.insert(rows[i].subject_id);
  }
  AlphaEstimator est;
  est.gbt = gbt_fit_matrix(x, y, config);
  est.validation_subject_ids.assign(ids.begin(), ids.end());
  return est;
}

double gbt_predict(const AlphaEstimator& estimator, const ShrinkageFeatures& features) {
  const auto f = features.to_array();
  return std::clamp(estimator.gbt.predict_raw(f.data()), 0.0, 1.0);
}

ShrinkageTraining train_shrinkage(const PopulationModel& pop, const Cohort& validation,
                                  const ShrinkageTrainingOptions& options, const GbtConfig& gbt) {
  const Sweep sweep = sweep_histories(pop, validation, options);
  ShrinkageTraining out;
  out.dataset = {rows_from(sweep), sweep.skipped};
  out.estimator = gbt_fit(out.dataset.rows, gbt);
  out.estimator.error_correlation_by_h = correlations_from(sweep);
  out.estimator.population_ref = pop.reference();
  out.estimator.validation_subject_ids.clear();
  for (const auto& s : validation.subjects) out.estimator.validation_subject_ids.push_back(s.subject_id);
  std::sort(out.estimator.validation_subject_ids.begin(), out.estimator.validation_subject_ids.end());
  return out;
}

Personalization personalize(const PopulationModel& pop, const AlphaEstimator& estimator,
                            const SubjectRecord& observed, std::span<const double> time_grid,
                            const PersonalizeOptions& options) {
  if (observed.visits.empty()) throw Error(ErrorKind::Fit, "subject " + observed.subject_id + " has no visits");
  Personalization out;
  out.population = predict_population(pop, observed, time_grid);

  if (observed.visits.size() == 1) {
    out.curve = out.population;
    out.subject = out.population;
    out.alpha = 1.0;
    if (!time_grid.empty()) out.features = shrinkage_features(out.population, out.population, observed.last_time());
    return out;
  }

  const SubjectModel fitted = fit_subject(pop, observed, options.subject_config);
  out.subject = predict_subject(fitted, pop, observed, time_grid);
  if (!time_grid.empty()) out.features = shrinkage_features(out.population, out.subject, observed.last_time());

  switch (options.alpha_source) {
    case AlphaSource::Adaptive:
      out.alpha = time_grid.empty() ? 1.0 : gbt_predict(estimator, out.features);
      break;
    case AlphaSource::Constant:
      out.alpha = std::clamp(options.constant_alpha, 0.0, 1.0);
      break;
    case AlphaSource::Deterministic: {
      std::vector<double> times, truth;
      for (const auto& v : observed.visits) {
        times.push_back(v.time_months);
        truth.push_back(v.value);
      }
      const PosteriorCurve p = predict_population(pop, observed, times);
      const PosteriorCurve s = predict_subject(fitted, pop, observed, times);
      out.alpha = oracle_alpha(truth, as_span(p.mean), as_span(s.mean));
      break;
    }
  }
  out.rho = options.variance_mode == VarianceMode::Covariance
                ? estimator.correlation_for(observed.visits.size())
                : 0.0;
  const CombinedPosterior combined =
      combine_posterior(out.population.mean, out.population.variance, out.subject.mean, out.subject.variance,
                        out.alpha, options.variance_mode, out.rho);
  out.curve.times = out.population.times;
  out.curve.mean = combined.mean;
  out.curve.variance = combined.variance;
  return out;
}

std::string estimator_to_json(const AlphaEstimator& estimator) {
  json j;
  j["format"] = "dkgp-alpha-estimator";
  j["version"] = kEstimatorFormatVersion;
  j["learning_rate"] = estimator.gbt.learning_rate;
  j["base_prediction"] = estimator.gbt.base_prediction;
  j["degenerate"] = estimator.gbt.degenerate;
  j["feature_names"] = std::vector<std::string>(kShrinkageFeatureNames.begin(), kShrinkageFeatureNames.end());
  json importance = json::object();
  for (std::size_t k = 0; k < estimator.gbt.feature_importance.size() && k < kShrinkageFeatureNames.size(); ++k) {
    importance[std::string(kShrinkageFeatureNames[k])] = estimator.gbt.feature_importance[k];
  }
  j["feature_importance"] = importance;
  j["training_mse"] = estimator.gbt.training_mse;
  json trees = json::array();
  for (const auto& tree : estimator.gbt.trees) {
    json nodes = json::array();
    for (const auto& node : tree.nodes) {
      nodes.push_back({{"feature", node.feature},
                       {"threshold", node.threshold},
                       {"left", node.left},
                       {"right", node.right},
                       {"leaf_value", node.leaf_value}});
    }
    trees.push_back(nodes);
  }
  j["trees"] = trees;
  json rho = json::object();
  for (const auto& [h, r] : estimator.error_correlation_by_h) rho[std::to_string(h)] = r;
  j["error_correlation_by_h"] = rho;
  j["validation_subject_ids"] = estimator.validation_subject_ids;
  j["population_ref"] = estimator.population_ref;
  return j.dump(1);
}

AlphaEstimator estimator_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("estimator file: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "dkgp-alpha-estimator") {
      throw Error(ErrorKind::Format, "not an alpha estimator file");
    }
    // Any other version value, including a quoted one, is a format mismatch.
    const json& version = j.at("version");
    if (!version.is_number_integer() || version.get<int>() != kEstimatorFormatVersion) {
      throw Error(ErrorKind::Format, "unsupported estimator version " + version.dump());
    }
    AlphaEstimator est;
    est.gbt.learning_rate = j.at("learning_rate").get<double>();
    est.gbt.base_prediction = j.at("base_prediction").get<double>();
    est.gbt.degenerate = j.at("degenerate").get<bool>();
    est.gbt.training_mse = j.at("training_mse").get<std::vector<double>>();
    const json& importance = j.at("feature_importance");
    for (auto name : kShrinkageFeatureNames) est.gbt.feature_importance.push_back(importance.at(std::string(name)).get<double>());
    for (const json& tree_json : j.at("trees")) {
      RegressionTree tree;
      for (const json& node : tree_json) {
        TreeNode n;
        n.feature = node.at("feature").get<int>();
        n.threshold = node.at("threshold").get<double>();
        n.left = node.at("left").get<int>();
        n.right = node.at("right").get<int>();
        n.leaf_value = node.at("leaf_value").get<double>();
        tree.nodes.push_back(n);
      }
      const auto count = static_cast<int>(tree.nodes.size());
      for (const auto& n : tree.nodes) {
        if (!n.is_leaf() && (n.feature >= 5 || n.left <= 0 || n.right <= 0 || n.left >= count || n.right >= count)) {
          throw Error(ErrorKind::Parse, "estimator tree has an invalid node");
        }
      }
      if (tree.nodes.empty()) throw Error(ErrorKind::Parse, "estimator tree has no nodes");
      est.gbt.trees.push_back(std::move(tree));
    }
    for (const auto& [key, value] : j.at("error_correlation_by_h").items()) {
      est.error_correlation_by_h[static_cast<std::size_t>(std::stoul(key))] = value.get<double>();
    }
    est.validation_subject_ids = j.at("validation_subject_ids").get<std::vector<std::string>>();
    est.population_ref = j.at("population_ref").get<std::string>();
    return est;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("estimator file: ") + e.what());
  } catch (const std::logic_error& e) {
    throw Error(ErrorKind::Parse, std::string("estimator file: ") + e.what());
  }
}

void save_estimator(const AlphaEstimator& estimator, const std::filesystem::path& path) {
  write_file_atomic(path, estimator_to_json(estimator));
}

AlphaEstimator load_estimator(const std::filesystem::path& path) { return estimator_from_json(read_file(path)); }

void write_alpha_dataset_csv(const std::vector<AlphaTrainingRow>& rows, std::ostream& out) {
  out << "subject_id,h,mean_yp,mean_ys,mean_vp,mean_vs,t_obs,alpha\n";
  char buffer[256];
  for (const auto& r : rows) {
    const auto& f = r.features;
    std::snprintf(buffer, sizeof buffer, ",%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.h, f.mean_yp, f.mean_ys,
                  f.mean_vp, f.mean_vs, f.t_obs, r.oracle_alpha);
    out << r.subject_id << buffer;
  }
}

}  // namespace dkgp
