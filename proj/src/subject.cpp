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

#include "dkgp/subject.hpp"

#include <json.hpp>

#include <cmath>

#include "dkgp/error.hpp"
#include "dkgp/io_util.hpp"

namespace dkgp {

void SubjectModel::prepare() { predictor = GpPredictor<double>(observed_latents, observed_targets, hyper); }

SubjectModel fit_subject(const PopulationModel& pop, const SubjectRecord& observed, const TrainConfig& config) {
  config.validate();
  if (observed.visits.empty()) throw Error(ErrorKind::Fit, "subject " + observed.subject_id + " has no visits");

  std::vector<double> times;
  VectorXd targets(static_cast<Index>(observed.visits.size()));
  for (std::size_t i = 0; i < observed.visits.size(); ++i) {
    times.push_back(observed.visits[i].time_months);
    targets[static_cast<Index>(i)] = pop.norm.standardize_y(observed.visits[i].value);
  }

  SubjectModel model;
  model.population_ref = pop.reference();
  model.observed_latents = pop.latents(observed, times);
  model.observed_targets = targets;
  model.t_obs_months = observed.last_time();
  model.hyper = pop.hyper;
  const double log_floor = std::log(kSubjectNoiseFloor);
  model.hyper.log_noise_var = std::max(model.hyper.log_noise_var, log_floor);

  // Only GP hyperparameters are trainable here and none of them are decayed.
  VectorXd params = model.hyper.as_vector();
  AdamState<double> adam(3, config.learning_rate, config.weight_decay);
  adam.decay_mask = VectorXd::Zero(3);
  model.mll_trace.reserve(static_cast<std::size_t>(config.epochs));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    MllTerms<double> terms;
    try {
      terms = kernel_mll_terms(model.observed_latents, model.observed_targets, model.hyper, false);
    } catch (const Error& e) {
      throw Error(ErrorKind::Fit, "subject " + observed.subject_id + " epoch " + std::to_string(epoch) +
                                      ": " + e.detail());
    }
    if (!std::isfinite(terms.mll) || !terms.grad_hyper.allFinite()) {
      throw Error(ErrorKind::Fit, "subject " + observed.subject_id + ": non-finite marginal likelihood");
    }
    model.mll_trace.push_back(terms.mll);
    const VectorXd grads = -terms.grad_hyper;
    adam_step<double>(adam, params, grads);
    params[2] = std::max(params[2], log_floor);
    model.hyper = GpHyper<double>::from_vector(params);
  }
  try {
    model.prepare();
  } catch (const Error& e) {
    throw Error(ErrorKind::Fit, "subject " + observed.subject_id + ": " + e.detail());
  }
  return model;
}

PosteriorCurve predict_subject(const SubjectModel& model, const PopulationModel& pop,
                               const SubjectRecord& subject, std::span<const double> time_grid) {
  if (model.population_ref != pop.reference()) {
    throw Error(ErrorKind::Parameter, "subject model was fitted against a different population model");
  }
  if (!model.predictor.ready()) throw Error(ErrorKind::Parameter, "subject model is not prepared");
  return predict_curve(pop, model.predictor, subject, time_grid);
}

std::string subject_model_to_json(const SubjectModel& model) {
  const MatrixXd& z = model.observed_latents;
  std::vector<double> row_major;
  for (Index r = 0; r < z.rows(); ++r)
    for (Index c = 0; c < z.cols(); ++c) row_major.push_back(z(r, c));
  nlohmann::json j;
  j["format"] = "dkgp-subject-model";
  j["version"] = kModelFormatVersion;
  j["population_ref"] = model.population_ref;
  j["hyper"] = {{"log_lengthscale", model.hyper.log_lengthscale},
                {"log_signal_var", model.hyper.log_signal_var},
                {"log_noise_var", model.hyper.log_noise_var}};
  j["t_obs_months"] = model.t_obs_months;
  j["observed_latents"] = {{"rows", z.rows()}, {"cols", z.cols()}, {"encoding", "base64-f64le-rowmajor"},
                           {"data", encode_f64_base64(row_major)}};
  j["observed_targets"] = encode_f64_base64(std::span<const double>(
      model.observed_targets.data(), static_cast<std::size_t>(model.observed_targets.size())));
  return j.dump(1);
}

}  // namespace dkgp
