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

#include "dkgp/population.hpp"

#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <map>

#include "dkgp/error.hpp"
#include "dkgp/io_util.hpp"

namespace dkgp {

using json = nlohmann::json;

MatrixXd NormStats::standardize_inputs(const MatrixXd& raw) const {
  if (raw.cols() != input_mean.size()) throw Error(ErrorKind::Shape, "input width does not match norm stats");
  return (raw.rowwise() - input_mean.transpose()).array().rowwise() / input_sd.transpose().array();
}

void TrainConfig::validate() const {
  if (epochs < 1) throw Error(ErrorKind::Config, "epochs must be >= 1");
  if (!(learning_rate > 0)) throw Error(ErrorKind::Config, "learning rate must be > 0");
  if (weight_decay < 0) throw Error(ErrorKind::Config, "weight decay must be >= 0");
  if (!(dropout >= 0 && dropout < 1)) throw Error(ErrorKind::Config, "dropout must lie in [0, 1)");
  if (latent_dim < 1) throw Error(ErrorKind::Config, "latent_dim must be >= 1");
  if (hidden_layers < 0) throw Error(ErrorKind::Config, "hidden_layers must be >= 0");
}

MatrixXd input_rows(const SubjectRecord& subject, std::span<const double> times) {
  const Index d = subject.baseline_features.size();
  const Index c = subject.covariates.size();
  MatrixXd rows(static_cast<Index>(times.size()), d + c + 1);
  for (Index r = 0; r < rows.rows(); ++r) {
    rows.row(r).head(d) = subject.baseline_features.transpose();
    rows.row(r).segment(d, c) = subject.covariates.transpose();
    rows(r, d + c) = times[static_cast<std::size_t>(r)];
  }
  return rows;
}

void PopulationModel::prepare() {
  predictor = GpPredictor<double>(train_latents, train_targets, hyper);
}

std::string PopulationModel::reference() const {
  std::uint64_t h = checksum(mlp);
  for (double v : {hyper.log_lengthscale, hyper.log_signal_var, hyper.log_noise_var}) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    h = (h ^ bits) * 0x100000001b3ULL;
  }
  char buffer[24];
  std::snprintf(buffer, sizeof buffer, "%016llx", static_cast<unsigned long long>(h));
  return buffer;
}

MatrixXd PopulationModel::latents(const SubjectRecord& subject, std::span<const double> times) const {
  if (subject.baseline_features.size() != feature_dim || subject.covariates.size() != covariate_dim) {
    throw Error(ErrorKind::Shape, "subject " + subject.subject_id + " dimensions do not match the model");
  }
  for (double t : times) {
    if (!(t >= 0) || !std::isfinite(t)) throw Error(ErrorKind::Shape, "grid times must be finite and >= 0");
  }
  const MatrixXd inputs = norm.standardize_inputs(input_rows(subject, times));
  return mlp_forward_batch(mlp, inputs, Mode::Eval).latent;
}

bool PopulationModel::trained_on(std::string_view subject_id) const {
  return std::find(train_subject_ids.begin(), train_subject_ids.end(), subject_id) != train_subject_ids.end();
}

PopulationModel train_population(const Cohort& cohort, const TrainConfig& config,
                                 const EpochCallback& on_epoch) {
  config.validate();
  if (cohort.size() < 2 || cohort.total_visits() < 2) {
    throw Error(ErrorKind::Training, "population training needs >= 2 subjects and >= 2 visits");
  }

  const Index width = cohort.feature_dim + cohort.covariate_dim + 1;
  const auto n = static_cast<Index>(cohort.total_visits());
  MatrixXd raw(n, width);
  VectorXd y(n);
  Index row = 0;
  for (const auto& subject : cohort.subjects) {
    std::vector<double> times;
    for (const auto& v : subject.visits) times.push_back(v.time_months);
    raw.middleRows(row, static_cast<Index>(times.size())) = input_rows(subject, times);
    for (const auto& v : subject.visits) y[row++] = v.value;
  }

  PopulationModel model;
  model.config = config;
  model.feature_dim = cohort.feature_dim;
  model.covariate_dim = cohort.covariate_dim;
  for (const auto& s : cohort.subjects) model.train_subject_ids.push_back(s.subject_id);

  model.norm.input_mean = raw.colwise().mean().transpose();
  model.norm.input_sd.resize(width);
  for (Index c = 0; c < width; ++c) {
    const double sd = std::sqrt((raw.col(c).array() - model.norm.input_mean[c]).square().mean());
    model.norm.input_sd[c] = sd > 0 ? sd : 1.0;
  }
  model.norm.y_mean = y.mean();
  const double y_sd = std::sqrt((y.array() - model.norm.y_mean).square().mean());
  model.norm.y_sd = y_sd > 0 ? y_sd : 1.0;

  const MatrixXd inputs = model.norm.standardize_inputs(raw);
  const VectorXd targets = (y.array() - model.norm.y_mean) / model.norm.y_sd;

  const Rng root(config.seed);
  Rng init_rng = root.fork(0);
  model.mlp = init_mlp(default_layer_sizes(width, config.latent_dim, config.hidden_layers),
                       config.dropout, init_rng);
  model.hyper = default_hyper<double>(config.latent_dim);

  const Index n_mlp = model.mlp.parameter_count();
  VectorXd params(n_mlp + 3);
  params << model.mlp.flatten(), model.hyper.as_vector();
  AdamState<double> adam(params.size(), config.learning_rate, config.weight_decay);
  adam.decay_mask = VectorXd::Zero(params.size());
  adam.decay_mask.head(n_mlp).setOnes();

  try {
    model.initial_mll =
        gp_mll<double>(mlp_forward_batch(model.mlp, inputs, Mode::Eval).latent, targets, model.hyper);
  } catch (const Error& e) {
    throw Error(ErrorKind::Training, "initial MLL: " + e.detail());
  }

  model.mll_trace.reserve(static_cast<std::size_t>(config.epochs));
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng step_rng = root.fork(1000 + static_cast<std::uint64_t>(epoch));
    MllGradients<double> g;
    try {
      g = mll_gradients(inputs, targets, model.mlp, model.hyper, Mode::Train, &step_rng);
    } catch (const Error& e) {
      throw Error(ErrorKind::Training, "epoch " + std::to_string(epoch) + ": " + e.detail());
    }
    model.mll_trace.push_back(g.mll);
    if (on_epoch) on_epoch(epoch, g.mll);

    VectorXd grads(params.size());
    grads << -g.grad_mlp.flatten(), -g.grad_hyper;
    adam_step<double>(adam, params, grads);
    model.mlp.assign(params.head(n_mlp));
    model.hyper = GpHyper<double>::from_vector(params.tail(3));
    if (!model.hyper.finite()) {
      throw Error(ErrorKind::Training, "epoch " + std::to_string(epoch) + ": non-finite hyperparameters");
    }
  }

  model.train_latents = mlp_forward_batch(model.mlp, inputs, Mode::Eval).latent;
  model.train_targets = targets;
  try {
    model.final_mll = gp_mll<double>(model.train_latents, targets, model.hyper);
    model.prepare();
  } catch (const Error& e) {
    throw Error(ErrorKind::Training, "final factorization: " + e.detail());
  }
  return model;
}

PosteriorCurve predict_curve(const PopulationModel& pop, const GpPredictor<double>& predictor,
                             const SubjectRecord& subject, std::span<const double> time_grid) {
  if (!predictor.ready()) throw Error(ErrorKind::Parameter, "GP predictor is not prepared");
  PosteriorCurve curve;
  const auto n = static_cast<Index>(time_grid.size());
  curve.times = Eigen::Map<const VectorXd>(time_grid.data(), n);
  curve.mean.resize(n);
  curve.variance.resize(n);
  // One query row at a time: batched kernels round differently by row position.
  std::map<double, std::pair<double, double>> done;
  for (Index i = 0; i < n; ++i) {
    const double t = time_grid[static_cast<std::size_t>(i)];
    auto it = done.find(t);
    if (it == done.end()) {
      const Posterior<double> post = predictor.predict(pop.latents(subject, std::span<const double>(&t, 1)));
      it = done.emplace(t, std::pair{pop.norm.destandardize_y(post.mean[0]),
                                     pop.norm.destandardize_var(post.variance[0])})
               .first;
    }
    curve.mean[i] = it->second.first;
    curve.variance[i] = it->second.second;
  }
  return curve;
}

PosteriorCurve predict_population(const PopulationModel& model, const SubjectRecord& subject,
                                  std::span<const double> time_grid) {
  if (!model.predictor.ready()) throw Error(ErrorKind::Parameter, "population model is not prepared");
  if (time_grid.empty()) model.latents(subject, time_grid);  // still validates dimensions
  return predict_curve(model, model.predictor, subject, time_grid);
}

namespace {

json vector_json(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

VectorXd vector_from(const json& j) {
  const auto values = j.get<std::vector<double>>();
  return Eigen::Map<const VectorXd>(values.data(), static_cast<Index>(values.size()));
}

json matrix_b64(const MatrixXd& m) {
  std::vector<double> row_major;
  row_major.reserve(static_cast<std::size_t>(m.size()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) row_major.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"encoding", "base64-f64le-rowmajor"},
          {"data", encode_f64_base64(row_major)}};
}

MatrixXd matrix_from_b64(const json& j) {
  const Index rows = j.at("rows").get<Index>();
  const Index cols = j.at("cols").get<Index>();
  const auto values = decode_f64_base64(j.at("data").get<std::string>());
  if (static_cast<Index>(values.size()) != rows * cols) {
    throw Error(ErrorKind::Parse, "latent payload has the wrong number of values");
  }
  MatrixXd m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = values[static_cast<std::size_t>(r * cols + c)];
  return m;
}

}  // namespace

std::string model_to_json(const PopulationModel& model) {
  json mlp;
  mlp["layer_sizes"] = model.mlp.layer_sizes;
  mlp["dropout_rate"] = model.mlp.dropout_rate;
  mlp["weights"] = json::array();
  mlp["biases"] = json::array();
  for (std::size_t k = 0; k < model.mlp.num_layers(); ++k) {
    std::vector<double> w;
    const MatrixXd& m = model.mlp.weights[k];
    for (Index r = 0; r < m.rows(); ++r)
      for (Index c = 0; c < m.cols(); ++c) w.push_back(m(r, c));
    mlp["weights"].push_back(w);
    mlp["biases"].push_back(vector_json(model.mlp.biases[k]));
  }

  json j;
  j["format"] = "dkgp-population-model";
  j["version"] = kModelFormatVersion;
  j["feature_dim"] = model.feature_dim;
  j["covariate_dim"] = model.covariate_dim;
  j["mlp"] = mlp;
  j["hyper"] = {{"log_lengthscale", model.hyper.log_lengthscale},
                {"log_signal_var", model.hyper.log_signal_var},
                {"log_noise_var", model.hyper.log_noise_var}};
  j["norm"] = {{"input_mean", vector_json(model.norm.input_mean)},
               {"input_sd", vector_json(model.norm.input_sd)},
               {"y_mean", model.norm.y_mean},
               {"y_sd", model.norm.y_sd}};
  j["train_config"] = {{"epochs", model.config.epochs},
                       {"learning_rate", model.config.learning_rate},
                       {"weight_decay", model.config.weight_decay},
                       {"dropout", model.config.dropout},
                       {"latent_dim", model.config.latent_dim},
                       {"hidden_layers", model.config.hidden_layers},
                       {"seed", model.config.seed}};
  j["train_subject_ids"] = model.train_subject_ids;
  j["initial_mll"] = model.initial_mll;
  j["final_mll"] = model.final_mll;
  j["mll_trace"] = encode_f64_base64(model.mll_trace);
  j["train_latents"] = matrix_b64(model.train_latents);
  j["train_targets"] = encode_f64_base64(
      std::span<const double>(model.train_targets.data(), static_cast<std::size_t>(model.train_targets.size())));
  return j.dump(1);
}

PopulationModel model_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("model file: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "dkgp-population-model") {
      throw Error(ErrorKind::Format, "not a population model file");
    }
    // Any other version value, including a quoted one, is a format mismatch.
    const json& version = j.at("version");
    if (!version.is_number_integer() || version.get<int>() != kModelFormatVersion) {
      throw Error(ErrorKind::Format, "unsupported model version " + version.dump());
    }
    PopulationModel model;
    model.feature_dim = j.at("feature_dim").get<Index>();
    model.covariate_dim = j.at("covariate_dim").get<Index>();
    const json& mlp = j.at("mlp");
    model.mlp.layer_sizes = mlp.at("layer_sizes").get<std::vector<Index>>();
    model.mlp.dropout_rate = mlp.at("dropout_rate").get<double>();
    const auto& sizes = model.mlp.layer_sizes;
    if (sizes.size() < 2 || mlp.at("weights").size() != sizes.size() - 1 ||
        mlp.at("biases").size() != sizes.size() - 1) {
      throw Error(ErrorKind::Parse, "MLP layer arrays do not match layer_sizes");
    }
    for (std::size_t k = 0; k + 1 < sizes.size(); ++k) {
      const auto w = mlp.at("weights")[k].get<std::vector<double>>();
      if (static_cast<Index>(w.size()) != sizes[k + 1] * sizes[k]) {
        throw Error(ErrorKind::Parse, "weight array " + std::to_string(k) + " has the wrong size");
      }
      MatrixXd m(sizes[k + 1], sizes[k]);
      for (Index r = 0; r < m.rows(); ++r)
        for (Index c = 0; c < m.cols(); ++c) m(r, c) = w[static_cast<std::size_t>(r * m.cols() + c)];
      model.mlp.weights.push_back(std::move(m));
      model.mlp.biases.push_back(vector_from(mlp.at("biases")[k]));
    }
    model.mlp.validate();

    const json& hyper = j.at("hyper");
    model.hyper = {hyper.at("log_lengthscale").get<double>(), hyper.at("log_signal_var").get<double>(),
                   hyper.at("log_noise_var").get<double>()};
    const json& norm = j.at("norm");
    model.norm.input_mean = vector_from(norm.at("input_mean"));
    model.norm.input_sd = vector_from(norm.at("input_sd"));
    model.norm.y_mean = norm.at("y_mean").get<double>();
    model.norm.y_sd = norm.at("y_sd").get<double>();
    if (model.norm.input_sd.size() != model.mlp.input_dim() || (model.norm.input_sd.array() <= 0).any() ||
        !(model.norm.y_sd > 0)) {
      throw Error(ErrorKind::Parse, "normalization statistics are invalid");
    }
    const json& tc = j.at("train_config");
    model.config.epochs = tc.at("epochs").get<int>();
    model.config.learning_rate = tc.at("learning_rate").get<double>();
    model.config.weight_decay = tc.at("weight_decay").get<double>();
    model.config.dropout = tc.at("dropout").get<double>();
    model.config.latent_dim = tc.at("latent_dim").get<Index>();
    model.config.hidden_layers = tc.at("hidden_layers").get<int>();
    model.config.seed = tc.at("seed").get<std::uint64_t>();
    model.train_subject_ids = j.at("train_subject_ids").get<std::vector<std::string>>();
    model.initial_mll = j.at("initial_mll").get<double>();
    model.final_mll = j.at("final_mll").get<double>();
    model.mll_trace = decode_f64_base64(j.at("mll_trace").get<std::string>());
    model.train_latents = matrix_from_b64(j.at("train_latents"));
    const auto targets = decode_f64_base64(j.at("train_targets").get<std::string>());
    model.train_targets = Eigen::Map<const VectorXd>(targets.data(), static_cast<Index>(targets.size()));
    if (model.train_latents.rows() != model.train_targets.size() ||
        model.train_latents.cols() != model.mlp.output_dim()) {
      throw Error(ErrorKind::Parse, "retained training set does not match the feature map");
    }
    model.prepare();
    return model;
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, std::string("model file: ") + e.what());
  }
}

void save_model(const PopulationModel& model, const std::filesystem::path& path) {
  write_file_atomic(path, model_to_json(model));
}

PopulationModel load_model(const std::filesystem::path& path) { return model_from_json(read_file(path)); }

}  // namespace dkgp
