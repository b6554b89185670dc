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

#include "dkgp/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <filesystem>
#include <functional>
#include <map>
#include <ostream>
#include <set>
#include <sstream>

#include "dkgp/dataset.hpp"
#include "dkgp/error.hpp"
#include "dkgp/evaluation.hpp"
#include "dkgp/io_util.hpp"
#include "dkgp/parallel.hpp"
#include "dkgp/plot.hpp"
#include "dkgp/population.hpp"
#include "dkgp/shrinkage.hpp"

#ifndef DKGP_VERSION
#define DKGP_VERSION "0.0.0"
#endif

namespace dkgp::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct Common {
  int workers = 0;
  bool verbose = false;
  std::string config_path;
};

struct SynthArgs {
  std::size_t subjects = 300;
  Index features = 20;
  int min_visits = 4;
  int max_visits = 8;
  double noise_sd = 0.05;
  std::uint64_t seed = 0;
  std::string out;
};

struct SplitArgs {
  double validation_fraction = 1.0 / 6.0;
  double test_fraction = 1.0 / 6.0;
  std::uint64_t seed = 0;
};

struct PopulationArgs {
  TrainConfig config;
};

struct ShrinkageArgs {
  TrainConfig subject = TrainConfig::subject_defaults();
  GbtConfig gbt;
  std::size_t min_history = 2;
  std::size_t max_history = 0;  // 0 = visits - 1
  double grid_step = 6;
};

struct BenchmarkArgs {
  std::vector<std::size_t> histories{4};
  std::string variance_mode = "covariance";
  std::string alpha_mode = "adaptive";
  double constant_alpha = 1;
  int bootstrap = 1000;
  std::vector<Index> strata;
  std::uint64_t seed = 0;
};

/// Collected during a run and written as `<output>.manifest.json`.
struct Manifest {
  std::string command;
  std::uint64_t seed = 0;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
};

void add_common(CLI::App* app, Common& common) {
  app->add_option("--config", common.config_path, "key=value file; flags on the command line take precedence");
  app->add_option("--workers", common.workers, "Parallel subject workers (0 = all cores, 1 = serial)")
      ->check(CLI::NonNegativeNumber);
  app->add_flag("--verbose", common.verbose, "Progress lines on stderr");
}

void add_synth(CLI::App* app, SynthArgs& a) {
  app->add_option("--subjects", a.subjects, "Number of subjects")->check(CLI::PositiveNumber);
  app->add_option("--features", a.features, "Baseline feature dimension")->check(CLI::PositiveNumber);
  app->add_option("--min-visits", a.min_visits, "Fewest visits per subject");
  app->add_option("--max-visits", a.max_visits, "Most visits per subject");
  app->add_option("--noise-sd", a.noise_sd, "Measurement noise sd");
}

void add_split(CLI::App* app, SplitArgs& a) {
  app->add_option("--validation-fraction", a.validation_fraction, "Share of subjects for validation");
  app->add_option("--test-fraction", a.test_fraction, "Share of subjects for test");
}

void add_population(CLI::App* app, PopulationArgs& a) {
  app->add_option("--epochs", a.config.epochs, "Population training epochs");
  app->add_option("--lr", a.config.learning_rate, "Adam learning rate");
  app->add_option("--weight-decay", a.config.weight_decay, "Decoupled weight decay on network parameters");
  app->add_option("--dropout", a.config.dropout, "Dropout rate during training");
  app->add_option("--latent-dim", a.config.latent_dim, "Latent dimension of the feature map");
  app->add_option("--hidden-layers", a.config.hidden_layers, "Hidden layers in the feature map");
}

void add_shrinkage(CLI::App* app, ShrinkageArgs& a) {
  app->add_option("--subject-epochs", a.subject.epochs, "Subject refit epochs");
  app->add_option("--subject-lr", a.subject.learning_rate, "Subject refit learning rate");
  app->add_option("--subject-weight-decay", a.subject.weight_decay, "Subject refit weight decay");
  app->add_option("--min-history", a.min_history, "Shortest observed history in the alpha dataset");
  app->add_option("--max-history", a.max_history, "Longest observed history (0 = all but one visit)");
  app->add_option("--grid-step", a.grid_step, "Trajectory grid step in months");
  app->add_option("--rounds", a.gbt.rounds, "Boosting rounds");
  app->add_option("--depth", a.gbt.max_depth, "Tree depth");
  app->add_option("--gbt-lr", a.gbt.learning_rate, "Boosting learning rate");
  app->add_option("--min-leaf", a.gbt.min_leaf, "Minimum rows per leaf");
}

void add_benchmark(CLI::App* app, BenchmarkArgs& a) {
  app->add_option("--history", a.histories, "Observed history lengths (comma separated)")->delimiter(',');
  app->add_option("--variance-mode", a.variance_mode, "independent or covariance")
      ->check(CLI::IsMember({"independent", "covariance"}));
  app->add_option("--alpha-mode", a.alpha_mode, "adaptive, constant or deterministic")
      ->check(CLI::IsMember({"adaptive", "constant", "deterministic"}));
  app->add_option("--constant-alpha", a.constant_alpha, "Alpha used when --alpha-mode constant")
      ->check(CLI::Range(0.0, 1.0));
  app->add_option("--bootstrap", a.bootstrap, "Bootstrap resamples for the MAE interval");
  app->add_option("--strata", a.strata, "Covariate columns to stratify by (comma separated)")->delimiter(',');
}

ShrinkageTrainingOptions shrinkage_options(const ShrinkageArgs& a, int workers) {
  ShrinkageTrainingOptions o;
  o.histories.min = a.min_history;
  if (a.max_history > 0) o.histories.max = a.max_history;
  o.grid_step_months = a.grid_step;
  o.subject_config = a.subject;
  o.workers = workers;
  return o;
}

BenchmarkConfig benchmark_config(const BenchmarkArgs& a, const TrainConfig& subject, int workers) {
  BenchmarkConfig c;
  c.histories = a.histories;
  c.personalize.variance_mode = parse_variance_mode(a.variance_mode);
  c.personalize.alpha_source = parse_alpha_source(a.alpha_mode);
  c.personalize.constant_alpha = a.constant_alpha;
  c.personalize.subject_config = subject;
  c.bootstrap_resamples = a.bootstrap;
  c.seed = a.seed;
  c.strata_covariates = a.strata;
  c.workers = workers;
  return c;
}

std::string joined_results(const CLI::Option* opt) {
  std::string out;
  for (const auto& r : opt->results()) out += (out.empty() ? "" : ",") + r;
  return out;
}

json resolved_config(const CLI::App* app) {
  json config = json::object();
  for (const CLI::Option* opt : app->get_options()) {
    if (opt->get_lnames().empty()) continue;
    const std::string& name = opt->get_lnames().front();
    if (name == "help" || name == "config") continue;
    config[name] = opt->count() > 0 ? joined_results(opt) : opt->get_default_str();
  }
  return config;
}

void write_manifest(const fs::path& path, const Manifest& m, const CLI::App* app, double seconds) {
  json j;
  j["command"] = m.command;
  j["version"] = DKGP_VERSION;
  j["seed"] = m.seed;
  j["config"] = resolved_config(app);
  json inputs = json::object();
  for (const auto& p : m.inputs) inputs[p.string()] = sha256_file_hex(p);
  j["inputs"] = inputs;
  json outputs = json::object();
  for (const auto& p : m.outputs) outputs[p.string()] = sha256_file_hex(p);
  j["outputs"] = outputs;
  j["duration_seconds"] = seconds;
  write_file_atomic(path, j.dump(2) + "\n");
}

fs::path manifest_beside(const fs::path& output) { return fs::path(output.string() + ".manifest.json"); }

void write_text(const fs::path& path, const std::string& text) { write_file_atomic(path, text); }

std::string cohort_text(const Cohort& cohort) {
  std::ostringstream s;
  write_cohort_csv(cohort, s);
  return s.str();
}

PopulationModel train_population_logged(const Cohort& train, const TrainConfig& config) {
  log_progress("training population model on " + std::to_string(train.size()) + " subjects, " +
               std::to_string(train.total_visits()) + " visits");
  return train_population(train, config, [&](int epoch, double mll) {
    if (verbose() && ((epoch + 1) % 50 == 0 || epoch == 0)) {
      std::ostringstream line;
      line << "epoch " << epoch + 1 << "/" << config.epochs << " mll " << mll;
      log_progress(line.str());
    }
  });
}

std::string personalization_json(const Personalization& p, const SubjectRecord& observed, std::size_t h,
                                 const PersonalizeOptions& options) {
  auto vec = [](const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  json visits = json::array();
  for (const auto& v : observed.visits) visits.push_back({{"time_months", v.time_months}, {"value", v.value}});
  json j;
  j["format"] = "dkgp-personalization";
  j["version"] = 1;
  j["subject_id"] = observed.subject_id;
  j["history"] = h;
  j["t_obs"] = observed.last_time();
  j["alpha"] = p.alpha;
  j["rho"] = p.rho;
  j["variance_mode"] = std::string(to_string(options.variance_mode));
  j["alpha_mode"] = std::string(to_string(options.alpha_source));
  j["times"] = vec(p.curve.times);
  j["mean"] = vec(p.curve.mean);
  j["variance"] = vec(p.curve.variance);
  j["population"] = {{"mean", vec(p.population.mean)}, {"variance", vec(p.population.variance)}};
  j["subject"] = {{"mean", vec(p.subject.mean)}, {"variance", vec(p.subject.variance)}};
  j["observed"] = visits;
  return j.dump(2) + "\n";
}

/// Reads a personalization file back into a curve plus the observed visits.
std::pair<PosteriorCurve, SubjectRecord> read_personalization(const fs::path& path) {
  json j;
  try {
    j = json::parse(read_file(path));
    if (j.at("format") != "dkgp-personalization") throw Error(ErrorKind::Format, "not a personalization file");
    auto vec = [](const json& a) {
      const auto v = a.get<std::vector<double>>();
      return VectorXd(Eigen::Map<const VectorXd>(v.data(), static_cast<Index>(v.size())));
    };
    PosteriorCurve curve{vec(j.at("times")), vec(j.at("mean")), vec(j.at("variance"))};
    if (curve.mean.size() != curve.size() || curve.variance.size() != curve.size()) {
      throw Error(ErrorKind::Format, "curve arrays differ in length");
    }
    SubjectRecord observed;
    observed.subject_id = j.at("subject_id").get<std::string>();
    for (const auto& v : j.at("observed")) {
      observed.visits.push_back({v.at("time_months").get<double>(), v.at("value").get<double>()});
    }
    return {curve, observed};
  } catch (const json::exception& e) {
    throw Error(ErrorKind::Parse, path.string() + ": " + e.what());
  }
}

/// CLI11 reads config files only for the top-level app, so subcommand config
/// files are expanded here: every key not already given as a flag becomes
/// `--key=value` right after the subcommand name.
std::vector<std::string> expand_config(const std::vector<std::string>& args) {
  if (args.empty() || args[0].starts_with('-')) return args;
  std::string path;
  std::set<std::string> given;
  for (std::size_t i = 1; i < args.size(); ++i) {
    const std::string& a = args[i];
    if (!a.starts_with("--")) continue;
    const auto eq = a.find('=');
    const std::string name = a.substr(2, eq == std::string::npos ? std::string::npos : eq - 2);
    given.insert(name);
    if (name == "config") {
      if (eq != std::string::npos) path = a.substr(eq + 1);
      else if (i + 1 < args.size()) path = args[i + 1];
    }
  }
  if (path.empty()) return args;
  std::vector<std::string> injected;
  for (const auto& item : CLI::ConfigINI().from_file(path)) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    if (!item.parents.empty() && item.parents != std::vector<std::string>{args[0]}) continue;
    if (given.count(item.name)) continue;
    std::string joined;
    for (const auto& v : item.inputs) joined += (joined.empty() ? "" : ",") + v;
    injected.push_back("--" + item.name + "=" + joined);
  }
  std::vector<std::string> out{args[0]};
  out.insert(out.end(), injected.begin(), injected.end());
  out.insert(out.end(), args.begin() + 1, args.end());
  return out;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Personalized biomarker trajectory forecasting with deep kernel GPs", "dkgp"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_version_flag("--version", DKGP_VERSION);

  Common common;
  SynthArgs synth;
  SplitArgs split;
  PopulationArgs population;
  ShrinkageArgs shrinkage;
  BenchmarkArgs bench;
  std::uint64_t seed = 0;
  std::string cohort_path, model_path, estimator_path, out_path, out_dir, subject_id, dataset_out, csv_out,
      plot_path, input_path;
  std::size_t history = 0;
  double horizon = 120;

  auto* synth_cmd = app.add_subcommand("synth", "Generate a synthetic longitudinal cohort CSV");
  add_common(synth_cmd, common);
  add_synth(synth_cmd, synth);
  synth_cmd->add_option("--seed", seed, "Random seed");
  synth_cmd->add_option("--out", out_path, "Output cohort CSV")->required();

  auto* split_cmd = app.add_subcommand("split", "Split a cohort into train/validation/test by subject");
  add_common(split_cmd, common);
  add_split(split_cmd, split);
  split_cmd->add_option("--cohort", cohort_path, "Input cohort CSV")->required();
  split_cmd->add_option("--seed", seed, "Random seed");
  split_cmd->add_option("--out-dir", out_dir, "Directory for train.csv, validation.csv, test.csv")->required();

  auto* pop_cmd = app.add_subcommand("train-population", "Train the population deep kernel GP");
  add_common(pop_cmd, common);
  add_population(pop_cmd, population);
  pop_cmd->add_option("--cohort", cohort_path, "Training cohort CSV")->required();
  pop_cmd->add_option("--seed", seed, "Random seed");
  pop_cmd->add_option("--out", out_path, "Output model JSON")->required();

  auto* shrink_cmd = app.add_subcommand("train-shrinkage", "Build the alpha dataset and fit the alpha estimator");
  add_common(shrink_cmd, common);
  add_shrinkage(shrink_cmd, shrinkage);
  shrink_cmd->add_option("--model", model_path, "Population model JSON")->required();
  shrink_cmd->add_option("--cohort", cohort_path, "Validation cohort CSV")->required();
  shrink_cmd->add_option("--out", out_path, "Output estimator JSON")->required();
  shrink_cmd->add_option("--dataset-out", dataset_out, "Optional CSV of the alpha training rows");

  auto* pers_cmd = app.add_subcommand("personalize", "Personalized trajectory for one subject");
  add_common(pers_cmd, common);
  pers_cmd->add_option("--model", model_path, "Population model JSON")->required();
  pers_cmd->add_option("--estimator", estimator_path, "Alpha estimator JSON")->required();
  pers_cmd->add_option("--cohort", cohort_path, "Cohort CSV containing the subject")->required();
  pers_cmd->add_option("--subject", subject_id, "Subject id")->required();
  pers_cmd->add_option("--history", history, "Use only the first N visits (0 = all)");
  pers_cmd->add_option("--horizon", horizon, "Forecast horizon in months");
  pers_cmd->add_option("--grid-step", shrinkage.grid_step, "Trajectory grid step in months");
  pers_cmd->add_option("--variance-mode", bench.variance_mode, "independent or covariance")
      ->check(CLI::IsMember({"independent", "covariance"}));
  pers_cmd->add_option("--alpha-mode", bench.alpha_mode, "adaptive, constant or deterministic")
      ->check(CLI::IsMember({"adaptive", "constant", "deterministic"}));
  pers_cmd->add_option("--constant-alpha", bench.constant_alpha, "Alpha used when --alpha-mode constant")
      ->check(CLI::Range(0.0, 1.0));
  pers_cmd->add_option("--subject-epochs", shrinkage.subject.epochs, "Subject refit epochs");
  pers_cmd->add_option("--out", out_path, "Output personalization JSON")->required();
  pers_cmd->add_option("--plot", plot_path, "Also write an SVG plot here");

  auto* eval_cmd = app.add_subcommand("evaluate", "Benchmark personalized forecasts on a test cohort");
  add_common(eval_cmd, common);
  add_benchmark(eval_cmd, bench);
  eval_cmd->add_option("--model", model_path, "Population model JSON")->required();
  eval_cmd->add_option("--estimator", estimator_path, "Alpha estimator JSON")->required();
  eval_cmd->add_option("--cohort", cohort_path, "Test cohort CSV")->required();
  eval_cmd->add_option("--subject-epochs", shrinkage.subject.epochs, "Subject refit epochs");
  eval_cmd->add_option("--seed", seed, "Bootstrap seed");
  eval_cmd->add_option("--out", out_path, "Output report JSON")->required();
  eval_cmd->add_option("--csv-out", csv_out, "Optional flat per-record CSV");

  auto* plot_cmd = app.add_subcommand("plot", "Render a personalization file as SVG");
  add_common(plot_cmd, common);
  plot_cmd->add_option("--input", input_path, "Personalization JSON")->required();
  plot_cmd->add_option("--out", out_path, "Output SVG")->required();

  auto* pipe_cmd = app.add_subcommand("pipeline", "synth, split, train-population, train-shrinkage, evaluate");
  add_common(pipe_cmd, common);
  add_synth(pipe_cmd, synth);
  add_split(pipe_cmd, split);
  add_population(pipe_cmd, population);
  add_shrinkage(pipe_cmd, shrinkage);
  add_benchmark(pipe_cmd, bench);
  pipe_cmd->add_option("--seed", seed, "Random seed for every stage");
  pipe_cmd->add_option("--out-dir", out_dir, "Directory for all artifacts")->required();

  try {
    const std::vector<std::string> expanded = expand_config(args);
    std::vector<std::string> reversed(expanded.rbegin(), expanded.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitUsage;
  }

  set_verbose(common.verbose);
  const int workers = resolve_workers(common.workers);
  const auto started = std::chrono::steady_clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count(); };
  CLI::App* active = app.get_subcommands().front();
  Manifest manifest;
  manifest.command = active->get_name();
  manifest.seed = seed;
  fs::path manifest_path;

  try {
    if (active == synth_cmd) {
      SynthConfig config;
      config.n_subjects = synth.subjects;
      config.feature_dim = synth.features;
      config.min_visits = synth.min_visits;
      config.max_visits = synth.max_visits;
      config.noise_sd = synth.noise_sd;
      config.seed = seed;
      save_cohort_csv(generate_synthetic_cohort(config), out_path);
      manifest.outputs = {out_path};
      manifest_path = manifest_beside(out_path);
    } else if (active == split_cmd) {
      manifest.inputs = {cohort_path};
      const Cohort cohort = load_cohort_csv(cohort_path);
      const double train_fraction = 1.0 - split.validation_fraction - split.test_fraction;
      const CohortSplit parts =
          split_cohort(cohort, train_fraction, split.validation_fraction, split.test_fraction, seed);
      fs::create_directories(out_dir);
      const fs::path dir(out_dir);
      save_cohort_csv(parts.train, dir / "train.csv");
      save_cohort_csv(parts.validation, dir / "validation.csv");
      save_cohort_csv(parts.test, dir / "test.csv");
      manifest.outputs = {dir / "train.csv", dir / "validation.csv", dir / "test.csv"};
      manifest_path = dir / "split.manifest.json";
    } else if (active == pop_cmd) {
      manifest.inputs = {cohort_path};
      TrainConfig config = population.config;
      config.seed = seed;
      const PopulationModel model = train_population_logged(load_cohort_csv(cohort_path), config);
      save_model(model, out_path);
      manifest.outputs = {out_path};
      manifest_path = manifest_beside(out_path);
    } else if (active == shrink_cmd) {
      manifest.inputs = {model_path, cohort_path};
      const PopulationModel model = load_model(model_path);
      const ShrinkageTraining trained =
          train_shrinkage(model, load_cohort_csv(cohort_path), shrinkage_options(shrinkage, workers), shrinkage.gbt);
      save_estimator(trained.estimator, out_path);
      manifest.outputs = {out_path};
      if (!dataset_out.empty()) {
        std::ostringstream csv;
        write_alpha_dataset_csv(trained.dataset.rows, csv);
        write_text(dataset_out, csv.str());
        manifest.outputs.push_back(dataset_out);
      }
      manifest_path = manifest_beside(out_path);
    } else if (active == pers_cmd) {
      manifest.inputs = {model_path, estimator_path, cohort_path};
      const PopulationModel model = load_model(model_path);
      const AlphaEstimator estimator = load_estimator(estimator_path);
      const Cohort cohort = load_cohort_csv(cohort_path);
      const SubjectRecord* subject = cohort.find(subject_id);
      if (subject == nullptr) throw Error(ErrorKind::Parameter, "subject " + subject_id + " is not in the cohort");
      const SubjectRecord observed =
          history == 0 || history >= subject->visits.size() ? *subject : truncate_history(*subject, history).observed;
      std::vector<double> visit_times;
      for (const auto& v : subject->visits) visit_times.push_back(v.time_months);
      const std::vector<double> grid =
          trajectory_grid(std::max(horizon, subject->last_time()), shrinkage.grid_step, visit_times);
      PersonalizeOptions options;
      options.variance_mode = parse_variance_mode(bench.variance_mode);
      options.alpha_source = parse_alpha_source(bench.alpha_mode);
      options.constant_alpha = bench.constant_alpha;
      options.subject_config.epochs = shrinkage.subject.epochs;
      const Personalization p = personalize(model, estimator, observed, grid, options);
      write_text(out_path, personalization_json(p, observed, observed.visits.size(), options));
      manifest.outputs = {out_path};
      if (!plot_path.empty()) {
        emit_plot(p.curve, observed, plot_path);
        manifest.outputs.push_back(plot_path);
      }
      manifest_path = manifest_beside(out_path);
    } else if (active == eval_cmd) {
      manifest.inputs = {model_path, estimator_path, cohort_path};
      const PopulationModel model = load_model(model_path);
      const AlphaEstimator estimator = load_estimator(estimator_path);
      bench.seed = seed;
      const EvalReport report = run_benchmark(model, estimator, load_cohort_csv(cohort_path),
                                              benchmark_config(bench, shrinkage.subject, workers));
      write_text(out_path, report_to_json(report) + "\n");
      manifest.outputs = {out_path};
      if (!csv_out.empty()) {
        std::ostringstream csv;
        write_report_csv(report, csv);
        write_text(csv_out, csv.str());
        manifest.outputs.push_back(csv_out);
      }
      manifest_path = manifest_beside(out_path);
    } else if (active == plot_cmd) {
      manifest.inputs = {input_path};
      const auto [curve, observed] = read_personalization(input_path);
      emit_plot(curve, observed, out_path);
      manifest.outputs = {out_path};
      manifest_path = manifest_beside(out_path);
    } else if (active == pipe_cmd) {
      const fs::path dir(out_dir);
      fs::create_directories(dir);
      SynthConfig sc;
      sc.n_subjects = synth.subjects;
      sc.feature_dim = synth.features;
      sc.min_visits = synth.min_visits;
      sc.max_visits = synth.max_visits;
      sc.noise_sd = synth.noise_sd;
      sc.seed = seed;
      log_progress("generating cohort");
      const Cohort cohort = generate_synthetic_cohort(sc);
      write_text(dir / "cohort.csv", cohort_text(cohort));

      const double train_fraction = 1.0 - split.validation_fraction - split.test_fraction;
      const CohortSplit parts =
          split_cohort(cohort, train_fraction, split.validation_fraction, split.test_fraction, seed);
      write_text(dir / "train.csv", cohort_text(parts.train));
      write_text(dir / "validation.csv", cohort_text(parts.validation));
      write_text(dir / "test.csv", cohort_text(parts.test));

      TrainConfig pc = population.config;
      pc.seed = seed;
      const PopulationModel model = train_population_logged(parts.train, pc);
      save_model(model, dir / "model.json");

      log_progress("training alpha estimator on " + std::to_string(parts.validation.size()) + " subjects");
      const ShrinkageTraining trained =
          train_shrinkage(model, parts.validation, shrinkage_options(shrinkage, workers), shrinkage.gbt);
      save_estimator(trained.estimator, dir / "estimator.json");
      std::ostringstream alpha_csv;
      write_alpha_dataset_csv(trained.dataset.rows, alpha_csv);
      write_text(dir / "alpha_dataset.csv", alpha_csv.str());

      log_progress("evaluating on " + std::to_string(parts.test.size()) + " subjects");
      bench.seed = seed;
      const EvalReport report =
          run_benchmark(model, trained.estimator, parts.test, benchmark_config(bench, shrinkage.subject, workers));
      write_text(dir / "report.json", report_to_json(report) + "\n");
      std::ostringstream report_csv;
      write_report_csv(report, report_csv);
      write_text(dir / "report.csv", report_csv.str());

      for (const char* name : {"cohort.csv", "train.csv", "validation.csv", "test.csv", "model.json",
                               "estimator.json", "alpha_dataset.csv", "report.json", "report.csv"}) {
        manifest.outputs.push_back(dir / name);
      }
      manifest_path = dir / "pipeline.manifest.json";
      out << "mean_mae " << report.aggregate.mean_mae << "\n";
    }
    write_manifest(manifest_path, manifest, active, elapsed());
    log_progress(manifest.command + " finished in " + std::to_string(elapsed()) + " s");
  } catch (const Error& e) {
    err << "dkgp " << manifest.command << ": " << e.what() << "\n";
    return kExitFailure;
  } catch (const std::exception& e) {
    err << "dkgp " << manifest.command << ": " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitOk;
}

}  // namespace dkgp::cli
