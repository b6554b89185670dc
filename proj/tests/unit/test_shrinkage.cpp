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


#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <sstream>
#include <vector>

#include "dkgp/dataset.hpp"
#include "dkgp/error.hpp"
#include "dkgp/gbt.hpp"
#include "dkgp/io_util.hpp"
#include "dkgp/rng.hpp"
#include "dkgp/shrinkage.hpp"
#include "dkgp/stats.hpp"
#include "oracles.hpp"

using namespace dkgp;

namespace {

std::vector<double> random_values(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

VectorXd vec(std::initializer_list<double> v) {
  VectorXd out(static_cast<Index>(v.size()));
  Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

AlphaTrainingRow row(Rng& rng, double t_obs, double alpha) {
  AlphaTrainingRow r;
  r.features = {rng.normal(), rng.normal(), rng.uniform(0, 1), rng.uniform(0, 1), t_obs};
  r.oracle_alpha = alpha;
  r.subject_id = "S" + std::to_string(rng.below(1000000));
  return r;
}

double mean_prediction_at(const AlphaEstimator& est, Rng& rng, double t_obs) {
  double total = 0;
  for (int i = 0; i < 200; ++i) total += gbt_predict(est, row(rng, t_obs, 0).features);
  return total / 200;
}

struct ModelFixture {
  Cohort validation;
  PopulationModel pop;
};

const ModelFixture& models() {
  static const ModelFixture f = [] {
    SynthConfig c;
    c.n_subjects = 24;
    c.feature_dim = 12;
    c.min_visits = 4;
    c.max_visits = 7;
    c.seed = 31;
    TrainConfig t;
    t.epochs = 60;
    t.latent_dim = 6;
    t.seed = 3;
    ModelFixture out;
    out.pop = train_population(generate_synthetic_cohort(c), t);
    c.seed = 32;
    out.validation = generate_synthetic_cohort(c);
    for (auto& s : out.validation.subjects) s.subject_id = "V" + s.subject_id;  // ids restart at S00001
    return out;
  }();
  return f;
}

}  // namespace

TEST_CASE("oracle_alpha examples") {
  const std::vector<double> yp{1, 2, 3}, ys{0, 2.5, 2};
  CHECK(oracle_alpha(yp, yp, ys) == 1.0);
  CHECK(oracle_alpha(ys, yp, ys) == 0.0);
  std::vector<double> blend(3);
  for (std::size_t i = 0; i < 3; ++i) blend[i] = 0.5 * yp[i] + 0.5 * ys[i];
  CHECK(oracle_alpha(blend, yp, ys) == doctest::Approx(0.5).epsilon(1e-14));
  CHECK(oracle_alpha(blend, yp, yp) == 1.0);
  CHECK_THROWS_AS(oracle_alpha(yp, yp, std::vector<double>{1, 2}), Error);
}

TEST_CASE("oracle_alpha agrees with grid search and is the constrained minimum") {
  Rng rng(41);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(8);
    const auto truth = random_values(rng, n), yp = random_values(rng, n), ys = random_values(rng, n);
    const double a = oracle_alpha(truth, yp, ys);
    REQUIRE(a >= 0.0);
    REQUIRE(a <= 1.0);
    const double j = shrinkage_objective(truth, yp, ys, a);
    for (int k = 0; k <= 1000; ++k) REQUIRE(j <= oracle::shrinkage_objective(truth, yp, ys, k / 1000.0) + 1e-12);
    if (trial < 100) REQUIRE(std::abs(a - oracle::grid_search_alpha(truth, yp, ys).first) <= 1e-3);
  }
}

TEST_CASE("combine_posterior examples") {
  const VectorXd yp = vec({1, 2}), vp = vec({1, 1}), ys = vec({3, 0}), vs = vec({1, 1});
  const auto one = combine_posterior(yp, vp, ys, vs, 1.0, VarianceMode::Covariance, 0.4);
  CHECK(one.mean == yp);
  CHECK(one.variance == vp);
  const auto ind = combine_posterior(yp, vp, ys, vs, 0.5, VarianceMode::Independent);
  CHECK(ind.variance[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(ind.mean[0] == doctest::Approx(2.0).epsilon(1e-15));
  const auto cov = combine_posterior(yp, vp, ys, vs, 0.5, VarianceMode::Covariance, 0.4);
  CHECK(cov.variance[1] == doctest::Approx(0.7).epsilon(1e-15));
  CHECK_THROWS_AS(combine_posterior(yp, vp, ys, vs, 0.5, VarianceMode::Covariance, 1.5), Error);
  CHECK_THROWS_AS(combine_posterior(yp, vp, vec({1}), vec({1}), 0.5, VarianceMode::Independent), Error);
}

TEST_CASE("combine_posterior properties") {
  Rng rng(42);
  for (int trial = 0; trial < 2000; ++trial) {
    VectorXd yp(4), ys(4), vp(4), vs(4);
    for (Index i = 0; i < 4; ++i) {
      yp[i] = rng.normal();
      ys[i] = rng.normal();
      vp[i] = rng.uniform(0.01, 2);
      vs[i] = rng.uniform(0.01, 2);
    }
    const double a = rng.uniform(0.001, 0.999), rho = rng.uniform(0, 1);
    const auto ind = combine_posterior(yp, vp, ys, vs, a, VarianceMode::Independent);
    const auto cov = combine_posterior(yp, vp, ys, vs, a, VarianceMode::Covariance, rho);
    for (Index i = 0; i < 4; ++i) {
      REQUIRE(ind.mean[i] >= std::min(yp[i], ys[i]) - 1e-12);
      REQUIRE(ind.mean[i] <= std::max(yp[i], ys[i]) + 1e-12);
      REQUIRE(ind.variance[i] <= cov.variance[i]);
      if (rho > 0) REQUIRE(ind.variance[i] < cov.variance[i]);
    }
  }
}

TEST_CASE("trajectory_grid is regular up to the last time and merges extra times") {
  const auto grid = trajectory_grid(20, 6);
  CHECK(grid == std::vector<double>{0, 6, 12, 18});
  const std::vector<double> extra{7.5, 12, 20, 40};
  const auto merged = trajectory_grid(20, 6, extra);
  CHECK(merged == std::vector<double>{0, 6, 7.5, 12, 18, 20, 40});
  CHECK(trajectory_grid(18, 6) == std::vector<double>{0, 6, 12, 18});
}

TEST_CASE("gbt: constant targets") {
  Rng rng(43);
  std::vector<AlphaTrainingRow> rows;
  for (int i = 0; i < 50; ++i) rows.push_back(row(rng, rng.uniform(0, 60), 0.7));
  const auto est = gbt_fit(rows);
  for (const auto& r : rows) CHECK(gbt_predict(est, r.features) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(est.gbt.training_mse.front() == doctest::Approx(0.0));
}

TEST_CASE("gbt: single-split step function in t_obs") {
  Rng rng(44);
  auto draw = [&rng](int n) {
    std::vector<AlphaTrainingRow> rows;
    for (int i = 0; i < n; ++i) {
      const double t = rng.uniform(0, 48);
      rows.push_back(row(rng, t, t < 12 ? 0.9 : 0.2));
    }
    return rows;
  };
  const auto train = draw(500), test = draw(500);
  const auto est = gbt_fit(train);
  double mse = 0;
  for (const auto& r : test) {
    const double e = gbt_predict(est, r.features) - r.oracle_alpha;
    mse += e * e;
  }
  CHECK(mse / 500 < 0.01);
  const auto& trace = est.gbt.training_mse;
  REQUIRE(trace.size() == 201u);
  for (std::size_t i = 1; i < trace.size(); ++i) REQUIRE(trace[i] <= trace[i - 1] + 1e-15);
  CHECK(est.importance(kTobsFeature) > 0);
  for (std::size_t k = 0; k < 4; ++k) CHECK(est.importance(kTobsFeature) > est.importance(k));
  for (const auto& tree : est.gbt.trees) CHECK(tree.depth() <= 3);
}

TEST_CASE("gbt: monotone trend in t_obs") {
  Rng rng(45);
  std::vector<AlphaTrainingRow> rows;
  for (int i = 0; i < 400; ++i) {
    const double t = rng.uniform(0, 60);
    rows.push_back(row(rng, t, std::clamp(1 - t / 60 + rng.normal(0, 0.1), 0.0, 1.0)));
  }
  const auto est = gbt_fit(rows);
  CHECK(mean_prediction_at(est, rng, 36) < mean_prediction_at(est, rng, 6));
}

TEST_CASE("gbt: fitting is independent of row order") {
  Rng rng(46);
  std::vector<AlphaTrainingRow> rows;
  for (int i = 0; i < 120; ++i) rows.push_back(row(rng, std::floor(rng.uniform(0, 5)) * 12, rng.uniform()));
  auto shuffled = rows;
  for (std::size_t i = shuffled.size() - 1; i > 0; --i) std::swap(shuffled[i], shuffled[rng.below(i + 1)]);
  const auto a = gbt_fit(rows), b = gbt_fit(shuffled);
  for (int i = 0; i < 200; ++i) {
    const auto probe = row(rng, rng.uniform(0, 60), 0).features;
    REQUIRE(std::abs(gbt_predict(a, probe) - gbt_predict(b, probe)) < 1e-9);
  }
}

TEST_CASE("gbt: identical feature rows give a degenerate base-only model") {
  Rng rng(47);
  std::vector<AlphaTrainingRow> rows;
  for (int i = 0; i < 20; ++i) {
    AlphaTrainingRow r;
    r.features = {0.1, 0.2, 0.3, 0.4, 12};
    r.oracle_alpha = i % 2 ? 1.4 : 0.8;  // mean 1.1, so the clamp shows
    rows.push_back(r);
  }
  const auto est = gbt_fit(rows);
  CHECK(est.gbt.degenerate);
  CHECK(est.gbt.base_prediction == doctest::Approx(1.1));
  CHECK(gbt_predict(est, rows[0].features) == 1.0);
  CHECK_THROWS_AS(gbt_fit(std::vector<AlphaTrainingRow>(rows.begin(), rows.begin() + 9)), Error);
}

TEST_CASE("estimator JSON round trip") {
  Rng rng(48);
  std::vector<AlphaTrainingRow> rows;
  for (int i = 0; i < 60; ++i) rows.push_back(row(rng, rng.uniform(0, 60), rng.uniform()));
  auto est = gbt_fit(rows);
  est.error_correlation_by_h = {{2, 0.25}, {4, 0.4}};
  est.population_ref = "abc";
  const auto back = estimator_from_json(estimator_to_json(est));
  CHECK(estimator_to_json(back) == estimator_to_json(est));
  CHECK(back.correlation_for(2) == 0.25);
  CHECK(back.correlation_for(3) == 0.25);  // tie goes to the shorter history
  CHECK(back.correlation_for(9) == 0.4);
  for (const auto& r : rows) REQUIRE(gbt_predict(back, r.features) == gbt_predict(est, r.features));
  std::string text = estimator_to_json(est);
  CHECK_THROWS_AS(estimator_from_json(text.substr(0, 40)), Error);
}

TEST_CASE("identical predictors are perfectly correlated") {
  Rng rng(49);
  const auto e = random_values(rng, 30);
  CHECK(pearson(e, e) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("build_alpha_dataset counts one row per usable history") {
  const auto& f = models();
  SubjectRecord s = f.validation.subjects[0];
  s.visits.resize(5);
  const Cohort one = with_subjects(f.validation, {s});
  ShrinkageTrainingOptions opts;
  opts.histories = {2, 4};
  const auto ds = build_alpha_dataset(f.pop, one, opts);
  REQUIRE(ds.rows.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(ds.rows[i].h == i + 2);
    CHECK(ds.rows[i].features.t_obs == s.visits[i + 1].time_months);
  }

  SubjectRecord short_one = s;
  short_one.subject_id = "short";
  short_one.visits.resize(2);
  const auto skipped = build_alpha_dataset(f.pop, with_subjects(f.validation, {short_one}), opts);
  CHECK(skipped.rows.empty());
  CHECK(skipped.skipped_subjects == 1);
}

TEST_CASE("alpha dataset on a synthetic cohort") {
  const auto& f = models();
  ShrinkageTrainingOptions opts;
  opts.workers = 2;
  const auto trained = train_shrinkage(f.pop, f.validation, opts, GbtConfig{});
  const auto& rows = trained.dataset.rows;
  REQUIRE(rows.size() > 20);
  for (const auto& r : rows) {
    REQUIRE(r.oracle_alpha >= 0.0);
    REQUIRE(r.oracle_alpha <= 1.0);
    REQUIRE(r.features.mean_vp >= 0.0);
    REQUIRE(r.features.mean_vs >= 0.0);
  }
  for (std::size_t i = 1; i < rows.size(); ++i) {
    REQUIRE(std::tie(rows[i - 1].subject_id, rows[i - 1].h) < std::tie(rows[i].subject_id, rows[i].h));
  }
  CHECK(trained.estimator.importance(kTobsFeature) > 0);
  for (const auto& [h, rho] : trained.estimator.error_correlation_by_h) {
    CHECK(std::isfinite(rho));
    CHECK(rho >= -1.0);
    CHECK(rho <= 1.0);
  }
  CHECK(trained.estimator.validated_on(f.validation.subjects[0].subject_id));

  // Serial and parallel sweeps agree exactly.
  ShrinkageTrainingOptions serial = opts;
  serial.workers = 1;
  const auto again = build_alpha_dataset(f.pop, f.validation, serial);
  REQUIRE(again.rows.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) REQUIRE(again.rows[i].oracle_alpha == rows[i].oracle_alpha);

  std::ostringstream csv;
  write_alpha_dataset_csv(rows, csv);
  CHECK(csv.str().rfind("subject_id,h,mean_yp,mean_ys,mean_vp,mean_vs,t_obs,alpha\n", 0) == 0);
}

TEST_CASE("personalize: single visit falls back to the population curve") {
  const auto& f = models();
  const auto& s = f.validation.subjects[1];
  const auto observed = truncate_history(s, 1).observed;
  const auto grid = trajectory_grid(60, 6);
  AlphaEstimator est;
  const auto out = personalize(f.pop, est, observed, grid);
  const auto pop = predict_population(f.pop, observed, grid);
  CHECK(out.alpha == 1.0);
  CHECK(out.curve.mean == pop.mean);
  CHECK(out.curve.variance == pop.variance);
}

TEST_CASE("personalize: alpha sources") {
  const auto& f = models();
  ShrinkageTrainingOptions opts;
  const auto trained = train_shrinkage(f.pop, f.validation, opts);
  const auto& s = f.validation.subjects[2];
  const auto observed = truncate_history(s, 3).observed;
  const auto grid = trajectory_grid(s.last_time(), 6);

  const auto adaptive = personalize(f.pop, trained.estimator, observed, grid);
  CHECK(adaptive.alpha >= 0.0);
  CHECK(adaptive.alpha <= 1.0);
  CHECK(adaptive.alpha == gbt_predict(trained.estimator, adaptive.features));
  CHECK(adaptive.features.t_obs == observed.last_time());
  CHECK(adaptive.rho == trained.estimator.correlation_for(3));

  PersonalizeOptions constant;
  constant.alpha_source = AlphaSource::Constant;
  constant.constant_alpha = 0.3;
  constant.variance_mode = VarianceMode::Independent;
  const auto c = personalize(f.pop, trained.estimator, observed, grid, constant);
  CHECK(c.alpha == 0.3);
  CHECK(c.rho == 0.0);
  const auto expect = combine_posterior(c.population.mean, c.population.variance, c.subject.mean,
                                        c.subject.variance, 0.3, VarianceMode::Independent);
  CHECK(c.curve.mean == expect.mean);
  CHECK(c.curve.variance == expect.variance);

  PersonalizeOptions deterministic;
  deterministic.alpha_source = AlphaSource::Deterministic;
  const auto d = personalize(f.pop, trained.estimator, observed, grid, deterministic);
  CHECK(d.alpha >= 0.0);
  CHECK(d.alpha <= 1.0);

  const auto path = std::filesystem::temp_directory_path() / "dkgp_unit_estimator.json";
  save_estimator(trained.estimator, path);
  const auto loaded = load_estimator(path);
  CHECK(personalize(f.pop, loaded, observed, grid).curve.mean == adaptive.curve.mean);
  std::filesystem::remove(path);
}

TEST_CASE("mode and source names parse back") {
  for (auto m : {VarianceMode::Independent, VarianceMode::Covariance})
    CHECK(parse_variance_mode(to_string(m)) == m);
  for (auto a : {AlphaSource::Adaptive, AlphaSource::Constant, AlphaSource::Deterministic})
    CHECK(parse_alpha_source(to_string(a)) == a);
  CHECK_THROWS_AS(parse_variance_mode("sideways"), Error);
}
