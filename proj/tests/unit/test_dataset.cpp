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
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "dkgp/dataset.hpp"
#include "dkgp/error.hpp"

using namespace dkgp;

namespace {

Cohort parse(const std::string& text) {
  std::istringstream in(text);
  return read_cohort_csv(in);
}

std::string serialize(const Cohort& cohort) {
  std::ostringstream out;
  write_cohort_csv(cohort, out);
  return out.str();
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Io;
}

SynthConfig small_config(std::uint64_t seed = 3) {
  SynthConfig c;
  c.n_subjects = 40;
  c.feature_dim = 12;
  c.seed = seed;
  return c;
}

std::set<std::string> ids(const Cohort& c) {
  std::set<std::string> out;
  for (const auto& s : c.subjects) out.insert(s.subject_id);
  return out;
}

}  // namespace

TEST_CASE("read_cohort_csv: minimal file") {
  const Cohort c = parse(
      "subject_id,time_months,y,x_0,c_0,label\n"
      "A,0,1.5,0.1,1,stable\n"
      "A,12,1.25,0.1,1,stable\n");
  REQUIRE(c.size() == 1);
  CHECK(c.feature_dim == 1);
  CHECK(c.covariate_dim == 1);
  CHECK(c.subjects[0].num_visits() == 2);
  CHECK(c.subjects[0].visits[1].value == 1.25);
  CHECK(c.subjects[0].progression_label == ProgressionLabel::Stable);
}

TEST_CASE("read_cohort_csv: times are re-based and sorted") {
  const Cohort c = parse(
      "subject_id,time_months,y,x_0,label\n"
      "A,18,2,0,unknown\n"
      "A,6,1,0,unknown\n");
  REQUIRE(c.subjects[0].num_visits() == 2);
  CHECK(c.subjects[0].visits[0].time_months == 0.0);
  CHECK(c.subjects[0].visits[0].value == 1.0);
  CHECK(c.subjects[0].visits[1].time_months == 12.0);
}

TEST_CASE("read_cohort_csv: missing column names the column") {
  try {
    parse("subject_id,time_months,x_0,label\nA,0,1,stable\n");
    FAIL("expected a schema error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Schema);
    CHECK(e.detail() == "y");
  }
}

TEST_CASE("read_cohort_csv: bad values report the row") {
  for (const char* bad : {"nan", "inf", "abc", ""}) {
    try {
      parse(std::string("subject_id,time_months,y,label\nA,0,1,stable\nA,6,") + bad + ",stable\n");
      FAIL("expected a parse error");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::Parse);
      CHECK(e.detail().find("row 3") != std::string::npos);
    }
  }
}

TEST_CASE("read_cohort_csv: duplicate visits and inconsistent baselines") {
  CHECK(kind_of([] { parse("subject_id,time_months,y,label\nA,6,1,stable\nA,6,2,stable\n"); }) ==
        ErrorKind::DuplicateVisit);
  CHECK(kind_of([] { parse("subject_id,time_months,y,x_0,label\nA,0,1,0,stable\nA,6,2,1,stable\n"); }) ==
        ErrorKind::Parse);
  CHECK(kind_of([] { parse("subject_id,time_months,y,label\nA,0,1,sideways\n"); }) == ErrorKind::Parse);
}

TEST_CASE("cohort CSV round-trips at 9 significant digits") {
  const Cohort c = generate_synthetic_cohort(small_config());
  const std::string once = serialize(c);
  const Cohort back = parse(once);
  REQUIRE(back.size() == c.size());
  CHECK(back.feature_dim == c.feature_dim);
  CHECK(back.covariate_dim == c.covariate_dim);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto& a = c.subjects[i];
    const auto& b = back.subjects[i];
    REQUIRE(a.subject_id == b.subject_id);
    REQUIRE(a.num_visits() == b.num_visits());
    CHECK(a.progression_label == b.progression_label);
    for (std::size_t v = 0; v < a.num_visits(); ++v) {
      CHECK(b.visits[v].time_months == doctest::Approx(a.visits[v].time_months).epsilon(1e-8));
      CHECK(b.visits[v].value == doctest::Approx(a.visits[v].value).epsilon(1e-8));
    }
    CHECK((a.baseline_features - b.baseline_features).cwiseAbs().maxCoeff() <=
          1e-8 * std::max(1.0, a.baseline_features.cwiseAbs().maxCoeff()));
  }
  // Formatting is a fixed point after one pass.
  CHECK(serialize(back) == once);

  const auto path = std::filesystem::temp_directory_path() / "dkgp_unit_roundtrip.csv";
  save_cohort_csv(c, path);
  CHECK(serialize(load_cohort_csv(path)) == once);
  std::filesystem::remove(path);
}

TEST_CASE("synthetic cohorts are reproducible") {
  CHECK(serialize(generate_synthetic_cohort(small_config(7))) ==
        serialize(generate_synthetic_cohort(small_config(7))));
  CHECK(serialize(generate_synthetic_cohort(small_config(7))) !=
        serialize(generate_synthetic_cohort(small_config(8))));
}

TEST_CASE("synthetic cohorts satisfy the record invariants") {
  const Cohort c = generate_synthetic_cohort(small_config());
  CHECK_NOTHROW(c.validate());
  CHECK(c.covariate_dim == kSynthCovariateDim);
  for (const auto& s : c.subjects) {
    CHECK(s.visits.front().time_months == 0.0);
    CHECK(s.num_visits() >= 4);
    CHECK(s.num_visits() <= 8);
    CHECK(s.covariates[2] >= 0.0);
    CHECK(s.covariates[2] <= 2.0);
  }
}

TEST_CASE("stable-only cohort is flat up to measurement noise") {
  SynthConfig c = small_config();
  c.n_subjects = 200;
  c.mix_stable = 1;
  c.mix_slow = 0;
  c.mix_fast = 0;
  c.noise_sd = 1e-9;
  const Cohort cohort = generate_synthetic_cohort(c);
  double ss = 0;
  std::size_t dof = 0;
  for (const auto& s : cohort.subjects) {
    CHECK(s.progression_label == ProgressionLabel::Stable);
    double lo = s.visits[0].value, hi = lo, mean = 0;
    for (const auto& v : s.visits) {
      lo = std::min(lo, v.value);
      hi = std::max(hi, v.value);
      mean += v.value;
    }
    mean /= static_cast<double>(s.num_visits());
    for (const auto& v : s.visits) ss += (v.value - mean) * (v.value - mean);
    dof += s.num_visits() - 1;
    // The range of up to 8 unit normals stays well inside 10 sd.
    CHECK(hi - lo <= 10 * c.noise_sd);
  }
  CHECK(std::sqrt(ss / static_cast<double>(dof)) == doctest::Approx(c.noise_sd).epsilon(0.1));
}

TEST_CASE("class counts match the mix within three binomial sd") {
  SynthConfig c = small_config();
  c.n_subjects = 1000;
  const Cohort cohort = generate_synthetic_cohort(c);
  std::map<ProgressionLabel, double> counts;
  for (const auto& s : cohort.subjects) counts[s.progression_label] += 1;
  const std::pair<ProgressionLabel, double> expected[] = {{ProgressionLabel::Stable, 0.5},
                                                          {ProgressionLabel::SlowProgressor, 0.3},
                                                          {ProgressionLabel::FastProgressor, 0.2}};
  for (const auto& [label, p] : expected) {
    const double sd = std::sqrt(1000 * p * (1 - p));
    CHECK(std::abs(counts[label] - 1000 * p) <= 3 * sd);
  }
}

TEST_CASE("fast template declines by its amplitude at month 120") {
  for (double a = 0.8; a <= 1.6 + 1e-12; a += 0.2)
    for (double mid = 18; mid <= 60; mid += 6)
      for (double w = 6; w <= 12; w += 2) {
        CHECK(fast_decline(0, a, mid, w) == 0.0);
        CHECK(fast_decline(120, a, mid, w) - fast_decline(0, a, mid, w) >= 0.8);
        CHECK(fast_decline(60, a, mid, w) < fast_decline(90, a, mid, w));
      }
}

TEST_CASE("fast progressors decline over follow-up") {
  SynthConfig c = small_config();
  c.n_subjects = 300;
  c.noise_sd = 0.01;
  const Cohort cohort = generate_synthetic_cohort(c);
  for (const auto& s : cohort.subjects) {
    if (s.progression_label != ProgressionLabel::FastProgressor) continue;
    CHECK(s.visits.back().value < s.visits.front().value);
  }
}

TEST_CASE("synth config validation") {
  SynthConfig c;
  c.n_subjects = 0;
  CHECK(kind_of([&] { generate_synthetic_cohort(c); }) == ErrorKind::Config);
  c = SynthConfig{};
  c.mix_fast = 0.5;
  CHECK(kind_of([&] { generate_synthetic_cohort(c); }) == ErrorKind::Config);
  c = SynthConfig{};
  c.noise_sd = 0;
  CHECK(kind_of([&] { generate_synthetic_cohort(c); }) == ErrorKind::Config);
}

TEST_CASE("split_cohort: sizes round to nearest with the remainder in train") {
  SynthConfig c = small_config();
  c.n_subjects = 10;
  const auto split = split_cohort(generate_synthetic_cohort(c), 0.8, 0.1, 0.1, 1);
  CHECK(split.train.size() == 8);
  CHECK(split.validation.size() == 1);
  CHECK(split.test.size() == 1);

  c.n_subjects = 2200;
  c.feature_dim = 2;
  const auto big = split_cohort(generate_synthetic_cohort(c), 1600.0 / 2200, 200.0 / 2200, 400.0 / 2200, 1);
  CHECK(big.train.size() == 1600);
  CHECK(big.validation.size() == 200);
  CHECK(big.test.size() == 400);
}

TEST_CASE("split_cohort is a partition for 100 seeds") {
  const Cohort cohort = generate_synthetic_cohort(small_config());
  const auto all = ids(cohort);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    const auto s = split_cohort(cohort, 0.6, 0.2, 0.2, seed);
    const auto a = ids(s.train), b = ids(s.validation), t = ids(s.test);
    REQUIRE(a.size() + b.size() + t.size() == all.size());
    std::set<std::string> un = a;
    un.insert(b.begin(), b.end());
    un.insert(t.begin(), t.end());
    REQUIRE(un == all);
  }
  const auto x = split_cohort(cohort, 0.6, 0.2, 0.2, 5);
  const auto y = split_cohort(cohort, 0.6, 0.2, 0.2, 5);
  CHECK(ids(x.test) == ids(y.test));
}

TEST_CASE("split_cohort errors") {
  SynthConfig c = small_config();
  c.n_subjects = 2;
  const Cohort tiny = generate_synthetic_cohort(c);
  CHECK(kind_of([&] { split_cohort(tiny, 0.5, 0.25, 0.25, 0); }) == ErrorKind::Split);
  const Cohort cohort = generate_synthetic_cohort(small_config());
  CHECK(kind_of([&] { split_cohort(cohort, 0.5, 0.5, 0.5, 0); }) == ErrorKind::Split);
  CHECK(kind_of([&] { split_cohort(cohort, 1.0, 0.0, 0.0, 0); }) == ErrorKind::Split);
}

TEST_CASE("truncate_history") {
  SubjectRecord s;
  s.subject_id = "A";
  s.baseline_features = VectorXd::Constant(2, 0.5);
  s.covariates = VectorXd::Constant(1, 1.0);
  for (int v = 0; v < 5; ++v) s.visits.push_back({12.0 * v, -0.1 * v});

  const auto two = truncate_history(s, 2);
  CHECK(two.observed.num_visits() == 2);
  CHECK(two.heldout.num_visits() == 3);
  CHECK(two.observed.last_time() == 12.0);
  CHECK(two.heldout.baseline_features == s.baseline_features);
  CHECK(two.observed.covariates == s.covariates);

  const auto last = truncate_history(s, 4);
  REQUIRE(last.heldout.num_visits() == 1);
  CHECK(last.heldout.visits[0].time_months == 48.0);

  CHECK(kind_of([&] { truncate_history(s, 5); }) == ErrorKind::History);
  CHECK(kind_of([&] { truncate_history(s, 0); }) == ErrorKind::History);
}
