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

#include <boost/property_tree/ptree.hpp>
#include <boost/property_tree/xml_parser.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "dkgp/cli.hpp"
#include "dkgp/dataset.hpp"
#include "dkgp/error.hpp"
#include "dkgp/io_util.hpp"
#include "dkgp/plot.hpp"

namespace fs = std::filesystem;
using namespace dkgp;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "dkgp_cli_unit";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string p(const std::string& name) { return (work_dir() / name).string(); }

// A small trained model and estimator shared by the slower tests.
const fs::path& trained() {
  static const fs::path dir = [] {
    REQUIRE(run({"synth", "--subjects", "60", "--features", "12", "--seed", "3", "--out", p("c.csv")}).code == 0);
    REQUIRE(run({"split", "--cohort", p("c.csv"), "--validation-fraction", "0.3", "--test-fraction", "0.3",
                 "--seed", "3", "--out-dir", p("split")})
                .code == 0);
    REQUIRE(run({"train-population", "--cohort", p("split/train.csv"), "--epochs", "60", "--latent-dim", "6",
                 "--out", p("model.json")})
                .code == 0);
    REQUIRE(run({"train-shrinkage", "--model", p("model.json"), "--cohort", p("split/validation.csv"),
                 "--subject-epochs", "50", "--out", p("estimator.json")})
                .code == 0);
    return work_dir();
  }();
  return dir;
}

boost::property_tree::ptree parse_xml(const fs::path& path) {
  boost::property_tree::ptree tree;
  std::ifstream in(path);
  boost::property_tree::read_xml(in, tree);
  return tree;
}

std::vector<std::pair<double, double>> band_vertices(const boost::property_tree::ptree& svg) {
  std::vector<std::pair<double, double>> points;
  for (const auto& [name, node] : svg.get_child("svg")) {
    if (name != "polygon" || node.get<std::string>("<xmlattr>.id", "") != "band") continue;
    std::istringstream in(node.get<std::string>("<xmlattr>.points"));
    std::string pair;
    while (in >> pair) {
      const auto comma = pair.find(',');
      points.emplace_back(std::stod(pair.substr(0, comma)), std::stod(pair.substr(comma + 1)));
    }
  }
  return points;
}

}  // namespace

TEST_CASE("synth writes the cohort and a manifest") {
  const auto r = run({"synth", "--subjects", "200", "--seed", "7", "--out", p("cohort.csv")});
  REQUIRE(r.code == 0);
  REQUIRE(fs::exists(p("cohort.csv")));
  REQUIRE(fs::exists(p("cohort.csv.manifest.json")));
  CHECK(load_cohort_csv(p("cohort.csv")).size() == 200);
  const auto m = nlohmann::json::parse(read_file(p("cohort.csv.manifest.json")));
  CHECK(m.at("command") == "synth");
  CHECK(m.at("seed") == 7);
  CHECK(m.at("config").at("subjects") == "200");
  const std::string digest = m.at("outputs").begin().value().get<std::string>();
  CHECK(digest == sha256_file_hex(p("cohort.csv")));
  CHECK(digest.size() == 64);

  REQUIRE(run({"synth", "--subjects", "200", "--seed", "7", "--out", p("cohort2.csv")}).code == 0);
  CHECK(sha256_file_hex(p("cohort2.csv")) == digest);
}

TEST_CASE("usage errors exit 1") {
  const auto missing = run({"personalize", "--estimator", "e.json", "--cohort", "c.csv", "--subject", "S1",
                            "--out", p("x.json")});
  CHECK(missing.code == cli::kExitUsage);
  CHECK(missing.err.find("--model") != std::string::npos);
  const auto unknown = run({"synth", "--out", p("y.csv"), "--frobnicate", "3"});
  CHECK(unknown.code == cli::kExitUsage);
  CHECK_FALSE(unknown.err.empty());
  CHECK(run({}).code == cli::kExitUsage);
  CHECK(run({"--help"}).code == cli::kExitOk);
}

TEST_CASE("data errors exit 2") {
  const auto r = run({"split", "--cohort", p("does-not-exist.csv"), "--out-dir", p("nowhere")});
  CHECK(r.code == cli::kExitFailure);
  CHECK(r.err.find("dkgp split") != std::string::npos);
}

TEST_CASE("config file fills in values and flags take precedence") {
  {
    std::ofstream cfg(p("synth.ini"));
    cfg << "subjects=5\nseed=11\n";
  }
  REQUIRE(run({"synth", "--config", p("synth.ini"), "--out", p("from_config.csv")}).code == 0);
  CHECK(load_cohort_csv(p("from_config.csv")).size() == 5);
  REQUIRE(run({"synth", "--config", p("synth.ini"), "--subjects", "6", "--out", p("from_flag.csv")}).code == 0);
  CHECK(load_cohort_csv(p("from_flag.csv")).size() == 6);
  const auto m = nlohmann::json::parse(read_file(p("from_flag.csv.manifest.json")));
  CHECK(m.at("config").at("subjects") == "6");
  CHECK(m.at("seed") == 11);

  {
    std::ofstream cfg(p("sections.ini"));
    cfg << "verbose=true\n[synth]\nsubjects=4\n[split]\nseed=99\n";
  }
  const auto r = run({"synth", "--config", p("sections.ini"), "--out", p("from_section.csv")});
  REQUIRE(r.code == 0);
  CHECK(load_cohort_csv(p("from_section.csv")).size() == 4);
  const auto ms = nlohmann::json::parse(read_file(p("from_section.csv.manifest.json")));
  CHECK(ms.at("seed") == 0);
  CHECK(run({"synth", "--config", p("missing.ini"), "--out", p("z.csv")}).code == cli::kExitUsage);
}

TEST_CASE("evaluate refuses training subjects") {
  const auto& dir = trained();
  const auto r = run({"evaluate", "--model", (dir / "model.json").string(), "--estimator",
                      (dir / "estimator.json").string(), "--cohort", (dir / "split/train.csv").string(), "--out",
                      p("leak.json")});
  CHECK(r.code == cli::kExitFailure);
  CHECK(r.err.find("split leakage") != std::string::npos);
  CHECK_FALSE(fs::exists(p("leak.json")));
}

TEST_CASE("evaluate writes a report, a CSV and a manifest") {
  const auto& dir = trained();
  const auto r = run({"evaluate", "--model", (dir / "model.json").string(), "--estimator",
                      (dir / "estimator.json").string(), "--cohort", (dir / "split/test.csv").string(),
                      "--history", "2,3", "--subject-epochs", "50", "--out", p("report.json"), "--csv-out",
                      p("report.csv")});
  REQUIRE(r.code == 0);
  const auto report = nlohmann::json::parse(read_file(p("report.json")));
  CHECK(report.at("histories") == nlohmann::json::array({2, 3}));
  CHECK(fs::exists(p("report.csv")));
  const auto m = nlohmann::json::parse(read_file(p("report.json.manifest.json")));
  CHECK(m.at("inputs").size() == 3);
}

TEST_CASE("plot output is well-formed SVG") {
  PosteriorCurve c;
  c.times = VectorXd(2);
  c.times << 0, 12;
  c.mean = VectorXd(2);
  c.mean << 1.0, 0.8;
  c.variance = VectorXd(2);
  c.variance << 0.01, 0.04;
  SubjectRecord s;
  s.subject_id = "S<1>";
  s.visits = {{0, 1.02}};
  emit_plot(c, s, p("two.svg"));
  const auto tree = parse_xml(p("two.svg"));
  CHECK(band_vertices(tree).size() == 4);
  CHECK_THROWS_AS(emit_plot(c, s, "/nonexistent-dir/x/plot.svg"), Error);
  CHECK_THROWS_AS(render_plot_svg(PosteriorCurve{}, s), Error);
}

TEST_CASE("personalize and plot a fast progressor") {
  const auto& dir = trained();
  const Cohort test = load_cohort_csv(dir / "split/test.csv");
  const SubjectRecord* fast = nullptr;
  for (const auto& s : test.subjects)
    if (s.progression_label == ProgressionLabel::FastProgressor && s.num_visits() >= 3) fast = &s;
  REQUIRE(fast != nullptr);

  const auto r = run({"personalize", "--model", (dir / "model.json").string(), "--estimator",
                      (dir / "estimator.json").string(), "--cohort", (dir / "split/test.csv").string(),
                      "--subject", fast->subject_id, "--history", "2", "--subject-epochs", "50", "--out",
                      p("fast.json"), "--plot", p("fast.svg")});
  REQUIRE(r.code == 0);
  const auto j = nlohmann::json::parse(read_file(p("fast.json")));
  const auto times = j.at("times").get<std::vector<double>>();
  const double t_obs = j.at("t_obs").get<double>();
  CHECK(t_obs == fast->visits[1].time_months);
  CHECK(j.at("alpha").get<double>() >= 0.0);
  CHECK(j.at("alpha").get<double>() <= 1.0);

  const auto verts = band_vertices(parse_xml(p("fast.svg")));
  const std::size_t n = times.size();
  REQUIRE(verts.size() == 2 * n);
  auto width_at = [&](double t) {
    const auto i = static_cast<std::size_t>(std::find(times.begin(), times.end(), t) - times.begin());
    REQUIRE(i < n);
    // Upper edge runs left to right, lower edge right to left.
    return verts[2 * n - 1 - i].second - verts[i].second;
  };
  CHECK(width_at(120.0) > width_at(t_obs));

  REQUIRE(run({"plot", "--input", p("fast.json"), "--out", p("fast2.svg")}).code == 0);
  CHECK(read_file(p("fast2.svg")) == read_file(p("fast.svg")));
}
