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

#include "dkgp/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "dkgp/error.hpp"
#include "dkgp/rng.hpp"

namespace dkgp {

std::string_view to_string(ProgressionLabel label) {
  switch (label) {
    case ProgressionLabel::Stable: return "stable";
    case ProgressionLabel::SlowProgressor: return "slow";
    case ProgressionLabel::FastProgressor: return "fast";
    case ProgressionLabel::Unknown: return "unknown";
  }
  return "unknown";
}

ProgressionLabel parse_label(std::string_view text) {
  if (text == "stable") return ProgressionLabel::Stable;
  if (text == "slow") return ProgressionLabel::SlowProgressor;
  if (text == "fast") return ProgressionLabel::FastProgressor;
  if (text == "unknown") return ProgressionLabel::Unknown;
  throw Error(ErrorKind::Parse, "unknown label '" + std::string(text) + "'");
}

void SubjectRecord::validate() const {
  if (visits.empty()) throw Error(ErrorKind::Parse, "subject " + subject_id + " has no visits");
  if (visits.front().time_months != 0.0) {
    throw Error(ErrorKind::Parse, "subject " + subject_id + " does not start at month 0");
  }
  for (std::size_t i = 0; i < visits.size(); ++i) {
    if (!std::isfinite(visits[i].time_months) || !std::isfinite(visits[i].value)) {
      throw Error(ErrorKind::Parse, "subject " + subject_id + " has a non-finite visit");
    }
    if (i > 0 && !(visits[i].time_months > visits[i - 1].time_months)) {
      throw Error(ErrorKind::DuplicateVisit,
                  "subject " + subject_id + " visit times are not strictly increasing");
    }
  }
  if (!baseline_features.allFinite() || !covariates.allFinite()) {
    throw Error(ErrorKind::Parse, "subject " + subject_id + " has non-finite features");
  }
}

std::size_t Cohort::total_visits() const {
  std::size_t total = 0;
  for (const auto& s : subjects) total += s.visits.size();
  return total;
}

const SubjectRecord* Cohort::find(std::string_view subject_id) const {
  for (const auto& s : subjects)
    if (s.subject_id == subject_id) return &s;
  return nullptr;
}

void Cohort::validate() const {
  std::unordered_set<std::string> ids;
  for (const auto& s : subjects) {
    if (s.baseline_features.size() != feature_dim || s.covariates.size() != covariate_dim) {
      throw Error(ErrorKind::Shape, "subject " + s.subject_id + " has mismatched dimensions");
    }
    if (!ids.insert(s.subject_id).second) {
      throw Error(ErrorKind::Parse, "duplicate subject id " + s.subject_id);
    }
    s.validate();
  }
}

Cohort with_subjects(const Cohort& like, std::vector<SubjectRecord> subjects) {
  Cohort out;
  out.subjects = std::move(subjects);
  out.feature_dim = like.feature_dim;
  out.covariate_dim = like.covariate_dim;
  return out;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  return s;
}

double parse_number(std::string_view text, std::size_t line_no, std::string_view column) {
  text = trim(text);
  double value = 0;
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(value)) {
    throw Error(ErrorKind::Parse, "row " + std::to_string(line_no) + ": bad value '" +
                                      std::string(text) + "' in column " + std::string(column));
  }
  return value;
}

// Indexed columns named <prefix><k>, required to be contiguous from 0.
std::vector<std::size_t> indexed_columns(const std::vector<std::string_view>& header,
                                         std::string_view prefix) {
  std::map<long, std::size_t> found;
  for (std::size_t c = 0; c < header.size(); ++c) {
    const auto name = header[c];
    if (name.size() <= prefix.size() || name.substr(0, prefix.size()) != prefix) continue;
    long index = -1;
    const auto rest = name.substr(prefix.size());
    const auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), index);
    if (ec != std::errc() || ptr != rest.data() + rest.size() || index < 0) continue;
    found[index] = c;
  }
  std::vector<std::size_t> columns;
  for (long k = 0; k < static_cast<long>(found.size()); ++k) {
    const auto it = found.find(k);
    if (it == found.end()) {
      throw Error(ErrorKind::Schema, std::string(prefix) + std::to_string(k));
    }
    columns.push_back(it->second);
  }
  return columns;
}

std::string format_number(double value) {
  char buffer[40];
  std::snprintf(buffer, sizeof buffer, "%.9g", value);
  return buffer;
}

}  // namespace

Cohort read_cohort_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw Error(ErrorKind::Schema, "missing header");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const std::string header_line = line;
  std::vector<std::string_view> header = split_fields(header_line);
  for (auto& h : header) h = trim(h);

  auto column = [&header](std::string_view name) {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw Error(ErrorKind::Schema, std::string(name));
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t id_col = column("subject_id");
  const std::size_t time_col = column("time_months");
  const std::size_t y_col = column("y");
  const std::size_t label_col = column("label");
  const auto x_cols = indexed_columns(header, "x_");
  const auto c_cols = indexed_columns(header, "c_");

  Cohort cohort;
  cohort.feature_dim = static_cast<Index>(x_cols.size());
  cohort.covariate_dim = static_cast<Index>(c_cols.size());
  std::unordered_map<std::string, std::size_t> index_of;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) {
      throw Error(ErrorKind::Parse, "row " + std::to_string(line_no) + ": expected " +
                                        std::to_string(header.size()) + " fields, got " +
                                        std::to_string(fields.size()));
    }
    const std::string id(trim(fields[id_col]));
    if (id.empty()) throw Error(ErrorKind::Parse, "row " + std::to_string(line_no) + ": empty subject_id");
    const double t = parse_number(fields[time_col], line_no, "time_months");
    if (t < 0) throw Error(ErrorKind::Parse, "row " + std::to_string(line_no) + ": negative time");
    const double y = parse_number(fields[y_col], line_no, "y");
    VectorXd x(cohort.feature_dim);
    for (std::size_t k = 0; k < x_cols.size(); ++k)
      x[static_cast<Index>(k)] = parse_number(fields[x_cols[k]], line_no, header[x_cols[k]]);
    VectorXd c(cohort.covariate_dim);
    for (std::size_t k = 0; k < c_cols.size(); ++k)
      c[static_cast<Index>(k)] = parse_number(fields[c_cols[k]], line_no, header[c_cols[k]]);
    ProgressionLabel label;
    try {
      label = parse_label(trim(fields[label_col]));
    } catch (const Error& e) {
      throw Error(ErrorKind::Parse, "row " + std::to_string(line_no) + ": " + e.detail());
    }

    auto [it, inserted] = index_of.emplace(id, cohort.subjects.size());
    if (inserted) {
      SubjectRecord record;
      record.subject_id = id;
      record.baseline_features = std::move(x);
      record.covariates = std::move(c);
      record.progression_label = label;
      cohort.subjects.push_back(std::move(record));
    } else {
      const SubjectRecord& record = cohort.subjects[it->second];
      if (record.baseline_features != x || record.covariates != c || record.progression_label != label) {
        throw Error(ErrorKind::Parse, "row " + std::to_string(line_no) + ": baseline features of " +
                                          id + " differ from its earlier rows");
      }
    }
    cohort.subjects[it->second].visits.push_back({t, y});
  }

  for (auto& subject : cohort.subjects) {
    auto& visits = subject.visits;
    std::stable_sort(visits.begin(), visits.end(),
                     [](const Visit& a, const Visit& b) { return a.time_months < b.time_months; });
    for (std::size_t i = 1; i < visits.size(); ++i) {
      if (visits[i].time_months == visits[i - 1].time_months) {
        throw Error(ErrorKind::DuplicateVisit, "subject " + subject.subject_id +
                                                   " has two visits at month " +
                                                   format_number(visits[i].time_months));
      }
    }
    const double origin = visits.front().time_months;
    for (auto& v : visits) v.time_months -= origin;
  }
  cohort.validate();
  return cohort;
}

Cohort load_cohort_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  return read_cohort_csv(in);
}

void write_cohort_csv(const Cohort& cohort, std::ostream& out) {
  out << "subject_id,time_months,y";
  for (Index k = 0; k < cohort.feature_dim; ++k) out << ",x_" << k;
  for (Index k = 0; k < cohort.covariate_dim; ++k) out << ",c_" << k;
  out << ",label\n";
  for (const auto& s : cohort.subjects) {
    std::string tail;
    for (Index k = 0; k < cohort.feature_dim; ++k) tail += "," + format_number(s.baseline_features[k]);
    for (Index k = 0; k < cohort.covariate_dim; ++k) tail += "," + format_number(s.covariates[k]);
    tail += ",";
    tail += to_string(s.progression_label);
    for (const auto& v : s.visits) {
      out << s.subject_id << ',' << format_number(v.time_months) << ',' << format_number(v.value)
          << tail << '\n';
    }
  }
}

void save_cohort_csv(const Cohort& cohort, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  write_cohort_csv(cohort, out);
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

void SynthConfig::validate() const {
  if (n_subjects == 0) throw Error(ErrorKind::Config, "synthetic cohort needs at least one subject");
  if (feature_dim < 1) throw Error(ErrorKind::Config, "feature_dim must be positive");
  if (min_visits < 1 || max_visits < min_visits) throw Error(ErrorKind::Config, "empty visit range");
  if (!(min_spacing_months > 0) || max_spacing_months < min_spacing_months) {
    throw Error(ErrorKind::Config, "empty visit spacing range");
  }
  if (mix_stable < 0 || mix_slow < 0 || mix_fast < 0 ||
      std::abs(mix_stable + mix_slow + mix_fast - 1.0) > 1e-9) {
    throw Error(ErrorKind::Config, "class mix must be non-negative and sum to 1");
  }
  if (!(noise_sd > 0)) throw Error(ErrorKind::Config, "noise_sd must be positive");
  if (!(feature_noise_sd >= 0)) throw Error(ErrorKind::Config, "feature_noise_sd must be non-negative");
}

double fast_decline(double t_months, double amplitude, double midpoint_months, double width_months) {
  auto logistic = [&](double t) { return 1.0 / (1.0 + std::exp(-(t - midpoint_months) / width_months)); };
  const double at_zero = logistic(0.0);
  return amplitude * (logistic(t_months) - at_zero) / (logistic(120.0) - at_zero);
}

Cohort generate_synthetic_cohort(const SynthConfig& config) {
  config.validate();
  Cohort cohort;
  cohort.feature_dim = config.feature_dim;
  cohort.covariate_dim = kSynthCovariateDim;
  cohort.subjects.reserve(config.n_subjects);
  const Rng root(config.seed);

  for (std::size_t i = 0; i < config.n_subjects; ++i) {
    Rng rng = root.fork(i);
    SubjectRecord s;
    char id[32];
    std::snprintf(id, sizeof id, "S%05zu", i + 1);
    s.subject_id = id;

    const double u = rng.uniform();
    s.progression_label = u < config.mix_stable                   ? ProgressionLabel::Stable
                          : u < config.mix_stable + config.mix_slow ? ProgressionLabel::SlowProgressor
                                                                    : ProgressionLabel::FastProgressor;
    const double intercept = rng.normal(0.0, kSynthInterceptSd);

    // Class means shift coordinates 1-5 (any progressor) and 6-10 (fast only)
    // by one noise sd. Coordinate 0 is the baseline measurement itself in
    // units of measurement noise, so it pins the intercept to about noise_sd.
    s.baseline_features.resize(config.feature_dim);
    for (Index k = 0; k < config.feature_dim; ++k) {
      double mean = 0.0;
      if (k == 0) mean = intercept / config.noise_sd;
      if (k >= 1 && k <= 5 && s.progression_label != ProgressionLabel::Stable) mean = 1.0;
      if (k >= 6 && k <= 10 && s.progression_label == ProgressionLabel::FastProgressor) mean = 1.0;
      s.baseline_features[k] = mean + rng.normal(0.0, config.feature_noise_sd);
    }

    s.covariates.resize(kSynthCovariateDim);
    s.covariates[0] = rng.normal(0.0, 0.7);
    s.covariates[1] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    const double dx = rng.uniform();
    s.covariates[2] = dx < 0.5 ? 0.0 : (dx < 0.8 ? 1.0 : 2.0);
    const double allele = rng.uniform();
    s.covariates[3] = allele < 0.6 ? 0.0 : (allele < 0.9 ? 1.0 : 2.0);
    s.covariates[4] = rng.bernoulli(0.6) ? 1.0 : 0.0;

    double rate = 0, amplitude = 0, midpoint = 0, width = 0;
    if (s.progression_label == ProgressionLabel::SlowProgressor) {
      rate = rng.uniform(0.05, 0.15);
    } else if (s.progression_label == ProgressionLabel::FastProgressor) {
      amplitude = rng.uniform(0.8, 1.6);
      midpoint = rng.uniform(18.0, 60.0);
      width = rng.uniform(6.0, 12.0);
    }

    const int n_visits =
        config.min_visits + static_cast<int>(rng.below(static_cast<std::uint64_t>(config.max_visits - config.min_visits + 1)));
    double t = 0;
    for (int v = 0; v < n_visits; ++v) {
      if (v > 0) t += rng.uniform(config.min_spacing_months, config.max_spacing_months);
      double value = intercept;
      if (s.progression_label == ProgressionLabel::SlowProgressor) value -= rate * t / 12.0;
      if (s.progression_label == ProgressionLabel::FastProgressor)
        value -= fast_decline(t, amplitude, midpoint, width);
      value += rng.normal(0.0, config.noise_sd);
      s.visits.push_back({t, value});
    }
    cohort.subjects.push_back(std::move(s));
  }
  return cohort;
}

CohortSplit split_cohort(const Cohort& cohort, double train_fraction, double validation_fraction,
                         double test_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0 && validation_fraction > 0 && test_fraction > 0) ||
      std::abs(train_fraction + validation_fraction + test_fraction - 1.0) > 1e-9) {
    throw Error(ErrorKind::Split, "fractions must be positive and sum to 1");
  }
  const std::size_t n = cohort.size();
  if (n < 3) throw Error(ErrorKind::Split, "need at least 3 subjects to split, got " + std::to_string(n));
  auto rounded = [n](double f) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(f * static_cast<double>(n))));
  };
  const std::size_t n_val = rounded(validation_fraction);
  const std::size_t n_test = rounded(test_fraction);
  if (n_val + n_test >= n) throw Error(ErrorKind::Split, "fractions leave no training subjects");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

  auto take = [&](std::size_t begin, std::size_t end) {
    std::vector<std::size_t> picked(order.begin() + static_cast<long>(begin),
                                    order.begin() + static_cast<long>(end));
    std::sort(picked.begin(), picked.end());
    std::vector<SubjectRecord> subjects;
    subjects.reserve(picked.size());
    for (std::size_t i : picked) subjects.push_back(cohort.subjects[i]);
    return with_subjects(cohort, std::move(subjects));
  };
  return {take(n_val + n_test, n), take(0, n_val), take(n_val, n_val + n_test)};
}

HistorySplit truncate_history(const SubjectRecord& subject, std::size_t h) {
  const std::size_t n = subject.visits.size();
  if (h < 1 || h >= n) {
    throw Error(ErrorKind::History, "history length " + std::to_string(h) + " outside [1, " +
                                        std::to_string(n) + ") for subject " + subject.subject_id);
  }
  HistorySplit out{subject, subject};
  out.observed.visits.assign(subject.visits.begin(), subject.visits.begin() + static_cast<long>(h));
  out.heldout.visits.assign(subject.visits.begin() + static_cast<long>(h), subject.visits.end());
  return out;
}

}  // namespace dkgp
