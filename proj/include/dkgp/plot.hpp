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

#include <filesystem>
#include <string>

#include "dkgp/curve.hpp"
#include "dkgp/dataset.hpp"

namespace dkgp {

struct PlotOptions {
  double width_px = 640;
  double height_px = 400;
  double margin_px = 48;
  std::string title;
};

/// Standalone SVG: shaded +-2 sd band, mean polyline, observed visits as circles.
std::string render_plot_svg(const PosteriorCurve& curve, const SubjectRecord& observed, const PlotOptions& options = {});

void emit_plot(const PosteriorCurve& curve, const SubjectRecord& observed, const std::filesystem::path& path,
               const PlotOptions& options = {});

}  // namespace dkgp
