// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "affnet/train.hpp"

namespace affnet {

struct HeatmapCell {
  long ix, iy;  // cell (floor(x/cell), floor(y/cell)) of the label location
  int count;
  double mean_error_cm;
};

struct HeatmapGrid {
  double cell_size_cm = 1.0;
  std::vector<HeatmapCell> cells;  // sorted by (ix, iy); camera at cell (0,0)
};

/// Bins samples by label location and averages the Euclidean error per
/// cell.
HeatmapGrid heatmap(const EvalReport& report, double cell_size_cm);

/// CSV with header "ix,iy,count,mean_error_cm".
std::string heatmap_csv(const HeatmapGrid& grid);

struct CurveBin {
  double x_low, x_high;
  int count;
  double mean_error_cm;
};

/// Error against reciprocal face width (shorter frame axis / face width),
/// equal-width bins over the observed range. Zero face widths are skipped
/// and counted.
struct CurveBins {
  std::vector<CurveBin> bins;
  int n_skipped = 0;
};

CurveBins facewidth_curve(const EvalReport& report, int n_bins);

/// CSV with header "x_low,x_high,count,mean_error_cm".
std::string curve_csv(const CurveBins& bins);

}  // namespace affnet
