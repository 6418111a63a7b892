// SPDX-License-Identifier: Apache-2.0
#include "affnet/report.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

namespace affnet {

using nlohmann::json;

HeatmapGrid heatmap(const EvalReport& report, double cell_size_cm) {
  if (!(cell_size_cm > 0)) throw ContractViolation("heatmap cell size must be positive");
  std::map<std::pair<long, long>, std::pair<int, double>> cells;  // (count, error sum)
  for (const EvalRow& r : report.rows) {
    const long ix = static_cast<long>(std::floor(r.label_cm[0] / cell_size_cm));
    const long iy = static_cast<long>(std::floor(r.label_cm[1] / cell_size_cm));
    auto& cell = cells[{ix, iy}];
    cell.first += 1;
    cell.second += r.err_cm;
  }
  HeatmapGrid grid;
  grid.cell_size_cm = cell_size_cm;
  for (const auto& [key, agg] : cells) {
    grid.cells.push_back({key.first, key.second, agg.first, agg.second / agg.first});
  }
  return grid;
}

std::string heatmap_csv(const HeatmapGrid& grid) {
  std::ostringstream out;
  out << "ix,iy,count,mean_error_cm\n";
  for (const HeatmapCell& c : grid.cells) {
    out << c.ix << "," << c.iy << "," << c.count << "," << json(c.mean_error_cm).dump() << "\n";
  }
  return out.str();
}

CurveBins facewidth_curve(const EvalReport& report, int n_bins) {
  if (n_bins < 2) throw ContractViolation("facewidth_curve needs n_bins >= 2");
  std::vector<std::pair<double, double>> xs;  // (reciprocal width, error)
  int skipped = 0;
  for (const EvalRow& r : report.rows) {
    if (r.face_width_px <= 0) {
      ++skipped;
      continue;
    }
    xs.emplace_back(r.frame_short_px / r.face_width_px, r.err_cm);
  }
  CurveBins out;
  out.n_skipped = skipped;
  if (xs.empty()) return out;

  double lo = xs[0].first, hi = xs[0].first;
  for (const auto& [x, e] : xs) {
    lo = std::min(lo, x);
    hi = std::max(hi, x);
  }
  // Degenerate range: everything lands in one unit-wide bin.
  const double width = hi > lo ? (hi - lo) / n_bins : 1.0;
  std::vector<int> counts(static_cast<std::size_t>(n_bins), 0);
  std::vector<double> sums(static_cast<std::size_t>(n_bins), 0.0);
  for (const auto& [x, e] : xs) {
    int b = static_cast<int>((x - lo) / width);
    b = std::clamp(b, 0, n_bins - 1);
    counts[static_cast<std::size_t>(b)] += 1;
    sums[static_cast<std::size_t>(b)] += e;
  }
  for (int b = 0; b < n_bins; ++b) {
    if (counts[static_cast<std::size_t>(b)] == 0) continue;
    out.bins.push_back({lo + b * width, lo + (b + 1) * width, counts[static_cast<std::size_t>(b)],
                        sums[static_cast<std::size_t>(b)] / counts[static_cast<std::size_t>(b)]});
  }
  return out;
}

std::string curve_csv(const CurveBins& bins) {
  std::ostringstream out;
  out << "x_low,x_high,count,mean_error_cm\n";
  for (const CurveBin& b : bins.bins) {
    out << json(b.x_low).dump() << "," << json(b.x_high).dump() << "," << b.count << ","
        << json(b.mean_error_cm).dump() << "\n";
  }
  return out.str();
}

}  // namespace affnet
