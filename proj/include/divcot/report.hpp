#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "divcot/dataset.hpp"
#include "divcot/diagnostics.hpp"
#include "divcot/network.hpp"

namespace divcot {

/// One (epoch, model) line of metrics.csv. Pair metrics average every pair the
/// model belongs to and are NaN for single-model runs; losses are NaN at epoch 0.
struct MetricsRow {
  int epoch = 0;
  std::size_t model = 0;
  double loss_sup = 0.0, loss_unsup = 0.0, lr = 0.0, miou = 0.0;
  double agree_rate = 0.0, d_l2 = 0.0, d_kl = 0.0;
};

inline const std::vector<std::string>& metrics_columns() {
  static const std::vector<std::string> cols = {"epoch", "model", "loss_sup", "loss_unsup", "lr",
                                                "miou",  "agree_rate", "d_l2", "d_kl"};
  return cols;
}

std::string format_metric(double v);
std::string metrics_csv(const std::vector<MetricsRow>& rows);
std::string diversity_csv(const std::vector<DiversityReport>& rows);

/// Parsed CSV: header plus rows of cells.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  int column(const std::string& name) const;
};
CsvTable read_csv(const std::string& path);

/// Writes one SVG per metric column (`<out_dir>/<metric>.svg`) with a polyline
/// per model; returns the paths. Missing columns are an error.
std::vector<std::string> plot_metrics(const std::string& csv_path, const std::string& out_dir);

/// Renders one metric series set as standalone SVG text.
struct Series {
  std::string name;
  std::vector<std::pair<double, double>> points;
};
std::string render_svg(const std::string& title, const std::string& y_label, const std::vector<Series>& series);

/// Fixed 8-entry RGB palette for class maps; class 0 is black, ignore is white.
std::array<std::uint8_t, 3> palette_color(std::uint8_t cls);
Tensor colorize(const LabelMap& labels);

/// For each id: input PPM, ground-truth PGM and one prediction PGM per
/// network head, each PGM with a color PPM companion. Returns written paths.
std::vector<std::string> dump_predictions(const std::vector<Network>& nets, const Dataset& data,
                                          const std::vector<int>& ids, const std::string& out_dir);
/// Same layout from precomputed label maps, predictions[member][i] for ids[i].
std::vector<std::string> dump_label_maps(const Dataset& data, const std::vector<int>& ids,
                                         const std::vector<std::vector<LabelMap>>& predictions,
                                         const std::string& out_dir);

}  // namespace divcot
