#pragma once

#include <functional>
#include <string>
#include <vector>

#include "divcot/cotrain.hpp"
#include "divcot/report.hpp"

namespace divcot {

struct ExperimentReport {
  CoTrainConfig config;
  std::vector<MetricsRow> rows;
  std::vector<DiversityReport> diversity;
  std::vector<double> best_miou;
  /// Mean pairwise agree rate at the last epoch (NaN for single-model runs).
  double final_agree_rate = 0.0;
  double wall_seconds = 0.0;
  std::string dataset_hash;
  std::string partition_tag;
  std::string stream_seeds;
  std::vector<std::string> artifacts;
};

struct ExperimentOptions {
  /// Output directory for metrics.csv, diversity.csv, report.json, plots and models; empty keeps everything in memory.
  std::string out_dir;
  bool plots = true;
  bool save_models = true;
  std::function<void(const MetricsRow&)> on_row;
};

/// Trains to cfg.epochs, evaluating every member on the validation split after
/// initialization and after each epoch.
ExperimentReport run_experiment(const CoTrainConfig& cfg, const Dataset& data, const ExperimentOptions& options = {});

/// Rows for one evaluation: per-member mIoU plus pair metrics averaged per member.
std::vector<MetricsRow> evaluation_rows(int epoch, const EvalResult& eval, const EpochMetrics* losses, double lr);

std::string report_json(const ExperimentReport& report);

}  // namespace divcot
