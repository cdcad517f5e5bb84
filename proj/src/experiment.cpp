#include "divcot/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <stdexcept>

namespace fs = std::filesystem;

namespace divcot {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error(path.string() + ": cannot open for writing");
  out << text;
  if (!out) throw std::runtime_error(path.string() + ": write failed");
}

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

}  // namespace

std::vector<MetricsRow> evaluation_rows(int epoch, const EvalResult& eval, const EpochMetrics* losses, double lr) {
  std::vector<MetricsRow> rows;
  for (std::size_t m = 0; m < eval.miou.size(); ++m) {
    MetricsRow r;
    r.epoch = epoch;
    r.model = m;
    r.loss_sup = losses ? losses->loss_sup[m] : kNaN;
    r.loss_unsup = losses ? losses->loss_unsup[m] : kNaN;
    r.lr = lr;
    r.miou = eval.miou[m];
    double agree = 0, l2 = 0, kl = 0;
    int pairs = 0;
    for (const DiversityReport& p : eval.pairs) {
      if (p.model_a != m && p.model_b != m) continue;
      agree += p.agree_rate;
      l2 += p.d_l2;
      kl += p.d_kl;
      ++pairs;
    }
    r.agree_rate = pairs ? agree / pairs : kNaN;
    r.d_l2 = pairs ? l2 / pairs : kNaN;
    r.d_kl = pairs ? kl / pairs : kNaN;
    rows.push_back(r);
  }
  return rows;
}

std::string report_json(const ExperimentReport& report) {
  nlohmann::json best = nlohmann::json::array();
  for (double v : report.best_miou) best.push_back(number_or_null(v));
  return nlohmann::json{{"config", nlohmann::json::parse(config_to_json(report.config))},
                        {"dataset_hash", report.dataset_hash},
                        {"partition", report.partition_tag},
                        {"stream_seeds", nlohmann::json::parse(report.stream_seeds)},
                        {"summary",
                         {{"best_miou", best},
                          {"final_agree_rate", number_or_null(report.final_agree_rate)},
                          {"epochs", report.config.epochs},
                          {"wall_seconds", report.wall_seconds}}},
                        {"artifacts", report.artifacts}}
      .dump(2);
}

ExperimentReport run_experiment(const CoTrainConfig& config, const Dataset& data, const ExperimentOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  ExperimentReport rep;
  rep.config = resolve_config(config);
  if (data.val_ids.empty()) throw std::invalid_argument("run_experiment: dataset has no validation split");
  const Partition part = make_partition(data, parse_ratio(rep.config.ratio), rep.config.split_seed);
  rep.dataset_hash = data.content_hash;
  rep.partition_tag = part.ratio_tag + " (" + std::to_string(part.labeled.size()) + " labeled, " +
                      std::to_string(part.unlabeled.size()) + " unlabeled)";

  Trainer trainer(rep.config, data, part);
  rep.stream_seeds = trainer.stream_seeds_json();
  trainer.pretrain_teacher();

  auto record = [&](const std::vector<MetricsRow>& rows, const EvalResult& eval) {
    for (const MetricsRow& r : rows) {
      rep.rows.push_back(r);
      if (options.on_row) options.on_row(r);
    }
    rep.diversity.insert(rep.diversity.end(), eval.pairs.begin(), eval.pairs.end());
  };
  EvalResult eval = trainer.evaluate(data.val_ids);
  record(evaluation_rows(0, eval, nullptr, rep.config.lr), eval);
  for (int e = 0; e < rep.config.epochs; ++e) {
    const EpochMetrics em = trainer.train_epoch();
    eval = trainer.evaluate(data.val_ids);
    record(evaluation_rows(em.epoch, eval, &em, em.lr), eval);
  }

  rep.best_miou.assign(trainer.members(), -1.0);
  for (const MetricsRow& r : rep.rows) rep.best_miou[r.model] = std::max(rep.best_miou[r.model], r.miou);
  if (eval.pairs.empty()) {
    rep.final_agree_rate = kNaN;
  } else {
    double sum = 0;
    for (const DiversityReport& p : eval.pairs) sum += p.agree_rate;
    rep.final_agree_rate = sum / static_cast<double>(eval.pairs.size());
  }

  if (!options.out_dir.empty()) {
    const fs::path out(options.out_dir);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw std::runtime_error(options.out_dir + ": cannot create directory: " + ec.message());
    write_text(out / "metrics.csv", metrics_csv(rep.rows));
    write_text(out / "diversity.csv", diversity_csv(rep.diversity));
    write_text(out / "config.json", config_to_json(rep.config) + "\n");
    rep.artifacts = {(out / "metrics.csv").string(), (out / "diversity.csv").string(), (out / "config.json").string()};
    if (options.plots)
      for (const std::string& p : plot_metrics((out / "metrics.csv").string(), (out / "plots").string()))
        rep.artifacts.push_back(p);
    if (options.save_models) {
      fs::create_directories(out / "models", ec);
      if (ec) throw std::runtime_error((out / "models").string() + ": cannot create directory: " + ec.message());
      for (std::size_t n = 0; n < trainer.networks().size(); ++n) {
        const fs::path p = out / "models" / ("net" + std::to_string(n) + ".bin");
        save_network(p.string(), trainer.networks()[n]);
        rep.artifacts.push_back(p.string());
      }
    }
    rep.artifacts.push_back((out / "report.json").string());
  }
  rep.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (!options.out_dir.empty()) write_text(fs::path(options.out_dir) / "report.json", report_json(rep) + "\n");
  return rep;
}

}  // namespace divcot
