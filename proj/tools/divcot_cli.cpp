#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "divcot/cotrain.hpp"
#include "divcot/dataset.hpp"
#include "divcot/diagnostics.hpp"
#include "divcot/experiment.hpp"
#include "divcot/freq.hpp"
#include "divcot/image_io.hpp"
#include "divcot/pac_bound.hpp"
#include "divcot/params.hpp"
#include "divcot/report.hpp"

namespace fs = std::filesystem;
using namespace divcot;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::optional<std::uint64_t> seed;
  std::string config;
  std::string out;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "Root seed for every random stream");
  cmd->add_option("--config", c.config, "JSON configuration file");
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_flag("--force", c.force, "Overwrite an existing non-empty output directory");
}

void prepare_out(const Common& c) {
  if (c.out.empty()) throw UsageError("--out is required");
  const fs::path p(c.out);
  if (fs::exists(p)) {
    if (!fs::is_directory(p)) throw std::runtime_error(c.out + ": exists and is not a directory");
    if (!fs::is_empty(p)) {
      if (!c.force) throw std::runtime_error(c.out + ": output directory is not empty (pass --force to overwrite)");
      fs::remove_all(p);
    }
  }
  fs::create_directories(p);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6g", v);
  return buf;
}

std::vector<Network> load_networks(const std::vector<std::string>& paths) {
  std::vector<Network> nets;
  for (const auto& p : paths) nets.push_back(load_network(p));
  return nets;
}

std::vector<Tensor> member_logits(const std::vector<Network>& nets, const Dataset& ds, const std::vector<int>& ids) {
  std::vector<Tensor> out;
  for (const Network& net : nets) {
    if (net.spec().image_size != ds.options.size || net.spec().classes != ds.options.classes)
      throw std::runtime_error("model expects " + std::to_string(net.spec().image_size) + "px images with " +
                               std::to_string(net.spec().classes) + " classes; dataset has " +
                               std::to_string(ds.options.size) + "px and " + std::to_string(ds.options.classes));
    std::vector<Tensor> xs;
    for (int id : ids) xs.push_back(to_domain_input(ds.sample(id).image, net.spec().domain, ds.norm));
    for (Tensor& l : net.forward(stack(xs))) out.push_back(std::move(l));
  }
  return out;
}

const std::vector<int>& split_ids(const Dataset& ds, const std::string& split) {
  if (split == "val") return ds.val_ids;
  if (split == "train") return ds.train_ids;
  throw UsageError("--split must be 'val' or 'train'");
}

std::vector<double> parse_list(const std::vector<std::string>& items) {
  std::vector<double> out;
  for (const auto& item : items) {
    std::stringstream ss(item);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        std::size_t used = 0;
        out.push_back(std::stod(tok, &used));
        if (used != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw UsageError("not a number: '" + tok + "'");
      }
    }
  }
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Diverse co-training toolkit for semi-supervised segmentation"};
  app.require_subcommand(1, 1);

  // gen-data
  Common gen_c;
  GenerateOptions gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate the synthetic shapes dataset");
  add_common(gen_cmd, gen_c);
  gen_cmd->add_option("--count", gen.count, "Number of samples")->default_val(384)->check(CLI::NonNegativeNumber);
  gen_cmd->add_option("--size", gen.size, "Image side (32, 64 or 128)")->default_val(64);
  gen_cmd->add_option("--classes", gen.classes, "Class count including background")->default_val(4);
  gen_cmd->add_option("--val-count", gen.val_count, "Held-out samples (-1: count/6)")->default_val(-1);
  gen_cmd->add_option("--hue-jitter", gen.hue_jitter, "Hue spread around each class base hue")->default_val(gen.hue_jitter);
  gen_cmd->add_option("--noise", gen.noise_sigma, "Pixel noise sigma")->default_val(gen.noise_sigma);

  // verify
  Common ver_c;
  std::string ver_data;
  auto* ver_cmd = app.add_subcommand("verify", "Regenerate a dataset from its manifest and compare hashes");
  add_common(ver_cmd, ver_c);
  ver_cmd->add_option("--data", ver_data, "Dataset directory")->required();

  // train
  Common tr_c;
  std::string tr_data;
  std::optional<int> tr_epochs, tr_threads;
  auto* tr_cmd = app.add_subcommand("train", "Run one co-training experiment");
  add_common(tr_cmd, tr_c);
  tr_cmd->add_option("--data", tr_data, "Dataset directory")->required();
  tr_cmd->add_option("--epochs", tr_epochs, "Override the configured epoch count");
  tr_cmd->add_option("--threads", tr_threads, "Worker threads (results do not depend on it)");

  // eval
  Common ev_c;
  std::string ev_data, ev_split = "val";
  std::vector<std::string> ev_models;
  int ev_dump = 0;
  auto* ev_cmd = app.add_subcommand("eval", "Evaluate saved models; optionally dump predictions");
  add_common(ev_cmd, ev_c);
  ev_cmd->add_option("--data", ev_data, "Dataset directory")->required();
  ev_cmd->add_option("--model", ev_models, "Saved network (repeatable)")->required();
  ev_cmd->add_option("--split", ev_split, "val or train");
  ev_cmd->add_option("--dump", ev_dump, "Write predictions for the first N samples to --out")->check(CLI::NonNegativeNumber);

  // diagnose
  Common dg_c;
  std::string dg_data, dg_split = "val";
  std::vector<std::string> dg_models;
  auto* dg_cmd = app.add_subcommand("diagnose", "Pairwise agree rate, logit L2 and KL between models");
  add_common(dg_cmd, dg_c);
  dg_cmd->add_option("--data", dg_data, "Dataset directory")->required();
  dg_cmd->add_option("--model", dg_models, "Saved network (repeatable)")->required();
  dg_cmd->add_option("--split", dg_split, "val or train");

  // dct
  Common dct_c;
  std::string dct_image;
  std::vector<int> dct_quota = {kDefaultQuota[0], kDefaultQuota[1], kDefaultQuota[2]};
  bool dct_planes = false;
  auto* dct_cmd = app.add_subcommand("dct", "Blockwise DCT cube of a PPM image");
  add_common(dct_cmd, dct_c);
  dct_cmd->add_option("--image", dct_image, "Input PPM")->required();
  dct_cmd->add_option("--quota", dct_quota, "Zigzag channels kept for Y, Cb, Cr")->expected(3)->delimiter(',');
  dct_cmd->add_flag("--planes", dct_planes, "Also write every selected channel as a PGM");

  // bound
  Common bd_c;
  BoundParams bp;
  std::vector<std::string> bd_d;
  int mc_bits = 0, mc_iters = 5, mc_trials = 500, threads = 1;
  auto* bd_cmd = app.add_subcommand("bound", "Iterate the co-training error bound");
  add_common(bd_cmd, bd_c);
  bd_cmd->add_option("--l", bp.l, "Labeled sample count")->required();
  bd_cmd->add_option("--u", bp.u, "Unlabeled sample count")->required();
  bd_cmd->add_option("--b1", bp.b1_0, "Initial bound of model 1")->required();
  bd_cmd->add_option("--b2", bp.b2_0, "Initial bound of model 2")->required();
  bd_cmd->add_option("--d", bd_d, "Observed disagreement per iteration (comma list or repeated)");
  bd_cmd->add_option("--delta", bp.delta, "Failure probability")->default_val(bp.delta);
  bd_cmd->add_option("--hyp", bp.hyp_class_size, "Hypothesis class size")->default_val(bp.hyp_class_size);
  bd_cmd->add_option("--mc-bits", mc_bits, "Run the Monte-Carlo check over 2^bits domain points instead");
  bd_cmd->add_option("--iterations", mc_iters, "Monte-Carlo co-training iterations")->default_val(mc_iters);
  bd_cmd->add_option("--trials", mc_trials, "Monte-Carlo trials")->default_val(mc_trials);
  bd_cmd->add_option("--threads", threads, "Monte-Carlo worker threads")->default_val(threads);

  // plot
  Common pl_c;
  std::string pl_csv;
  auto* pl_cmd = app.add_subcommand("plot", "Render metrics.csv as SVG line plots");
  add_common(pl_cmd, pl_c);
  pl_cmd->add_option("--csv", pl_csv, "metrics.csv path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen_cmd) {
      if (gen_c.seed) gen.seed = *gen_c.seed;
      prepare_out(gen_c);
      const Dataset ds = generate_dataset(gen, gen_c.out);
      std::cout << "samples=" << ds.samples.size() << " train=" << ds.train_ids.size() << " val=" << ds.val_ids.size()
                << "\ncontent_hash=" << ds.content_hash << "\n";
    } else if (*ver_cmd) {
      const VerifyResult r = verify_dataset(ver_data);
      std::cout << "expected_hash=" << r.expected_hash << "\nactual_hash=" << r.actual_hash << "\n";
      for (const auto& p : r.problems) std::cout << "problem: " << p << "\n";
      std::cout << (r.ok ? "ok" : "MISMATCH") << "\n";
      return r.ok ? 0 : 1;
    } else if (*tr_cmd) {
      if (tr_c.config.empty()) throw UsageError("train needs --config");
      CoTrainConfig cfg = load_config(tr_c.config);
      if (tr_c.seed) cfg.seed = *tr_c.seed;
      if (tr_epochs) cfg.epochs = *tr_epochs;
      if (tr_threads) cfg.threads = *tr_threads;
      const Dataset ds = load_dataset(tr_data);
      prepare_out(tr_c);
      ExperimentOptions opt;
      opt.out_dir = tr_c.out;
      opt.on_row = [](const MetricsRow& r) {
        std::cout << "epoch " << r.epoch << " model " << r.model << " miou " << fmt_double(r.miou)
                  << " loss_sup " << format_metric(r.loss_sup) << " loss_unsup " << format_metric(r.loss_unsup)
                  << " agree " << format_metric(r.agree_rate) << "\n";
        std::cout.flush();
      };
      const ExperimentReport rep = run_experiment(cfg, ds, opt);
      std::cout << "best_miou";
      for (double b : rep.best_miou) std::cout << " " << fmt_double(b);
      std::cout << "\nfinal_agree_rate " << format_metric(rep.final_agree_rate) << "\nwrote " << tr_c.out << "\n";
    } else if (*ev_cmd) {
      const Dataset ds = load_dataset(ev_data);
      const auto nets = load_networks(ev_models);
      const auto& ids = split_ids(ds, ev_split);
      if (ids.empty()) throw std::runtime_error(ev_data + ": split '" + ev_split + "' is empty");
      const auto logits = member_logits(nets, ds, ids);
      std::vector<LabelMap> gts;
      for (int id : ids) gts.push_back(ds.sample(id).mask);
      std::cout << "member,miou\n";
      for (std::size_t m = 0; m < logits.size(); ++m)
        std::cout << m << "," << fmt_double(miou(argmax_labels(logits[m]), gts, ds.options.classes).mean) << "\n";
      if (ev_dump > 0) {
        prepare_out(ev_c);
        std::vector<int> sel(ids.begin(), ids.begin() + std::min<std::size_t>(ids.size(), static_cast<std::size_t>(ev_dump)));
        const auto files = dump_predictions(nets, ds, sel, ev_c.out);
        std::cout << "wrote " << files.size() << " files to " << ev_c.out << "\n";
      }
    } else if (*dg_cmd) {
      const Dataset ds = load_dataset(dg_data);
      const auto logits = member_logits(load_networks(dg_models), ds, split_ids(ds, dg_split));
      if (logits.size() < 2) throw UsageError("diagnose needs at least two model members");
      std::cout << diversity_csv(diversity_trace(logits, 0));
    } else if (*dct_cmd) {
      prepare_out(dct_c);
      const Tensor rgb = read_ppm(dct_image);
      Tensor scaled = rgb;
      for (double& v : scaled.values()) v *= 255.0;
      const Tensor ycc = rgb_to_ycbcr(scaled);
      const std::size_t h = ycc.dim(1), w = ycc.dim(2);
      auto plane = [&](std::size_t c) {
        Tensor p({h, w});
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) p.at(y, x) = ycc.at(c, y, x);
        return block_dct8(p);
      };
      const Tensor cube = regroup_to_cube(plane(0), plane(1), plane(2));
      const std::vector<int> channels = zigzag_selection({dct_quota[0], dct_quota[1], dct_quota[2]});
      const Tensor sel = select_channels(cube, channels);
      save_tensor((fs::path(dct_c.out) / "cube_full.bin").string(), cube);
      save_tensor((fs::path(dct_c.out) / "cube_selected.bin").string(), sel);
      if (dct_planes) {
        fs::create_directories(fs::path(dct_c.out) / "planes");
        for (std::size_t c = 0; c < sel.dim(0); ++c) {
          Tensor p({sel.dim(1), sel.dim(2)});
          for (std::size_t y = 0; y < sel.dim(1); ++y)
            for (std::size_t x = 0; x < sel.dim(2); ++x) p.at(y, x) = sel.at(c, y, x);
          char name[32];
          std::snprintf(name, sizeof name, "ch%03d.pgm", channels[c]);
          write_plane_pgm((fs::path(dct_c.out) / "planes" / name).string(), p);
        }
      }
      std::cout << "cube " << shape_str(cube.shape()) << " selected " << shape_str(sel.shape()) << "\n";
    } else if (*bd_cmd) {
      if (mc_bits > 0) {
        const McResult r = mc_verify(mc_bits, bp, mc_iters, mc_trials, bd_c.seed.value_or(0), threads);
        std::cout << "k,mean_d_cross,mean_b1,mean_b2,mean_err1,mean_err2,violation1,violation2,violation_any\n";
        for (const McRecord& m : r.records)
          std::cout << m.k << "," << fmt_double(m.mean_d_cross) << "," << fmt_double(m.mean_b1) << ","
                    << fmt_double(m.mean_b2) << "," << fmt_double(m.mean_err1) << "," << fmt_double(m.mean_err2) << ","
                    << fmt_double(m.violation1) << "," << fmt_double(m.violation2) << "," << fmt_double(m.violation_any)
                    << "\n";
        std::cout << "preconditions=" << (r.condition ? "hold" : "fail")
                  << " band=" << fmt_double(violation_band(bp.delta, mc_trials)) << "\n";
      } else {
        const std::vector<double> d = parse_list(bd_d);
        if (d.empty()) throw UsageError("bound needs --d (or --mc-bits)");
        const auto trace = bound_trace(bp, d);
        std::cout << "k,d,b1,b2,condition,violations\n";
        for (const BoundRecord& r : trace)
          std::cout << r.k << "," << fmt_double(r.d) << "," << fmt_double(r.b1) << "," << fmt_double(r.b2) << ","
                    << (r.condition ? 1 : 0) << "," << fmt_double(r.violations) << "\n";
        const BoundRecord& last = trace.back();
        if (fmt_double(last.b1) == fmt_double(last.b2))
          std::cout << "b=" << fmt_double(last.b1) << "\n";
        else
          std::cout << "b1=" << fmt_double(last.b1) << " b2=" << fmt_double(last.b2) << "\n";
      }
    } else if (*pl_cmd) {
      prepare_out(pl_c);
      for (const auto& p : plot_metrics(pl_csv, pl_c.out)) std::cout << "wrote " << p << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
