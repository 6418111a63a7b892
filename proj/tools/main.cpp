// SPDX-License-Identifier: Apache-2.0
//
// affnet command-line driver: synthetic data generation, training,
// evaluation, ablations, gradient checks, and report extraction.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "affnet/checkpoint.hpp"
#include "affnet/data.hpp"
#include "affnet/gradcheck.hpp"
#include "affnet/layers.hpp"
#include "affnet/model.hpp"
#include "affnet/ops.hpp"
#include "affnet/report.hpp"
#include "affnet/serde.hpp"
#include "affnet/train.hpp"

namespace fs = std::filesystem;
using namespace affnet;

namespace {

RunConfig config_or_default(const std::string& path) {
  if (path.empty()) return RunConfig{};
  return load_run_config(path);
}

void require_file(const std::string& path, const char* what) {
  if (!fs::exists(path)) throw IoError(std::string(what) + " not found: " + path);
}

template <typename T>
int run_train(const RunConfig& cfg, const std::string& data_path, const std::string& out_dir, std::uint64_t seed) {
  require_file(data_path, "data manifest");
  Dataset data = Dataset::open(data_path);
  fs::create_directories(out_dir);
  auto [params, log] = train<T>(cfg.model, data, cfg.schedule, seed);
  save_checkpoint(params, fs::path(out_dir) / "checkpoint.ckpt");
  log.save(fs::path(out_dir) / "train_log.jsonl");
  EvalReport report = evaluate(params, data);
  report.save(fs::path(out_dir) / "eval_report.jsonl");
  std::cout << "trained " << log.entries.size() << " epochs in " << log.wall_time_sec << " s; train-set mean error "
            << report.mean_cm() << " cm\n";
  return 0;
}

template <typename T>
int run_ablate(const RunConfig& cfg, const std::string& data_path, const std::string& out_dir, std::uint64_t seed) {
  require_file(data_path, "data manifest");
  Dataset data = Dataset::open(data_path);
  fs::create_directories(out_dir);
  const auto rows = ablation_suite<T>(data, cfg.model, cfg.schedule, seed);
  const std::string table = ablation_table(rows);
  std::ofstream(fs::path(out_dir) / "ablation.csv", std::ios::binary) << table;
  std::cout << table;
  return 0;
}

// Op-level gradient sweep mirroring the library's verification suite.
struct GradRow {
  std::string module, op;
  double err;
};

std::vector<GradRow> gradcheck_rows(const std::string& module_filter) {
  std::vector<GradRow> rows;
  Rng rng(20240);
  const GradCheckOptions opts;
  auto coeffs = [](std::int64_t n, std::uint64_t seed) {
    Rng r(seed);
    std::vector<double> c(static_cast<std::size_t>(n));
    for (double& v : c) v = r.uniform(-1, 1);
    return c;
  };
  auto add = [&](const std::string& module, const std::string& op, double err) {
    if (module_filter.empty() || module_filter == module) rows.push_back({module, op, err});
  };
  using D = Tensor<double>;

  if (module_filter.empty() || module_filter == "tensor-core") {
    double worst_conv = 0, worst_pool = 0, worst_aff = 0, worst_act = 0, worst_gap = 0, worst_cat = 0, worst_sl1 = 0;
    for (int t = 0; t < 20; ++t) {
      const auto c = coeffs(2 * 3 * 2 * 2, 1 + static_cast<std::uint64_t>(t));
      D x = D::uniform({2, 2, 6, 6}, rng);
      D w = D::uniform({3, 2, 3, 3}, rng, -0.6, 0.6);
      D b = D::uniform({3}, rng);
      worst_conv = std::max(worst_conv, grad_check(
                                            [&](Tape<double>* tp, std::span<D> in) {
                                              return ops::weighted_sum(ops::conv2d(in[0], in[1], in[2], 2, 0, tp), c, tp);
                                            },
                                            {x, w, b}, opts));
      D px = D::uniform({2, 6, 6}, rng);
      while (maxpool_has_tie(px, 3, 2, 1e-3)) px = D::uniform({2, 6, 6}, rng);
      const auto pc = coeffs(2 * 2 * 2, 2 + static_cast<std::uint64_t>(t));
      worst_pool = std::max(worst_pool, grad_check(
                                            [&](Tape<double>* tp, std::span<D> in) {
                                              return ops::weighted_sum(ops::maxpool2d(in[0], 3, 2, tp), pc, tp);
                                            },
                                            {px}, opts));
      D ax = D::uniform({3, 4}, rng);
      D aw = D::uniform({5, 4}, rng);
      D ab = D::uniform({5}, rng);
      const auto ac = coeffs(15, 3 + static_cast<std::uint64_t>(t));
      worst_aff = std::max(worst_aff, grad_check(
                                          [&](Tape<double>* tp, std::span<D> in) {
                                            return ops::weighted_sum(ops::affine(in[0], in[1], in[2], tp), ac, tp);
                                          },
                                          {ax, aw, ab}, opts));
      D sx(std::vector<int>{3, 5});
      for (double& v : sx.values()) {
        do {
          v = rng.uniform(-2, 2);
        } while (std::abs(v) < 1e-3);
      }
      const auto sc = coeffs(15, 4 + static_cast<std::uint64_t>(t));
      for (const ops::Activation kind : {ops::Activation::Relu, ops::Activation::LeakyRelu, ops::Activation::Sigmoid}) {
        worst_act = std::max(worst_act, grad_check(
                                            [&](Tape<double>* tp, std::span<D> in) {
                                              return ops::weighted_sum(ops::apply_activation(in[0], {kind, 0.01}, tp), sc, tp);
                                            },
                                            {sx}, opts));
      }
      D gx = D::uniform({2, 3, 4, 4}, rng);
      const auto gc = coeffs(6, 5 + static_cast<std::uint64_t>(t));
      worst_gap = std::max(worst_gap, grad_check(
                                          [&](Tape<double>* tp, std::span<D> in) {
                                            return ops::weighted_sum(ops::global_avg_pool(in[0], tp), gc, tp);
                                          },
                                          {gx}, opts));
      D ca = D::uniform({2, 3, 3}, rng);
      D cb = D::uniform({4, 3, 3}, rng);
      const auto cc = coeffs(6 * 9, 6 + static_cast<std::uint64_t>(t));
      worst_cat = std::max(worst_cat, grad_check(
                                          [&](Tape<double>* tp, std::span<D> in) {
                                            return ops::weighted_sum(ops::channel_concat({in[0], in[1]}, tp), cc, tp);
                                          },
                                          {ca, cb}, opts));
      D p(std::vector<int>{3, 2}), q(std::vector<int>{3, 2});
      for (int i = 0; i < 6; ++i) {
        p.data()[i] = rng.uniform(-2, 2);
        double d;
        do {
          d = rng.uniform(-2, 2);
        } while (std::abs(std::abs(d) - 1.0) < 1e-3 || std::abs(d) < 1e-3);
        q.data()[i] = p.data()[i] - d;
      }
      worst_sl1 = std::max(worst_sl1, grad_check(
                                          [&](Tape<double>* tp, std::span<D> in) { return ops::smooth_l1(in[0], in[1], tp); },
                                          {p, q}, opts));
    }
    add("tensor-core", "conv2d", worst_conv);
    add("tensor-core", "maxpool2d", worst_pool);
    add("tensor-core", "affine", worst_aff);
    add("tensor-core", "activations", worst_act);
    add("tensor-core", "global_avg_pool", worst_gap);
    add("tensor-core", "channel_concat", worst_cat);
    add("tensor-core", "smooth_l1", worst_sl1);
  }

  if (module_filter.empty() || module_filter == "nn-layers") {
    double worst_se = 0, worst_gn = 0, worst_ad = 0;
    for (int t = 0; t < 20; ++t) {
      const auto c = coeffs(2 * 8 * 4, 7 + static_cast<std::uint64_t>(t));
      SEParams<double> se = init_se<double>(8, rng);
      D x = D::uniform({2, 8, 2, 2}, rng);
      worst_se = std::max(worst_se, grad_check(
                                        [&](Tape<double>* tp, std::span<D> in) {
                                          SEParams<double> p = se;
                                          p.fc1.weight = in[1];
                                          p.fc1.bias = in[2];
                                          p.fc2.weight = in[3];
                                          p.fc2.bias = in[4];
                                          return ops::weighted_sum(se_forward(in[0], p, tp), c, tp);
                                        },
                                        {x, se.fc1.weight, se.fc1.bias, se.fc2.weight, se.fc2.bias}, opts));
      worst_gn = std::max(worst_gn, grad_check(
                                        [&](Tape<double>* tp, std::span<D> in) {
                                          return ops::weighted_sum(group_normalize(in[0], GNConfig{4, 1e-5}, tp), c, tp);
                                        },
                                        {x}, opts));
      AdaGNParams<double> ad = init_adagn<double>(8, 6, GNConfig{4, 1e-5}, 0.01, rng);
      for (double& v : ad.fc.weight.values()) v = rng.uniform(-0.8, 0.8);
      for (double& v : ad.fc.bias.values()) {
        do {
          v = rng.uniform(-1, 1);
        } while (std::abs(v) < 1e-3);
      }
      D ctx = D::uniform({2, 6}, rng);
      worst_ad = std::max(worst_ad, grad_check(
                                        [&](Tape<double>* tp, std::span<D> in) {
                                          AdaGNParams<double> p = ad;
                                          p.fc.weight = in[2];
                                          p.fc.bias = in[3];
                                          return ops::weighted_sum(adagn_forward(in[0], in[1], p, tp), c, tp);
                                        },
                                        {x, ctx, ad.fc.weight, ad.fc.bias}, opts));
    }
    add("nn-layers", "se_forward", worst_se);
    add("nn-layers", "group_normalize", worst_gn);
    add("nn-layers", "adagn_forward", worst_ad);
  }

  if (module_filter.empty() || module_filter == "model") {
    const ModelConfig cfg = ModelConfig::tiny();
    auto params = build<double>(cfg, 67);
    Rng prng(71);
    for (auto& [name, t] : params.named) {
      if (name.find("adagn") != std::string::npos) {
        for (double& v : t.values()) v += prng.uniform(-0.05, 0.05);
      }
      // keep SE bottleneck pre-activations away from the ReLU kink, where
      // central differences are undefined (same idea as max-pool ties)
      if (name.find("se.fc") != std::string::npos && name.find("bias") != std::string::npos) {
        for (double& v : t.values()) v += prng.uniform(0.05, 0.15);
      }
    }
    Rng brng(73);
    BatchInput<double> batch;
    batch.face = D::uniform({2, 3, cfg.face_size, cfg.face_size}, brng, 0, 1);
    batch.eye_left = D::uniform({2, 3, cfg.eye_size, cfg.eye_size}, brng, 0, 1);
    batch.eye_right_flipped = D::uniform({2, 3, cfg.eye_size, cfg.eye_size}, brng, 0, 1);
    batch.rects = D::uniform({2, 12}, brng, 0, 1);
    std::vector<D> inputs;
    for (auto& [name, t] : params.named) inputs.push_back(t);
    const auto c = coeffs(4, 79);
    GradCheckOptions sampled = opts;
    sampled.max_elements_per_tensor = 4;
    const double err = grad_check(
        [&](Tape<double>* tp, std::span<D> in) { return ops::weighted_sum(forward(params, batch, tp), c, tp); },
        inputs, sampled);
    add("model", "tiny end-to-end", err);
  }
  return rows;
}

int run_gradcheck(const std::string& module_filter) {
  const auto rows = gradcheck_rows(module_filter);
  if (rows.empty()) {
    std::cerr << "unknown module '" << module_filter << "' (expected tensor-core, nn-layers, or model)\n";
    return 1;
  }
  bool ok = true;
  std::printf("%-12s %-18s %-12s %s\n", "module", "op", "max_rel_err", "status");
  for (const GradRow& r : rows) {
    const bool pass = r.err < 1e-4;
    ok = ok && pass;
    std::printf("%-12s %-18s %-12.3e %s\n", r.module.c_str(), r.op.c_str(), r.err, pass ? "ok" : "FAIL");
  }
  return ok ? 0 : 1;
}

int run_report(bool curve, const std::string& report_path, const std::string& out_path, double cell, int bins) {
  require_file(report_path, "eval report");
  const EvalReport report = load_eval_report(report_path);
  std::string csv;
  if (curve) {
    csv = curve_csv(facewidth_curve(report, bins));
  } else {
    csv = heatmap_csv(heatmap(report, cell));
  }
  std::ofstream out(out_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + out_path);
  out << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_limits();

  CLI::App app{"AFF-Net gaze tracking toolkit"};
  app.require_subcommand(1);

  std::string config_path, data_path, out_dir, ckpt_path, report_path, out_path, module_filter;
  std::uint64_t seed = 0;
  bool use_f64 = false;
  double cell = 1.0;
  int bins = 10;

  CLI::App* train_cmd = app.add_subcommand("train", "Train a model on a manifest dataset");
  train_cmd->add_option("--config", config_path, "Run config JSON (model + schedule)");
  train_cmd->add_option("--data", data_path, "Manifest path")->required();
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_cmd->add_option("--seed", seed, "Training seed");
  train_cmd->add_flag("--f64", use_f64, "Train in 64-bit precision");

  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a manifest dataset");
  eval_cmd->add_option("--ckpt", ckpt_path, "Checkpoint path")->required();
  eval_cmd->add_option("--data", data_path, "Manifest path")->required();
  eval_cmd->add_option("--report", report_path, "Output report JSONL")->required();

  CLI::App* ablate_cmd = app.add_subcommand("ablate", "Run the four-variant ablation suite");
  ablate_cmd->add_option("--config", config_path, "Run config JSON (model + schedule)");
  ablate_cmd->add_option("--data", data_path, "Manifest path")->required();
  ablate_cmd->add_option("--out", out_dir, "Output directory")->required();
  ablate_cmd->add_option("--seed", seed, "Training seed");

  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference checks of every primitive");
  grad_cmd->add_option("--module", module_filter, "tensor-core, nn-layers, or model");

  CLI::App* synth_cmd = app.add_subcommand("synth", "Generate the synthetic desk-scale dataset");
  synth_cmd->add_option("--config", config_path, "Run config JSON (synth section)");
  synth_cmd->add_option("--out", out_dir, "Output directory")->required();

  CLI::App* report_cmd = app.add_subcommand("report", "Derive CSV analysis artifacts from an eval report");
  CLI::App* heat_cmd = report_cmd->add_subcommand("heatmap", "Spatial error heat map");
  heat_cmd->add_option("--report", report_path, "Eval report JSONL")->required();
  heat_cmd->add_option("--out", out_path, "Output CSV")->required();
  heat_cmd->add_option("--cell", cell, "Cell size in cm");
  CLI::App* curve_cmd = report_cmd->add_subcommand("curve", "Error vs reciprocal face width");
  curve_cmd->add_option("--report", report_path, "Eval report JSONL")->required();
  curve_cmd->add_option("--out", out_path, "Output CSV")->required();
  curve_cmd->add_option("--bins", bins, "Bin count");
  report_cmd->require_subcommand(1);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (*train_cmd) {
      const RunConfig cfg = config_or_default(config_path);
      return use_f64 ? run_train<double>(cfg, data_path, out_dir, seed)
                     : run_train<float>(cfg, data_path, out_dir, seed);
    }
    if (*eval_cmd) {
      require_file(ckpt_path, "checkpoint");
      require_file(data_path, "data manifest");
      const auto params = load_checkpoint<float>(ckpt_path);
      Dataset data = Dataset::open(data_path);
      EvalReport report = evaluate(params, data);
      report.save(report_path);
      std::cout << "mean error " << report.mean_cm() << " cm over " << report.rows.size() << " samples\n";
      return 0;
    }
    if (*ablate_cmd) {
      const RunConfig cfg = config_or_default(config_path);
      return run_ablate<float>(cfg, data_path, out_dir, seed);
    }
    if (*grad_cmd) return run_gradcheck(module_filter);
    if (*synth_cmd) {
      const RunConfig cfg = config_or_default(config_path);
      generate_synthetic(cfg.synth, out_dir);
      std::cout << "wrote " << cfg.synth.n_samples << " samples to " << out_dir << "\n";
      return 0;
    }
    if (*report_cmd) return run_report(curve_cmd->parsed(), report_path, out_path, cell, bins);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
