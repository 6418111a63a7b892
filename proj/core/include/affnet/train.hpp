// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "affnet/data.hpp"
#include "affnet/geometry.hpp"
#include "affnet/model.hpp"

namespace affnet {

template <typename T>
struct AdamState {
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::int64_t t = 0;
  std::vector<std::vector<T>> m, v;  // aligned with ModelParams::named
};

template <typename T>
AdamState<T> init_adam(const ModelParams<T>& params);

/// Standard Adam with bias correction; throws ContractViolation naming
/// the parameter if a gradient buffer is missing.
template <typename T>
void adam_step(ModelParams<T>& params, AdamState<T>& state, double lr);

/// Training recipe. Defaults are the full-scale settings; desk-scale runs
/// override epochs/batch and may enable early stopping on the clean
/// train-set error.
struct Schedule {
  int epochs = 12;
  double lr_initial = 1e-3;
  double lr_after = 1e-4;
  int drop_epoch = 8;  // lr_initial before this epoch index, lr_after from it on
  int batch_size = 256;
  bool augment = true;
  int eval_every = 1;        // clean-eval cadence in epochs; 0 disables
  double early_stop_cm = 0;  // stop once eval error drops below; 0 disables

  double lr_at(int epoch) const { return epoch < drop_epoch ? lr_initial : lr_after; }
  bool operator==(const Schedule&) const = default;
};

struct TrainLogEntry {
  int epoch;
  double mean_loss;
  std::optional<double> eval_error_cm;
};

/// Per-epoch record of a run. The serialized form excludes wall time so
/// that identical (config, dataset, schedule, seed) produce byte-identical
/// files; wall time stays available in memory for reporting.
struct TrainLog {
  std::vector<TrainLogEntry> entries;
  std::uint64_t seed = 0;
  std::string config_hash;
  bool early_stopped = false;
  double wall_time_sec = 0;

  std::string to_jsonl() const;
  void save(const std::filesystem::path& path) const;
};

struct EvalRow {
  std::string subject_id;
  Vec2 label_cm{0, 0}, pred_cm{0, 0};
  double err_cm = 0;
  double face_width_px = 0;
  double frame_short_px = 0;
  std::optional<double> angular_deg;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_cm() const;
  double median_cm() const;
  std::optional<double> mean_angular_deg() const;
  std::string to_jsonl() const;
  void save(const std::filesystem::path& path) const;
};

EvalReport load_eval_report(const std::filesystem::path& path);

template <typename T>
std::pair<ModelParams<T>, TrainLog> train(const ModelConfig& config, const Dataset& data, const Schedule& schedule,
                                          std::uint64_t seed);

/// Augmentation-free forward pass over the dataset in manifest order.
template <typename T>
EvalReport evaluate(const ModelParams<T>& params, const Dataset& data, int batch_size = 32);

/// Adds per-sample 3D angular errors to a 2D report.
EvalReport angular_evaluate(EvalReport report, const Calibration& calib, const Vec3& origin_cm);

struct LopoResult {
  std::vector<std::pair<std::string, double>> per_subject_mean_cm;
  double mean_over_subjects = 0;  // mean of per-subject means
  double pooled_mean_cm = 0;      // per-frame mean over all held-out folds
  std::vector<EvalReport> reports;
};

/// Leave-one-person-out: one training run per subject, evaluated on the
/// held-out subject's frames. Requires at least two subjects.
template <typename T>
LopoResult lopo_evaluate(const Dataset& data, const ModelConfig& config, const Schedule& schedule,
                         std::uint64_t seed);

struct AblationRow {
  Variant variant;
  double initial_loss = 0;
  double final_loss = 0;
  double eval_mean_cm = 0;
};

/// Trains {Full, NoST, NoSE, NoAdaGN} with identical seeds and data
/// order, differing only in the variant flag.
template <typename T>
std::vector<AblationRow> ablation_suite(const Dataset& data, const ModelConfig& base, const Schedule& schedule,
                                        std::uint64_t seed);

std::string ablation_table(const std::vector<AblationRow>& rows);

}  // namespace affnet
