// SPDX-License-Identifier: Apache-2.0
#include "affnet/train.hpp"

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "affnet/ops.hpp"
#include "affnet/serde.hpp"

namespace affnet {

using nlohmann::json;

template <typename T>
AdamState<T> init_adam(const ModelParams<T>& params) {
  AdamState<T> st;
  st.m.reserve(params.named.size());
  st.v.reserve(params.named.size());
  for (const auto& [name, t] : params.named) {
    st.m.emplace_back(static_cast<std::size_t>(t.numel()), T(0));
    st.v.emplace_back(static_cast<std::size_t>(t.numel()), T(0));
  }
  return st;
}

template <typename T>
void adam_step(ModelParams<T>& params, AdamState<T>& state, double lr) {
  if (state.m.size() != params.named.size()) throw ContractViolation("adam state does not match parameter list");
  state.t += 1;
  const T b1 = static_cast<T>(state.beta1);
  const T b2 = static_cast<T>(state.beta2);
  const T corr1 = static_cast<T>(1.0 - std::pow(state.beta1, static_cast<double>(state.t)));
  const T corr2 = static_cast<T>(1.0 - std::pow(state.beta2, static_cast<double>(state.t)));
  const T eps = static_cast<T>(state.eps);
  const T step = static_cast<T>(lr);
  for (std::size_t pi = 0; pi < params.named.size(); ++pi) {
    Tensor<T>& t = params.named[pi].second;
    if (!t.has_grad()) {
      throw ContractViolation("adam_step: parameter '" + params.named[pi].first + "' has no gradient");
    }
    const T* g = t.grad();
    T* w = t.data();
    T* m = state.m[pi].data();
    T* v = state.v[pi].data();
    const std::int64_t n = t.numel();
    for (std::int64_t i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (T(1) - b1) * g[i];
      v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
      const T mhat = m[i] / corr1;
      const T vhat = v[i] / corr2;
      w[i] -= step * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

std::string TrainLog::to_jsonl() const {
  std::ostringstream out;
  for (const TrainLogEntry& e : entries) {
    json j{{"epoch", e.epoch}, {"mean_loss", e.mean_loss}};
    j["eval_error_cm"] = e.eval_error_cm ? json(*e.eval_error_cm) : json(nullptr);
    out << j.dump() << "\n";
  }
  out << json{{"seed", seed}, {"config_hash", config_hash}, {"early_stopped", early_stopped}}.dump() << "\n";
  return out.str();
}

void TrainLog::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write train log " + path.string());
  out << to_jsonl();
}

double EvalReport::mean_cm() const {
  if (rows.empty()) return 0;
  double s = 0;
  for (const EvalRow& r : rows) s += r.err_cm;
  return s / static_cast<double>(rows.size());
}

double EvalReport::median_cm() const {
  if (rows.empty()) return 0;
  std::vector<double> e;
  e.reserve(rows.size());
  for (const EvalRow& r : rows) e.push_back(r.err_cm);
  std::sort(e.begin(), e.end());
  const std::size_t n = e.size();
  return n % 2 ? e[n / 2] : (e[n / 2 - 1] + e[n / 2]) / 2.0;
}

std::optional<double> EvalReport::mean_angular_deg() const {
  double s = 0;
  std::size_t n = 0;
  for (const EvalRow& r : rows) {
    if (r.angular_deg) {
      s += *r.angular_deg;
      ++n;
    }
  }
  if (n == 0) return std::nullopt;
  return s / static_cast<double>(n);
}

std::string EvalReport::to_jsonl() const {
  std::ostringstream out;
  for (const EvalRow& r : rows) {
    json j{{"subject_id", r.subject_id}, {"label_cm", r.label_cm},         {"pred_cm", r.pred_cm},
           {"err_cm", r.err_cm},         {"face_width_px", r.face_width_px}, {"frame_short_px", r.frame_short_px}};
    if (r.angular_deg) j["angular_deg"] = *r.angular_deg;
    out << j.dump() << "\n";
  }
  json summary{{"mean_cm", mean_cm()}, {"median_cm", median_cm()}};
  if (auto a = mean_angular_deg()) summary["mean_angular_deg"] = *a;
  out << summary.dump() << "\n";
  return out.str();
}

void EvalReport::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write eval report " + path.string());
  out << to_jsonl();
}

EvalReport load_eval_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open eval report " + path.string());
  EvalReport report;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw IoError("eval report line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("subject_id")) continue;  // trailing summary line
    EvalRow row;
    row.subject_id = j.at("subject_id").get<std::string>();
    row.label_cm = j.at("label_cm").get<Vec2>();
    row.pred_cm = j.at("pred_cm").get<Vec2>();
    row.err_cm = j.at("err_cm").get<double>();
    row.face_width_px = j.at("face_width_px").get<double>();
    row.frame_short_px = j.at("frame_short_px").get<double>();
    if (j.contains("angular_deg")) row.angular_deg = j.at("angular_deg").get<double>();
    report.rows.push_back(std::move(row));
  }
  return report;
}

namespace {

template <typename T>
double eval_mean_error(const ModelParams<T>& params, const std::vector<Batch<T>>& eval_batches) {
  double total = 0;
  std::int64_t n = 0;
  for (const Batch<T>& b : eval_batches) {
    const Tensor<T> pred = forward(params, b.input);
    const int rows = pred.dim(0);
    for (int i = 0; i < rows; ++i) {
      const double dx = static_cast<double>(pred.data()[2 * i]) - static_cast<double>(b.labels.data()[2 * i]);
      const double dy = static_cast<double>(pred.data()[2 * i + 1]) - static_cast<double>(b.labels.data()[2 * i + 1]);
      total += std::hypot(dx, dy);
    }
    n += rows;
  }
  return n ? total / static_cast<double>(n) : 0.0;
}

}  // namespace

template <typename T>
std::pair<ModelParams<T>, TrainLog> train(const ModelConfig& config, const Dataset& data, const Schedule& schedule,
                                          std::uint64_t seed) {
  if (data.size() == 0) throw ContractViolation("train requires a non-empty dataset");
  if (schedule.drop_epoch > schedule.epochs && schedule.epochs > 0) {
    throw ContractViolation("schedule drop_epoch must not exceed epochs");
  }
  const auto t_start = std::chrono::steady_clock::now();

  ModelParams<T> params = build<T>(config, seed);
  AdamState<T> adam = init_adam(params);
  TrainLog log;
  log.seed = seed;
  log.config_hash = config_hash(config, schedule);

  // The clean eval set is augmentation-free, so preprocess it once.
  std::vector<Batch<T>> eval_batches;
  auto ensure_eval_batches = [&]() {
    if (eval_batches.empty()) eval_batches = batches<T>(data, std::min(data.size(), 64), std::nullopt);
  };

  const int n = data.size();
  for (int epoch = 0; epoch < schedule.epochs; ++epoch) {
    const double lr = schedule.lr_at(epoch);
    double loss_sum = 0;
    int batch_no = 0;
    for (const std::vector<int>& idx : batch_indices(n, schedule.batch_size, Rng::derive(seed, {0xe0, static_cast<std::uint64_t>(epoch)}).next_u64())) {
      Batch<T> batch = make_batch<T>(data, idx, schedule.augment, seed, epoch);
      Tape<T> tape;
      const Tensor<T> pred = forward(params, batch.input, &tape);
      const Tensor<T> loss = ops::smooth_l1(pred, batch.labels, &tape);
      const double loss_value = static_cast<double>(loss.values()[0]);
      if (!std::isfinite(loss_value)) {
        throw NumericError("non-finite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_no));
      }
      params.zero_grad();
      tape.backward(loss);
      adam_step(params, adam, lr);
      loss_sum += loss_value * static_cast<double>(idx.size());
      ++batch_no;
    }

    TrainLogEntry entry{epoch, loss_sum / static_cast<double>(n), std::nullopt};
    const bool eval_now = schedule.eval_every > 0 &&
                          ((epoch + 1) % schedule.eval_every == 0 || epoch + 1 == schedule.epochs);
    if (eval_now) {
      ensure_eval_batches();
      entry.eval_error_cm = eval_mean_error(params, eval_batches);
    }
    log.entries.push_back(entry);
    if (schedule.early_stop_cm > 0 && entry.eval_error_cm && *entry.eval_error_cm < schedule.early_stop_cm) {
      log.early_stopped = true;
      break;
    }
  }

  log.wall_time_sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return {std::move(params), std::move(log)};
}

template <typename T>
EvalReport evaluate(const ModelParams<T>& params, const Dataset& data, int batch_size) {
  EvalReport report;
  if (data.size() == 0) return report;
  for (const std::vector<int>& idx : batch_indices(data.size(), std::min(batch_size, data.size()), std::nullopt)) {
    Batch<T> batch = make_batch<T>(data, idx, /*augment=*/false, 0, 0);
    const Tensor<T> pred = forward(params, batch.input);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      EvalRow row;
      row.subject_id = data.record(idx[i]).subject_id;
      row.label_cm = {static_cast<double>(batch.labels.data()[2 * i]),
                      static_cast<double>(batch.labels.data()[2 * i + 1])};
      row.pred_cm = {static_cast<double>(pred.data()[2 * i]), static_cast<double>(pred.data()[2 * i + 1])};
      row.err_cm = std::hypot(row.pred_cm[0] - row.label_cm[0], row.pred_cm[1] - row.label_cm[1]);
      row.face_width_px = batch.face_width_px[i];
      row.frame_short_px = batch.frame_short_px[i];
      report.rows.push_back(std::move(row));
    }
  }
  return report;
}

EvalReport angular_evaluate(EvalReport report, const Calibration& calib, const Vec3& origin_cm) {
  validate_calibration(calib);
  for (EvalRow& r : report.rows) {
    const Vec3 d_pred = point_to_direction(r.pred_cm, calib, origin_cm);
    const Vec3 d_true = point_to_direction(r.label_cm, calib, origin_cm);
    r.angular_deg = angular_error_deg(d_pred, d_true);
  }
  return report;
}

template <typename T>
LopoResult lopo_evaluate(const Dataset& data, const ModelConfig& config, const Schedule& schedule,
                         std::uint64_t seed) {
  const std::vector<std::string> subjects = data.subjects();
  if (subjects.size() < 2) throw ContractViolation("lopo_evaluate requires at least 2 subjects");

  LopoResult result;
  double sum_means = 0;
  double pooled = 0;
  std::int64_t pooled_n = 0;
  for (const std::string& held : subjects) {
    std::vector<int> train_idx, test_idx;
    for (int i = 0; i < data.size(); ++i) {
      (data.record(i).subject_id == held ? test_idx : train_idx).push_back(i);
    }
    auto [params, log] = train<T>(config, data.subset(train_idx), schedule, seed);
    EvalReport report = evaluate(params, data.subset(test_idx));
    const double mean = report.mean_cm();
    result.per_subject_mean_cm.emplace_back(held, mean);
    sum_means += mean;
    pooled += mean * static_cast<double>(report.rows.size());
    pooled_n += static_cast<std::int64_t>(report.rows.size());
    result.reports.push_back(std::move(report));
  }
  result.mean_over_subjects = sum_means / static_cast<double>(subjects.size());
  result.pooled_mean_cm = pooled_n ? pooled / static_cast<double>(pooled_n) : 0.0;
  return result;
}

template <typename T>
std::vector<AblationRow> ablation_suite(const Dataset& data, const ModelConfig& base, const Schedule& schedule,
                                        std::uint64_t seed) {
  std::vector<AblationRow> rows;
  for (const Variant v : {Variant::Full, Variant::NoST, Variant::NoSE, Variant::NoAdaGN}) {
    auto [params, log] = train<T>(make_variant(base, v), data, schedule, seed);
    AblationRow row;
    row.variant = v;
    row.initial_loss = log.entries.front().mean_loss;
    row.final_loss = log.entries.back().mean_loss;
    row.eval_mean_cm = evaluate(params, data).mean_cm();
    rows.push_back(row);
  }
  return rows;
}

std::string ablation_table(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "variant,initial_loss,final_loss,eval_mean_cm\n";
  for (const AblationRow& r : rows) {
    json line = json::array({to_string(r.variant), r.initial_loss, r.final_loss, r.eval_mean_cm});
    out << to_string(r.variant) << "," << line[1].dump() << "," << line[2].dump() << "," << line[3].dump() << "\n";
  }
  return out.str();
}

#define AFFNET_INSTANTIATE_TRAIN(T)                                                                        \
  template AdamState<T> init_adam<T>(const ModelParams<T>&);                                               \
  template void adam_step<T>(ModelParams<T>&, AdamState<T>&, double);                                      \
  template std::pair<ModelParams<T>, TrainLog> train<T>(const ModelConfig&, const Dataset&, const Schedule&, \
                                                        std::uint64_t);                                    \
  template EvalReport evaluate<T>(const ModelParams<T>&, const Dataset&, int);                             \
  template LopoResult lopo_evaluate<T>(const Dataset&, const ModelConfig&, const Schedule&, std::uint64_t); \
  template std::vector<AblationRow> ablation_suite<T>(const Dataset&, const ModelConfig&, const Schedule&,  \
                                                      std::uint64_t);

AFFNET_INSTANTIATE_TRAIN(float)
AFFNET_INSTANTIATE_TRAIN(double)

#undef AFFNET_INSTANTIATE_TRAIN

}  // namespace affnet
