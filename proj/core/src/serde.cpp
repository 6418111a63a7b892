// SPDX-License-Identifier: Apache-2.0
#include "affnet/serde.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace affnet {

using nlohmann::json;

namespace {

json conv_to_json(const ConvSpec& s) { return json::array({s.out_channels, s.kernel, s.stride, s.padding}); }

ConvSpec conv_from_json(const json& j) {
  if (!j.is_array() || j.size() != 4) throw IoError("conv spec must be [out_channels, kernel, stride, padding]");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

json model_to_json(const ModelConfig& c) {
  json j;
  j["face_convs"] = json::array();
  for (const ConvSpec& s : c.face_convs) j["face_convs"].push_back(conv_to_json(s));
  j["eye_convs"] = json::array();
  for (const ConvSpec& s : c.eye_convs) j["eye_convs"].push_back(conv_to_json(s));
  j["fusion_conv"] = conv_to_json(c.fusion_conv);
  j["rects_fc_widths"] = c.rects_fc_widths;
  j["face_fc_widths"] = c.face_fc_widths;
  j["eye_fc_width"] = c.eye_fc_width;
  j["head_widths"] = c.head_widths;
  j["face_size"] = c.face_size;
  j["eye_size"] = c.eye_size;
  j["leaky_slope"] = c.leaky_slope;
  j["gn_eps"] = c.gn_eps;
  j["variant"] = to_string(c.variant);
  return j;
}

ModelConfig model_from_json(const json& j) {
  ModelConfig c;
  if (j.contains("face_convs")) {
    const auto& a = j.at("face_convs");
    if (a.size() != c.face_convs.size()) throw IoError("face_convs must list 6 layers");
    for (std::size_t i = 0; i < c.face_convs.size(); ++i) c.face_convs[i] = conv_from_json(a[i]);
  }
  if (j.contains("eye_convs")) {
    const auto& a = j.at("eye_convs");
    if (a.size() != c.eye_convs.size()) throw IoError("eye_convs must list 5 layers");
    for (std::size_t i = 0; i < c.eye_convs.size(); ++i) c.eye_convs[i] = conv_from_json(a[i]);
  }
  if (j.contains("fusion_conv")) c.fusion_conv = conv_from_json(j.at("fusion_conv"));
  if (j.contains("rects_fc_widths")) c.rects_fc_widths = j.at("rects_fc_widths").get<std::array<int, 4>>();
  if (j.contains("face_fc_widths")) c.face_fc_widths = j.at("face_fc_widths").get<std::array<int, 2>>();
  if (j.contains("eye_fc_width")) c.eye_fc_width = j.at("eye_fc_width").get<int>();
  if (j.contains("head_widths")) c.head_widths = j.at("head_widths").get<std::array<int, 2>>();
  if (j.contains("face_size")) c.face_size = j.at("face_size").get<int>();
  if (j.contains("eye_size")) c.eye_size = j.at("eye_size").get<int>();
  if (j.contains("leaky_slope")) c.leaky_slope = j.at("leaky_slope").get<double>();
  if (j.contains("gn_eps")) c.gn_eps = j.at("gn_eps").get<double>();
  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
  if (j.contains("width_divisor")) c = c.scaled(j.at("width_divisor").get<int>());
  return c;
}

json schedule_to_json(const Schedule& s) {
  return json{{"epochs", s.epochs},           {"lr_initial", s.lr_initial},   {"lr_after", s.lr_after},
              {"drop_epoch", s.drop_epoch},   {"batch_size", s.batch_size},   {"augment", s.augment},
              {"eval_every", s.eval_every},   {"early_stop_cm", s.early_stop_cm}};
}

Schedule schedule_from_json_obj(const json& j) {
  Schedule s;
  if (j.contains("epochs")) s.epochs = j.at("epochs").get<int>();
  if (j.contains("lr_initial")) s.lr_initial = j.at("lr_initial").get<double>();
  if (j.contains("lr_after")) s.lr_after = j.at("lr_after").get<double>();
  if (j.contains("drop_epoch")) s.drop_epoch = j.at("drop_epoch").get<int>();
  if (j.contains("batch_size")) s.batch_size = j.at("batch_size").get<int>();
  if (j.contains("augment")) s.augment = j.at("augment").get<bool>();
  if (j.contains("eval_every")) s.eval_every = j.at("eval_every").get<int>();
  if (j.contains("early_stop_cm")) s.early_stop_cm = j.at("early_stop_cm").get<double>();
  return s;
}

json synth_to_json(const SynthConfig& c) {
  return json{{"n_samples", c.n_samples},
              {"n_subjects", c.n_subjects},
              {"label_range_cm", json::array({c.label_range_cm[0], c.label_range_cm[1]})},
              {"noise_level", c.noise_level},
              {"seed", c.seed},
              {"frame_w", c.frame_w},
              {"frame_h", c.frame_h}};
}

SynthConfig synth_from_json_obj(const json& j) {
  SynthConfig c;
  if (j.contains("n_samples")) c.n_samples = j.at("n_samples").get<int>();
  if (j.contains("n_subjects")) c.n_subjects = j.at("n_subjects").get<int>();
  if (j.contains("label_range_cm")) {
    const auto& a = j.at("label_range_cm");
    c.label_range_cm = {std::array<double, 2>{a[0][0].get<double>(), a[0][1].get<double>()},
                        std::array<double, 2>{a[1][0].get<double>(), a[1][1].get<double>()}};
  }
  if (j.contains("noise_level")) c.noise_level = j.at("noise_level").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("frame_w")) c.frame_w = j.at("frame_w").get<int>();
  if (j.contains("frame_h")) c.frame_h = j.at("frame_h").get<int>();
  return c;
}

}  // namespace

std::string to_json_string(const ModelConfig& config) { return model_to_json(config).dump(); }

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return model_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw IoError(std::string("model config: ") + e.what());
  }
}

std::string to_json_string(const Schedule& schedule) { return schedule_to_json(schedule).dump(); }

Schedule schedule_from_json(const std::string& text) {
  try {
    return schedule_from_json_obj(json::parse(text));
  } catch (const json::exception& e) {
    throw IoError(std::string("schedule: ") + e.what());
  }
}

std::string to_json_string(const SynthConfig& config) { return synth_to_json(config).dump(); }

SynthConfig synth_config_from_json(const std::string& text) {
  try {
    return synth_from_json_obj(json::parse(text));
  } catch (const json::exception& e) {
    throw IoError(std::string("synth config: ") + e.what());
  }
}

std::string to_json_string(const RunConfig& config) {
  return json{{"model", model_to_json(config.model)},
              {"schedule", schedule_to_json(config.schedule)},
              {"synth", synth_to_json(config.synth)}}
      .dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("run config: ") + e.what());
  }
  RunConfig c;
  try {
    if (j.contains("model")) c.model = model_from_json(j.at("model"));
    if (j.contains("schedule")) c.schedule = schedule_from_json_obj(j.at("schedule"));
    if (j.contains("synth")) c.synth = synth_from_json_obj(j.at("synth"));
  } catch (const json::exception& e) {
    throw IoError(std::string("run config: ") + e.what());
  }
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return run_config_from_json(buf.str());
}

std::string config_hash(const ModelConfig& model, const Schedule& schedule) {
  const std::string text = to_json_string(model) + "|" + to_json_string(schedule);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace affnet
