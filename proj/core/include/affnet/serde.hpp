// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>

#include "affnet/data.hpp"
#include "affnet/model.hpp"
#include "affnet/train.hpp"

// JSON (de)serialization kept behind string interfaces so the public
// headers do not depend on the JSON library.
namespace affnet {

std::string to_json_string(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

std::string to_json_string(const Schedule& schedule);
Schedule schedule_from_json(const std::string& text);

std::string to_json_string(const SynthConfig& config);
SynthConfig synth_config_from_json(const std::string& text);

/// A single config document with optional "model", "schedule" and "synth"
/// sections; missing sections keep their defaults.
struct RunConfig {
  ModelConfig model;
  Schedule schedule;
  SynthConfig synth;
};

std::string to_json_string(const RunConfig& config);
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::string& path);  // IoError on missing file

/// FNV-1a over the canonical JSON of (model, schedule), as a hex string.
std::string config_hash(const ModelConfig& model, const Schedule& schedule);

}  // namespace affnet
