#pragma once

// Default settings per scenario, shared by the command-line tool and the
// acceptance run. Every field can be overridden from a config file.

#include <cstdint>

#include <json.hpp>

#include "scenescore/energy.hpp"
#include "scenescore/synthgen.hpp"
#include "scenescore/training.hpp"

namespace scenescore {

struct SamplerSettings {
  std::size_t steps = 200;
  double step_start = 2e-2;
  double step_end = 2e-4;
  double temp_start = 1.0;
  double temp_end = 0.1;
  double clip_norm = 1.0;

  LangevinConfig make(std::uint64_t seed) const;
};

struct EvalSettings {
  std::size_t restarts = 16;          // per missing object
  std::size_t ordering_restarts = 8;  // per ordering scene
  std::size_t random_samples = 64;
  std::size_t budget = 500;
  double alignment_threshold_cm = 2.0;
  double symmetry_threshold_cm = 2.0;
  std::uint64_t seed = 0;
};

struct Preset {
  EnergyConfig energy;
  TrainConfig train;
  SamplerSettings sampler;
  EvalSettings eval;
};

Preset preset_for(ScenarioKind kind);

nlohmann::json to_json(const SamplerSettings& s);
nlohmann::json to_json(const EvalSettings& s);

}  // namespace scenescore
