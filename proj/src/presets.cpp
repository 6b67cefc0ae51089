#include "scenescore/presets.hpp"

namespace scenescore {

LangevinConfig SamplerSettings::make(std::uint64_t seed) const {
  LangevinConfig c = LangevinConfig::annealed(steps, seed, step_start, step_end, temp_start, temp_end);
  c.clip_norm = clip_norm;
  return c;
}

nlohmann::json to_json(const SamplerSettings& s) {
  return {{"steps", s.steps},         {"step_start", s.step_start}, {"step_end", s.step_end},
          {"temp_start", s.temp_start}, {"temp_end", s.temp_end},   {"clip_norm", s.clip_norm}};
}

nlohmann::json to_json(const EvalSettings& s) {
  return {{"restarts", s.restarts},
          {"ordering_restarts", s.ordering_restarts},
          {"random_samples", s.random_samples},
          {"budget", s.budget},
          {"alignment_threshold_cm", s.alignment_threshold_cm},
          {"symmetry_threshold_cm", s.symmetry_threshold_cm},
          {"seed", s.seed}};
}

Preset preset_for(ScenarioKind kind) {
  Preset p;
  p.energy.hidden = 32;
  p.train.iterations = 300;
  p.train.learning_rate = 3e-3;
  p.train.lr_final_scale = 0.1;
  p.train.replay_fraction = 0.9;
  p.train.chain_temp_start = 0.02;
  p.train.chain_temp_end = 0.002;
  // Learned landscapes are shallow; larger steps let chains reach the minima.
  p.sampler.step_start = 0.2;
  p.sampler.step_end = 2e-3;
  p.sampler.temp_start = 0.02;
  p.sampler.temp_end = 0.002;
  switch (kind) {
    case ScenarioKind::Dining:
      break;
    case ScenarioKind::OrderingClassSize:
    case ScenarioKind::OrderingAllSize:
    case ScenarioKind::OrderingUnseen:
      p.train.partial_fraction = 0.75;
      p.train.partial_max_free = 2;
      p.eval.ordering_restarts = 32;
      break;
    case ScenarioKind::Tv:
      p.train.partial_fraction = 0.75;
      p.train.partial_max_free = 2;
      break;
  }
  return p;
}

}  // namespace scenescore
