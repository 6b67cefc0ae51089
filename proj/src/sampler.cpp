#include "scenescore/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace scenescore {

void LangevinConfig::validate() const {
  if (step_sizes.empty()) throw InvalidArgument("Langevin chain needs at least one step");
  if (noise_scales.size() != step_sizes.size())
    throw InvalidArgument("step and noise schedules differ in length");
  for (double l : step_sizes)
    if (!(l > 0.0)) throw InvalidArgument("step sizes must be > 0");
  for (double s : noise_scales)
    if (!(s >= 0.0)) throw InvalidArgument("noise scales must be >= 0");
  if (!(angle_scale > 0.0)) throw InvalidArgument("angle_scale must be > 0");
}

LangevinConfig LangevinConfig::annealed(std::size_t steps, std::uint64_t seed, double step_start,
                                        double step_end, double temp_start, double temp_end) {
  if (steps == 0) throw InvalidArgument("Langevin chain needs at least one step");
  LangevinConfig c;
  c.seed = seed;
  for (std::size_t t = 0; t < steps; ++t) {
    const double f = steps == 1 ? 0.0 : static_cast<double>(t) / static_cast<double>(steps - 1);
    const double lambda = step_start * std::pow(step_end / step_start, f);
    const double tau = temp_start > 0.0 && temp_end > 0.0 ? temp_start * std::pow(temp_end / temp_start, f)
                                                          : temp_start + (temp_end - temp_start) * f;
    c.step_sizes.push_back(lambda);
    c.noise_scales.push_back(tau * std::sqrt(2.0 * lambda));
  }
  return c;
}

LangevinConfig LangevinConfig::constant(std::size_t steps, double step_size, double noise_scale,
                                        std::uint64_t seed) {
  LangevinConfig c;
  c.seed = seed;
  c.step_sizes.assign(steps, step_size);
  c.noise_scales.assign(steps, noise_scale);
  c.validate();
  return c;
}

nlohmann::json to_json(const LangevinConfig& c) {
  return {{"steps", c.steps()},
          {"step_first", c.step_sizes.empty() ? 0.0 : c.step_sizes.front()},
          {"step_last", c.step_sizes.empty() ? 0.0 : c.step_sizes.back()},
          {"noise_first", c.noise_scales.empty() ? 0.0 : c.noise_scales.front()},
          {"noise_last", c.noise_scales.empty() ? 0.0 : c.noise_scales.back()},
          {"angle_scale", c.angle_scale},
          {"clip_norm", c.clip_norm},
          {"random_init", c.random_init},
          {"clamp_positions", c.clamp_positions},
          {"seed", c.seed}};
}

CostTerm compose(std::vector<CostTerm> terms) {
  auto fn = [terms = std::move(terms)](std::span<const Pose> poses, std::span<PoseGradient> grad) {
    std::fill(grad.begin(), grad.end(), PoseGradient{0.0, 0.0, 0.0});
    std::vector<PoseGradient> g(poses.size());
    double value = 0.0;
    for (const auto& t : terms) {
      value += t.weight * t.fn(poses, g);
      for (std::size_t i = 0; i < grad.size(); ++i)
        for (int d = 0; d < 3; ++d) grad[i][d] += t.weight * g[i][d];
    }
    return value;
  };
  return {std::move(fn), 1.0};
}

std::uint64_t chain_seed(std::uint64_t seed, std::uint64_t chain_index) {
  // splitmix64 finaliser over a combination of both inputs
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (chain_index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

ChainResult langevin_chain(const CostFn& energy, std::span<const Pose> start,
                           const FixedMask& frozen, const LangevinConfig& config,
                           std::span<const CostTerm> extra, double half_extent,
                           std::uint64_t chain_index) {
  config.validate();
  const std::size_t n = start.size();
  if (frozen.size() != n) throw DimensionError("mask size does not match pose count");
  if (std::all_of(frozen.begin(), frozen.end(), [](bool f) { return f; }))
    throw InvalidArgument("every object is frozen; nothing to sample");

  std::mt19937_64 rng(chain_seed(config.seed, chain_index));
  std::uniform_real_distribution<double> upos(-half_extent, half_extent);
  std::uniform_real_distribution<double> uang(-kPi, kPi);
  std::normal_distribution<double> normal(0.0, 1.0);

  std::vector<Pose> x(start.begin(), start.end());
  for (std::size_t i = 0; i < n; ++i) {
    if (frozen[i] || !config.random_init) continue;
    x[i].x = upos(rng);
    x[i].y = upos(rng);
    x[i].theta = wrap_angle(uang(rng));
  }

  const double scale[3] = {half_extent, half_extent, config.angle_scale};
  std::vector<PoseGradient> g(n), gk(n);
  ChainResult result;
  result.energy_trace.reserve(config.steps());

  for (std::size_t t = 0; t < config.steps(); ++t) {
    const double e = energy(x, g);
    result.energy_trace.push_back(e);
    for (const auto& term : extra) {
      term.fn(x, gk);
      for (std::size_t i = 0; i < n; ++i)
        for (int d = 0; d < 3; ++d) g[i][d] += term.weight * gk[i][d];
    }
    const double lambda = config.step_sizes[t];
    const double sigma = config.noise_scales[t];
    for (std::size_t i = 0; i < n; ++i) {
      if (frozen[i]) continue;
      double gz[3], norm2 = 0.0;
      for (int d = 0; d < 3; ++d) {
        gz[d] = g[i][d] * scale[d];
        norm2 += gz[d] * gz[d];
      }
      const double norm = std::sqrt(norm2);
      if (config.clip_norm > 0.0 && norm > config.clip_norm)
        for (double& v : gz) v *= config.clip_norm / norm;
      if (!std::isfinite(norm) || !std::isfinite(gz[0]) || !std::isfinite(gz[1]) ||
          !std::isfinite(gz[2]))
        throw NumericError("non-finite pose gradient at Langevin step " + std::to_string(t) +
                           " (object " + std::to_string(i) + ")");
      double step[3];
      for (int d = 0; d < 3; ++d) {
        const double omega = sigma > 0.0 ? sigma * normal(rng) : 0.0;
        step[d] = (lambda * gz[d] + omega) * scale[d];
      }
      x[i].x -= step[0];
      x[i].y -= step[1];
      if (config.clamp_positions) {
        x[i].x = std::clamp(x[i].x, -half_extent, half_extent);
        x[i].y = std::clamp(x[i].y, -half_extent, half_extent);
      }
      x[i].theta = wrap_angle(x[i].theta - step[2]);
    }
  }

  result.final_energy = energy(x, g);
  result.final_total = result.final_energy;
  for (const auto& term : extra) result.final_total += term.weight * term.fn(x, gk);
  result.poses = std::move(x);
  return result;
}

ChainResult langevin_sample(const EnergyFunction& energy, const SceneGraph& graph,
                            const LangevinConfig& config, const FixedMask& mask,
                            std::span<const CostTerm> extra, std::uint64_t chain_index) {
  if (!mask.empty() && mask.size() != graph.size())
    throw DimensionError("mask size does not match graph size");
  FixedMask frozen(graph.size(), false);
  for (std::size_t i = 0; i < graph.size(); ++i)
    frozen[i] = (!mask.empty() && mask[i]) || !graph.nodes()[i].movable;
  const CostFn fn = [&energy](std::span<const Pose> p, std::span<PoseGradient> g) {
    return energy.value_and_pose_gradient(p, g);
  };
  const auto start = graph.poses();
  return langevin_chain(fn, start, frozen, config, extra, energy.model().workspace_half_extent(),
                        chain_index);
}

ChainResult langevin_sample(const EnergyModel& model, const SceneGraph& graph,
                            const LangevinConfig& config, const FixedMask& mask,
                            std::span<const CostTerm> extra, std::uint64_t chain_index) {
  const EnergyFunction f(model, graph);
  return langevin_sample(f, graph, config, mask, extra, chain_index);
}

FixedMask mask_from_ids(const SceneGraph& graph, std::span<const std::string> frozen_ids) {
  FixedMask m(graph.size(), false);
  for (const auto& id : frozen_ids) {
    bool found = false;
    for (std::size_t i = 0; i < graph.size(); ++i)
      if (graph.nodes()[i].id == id) m[i] = found = true;
    if (!found) throw NotFoundError("object '" + id + "' is not a graph node");
  }
  return m;
}

}  // namespace scenescore
