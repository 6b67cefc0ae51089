#pragma once

// Langevin sampling over object poses.
//
// The chain runs in normalised coordinates z = (x / R, y / R, theta / A)
// where R is the workspace half extent and A the angle scale. Each step is
//
//   z <- z - lambda_t * clip(grad_z E + sum_k w_k grad_z C_k) - sigma_t * xi,
//   xi ~ N(0, 1) per coordinate,
//
// with clipping applied per object. sigma_t is the standard deviation of the
// noise displacement, i.e. lambda_t * omega_t with omega_t ~ N(0, (sigma_t /
// lambda_t)^2) in the "lambda (grad + omega)" form; sigma_t = sqrt(2 lambda_t)
// samples exp(-E) when clipping is inactive. Frozen objects are never touched.

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "scenescore/energy.hpp"
#include "scenescore/scene.hpp"

namespace scenescore {

struct LangevinConfig {
  std::vector<double> step_sizes;    // lambda_t > 0
  std::vector<double> noise_scales;  // sigma_t >= 0, std of omega_t
  double angle_scale = kPi;
  double clip_norm = 1.0;  // per-object, normalised units; <= 0 disables
  bool random_init = true;      // false: unfrozen poses start from `start` too
  bool clamp_positions = true;  // keep x and y inside [-R, R] after each step
  std::uint64_t seed = 0;

  std::size_t steps() const { return step_sizes.size(); }
  void validate() const;

  // Geometric decay of lambda from step_start to step_end and of the
  // temperature tau from temp_start to temp_end, with
  // sigma_t = tau_t * sqrt(2 lambda_t), i.e. temperature tau_t^2.
  static LangevinConfig annealed(std::size_t steps, std::uint64_t seed = 0,
                                 double step_start = 2e-2, double step_end = 2e-4,
                                 double temp_start = 1.0, double temp_end = 0.1);
  static LangevinConfig constant(std::size_t steps, double step_size, double noise_scale,
                                 std::uint64_t seed = 0);
};

nlohmann::json to_json(const LangevinConfig& c);

// true = pose frozen.
using FixedMask = std::vector<bool>;

// Writes the gradient of the cost w.r.t. every pose into `grad` (overwriting)
// and returns the cost value.
using CostFn = std::function<double(std::span<const Pose> poses, std::span<PoseGradient> grad)>;

struct CostTerm {
  CostFn fn;
  double weight = 1.0;
};

// value = sum w_k c_k, gradient = sum w_k grad c_k; the result has weight 1.
CostTerm compose(std::vector<CostTerm> terms);

struct ChainResult {
  std::vector<Pose> poses;
  std::vector<double> energy_trace;  // energy before each step
  double final_energy = 0.0;         // energy of the returned poses
  double final_total = 0.0;          // energy plus weighted extra costs
};

// Independent per-chain stream derived from (seed, chain index).
std::uint64_t chain_seed(std::uint64_t seed, std::uint64_t chain_index);

// Runs one chain on an arbitrary differentiable energy. Unfrozen poses are
// initialised uniformly over [-R, R]^2 x (-pi, pi] unless random_init is
// off; `start` supplies the rest.
ChainResult langevin_chain(const CostFn& energy, std::span<const Pose> start,
                           const FixedMask& frozen, const LangevinConfig& config,
                           std::span<const CostTerm> extra, double workspace_half_extent,
                           std::uint64_t chain_index = 0);

// Samples a graph under a learned energy. Immovable nodes are always frozen.
ChainResult langevin_sample(const EnergyFunction& energy, const SceneGraph& graph,
                            const LangevinConfig& config, const FixedMask& mask,
                            std::span<const CostTerm> extra = {}, std::uint64_t chain_index = 0);
ChainResult langevin_sample(const EnergyModel& model, const SceneGraph& graph,
                            const LangevinConfig& config, const FixedMask& mask,
                            std::span<const CostTerm> extra = {}, std::uint64_t chain_index = 0);

// Mask freezing the named objects (by id) among the graph nodes.
FixedMask mask_from_ids(const SceneGraph& graph, std::span<const std::string> frozen_ids);

}  // namespace scenescore
