#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "scenescore/energy.hpp"
#include "scenescore/sampler.hpp"

namespace scenescore {

struct TrainConfig {
  std::size_t iterations = 1500;
  std::size_t negatives = 8;  // K
  std::size_t batch_size = 8;
  double learning_rate = 1e-3;
  // The step size decays geometrically to learning_rate * lr_final_scale at
  // the last iteration.
  double lr_final_scale = 1.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double energy_l2 = 1e-3;  // 0 disables
  std::uint64_t seed = 0;
  std::size_t chain_steps = 60;  // negative chains; same schedule shape as inference
  double chain_step_start = 2e-2;
  double chain_step_end = 2e-4;
  double chain_temp_start = 1.0;
  double chain_temp_end = 0.1;
  // Fraction of negatives whose chain frees only a random subset of the
  // objects, the rest held at the positive's poses.
  double partial_fraction = 0.0;
  // Upper bound on the number of objects a partial chain frees (0: any).
  std::size_t partial_max_free = 0;
  // Fraction of negative chains started from an earlier negative of the same
  // scene (persistent chains) instead of a uniform draw.
  double replay_fraction = 0.0;
  std::size_t replay_capacity = 32;  // stored negatives per scene

  void validate() const;
  LangevinConfig negative_chain(std::uint64_t iteration) const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

// -log( e^{-E_pos} / (e^{-E_pos} + sum_j e^{-E_j}) ), evaluated as
// E_pos + logsumexp(-E_pos, -E_1, ..., -E_K).
double infonce_loss(double e_pos, std::span<const double> e_negs);

struct LossGradient {
  double loss = 0.0;
  double d_pos = 0.0;
  std::vector<double> d_negs;
};

// Loss and its derivatives w.r.t. every energy, via the differentiation core.
LossGradient infonce_loss_gradient(double e_pos, std::span<const double> e_negs);

struct Checkpoint {
  EnergyModel model;
  std::size_t iterations = 0;
  std::vector<double> loss_history;  // mean per-example loss per iteration

  nlohmann::json metadata() const;
};

class TrainingDiverged : public NumericError {
 public:
  TrainingDiverged(const std::string& what, Checkpoint last_finite)
      : NumericError(what), last_finite_(std::move(last_finite)) {}
  const Checkpoint& last_finite() const { return last_finite_; }

 private:
  Checkpoint last_finite_;
};

using ProgressFn = std::function<void(std::size_t iteration, double loss)>;

// Fits `model` in place on the train split. Throws InvalidArgument("empty
// training split") when there is nothing to fit and TrainingDiverged when a
// loss becomes non-finite.
Checkpoint train(EnergyModel model, std::span<const Scene> dataset, const TrainConfig& config,
                 const ProgressFn& progress = {});

// Loss of one example for fixed negatives: infonce + energy_l2 regulariser.
double example_loss(const EnergyFunction& f, std::span<const Pose> positive,
                    std::span<const std::vector<Pose>> negatives, double energy_l2);

// Adds the parameter gradient of example_loss into `grads`; returns the loss.
double accumulate_example_gradient(const EnergyFunction& f, std::span<const Pose> positive,
                                   std::span<const std::vector<Pose>> negatives, double energy_l2,
                                   std::vector<diff::Tensor>& grads);

void write_loss_trace(const std::filesystem::path& path, std::span<const double> losses,
                      const std::string& header_comment = {});

}  // namespace scenescore
