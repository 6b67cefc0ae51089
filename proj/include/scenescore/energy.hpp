#pragma once

// Graph energy network E(x | s).
//
// Node inputs are semantic embeddings: a two-layer extractor over the raw
// per-object features with the scale descriptor appended. Each message
// layer computes, for every node i,
//
//   v_i' = LeakyReLU( sum_{j != i} W [v_i ; v_j ; e_ji] + b )
//
// where e_ji is the relative pose from j to i expressed in j's frame. The
// node vectors are add-pooled and passed through a two-layer head to a
// scalar. In the Absolute variant the edge pose features are zero and the
// absolute pose vector is appended to every node input instead.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "scenescore/diff.hpp"
#include "scenescore/scene.hpp"

namespace scenescore {

enum class Variant { Relative, Absolute };

const char* to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct EnergyConfig {
  int num_gnn_layers = 3;
  std::size_t hidden = 64;        // H
  std::size_t semantic_dim = 32;  // S_em
  double leaky_slope = 0.01;
  // Scale descriptors are divided by this before entering the network.
  double scale_unit_cm = 10.0;

  void validate() const;
};

nlohmann::json to_json(const EnergyConfig& c);
EnergyConfig energy_config_from_json(const nlohmann::json& j);

struct Parameter {
  std::string name;
  diff::Tensor value;
};

class EnergyModel {
 public:
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation from `seed`.
  EnergyModel(EnergyConfig config, Variant variant, std::size_t feature_dim,
              double workspace_half_extent_cm, std::uint64_t seed);

  const EnergyConfig& config() const { return config_; }
  Variant variant() const { return variant_; }
  std::size_t feature_dim() const { return feature_dim_; }
  double workspace_half_extent() const { return half_extent_; }
  // Width of the node input of the first message layer.
  std::size_t node_input_dim() const;

  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const diff::Tensor& param(const std::string& name) const;
  diff::Tensor& param(const std::string& name);
  std::size_t parameter_count() const;
  void set_zero();

  nlohmann::json to_json() const;
  // Validates every parameter shape against the stored config.
  static EnergyModel from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path, const nlohmann::json& extra = {}) const;
  static EnergyModel load(const std::filesystem::path& path);

 private:
  EnergyModel() = default;
  void allocate();

  EnergyConfig config_;
  Variant variant_ = Variant::Relative;
  std::size_t feature_dim_ = 0;
  double half_extent_ = 1.0;
  std::vector<Parameter> params_;
};

// concat(extractor(raw_features), scale / scale_unit_cm). Pose-independent.
std::vector<double> embed_semantics(const EnergyModel& model, std::span<const double> raw_features,
                                    Scale scale);

// Energy tape specialised to one graph's semantics and node count. Poses are
// supplied per call, so one instance serves a whole sampling chain. Holds
// references to the model's parameters: the model must outlive it and must
// not be modified during a call.
class EnergyFunction {
 public:
  EnergyFunction(const EnergyModel& model, const SceneGraph& graph);

  std::size_t size() const { return n_; }
  const EnergyModel& model() const { return *model_; }
  double value(std::span<const Pose> poses) const;
  // Gradient for every node (no masking), in cm and radians.
  double value_and_pose_gradient(std::span<const Pose> poses, std::span<PoseGradient> grad) const;
  // Adds weight * dE/dparam into `grads` (aligned with model.parameters()).
  double accumulate_param_gradient(std::span<const Pose> poses, std::vector<diff::Tensor>& grads,
                                   double weight) const;

  const diff::Tape& tape() const { return tape_; }

 private:
  diff::Tensor pose_tensor(std::span<const Pose> poses) const;
  diff::Bindings bindings(const diff::Tensor& poses) const;

  const EnergyModel* model_;
  std::size_t n_;
  diff::Tape tape_;
  std::vector<diff::NodeRef> param_leaves_;
  diff::NodeRef features_leaf_, scale_leaf_, pose_leaf_;
  diff::Tensor features_, scales_;
};

double energy(const EnergyModel& model, const SceneGraph& graph);

// Per-node (dE/dx, dE/dy, dE/dtheta); zero for immovable nodes.
std::vector<PoseGradient> energy_pose_gradient(const EnergyModel& model, const SceneGraph& graph);

std::vector<diff::Tensor> zero_gradients(const EnergyModel& model);

}  // namespace scenescore
