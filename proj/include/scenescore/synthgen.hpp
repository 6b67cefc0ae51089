#pragma once

// Synthetic scenario generators with known ground truth.
//
// Every generator is a pure function of (ScenarioSpec, seed). Numeric
// parameters below are stand-ins chosen for this artifact; they are recorded
// in the spec so every dataset carries its own generating process.

#include <array>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "scenescore/scene.hpp"

namespace scenescore {

enum class ScenarioKind { Dining, OrderingClassSize, OrderingAllSize, OrderingUnseen, Tv };

const char* to_string(ScenarioKind k);
// "dining", "ordering-class-size", "ordering-all-size", "ordering-unseen", "tv"
ScenarioKind scenario_from_string(const std::string& s);
bool is_ordering(ScenarioKind k);

// One-dimensional Gaussian mixture.
struct Gmm {
  std::vector<double> means;
  std::vector<double> stddevs;
  std::vector<double> weights;

  void validate(const std::string& name) const;
  double sample(std::mt19937_64& rng) const;
};

inline constexpr std::size_t kFeatureDim = 16;

struct ScenarioSpec {
  ScenarioKind kind = ScenarioKind::Dining;
  double workspace_half_extent_cm = 50.0;
  std::size_t train_n = 48;
  std::size_t test_n = 16;
  double feature_noise = 0.05;

  // dining: two place settings around a round table
  double table_radius_cm = 30.0;  // plate centre to table centre
  double plate_radius_cm = 12.0;
  double bowl_radius_cm = 7.0;
  Gmm cutlery_distance{{16.0, 19.0}, {0.8, 0.8}, {0.5, 0.5}};  // plate centre to cutlery centre
  double cutlery_distance_noise_cm = 0.3;  // independent per fork / knife
  double cutlery_angle_noise = 0.03;       // rad
  double side_flip_probability = 0.5;

  // ordering: one row of cutlery
  std::size_t per_class = 2;
  Gmm ordering_gap{{8.0, 11.0}, {0.5, 0.5}, {0.5, 0.5}};  // centre-to-centre along the row
  std::vector<std::array<double, 2>> train_length_bands{{12, 14}, {16, 18}, {20, 22}, {24, 26}};
  std::vector<std::array<double, 2>> test_length_bands{{14, 16}, {18, 20}, {22, 24}};
  double min_length_separation_cm = 1.5;
  double row_offset_cm = 10.0;  // row centre uniform in [-a, a]^2
  double row_position_noise_cm = 0.3;
  double row_angle_noise = 0.03;

  // tv: television with a speaker on each side
  double tv_position_noise_cm = 5.0;
  double tv_angle_noise = 0.02;
  Gmm speaker_distance{{45.0, 55.0}, {2.0, 2.0}, {0.5, 0.5}};  // tv centre to speaker centre
  double speaker_x_noise_cm = 0.3;
  double speaker_y_noise_cm = 0.3;
  double speaker_angle_noise = 0.02;
  std::vector<std::size_t> clutter_counts{4, 8, 12};
  std::array<double, 2> clutter_size_cm{15.0, 30.0};

  void validate() const;
  static ScenarioSpec defaults(ScenarioKind kind);
};

nlohmann::json to_json(const ScenarioSpec& s);
ScenarioSpec scenario_spec_from_json(const nlohmann::json& j);

// Raw feature vector of a class before per-object noise: a class one-hot
// block plus shared semantic-group components.
std::vector<double> class_feature(const std::string& class_name);
Scale class_scale(const std::string& class_name);
int class_symmetry_order(const std::string& class_name);

struct ObjectTruth {
  std::string role;   // class name
  int group = -1;     // place setting index (dining)
};

struct SceneTruth {
  std::string scene_id;
  std::map<std::string, ObjectTruth> objects;
  std::vector<std::string> order;  // ordering scenarios: ids along the row
  int side = 0;                    // dining: +1 fork on the local -x side
  std::size_t clutter_count = 0;   // tv test scenes
};

struct GroundTruth {
  ScenarioSpec spec;
  std::uint64_t seed = 0;
  std::vector<SceneTruth> scenes;

  const SceneTruth& scene(const std::string& scene_id) const;
};

nlohmann::json to_json(const GroundTruth& g);
GroundTruth ground_truth_from_json(const nlohmann::json& j);

struct Generated {
  std::vector<Scene> scenes;
  GroundTruth truth;
};

Generated gen_dining(const ScenarioSpec& spec, std::uint64_t seed);
Generated gen_ordering(const ScenarioSpec& spec, std::uint64_t seed);
// Train split without clutter, then spec.test_n test scenes per clutter level.
Generated gen_tv(const ScenarioSpec& spec, std::uint64_t seed);
Generated generate(const ScenarioSpec& spec, std::uint64_t seed);

// Ids of an ordering scene sorted by the scenario's rule (brute force over
// class rank and length).
std::vector<std::string> ordering_permutation(ScenarioKind kind, const Scene& scene);

// Conditional mode poses of a held-out object given every other object of
// the scene at its current pose. Dining and tv only.
std::vector<Pose> conditional_modes(const GroundTruth& gt, const Scene& scene,
                                    const std::string& held_out_id);

// Posterior mass below which a mixture component is not reported as a mode.
inline constexpr double kModeWeightThreshold = 0.05;

}  // namespace scenescore
