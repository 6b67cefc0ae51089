#include "scenescore/scene.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace scenescore {

using nlohmann::json;

double wrap_angle(double theta) {
  double w = std::remainder(theta, 2.0 * kPi);  // [-pi, pi]
  if (w <= -kPi) w += 2.0 * kPi;
  return w;
}

RelPose relative_pose(const Pose& from, const Pose& to) {
  const double c = from.cos_theta();
  const double s = from.sin_theta();
  const double dx = to.x - from.x;
  const double dy = to.y - from.y;
  const double dtheta = wrap_angle(to.theta - from.theta);
  return {c * dx + s * dy, -s * dx + c * dy, std::cos(dtheta), std::sin(dtheta)};
}

Pose transform_pose(const Pose& p, double rotation, double tx, double ty) {
  const double c = std::cos(rotation);
  const double s = std::sin(rotation);
  return {c * p.x - s * p.y + tx, s * p.x + c * p.y + ty, wrap_angle(p.theta + rotation)};
}

const char* to_string(Split s) { return s == Split::Train ? "train" : "test"; }

std::size_t Scene::index_of(const std::string& object_id) const {
  for (std::size_t i = 0; i < objects.size(); ++i)
    if (objects[i].id == object_id) return i;
  throw NotFoundError("object '" + object_id + "' not in scene '" + scene_id + "'");
}

std::vector<Pose> SceneGraph::poses() const {
  std::vector<Pose> out;
  out.reserve(nodes_.size());
  for (const auto& n : nodes_) out.push_back(n.pose);
  return out;
}

SceneGraph SceneGraph::with_poses(std::span<const Pose> poses) const {
  if (poses.size() != nodes_.size())
    throw DimensionError("expected " + std::to_string(nodes_.size()) + " poses, got " +
                         std::to_string(poses.size()));
  SceneGraph g = *this;
  for (std::size_t i = 0; i < poses.size(); ++i) g.nodes_[i].pose = poses[i];
  return g;
}

SceneGraph build_graph(std::span<const SceneObject> objects) {
  SceneGraph g;
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (!objects[i].in_graph()) continue;
    if (!g.nodes_.empty() && objects[i].features.size() != g.feature_dim_)
      throw DimensionError("object '" + objects[i].id + "' has " +
                           std::to_string(objects[i].features.size()) + " features, expected " +
                           std::to_string(g.feature_dim_));
    g.feature_dim_ = objects[i].features.size();
    g.nodes_.push_back(objects[i]);
    g.source_.push_back(i);
  }
  if (g.nodes_.empty()) throw InvalidArgument("scene graph needs at least one object");
  const std::size_t n = g.nodes_.size();
  g.edges_.reserve(n * (n - 1));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) g.edges_.emplace_back(j, i);
  return g;
}

// ---------------------------------------------------------------------------
// Serialization

std::string scene_to_json_line(const Scene& scene) {
  json j;
  j["scene_id"] = scene.scene_id;
  j["split"] = to_string(scene.split);
  j["feature_dim"] = scene.feature_dim;
  json objs = json::array();
  for (const auto& o : scene.objects) {
    objs.push_back({{"id", o.id},
                    {"class", o.class_name},
                    {"pose", {o.pose.x, o.pose.y, o.pose.theta}},
                    {"scale", {o.scale.width, o.scale.height}},
                    {"features", o.features},
                    {"movable", o.movable},
                    {"clutter", o.clutter},
                    {"symmetry_order", o.symmetry_order}});
  }
  j["objects"] = std::move(objs);
  return j.dump();
}

namespace {

template <typename T>
T require(const json& j, const char* key, std::size_t line) {
  if (!j.contains(key)) throw SchemaError(line, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(line, std::string("field '") + key + "': " + e.what());
  }
}

std::vector<double> number_array(const json& j, const char* key, std::size_t expected,
                                 std::size_t line) {
  auto v = require<std::vector<double>>(j, key, line);
  if (expected && v.size() != expected)
    throw SchemaError(line, std::string("field '") + key + "' must have " +
                                std::to_string(expected) + " entries, got " +
                                std::to_string(v.size()));
  return v;
}

}  // namespace

Scene scene_from_json_line(const std::string& line, std::size_t line_number) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::parse_error& e) {
    throw SchemaError(line_number, std::string("malformed JSON: ") + e.what());
  }
  if (!j.is_object()) throw SchemaError(line_number, "scene must be a JSON object");
  Scene s;
  s.scene_id = require<std::string>(j, "scene_id", line_number);
  const auto split = require<std::string>(j, "split", line_number);
  if (split == "train") s.split = Split::Train;
  else if (split == "test") s.split = Split::Test;
  else throw SchemaError(line_number, "split must be 'train' or 'test', got '" + split + "'");
  s.feature_dim = require<std::size_t>(j, "feature_dim", line_number);
  if (!j.contains("objects") || !j["objects"].is_array())
    throw SchemaError(line_number, "missing array 'objects'");
  for (const auto& jo : j["objects"]) {
    SceneObject o;
    o.id = require<std::string>(jo, "id", line_number);
    o.class_name = require<std::string>(jo, "class", line_number);
    const auto p = number_array(jo, "pose", 3, line_number);
    o.pose = {p[0], p[1], p[2]};
    const auto sc = number_array(jo, "scale", 2, line_number);
    if (!(sc[0] > 0.0 && sc[1] > 0.0))
      throw SchemaError(line_number, "object '" + o.id + "' scale must be positive");
    o.scale = {sc[0], sc[1]};
    o.features = number_array(jo, "features", 0, line_number);
    if (o.features.size() != s.feature_dim)
      throw SchemaError(line_number, "object '" + o.id + "' has " +
                                         std::to_string(o.features.size()) +
                                         " features, feature_dim is " +
                                         std::to_string(s.feature_dim));
    o.movable = jo.value("movable", true);
    o.clutter = jo.value("clutter", false);
    o.symmetry_order = jo.value("symmetry_order", 1);
    if (o.symmetry_order < 0)
      throw SchemaError(line_number, "object '" + o.id + "' symmetry_order must be >= 0");
    s.objects.push_back(std::move(o));
  }
  return s;
}

void save_dataset(const std::filesystem::path& path, std::span<const Scene> scenes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write '" + path.string() + "'");
  for (const auto& s : scenes) out << scene_to_json_line(s) << '\n';
}

std::vector<Scene> load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot read '" + path.string() + "'");
  std::vector<Scene> scenes;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Scene s = scene_from_json_line(line, number);
    if (!scenes.empty() && s.feature_dim != scenes.front().feature_dim)
      throw SchemaError(number, "feature_dim " + std::to_string(s.feature_dim) +
                                    " differs from the dataset's " +
                                    std::to_string(scenes.front().feature_dim));
    scenes.push_back(std::move(s));
  }
  return scenes;
}

std::vector<Scene> filter_split(std::span<const Scene> scenes, Split split) {
  std::vector<Scene> out;
  for (const auto& s : scenes)
    if (s.split == split) out.push_back(s);
  return out;
}

}  // namespace scenescore
