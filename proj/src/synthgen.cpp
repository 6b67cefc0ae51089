#include "scenescore/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "scenescore/constraints.hpp"

namespace scenescore {

using nlohmann::json;

const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::Dining: return "dining";
    case ScenarioKind::OrderingClassSize: return "ordering-class-size";
    case ScenarioKind::OrderingAllSize: return "ordering-all-size";
    case ScenarioKind::OrderingUnseen: return "ordering-unseen";
    case ScenarioKind::Tv: return "tv";
  }
  return "?";
}

ScenarioKind scenario_from_string(const std::string& s) {
  for (auto k : {ScenarioKind::Dining, ScenarioKind::OrderingClassSize, ScenarioKind::OrderingAllSize,
                 ScenarioKind::OrderingUnseen, ScenarioKind::Tv})
    if (s == to_string(k)) return k;
  throw InvalidArgument("unknown scenario '" + s + "'");
}

bool is_ordering(ScenarioKind k) {
  return k == ScenarioKind::OrderingClassSize || k == ScenarioKind::OrderingAllSize ||
         k == ScenarioKind::OrderingUnseen;
}

void Gmm::validate(const std::string& name) const {
  if (means.empty()) throw InvalidArgument(name + ": mixture has no components");
  if (stddevs.size() != means.size() || weights.size() != means.size())
    throw InvalidArgument(name + ": mixture arrays differ in length");
  double total = 0.0;
  for (std::size_t c = 0; c < means.size(); ++c) {
    if (!(stddevs[c] > 0.0)) throw InvalidArgument(name + ": stddevs must be > 0");
    if (!(weights[c] >= 0.0)) throw InvalidArgument(name + ": weights must be >= 0");
    total += weights[c];
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument(name + ": weights must sum to 1");
}

double Gmm::sample(std::mt19937_64& rng) const {
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  const std::size_t c = pick(rng);
  return std::normal_distribution<double>(means[c], stddevs[c])(rng);
}

// ---------------------------------------------------------------------------
// Spec

void ScenarioSpec::validate() const {
  if (!(workspace_half_extent_cm > 0.0)) throw InvalidArgument("workspace half extent must be > 0");
  if (!(feature_noise >= 0.0)) throw InvalidArgument("feature_noise must be >= 0");
  cutlery_distance.validate("cutlery_distance");
  ordering_gap.validate("ordering_gap");
  speaker_distance.validate("speaker_distance");
  for (double v : {cutlery_distance_noise_cm, cutlery_angle_noise, row_position_noise_cm, row_angle_noise,
                   tv_position_noise_cm, tv_angle_noise, speaker_x_noise_cm, speaker_y_noise_cm,
                   speaker_angle_noise})
    if (!(v >= 0.0)) throw InvalidArgument("noise parameters must be >= 0");
  if (!(side_flip_probability >= 0.0 && side_flip_probability <= 1.0))
    throw InvalidArgument("side_flip_probability must lie in [0, 1]");
  if (per_class < 1) throw InvalidArgument("per_class must be >= 1");
  for (const auto* bands : {&train_length_bands, &test_length_bands}) {
    if (bands->empty()) throw InvalidArgument("length bands must not be empty");
    for (const auto& b : *bands)
      if (!(b[0] > 0.0 && b[1] > b[0])) throw InvalidArgument("length band must satisfy 0 < lo < hi");
  }
  if (!(clutter_size_cm[0] > 0.0 && clutter_size_cm[1] >= clutter_size_cm[0]))
    throw InvalidArgument("clutter size range must satisfy 0 < lo <= hi");
}

ScenarioSpec ScenarioSpec::defaults(ScenarioKind kind) {
  ScenarioSpec s;
  s.kind = kind;
  if (is_ordering(kind)) {
    s.train_n = 16;
    s.test_n = 16;
    s.workspace_half_extent_cm = 50.0;
  } else if (kind == ScenarioKind::Tv) {
    s.train_n = 36;
    s.test_n = 4;  // per clutter level
    s.workspace_half_extent_cm = 100.0;
  }
  return s;
}

namespace {

json gmm_json(const Gmm& g) {
  return {{"means", g.means}, {"stddevs", g.stddevs}, {"weights", g.weights}};
}

Gmm gmm_from(const json& j, const Gmm& fallback) {
  if (!j.is_object()) return fallback;
  Gmm g;
  g.means = j.value("means", fallback.means);
  g.stddevs = j.value("stddevs", fallback.stddevs);
  g.weights = j.value("weights", fallback.weights);
  return g;
}

}  // namespace

json to_json(const ScenarioSpec& s) {
  return {{"scenario", to_string(s.kind)},
          {"workspace_half_extent_cm", s.workspace_half_extent_cm},
          {"train_n", s.train_n},
          {"test_n", s.test_n},
          {"feature_dim", kFeatureDim},
          {"feature_noise", s.feature_noise},
          {"dining",
           {{"table_radius_cm", s.table_radius_cm},
            {"plate_radius_cm", s.plate_radius_cm},
            {"bowl_radius_cm", s.bowl_radius_cm},
            {"cutlery_distance", gmm_json(s.cutlery_distance)},
            {"cutlery_distance_noise_cm", s.cutlery_distance_noise_cm},
            {"cutlery_angle_noise", s.cutlery_angle_noise},
            {"side_flip_probability", s.side_flip_probability}}},
          {"ordering",
           {{"per_class", s.per_class},
            {"gap", gmm_json(s.ordering_gap)},
            {"train_length_bands", s.train_length_bands},
            {"test_length_bands", s.test_length_bands},
            {"min_length_separation_cm", s.min_length_separation_cm},
            {"row_offset_cm", s.row_offset_cm},
            {"row_position_noise_cm", s.row_position_noise_cm},
            {"row_angle_noise", s.row_angle_noise}}},
          {"tv",
           {{"tv_position_noise_cm", s.tv_position_noise_cm},
            {"tv_angle_noise", s.tv_angle_noise},
            {"speaker_distance", gmm_json(s.speaker_distance)},
            {"speaker_x_noise_cm", s.speaker_x_noise_cm},
            {"speaker_y_noise_cm", s.speaker_y_noise_cm},
            {"speaker_angle_noise", s.speaker_angle_noise},
            {"clutter_counts", s.clutter_counts},
            {"clutter_size_cm", s.clutter_size_cm}}}};
}

ScenarioSpec scenario_spec_from_json(const json& j) {
  try {
    ScenarioSpec s = ScenarioSpec::defaults(scenario_from_string(j.at("scenario").get<std::string>()));
    s.workspace_half_extent_cm = j.value("workspace_half_extent_cm", s.workspace_half_extent_cm);
    s.train_n = j.value("train_n", s.train_n);
    s.test_n = j.value("test_n", s.test_n);
    s.feature_noise = j.value("feature_noise", s.feature_noise);
    if (j.value("feature_dim", kFeatureDim) != kFeatureDim)
      throw DimensionError("synthetic scenarios use feature_dim " + std::to_string(kFeatureDim));
    const json d = j.value("dining", json::object());
    s.table_radius_cm = d.value("table_radius_cm", s.table_radius_cm);
    s.plate_radius_cm = d.value("plate_radius_cm", s.plate_radius_cm);
    s.bowl_radius_cm = d.value("bowl_radius_cm", s.bowl_radius_cm);
    s.cutlery_distance = gmm_from(d.value("cutlery_distance", json()), s.cutlery_distance);
    s.cutlery_distance_noise_cm = d.value("cutlery_distance_noise_cm", s.cutlery_distance_noise_cm);
    s.cutlery_angle_noise = d.value("cutlery_angle_noise", s.cutlery_angle_noise);
    s.side_flip_probability = d.value("side_flip_probability", s.side_flip_probability);
    const json o = j.value("ordering", json::object());
    s.per_class = o.value("per_class", s.per_class);
    s.ordering_gap = gmm_from(o.value("gap", json()), s.ordering_gap);
    s.train_length_bands = o.value("train_length_bands", s.train_length_bands);
    s.test_length_bands = o.value("test_length_bands", s.test_length_bands);
    s.min_length_separation_cm = o.value("min_length_separation_cm", s.min_length_separation_cm);
    s.row_offset_cm = o.value("row_offset_cm", s.row_offset_cm);
    s.row_position_noise_cm = o.value("row_position_noise_cm", s.row_position_noise_cm);
    s.row_angle_noise = o.value("row_angle_noise", s.row_angle_noise);
    const json t = j.value("tv", json::object());
    s.tv_position_noise_cm = t.value("tv_position_noise_cm", s.tv_position_noise_cm);
    s.tv_angle_noise = t.value("tv_angle_noise", s.tv_angle_noise);
    s.speaker_distance = gmm_from(t.value("speaker_distance", json()), s.speaker_distance);
    s.speaker_x_noise_cm = t.value("speaker_x_noise_cm", s.speaker_x_noise_cm);
    s.speaker_y_noise_cm = t.value("speaker_y_noise_cm", s.speaker_y_noise_cm);
    s.speaker_angle_noise = t.value("speaker_angle_noise", s.speaker_angle_noise);
    s.clutter_counts = t.value("clutter_counts", s.clutter_counts);
    s.clutter_size_cm = t.value("clutter_size_cm", s.clutter_size_cm);
    s.validate();
    return s;
  } catch (const json::exception& e) {
    throw SchemaError(0, std::string("scenario spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Class table

namespace {

struct ClassInfo {
  const char* name;
  int one_hot;
  std::vector<int> groups;
  Scale scale;
  int symmetry;
};

// Group components: 8 tableware, 9 cutlery, 10 knife-like utensil,
// 11 media, 12 audio, 13 clutter, 14 round.
const std::vector<ClassInfo>& class_table() {
  static const std::vector<ClassInfo> t = {
      {"plate", 0, {8, 14}, {24.0, 24.0}, 0},
      {"bowl", 1, {8, 14}, {14.0, 14.0}, 0},
      {"fork", 2, {9}, {2.5, 19.0}, 1},
      {"knife", 3, {9, 10}, {2.0, 21.0}, 1},
      {"spoon", 4, {9, 10}, {3.5, 17.0}, 1},
      {"tv", 5, {11}, {60.0, 8.0}, 1},
      {"speaker", 6, {11, 12}, {12.0, 12.0}, 1},
      {"box", 7, {13}, {20.0, 20.0}, 1},
  };
  return t;
}

const ClassInfo& class_info(const std::string& name) {
  for (const auto& c : class_table())
    if (name == c.name) return c;
  throw NotFoundError("unknown class '" + name + "'");
}

constexpr double kOneHotAmplitude = 0.5;
constexpr double kGroupAmplitude = 1.0;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string scene_name(ScenarioKind k, Split split, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s-%s-%04zu", to_string(k), to_string(split), i);
  return buf;
}

SceneObject make_object(const std::string& id, const std::string& cls, const Pose& pose,
                        double feature_noise, std::mt19937_64& rng) {
  SceneObject o;
  o.id = id;
  o.class_name = cls;
  o.pose = {pose.x, pose.y, wrap_angle(pose.theta)};
  o.scale = class_scale(cls);
  o.features = class_feature(cls);
  if (feature_noise > 0.0) {
    std::normal_distribution<double> n(0.0, feature_noise);
    for (double& f : o.features) f += n(rng);
  }
  o.symmetry_order = class_symmetry_order(cls);
  return o;
}

double normal(std::mt19937_64& rng, double sd) {
  return sd > 0.0 ? std::normal_distribution<double>(0.0, sd)(rng) : 0.0;
}

// Pose of a point given in the local frame of `frame`.
Pose local_to_world(const Pose& frame, double lx, double ly, double dtheta = 0.0) {
  const double c = std::cos(frame.theta), s = std::sin(frame.theta);
  return {frame.x + c * lx - s * ly, frame.y + s * lx + c * ly, wrap_angle(frame.theta + dtheta)};
}

std::array<double, 2> world_to_local(const Pose& frame, double x, double y) {
  const double c = std::cos(frame.theta), s = std::sin(frame.theta);
  const double dx = x - frame.x, dy = y - frame.y;
  return {c * dx + s * dy, -s * dx + c * dy};
}

}  // namespace

std::vector<double> class_feature(const std::string& class_name) {
  const ClassInfo& c = class_info(class_name);
  std::vector<double> f(kFeatureDim, 0.0);
  f[static_cast<std::size_t>(c.one_hot)] = kOneHotAmplitude;
  for (int g : c.groups) f[static_cast<std::size_t>(g)] = kGroupAmplitude;
  return f;
}

Scale class_scale(const std::string& class_name) { return class_info(class_name).scale; }
int class_symmetry_order(const std::string& class_name) { return class_info(class_name).symmetry; }

// ---------------------------------------------------------------------------
// Ground truth

const SceneTruth& GroundTruth::scene(const std::string& scene_id) const {
  for (const auto& s : scenes)
    if (s.scene_id == scene_id) return s;
  throw NotFoundError("scene '" + scene_id + "' has no ground truth");
}

json to_json(const GroundTruth& g) {
  json scenes = json::array();
  for (const auto& s : g.scenes) {
    json objs = json::object();
    for (const auto& [id, o] : s.objects) objs[id] = {{"role", o.role}, {"group", o.group}};
    scenes.push_back({{"scene_id", s.scene_id},
                      {"objects", objs},
                      {"order", s.order},
                      {"side", s.side},
                      {"clutter_count", s.clutter_count}});
  }
  return {{"seed", g.seed}, {"spec", to_json(g.spec)}, {"scenes", scenes}};
}

GroundTruth ground_truth_from_json(const json& j) {
  try {
    GroundTruth g;
    g.seed = j.at("seed").get<std::uint64_t>();
    g.spec = scenario_spec_from_json(j.at("spec"));
    for (const auto& s : j.at("scenes")) {
      SceneTruth t;
      t.scene_id = s.at("scene_id").get<std::string>();
      for (const auto& [id, o] : s.at("objects").items())
        t.objects[id] = {o.at("role").get<std::string>(), o.at("group").get<int>()};
      t.order = s.value("order", std::vector<std::string>{});
      t.side = s.value("side", 0);
      t.clutter_count = s.value("clutter_count", std::size_t{0});
      g.scenes.push_back(std::move(t));
    }
    return g;
  } catch (const json::exception& e) {
    throw SchemaError(0, std::string("ground truth: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Dining

Generated gen_dining(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  Generated out;
  out.truth.spec = spec;
  out.truth.seed = seed;
  std::uniform_real_distribution<double> uang(-kPi, kPi);
  std::bernoulli_distribution flip(spec.side_flip_probability);
  const std::size_t total = spec.train_n + spec.test_n;
  for (std::size_t i = 0; i < total; ++i) {
    const Split split = i < spec.train_n ? Split::Train : Split::Test;
    const std::size_t local = split == Split::Train ? i : i - spec.train_n;
    std::mt19937_64 rng(mix_seed(seed, i));
    Scene scene{scene_name(spec.kind, split, local), split, kFeatureDim, {}};
    SceneTruth truth{scene.scene_id, {}, {}, 0, 0};
    const double phi = uang(rng);
    const int side = flip(rng) ? -1 : 1;
    truth.side = side;
    for (int k = 0; k < 2; ++k) {
      const double a = phi + k * kPi;
      // Local +y of the plate points at the table centre.
      const Pose plate{spec.table_radius_cm * std::cos(a), spec.table_radius_cm * std::sin(a),
                       wrap_angle(a + kPi / 2)};
      const double d = spec.cutlery_distance.sample(rng);
      const double fork_d = d + normal(rng, spec.cutlery_distance_noise_cm);
      const double knife_d = d + normal(rng, spec.cutlery_distance_noise_cm);
      const Pose bowl = plate;
      const Pose fork = local_to_world(plate, -side * fork_d, 0.0, normal(rng, spec.cutlery_angle_noise));
      const Pose knife = local_to_world(plate, side * knife_d, 0.0, normal(rng, spec.cutlery_angle_noise));
      const std::string sfx = "_" + std::to_string(k);
      const std::pair<const char*, Pose> items[] = {
          {"plate", plate}, {"bowl", bowl}, {"fork", fork}, {"knife", knife}};
      for (const auto& [cls, pose] : items) {
        scene.objects.push_back(make_object(cls + sfx, cls, pose, spec.feature_noise, rng));
        truth.objects[cls + sfx] = {cls, k};
      }
    }
    out.scenes.push_back(std::move(scene));
    out.truth.scenes.push_back(std::move(truth));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Ordering

std::vector<std::string> ordering_permutation(ScenarioKind kind, const Scene& scene) {
  if (!is_ordering(kind)) throw InvalidArgument("not an ordering scenario");
  auto rank = [&](const SceneObject& o) {
    if (kind == ScenarioKind::OrderingAllSize) return 0;
    return o.class_name == "fork" ? 0 : 1;
  };
  std::vector<const SceneObject*> objs;
  for (const auto& o : scene.objects)
    if (o.in_graph()) objs.push_back(&o);
  std::stable_sort(objs.begin(), objs.end(), [&](const SceneObject* a, const SceneObject* b) {
    if (rank(*a) != rank(*b)) return rank(*a) < rank(*b);
    if (a->scale.height != b->scale.height) return a->scale.height < b->scale.height;
    return a->id < b->id;
  });
  std::vector<std::string> ids;
  for (const auto* o : objs) ids.push_back(o->id);
  return ids;
}

namespace {

double sample_band(const std::vector<std::array<double, 2>>& bands, std::mt19937_64& rng) {
  std::vector<double> widths;
  for (const auto& b : bands) widths.push_back(b[1] - b[0]);
  std::discrete_distribution<std::size_t> pick(widths.begin(), widths.end());
  const auto& b = bands[pick(rng)];
  return std::uniform_real_distribution<double>(b[0], b[1])(rng);
}

}  // namespace

Generated gen_ordering(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  if (!is_ordering(spec.kind)) throw InvalidArgument("gen_ordering needs an ordering scenario");
  Generated out;
  out.truth.spec = spec;
  out.truth.seed = seed;
  const std::size_t total = spec.train_n + spec.test_n;
  for (std::size_t i = 0; i < total; ++i) {
    const Split split = i < spec.train_n ? Split::Train : Split::Test;
    const std::size_t local = split == Split::Train ? i : i - spec.train_n;
    std::mt19937_64 rng(mix_seed(seed, i));
    Scene scene{scene_name(spec.kind, split, local), split, kFeatureDim, {}};
    SceneTruth truth{scene.scene_id, {}, {}, 0, 0};

    const bool spoons = spec.kind == ScenarioKind::OrderingUnseen && split == Split::Test;
    const std::vector<std::string> classes{"fork", spoons ? "spoon" : "knife"};
    const auto& bands = split == Split::Train ? spec.train_length_bands : spec.test_length_bands;
    const std::size_t n = classes.size() * spec.per_class;
    std::vector<double> lengths;
    for (int attempt = 0;; ++attempt) {
      if (attempt > 10000) throw InvalidArgument("cannot draw separated lengths from the bands");
      lengths.clear();
      for (std::size_t m = 0; m < n; ++m) lengths.push_back(sample_band(bands, rng));
      bool ok = true;
      for (std::size_t a = 0; a < n && ok; ++a)
        for (std::size_t b = a + 1; b < n && ok; ++b)
          ok = std::abs(lengths[a] - lengths[b]) >= spec.min_length_separation_cm;
      if (ok) break;
    }
    for (std::size_t c = 0; c < classes.size(); ++c)
      for (std::size_t m = 0; m < spec.per_class; ++m) {
        const std::string id = classes[c] + "_" + std::to_string(m);
        SceneObject o = make_object(id, classes[c], {}, spec.feature_noise, rng);
        o.scale.height = lengths[c * spec.per_class + m];
        scene.objects.push_back(std::move(o));
        truth.objects[id] = {classes[c], -1};
      }
    truth.order = ordering_permutation(spec.kind, scene);

    std::vector<double> xs{0.0};
    for (std::size_t m = 1; m < n; ++m) xs.push_back(xs.back() + spec.ordering_gap.sample(rng));
    const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(n);
    std::uniform_real_distribution<double> off(-spec.row_offset_cm, spec.row_offset_cm);
    const double ox = off(rng), oy = off(rng);
    for (std::size_t m = 0; m < n; ++m) {
      auto& o = scene.objects[scene.index_of(truth.order[m])];
      o.pose = {ox + xs[m] - mean, oy + normal(rng, spec.row_position_noise_cm),
                wrap_angle(normal(rng, spec.row_angle_noise))};
    }
    out.scenes.push_back(std::move(scene));
    out.truth.scenes.push_back(std::move(truth));
  }
  return out;
}

// ---------------------------------------------------------------------------
// TV

namespace {

void place_tv(Scene& scene, SceneTruth& truth, const ScenarioSpec& spec, std::mt19937_64& rng) {
  const Pose tv{normal(rng, spec.tv_position_noise_cm), normal(rng, spec.tv_position_noise_cm),
                wrap_angle(normal(rng, spec.tv_angle_noise))};
  const double d = spec.speaker_distance.sample(rng);
  const Pose left = local_to_world(tv, -d + normal(rng, spec.speaker_x_noise_cm),
                                   normal(rng, spec.speaker_y_noise_cm),
                                   normal(rng, spec.speaker_angle_noise));
  const Pose right = local_to_world(tv, d + normal(rng, spec.speaker_x_noise_cm),
                                    normal(rng, spec.speaker_y_noise_cm),
                                    normal(rng, spec.speaker_angle_noise));
  const std::pair<const char*, std::pair<const char*, Pose>> items[] = {
      {"tv", {"tv", tv}}, {"speaker_left", {"speaker", left}}, {"speaker_right", {"speaker", right}}};
  for (const auto& [id, cp] : items) {
    scene.objects.push_back(make_object(id, cp.first, cp.second, spec.feature_noise, rng));
    truth.objects[id] = {cp.first, 0};
  }
}

}  // namespace

Generated gen_tv(const ScenarioSpec& spec, std::uint64_t seed) {
  spec.validate();
  Generated out;
  out.truth.spec = spec;
  out.truth.seed = seed;
  for (std::size_t i = 0; i < spec.train_n; ++i) {
    std::mt19937_64 rng(mix_seed(seed, i));
    Scene scene{scene_name(spec.kind, Split::Train, i), Split::Train, kFeatureDim, {}};
    SceneTruth truth{scene.scene_id, {}, {}, 0, 0};
    place_tv(scene, truth, spec, rng);
    out.scenes.push_back(std::move(scene));
    out.truth.scenes.push_back(std::move(truth));
  }
  const double r = spec.workspace_half_extent_cm;
  std::size_t stream = spec.train_n;
  for (std::size_t level = 0; level < spec.clutter_counts.size(); ++level) {
    const std::size_t count = spec.clutter_counts[level];
    for (std::size_t t = 0; t < spec.test_n; ++t) {
      std::mt19937_64 rng(mix_seed(seed, stream++));
      char buf[64];
      std::snprintf(buf, sizeof buf, "tv-test-c%02zu-%04zu", count, t);
      Scene scene{buf, Split::Test, kFeatureDim, {}};
      SceneTruth truth{scene.scene_id, {}, {}, 0, count};
      place_tv(scene, truth, spec, rng);
      std::uniform_real_distribution<double> usize(spec.clutter_size_cm[0], spec.clutter_size_cm[1]);
      std::uniform_real_distribution<double> uang(-kPi, kPi);
      std::vector<Footprint> placed;
      for (std::size_t b = 0; b < count; ++b) {
        for (int attempt = 0;; ++attempt) {
          if (attempt > 100000) throw InvalidArgument("cannot place non-overlapping clutter");
          const Scale sc{usize(rng), usize(rng)};
          const Pose p0{0.0, 0.0, wrap_angle(uang(rng))};
          const Footprint f0 = footprint(p0, sc);
          std::uniform_real_distribution<double> ux(-r + f0.ex, r - f0.ex), uy(-r + f0.ey, r - f0.ey);
          const Pose p{ux(rng), uy(rng), p0.theta};
          const Footprint f = footprint(p, sc);
          bool ok = true;
          for (const auto& q : placed) ok = ok && hinge_pair(f, q, 0.0).cost == 0.0;
          if (!ok) continue;
          placed.push_back(f);
          SceneObject o = make_object("clutter_" + std::to_string(b), "box", p, spec.feature_noise, rng);
          o.scale = sc;
          o.movable = false;
          o.clutter = true;
          scene.objects.push_back(std::move(o));
          truth.objects["clutter_" + std::to_string(b)] = {"box", -1};
          break;
        }
      }
      out.scenes.push_back(std::move(scene));
      out.truth.scenes.push_back(std::move(truth));
    }
  }
  return out;
}

Generated generate(const ScenarioSpec& spec, std::uint64_t seed) {
  switch (spec.kind) {
    case ScenarioKind::Dining: return gen_dining(spec, seed);
    case ScenarioKind::Tv: return gen_tv(spec, seed);
    default: return gen_ordering(spec, seed);
  }
}

// ---------------------------------------------------------------------------
// Conditional modes

namespace {

struct Component {
  double weight;
  double mean;
};

// Posterior over mixture components of a shared latent d, and the
// conditional mean of d + e given the partner's observation d + e'
// (e, e' ~ N(0, noise^2) independent).
std::vector<Component> distance_modes(const Gmm& g, double noise, const double* partner) {
  std::vector<Component> out;
  double total = 0.0;
  for (std::size_t c = 0; c < g.means.size(); ++c) {
    const double s2 = g.stddevs[c] * g.stddevs[c];
    const double n2 = noise * noise;
    if (partner == nullptr) {
      out.push_back({g.weights[c], g.means[c]});
    } else {
      const double v = s2 + n2;
      const double r = *partner - g.means[c];
      out.push_back({g.weights[c] * std::exp(-0.5 * r * r / v) / std::sqrt(v),
                     g.means[c] + s2 / v * r});
    }
    total += out.back().weight;
  }
  std::vector<Component> kept;
  for (auto& c : out) {
    c.weight = total > 0.0 ? c.weight / total : 0.0;
    if (c.weight >= kModeWeightThreshold) kept.push_back(c);
  }
  return kept;
}

const SceneObject* find_role(const Scene& scene, const SceneTruth& truth, const std::string& role,
                             int group, const std::string& exclude) {
  for (const auto& [id, o] : truth.objects)
    if (id != exclude && o.role == role && o.group == group)
      if (const SceneObject* found = scene.find(id)) return found;
  return nullptr;
}

std::vector<Pose> dining_modes(const ScenarioSpec& spec, const SceneTruth& truth, const Scene& scene,
                               const std::string& held) {
  const ObjectTruth& me = truth.objects.at(held);
  const int k = me.group;
  if (me.role == "plate") {
    if (const auto* bowl = find_role(scene, truth, "bowl", k, held)) return {bowl->pose};
    if (const auto* other = find_role(scene, truth, "plate", 1 - k, held))
      return {{-other->pose.x, -other->pose.y, wrap_angle(other->pose.theta + kPi)}};
    throw NotFoundError("no anchor for plate '" + held + "'");
  }
  const SceneObject* plate = find_role(scene, truth, "plate", k, held);
  if (plate == nullptr) throw NotFoundError("plate of '" + held + "' is not placed");
  if (me.role == "bowl") return {plate->pose};

  // Side: any placed cutlery fixes it for the whole scene.
  std::vector<int> sides;
  for (const auto& [id, o] : truth.objects) {
    if (id == held || (o.role != "fork" && o.role != "knife")) continue;
    const SceneObject* self = scene.find(id);
    const SceneObject* p = find_role(scene, truth, "plate", o.group, held);
    if (self == nullptr || p == nullptr) continue;
    const double lx = world_to_local(p->pose, self->pose.x, self->pose.y)[0];
    const bool fork_left = o.role == "fork" ? lx < 0.0 : lx > 0.0;
    sides.push_back(fork_left ? 1 : -1);
    break;
  }
  if (sides.empty()) sides = {1, -1};

  const std::string partner_role = me.role == "fork" ? "knife" : "fork";
  const SceneObject* partner = find_role(scene, truth, partner_role, k, held);
  double partner_d = 0.0;
  if (partner != nullptr)
    partner_d = std::abs(world_to_local(plate->pose, partner->pose.x, partner->pose.y)[0]);
  const auto comps =
      distance_modes(spec.cutlery_distance, spec.cutlery_distance_noise_cm, partner ? &partner_d : nullptr);

  std::vector<Pose> modes;
  for (int s : sides)
    for (const auto& c : comps) {
      const double lx = (me.role == "fork" ? -s : s) * c.mean;
      modes.push_back(local_to_world(plate->pose, lx, 0.0));
    }
  return modes;
}

std::vector<Pose> tv_modes(const ScenarioSpec& spec, const SceneTruth& truth, const Scene& scene,
                           const std::string& held) {
  const ObjectTruth& me = truth.objects.at(held);
  if (me.role == "tv") {
    const auto& l = scene.object("speaker_left").pose;
    const auto& r = scene.object("speaker_right").pose;
    const double th = std::atan2(std::sin(l.theta) + std::sin(r.theta), std::cos(l.theta) + std::cos(r.theta));
    return {{0.5 * (l.x + r.x), 0.5 * (l.y + r.y), wrap_angle(th)}};
  }
  if (me.role != "speaker") throw InvalidArgument("'" + held + "' has no conditional model");
  const auto& tv = scene.object("tv").pose;
  const std::string other = held == "speaker_left" ? "speaker_right" : "speaker_left";
  const auto& op = scene.object(other).pose;
  const double other_d = std::abs(world_to_local(tv, op.x, op.y)[0]);
  const auto comps = distance_modes(spec.speaker_distance, spec.speaker_x_noise_cm, &other_d);
  const double sign = held == "speaker_left" ? -1.0 : 1.0;
  std::vector<Pose> modes;
  for (const auto& c : comps) modes.push_back(local_to_world(tv, sign * c.mean, 0.0));
  return modes;
}

}  // namespace

std::vector<Pose> conditional_modes(const GroundTruth& gt, const Scene& scene, const std::string& held_out_id) {
  const SceneTruth& truth = gt.scene(scene.scene_id);
  if (truth.objects.find(held_out_id) == truth.objects.end())
    throw NotFoundError("object '" + held_out_id + "' is not in the ground truth of " + scene.scene_id);
  switch (gt.spec.kind) {
    case ScenarioKind::Dining: return dining_modes(gt.spec, truth, scene, held_out_id);
    case ScenarioKind::Tv: return tv_modes(gt.spec, truth, scene, held_out_id);
    default: throw InvalidArgument("conditional modes are defined for dining and tv scenes");
  }
}

}  // namespace scenescore
