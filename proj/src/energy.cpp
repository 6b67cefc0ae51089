#include "scenescore/energy.hpp"

#include <cmath>
#include <fstream>
#include <random>

namespace scenescore {

using diff::NodeRef;
using diff::Tape;
using diff::Tensor;
using nlohmann::json;

const char* to_string(Variant v) { return v == Variant::Relative ? "relative" : "absolute"; }

Variant variant_from_string(const std::string& s) {
  if (s == "relative") return Variant::Relative;
  if (s == "absolute") return Variant::Absolute;
  throw InvalidArgument("variant must be 'relative' or 'absolute', got '" + s + "'");
}

void EnergyConfig::validate() const {
  if (num_gnn_layers < 1) throw InvalidArgument("num_gnn_layers must be >= 1");
  if (hidden == 0 || semantic_dim == 0) throw InvalidArgument("hidden and semantic_dim must be > 0");
  if (!(scale_unit_cm > 0.0)) throw InvalidArgument("scale_unit_cm must be > 0");
}

json to_json(const EnergyConfig& c) {
  return {{"num_gnn_layers", c.num_gnn_layers},
          {"hidden", c.hidden},
          {"semantic_dim", c.semantic_dim},
          {"leaky_slope", c.leaky_slope},
          {"scale_unit_cm", c.scale_unit_cm}};
}

EnergyConfig energy_config_from_json(const json& j) {
  EnergyConfig c;
  c.num_gnn_layers = j.value("num_gnn_layers", c.num_gnn_layers);
  c.hidden = j.value("hidden", c.hidden);
  c.semantic_dim = j.value("semantic_dim", c.semantic_dim);
  c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
  c.scale_unit_cm = j.value("scale_unit_cm", c.scale_unit_cm);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Parameters

namespace {

struct ParamSpec {
  std::string name;
  diff::Shape shape;
  std::size_t fan_in;
};

std::vector<ParamSpec> param_specs(const EnergyConfig& c, std::size_t feature_dim,
                                   std::size_t node_input) {
  const std::size_t H = c.hidden;
  const std::size_t S = c.semantic_dim;
  std::vector<ParamSpec> specs = {
      {"extractor.0.weight", {feature_dim, H}, feature_dim},
      {"extractor.0.bias", {H}, feature_dim},
      {"extractor.1.weight", {H, S}, H},
      {"extractor.1.bias", {S}, H},
  };
  for (int l = 0; l < c.num_gnn_layers; ++l) {
    const std::size_t in = l == 0 ? node_input : H;
    const std::size_t fan = 2 * in + 4;
    const std::string p = "gnn." + std::to_string(l) + ".";
    specs.push_back({p + "self", {in, H}, fan});
    specs.push_back({p + "neighbor", {in, H}, fan});
    specs.push_back({p + "edge", {4, H}, fan});
    specs.push_back({p + "bias", {H}, fan});
  }
  specs.push_back({"head.0.weight", {H, H}, H});
  specs.push_back({"head.0.bias", {H}, H});
  specs.push_back({"head.1.weight", {H, 1}, H});
  specs.push_back({"head.1.bias", {1}, H});
  return specs;
}

}  // namespace

EnergyModel::EnergyModel(EnergyConfig config, Variant variant, std::size_t feature_dim,
                         double workspace_half_extent_cm, std::uint64_t seed)
    : config_(config), variant_(variant), feature_dim_(feature_dim),
      half_extent_(workspace_half_extent_cm) {
  config_.validate();
  if (feature_dim_ == 0) throw InvalidArgument("feature_dim must be > 0");
  if (!(half_extent_ > 0.0)) throw InvalidArgument("workspace half extent must be > 0");
  allocate();
  std::mt19937_64 rng(seed);
  const auto specs = param_specs(config_, feature_dim_, node_input_dim());
  for (std::size_t k = 0; k < specs.size(); ++k) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(specs[k].fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (double& v : params_[k].value.data()) v = u(rng);
  }
}

std::size_t EnergyModel::node_input_dim() const {
  return config_.semantic_dim + 2 + (variant_ == Variant::Absolute ? 4 : 0);
}

void EnergyModel::allocate() {
  params_.clear();
  for (auto& s : param_specs(config_, feature_dim_, node_input_dim()))
    params_.push_back({s.name, Tensor::zeros(s.shape)});
}

const Tensor& EnergyModel::param(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p.value;
  throw NotFoundError("no parameter '" + name + "'");
}

Tensor& EnergyModel::param(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).param(name));
}

std::size_t EnergyModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void EnergyModel::set_zero() {
  for (auto& p : params_)
    for (double& v : p.value.data()) v = 0.0;
}

json EnergyModel::to_json() const {
  json params = json::object();
  for (const auto& p : params_)
    params[p.name] = {{"shape", p.value.shape()},
                      {"data", std::vector<double>(p.value.data().begin(), p.value.data().end())}};
  return {{"version", 1},
          {"config", scenescore::to_json(config_)},
          {"workspace_half_extent_cm", half_extent_},
          {"variant", to_string(variant_)},
          {"feature_dim", feature_dim_},
          {"params", std::move(params)}};
}

EnergyModel EnergyModel::from_json(const json& j) {
  try {
    if (j.value("version", 0) != 1) throw SchemaError(0, "unsupported checkpoint version");
    EnergyModel m;
    m.config_ = energy_config_from_json(j.at("config"));
    m.variant_ = variant_from_string(j.at("variant").get<std::string>());
    m.feature_dim_ = j.at("feature_dim").get<std::size_t>();
    m.half_extent_ = j.at("workspace_half_extent_cm").get<double>();
    if (!(m.half_extent_ > 0.0)) throw SchemaError(0, "workspace_half_extent_cm must be > 0");
    m.allocate();
    const json& params = j.at("params");
    if (params.size() != m.params_.size())
      throw SchemaError(0, "checkpoint has " + std::to_string(params.size()) +
                               " parameters, config implies " + std::to_string(m.params_.size()));
    for (auto& p : m.params_) {
      if (!params.contains(p.name)) throw SchemaError(0, "missing parameter '" + p.name + "'");
      const auto shape = params[p.name].at("shape").get<diff::Shape>();
      if (shape != p.value.shape())
        throw DimensionError("parameter '" + p.name + "' has shape " + diff::to_string(shape) +
                             ", expected " + diff::to_string(p.value.shape()));
      auto data = params[p.name].at("data").get<std::vector<double>>();
      p.value = Tensor(shape, std::move(data));
    }
    return m;
  } catch (const json::exception& e) {
    throw SchemaError(0, std::string("checkpoint: ") + e.what());
  }
}

void EnergyModel::save(const std::filesystem::path& path, const json& extra) const {
  json j = to_json();
  if (extra.is_object())
    for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write '" + path.string() + "'");
  out << j.dump() << '\n';
}

EnergyModel EnergyModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot read '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw SchemaError(0, "checkpoint '" + path.string() + "': " + e.what());
  }
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Tape construction

namespace {

struct ParamNodes {
  std::vector<NodeRef> leaves;
  const EnergyModel* model;
  NodeRef operator()(const std::string& name) const {
    const auto& ps = model->parameters();
    for (std::size_t k = 0; k < ps.size(); ++k)
      if (ps[k].name == name) return leaves[k];
    throw NotFoundError("no parameter '" + name + "'");
  }
};

ParamNodes add_param_leaves(Tape& tape, const EnergyModel& model) {
  ParamNodes p{{}, &model};
  for (const auto& param : model.parameters()) p.leaves.push_back(tape.leaf(param.name));
  return p;
}

// extractor(features) -> [n, S_em]
NodeRef extractor(Tape& tape, const ParamNodes& p, NodeRef features, double slope) {
  NodeRef h = tape.bias_add(tape.matmul(features, p("extractor.0.weight")), p("extractor.0.bias"));
  h = tape.leaky_relu(h, slope);
  return tape.bias_add(tape.matmul(h, p("extractor.1.weight")), p("extractor.1.bias"));
}

Tensor column_selector(std::size_t column, double factor) {
  Tensor t = Tensor::zeros({3, 1});
  t[column] = factor;
  return t;
}

}  // namespace

std::vector<double> embed_semantics(const EnergyModel& model, std::span<const double> raw_features,
                                    Scale scale) {
  if (raw_features.size() != model.feature_dim())
    throw DimensionError("expected " + std::to_string(model.feature_dim()) +
                         " raw features, got " + std::to_string(raw_features.size()));
  Tape tape;
  const ParamNodes p = add_param_leaves(tape, model);
  const NodeRef f = tape.leaf("features");
  const NodeRef sc = tape.leaf("scale");
  tape.concat({extractor(tape, p, f, model.config().leaky_slope), sc});

  diff::Bindings b(tape);
  for (std::size_t k = 0; k < p.leaves.size(); ++k) b.bind(p.leaves[k], model.parameters()[k].value);
  const Tensor ft = Tensor::matrix(1, raw_features.size(),
                                   std::vector<double>(raw_features.begin(), raw_features.end()));
  const double unit = model.config().scale_unit_cm;
  const Tensor st = Tensor::matrix(1, 2, {scale.width / unit, scale.height / unit});
  b.bind(f, ft).bind(sc, st);
  const Tensor out = diff::evaluate(tape, b);
  return {out.data().begin(), out.data().end()};
}

EnergyFunction::EnergyFunction(const EnergyModel& model, const SceneGraph& graph)
    : model_(&model), n_(graph.size()) {
  if (graph.feature_dim() != model.feature_dim())
    throw DimensionError("graph has " + std::to_string(graph.feature_dim()) +
                         "-dim features, model expects " + std::to_string(model.feature_dim()));
  const auto& cfg = model.config();
  const double slope = cfg.leaky_slope;
  const std::size_t n = n_;
  const std::size_t D = model.feature_dim();

  std::vector<double> fdata, sdata;
  for (const auto& o : graph.nodes()) {
    fdata.insert(fdata.end(), o.features.begin(), o.features.end());
    sdata.push_back(o.scale.width / cfg.scale_unit_cm);
    sdata.push_back(o.scale.height / cfg.scale_unit_cm);
  }
  features_ = Tensor::matrix(n, D, std::move(fdata));
  scales_ = Tensor::matrix(n, 2, std::move(sdata));

  Tape& t = tape_;
  const ParamNodes p = add_param_leaves(t, model);
  param_leaves_ = p.leaves;
  features_leaf_ = t.leaf("features");
  scale_leaf_ = t.leaf("scale");
  pose_leaf_ = t.leaf("poses");

  // Positions enter the network divided by the workspace half extent.
  const double inv_extent = 1.0 / model.workspace_half_extent();
  const NodeRef xn = t.matmul(pose_leaf_, t.constant(column_selector(0, inv_extent)));
  const NodeRef yn = t.matmul(pose_leaf_, t.constant(column_selector(1, inv_extent)));
  const NodeRef th = t.matmul(pose_leaf_, t.constant(column_selector(2, 1.0)));
  const NodeRef c = t.cos(th);
  const NodeRef s = t.sin(th);

  const NodeRef embedding = extractor(t, p, features_leaf_, slope);
  NodeRef v = model.variant() == Variant::Relative
                  ? t.concat({embedding, scale_leaf_})
                  : t.concat({embedding, scale_leaf_, xn, yn, c, s});

  const auto& edges = graph.edges();
  const std::size_t E = edges.size();

  // Incoming-neighbour sets: row i lists every j != i.
  std::vector<std::vector<std::size_t>> neighbours(n);
  for (const auto& [j, i] : edges) neighbours[i].push_back(j);

  NodeRef edge_sum;  // [n, 4], sum over incoming edges of e_ji
  if (model.variant() == Variant::Relative && E > 0) {
    Tensor src = Tensor::zeros({E, n}), dst = Tensor::zeros({E, n}), dif = Tensor::zeros({E, n});
    std::vector<std::vector<std::size_t>> incoming(n);
    for (std::size_t e = 0; e < E; ++e) {
      const auto [j, i] = edges[e];
      src.at(e, j) = 1.0;
      dst.at(e, i) = 1.0;
      dif.at(e, i) = 1.0;
      dif.at(e, j) = -1.0;
      incoming[i].push_back(e);
    }
    const NodeRef Src = t.constant(std::move(src));
    const NodeRef Dst = t.constant(std::move(dst));
    const NodeRef Dif = t.constant(std::move(dif));
    const NodeRef dx = t.matmul(Dif, xn);
    const NodeRef dy = t.matmul(Dif, yn);
    const NodeRef cj = t.matmul(Src, c);
    const NodeRef sj = t.matmul(Src, s);
    const NodeRef ci = t.matmul(Dst, c);
    const NodeRef si = t.matmul(Dst, s);
    // Displacement j -> i rotated into j's frame, and the relative heading.
    const NodeRef lx = t.add(t.mul(cj, dx), t.mul(sj, dy));
    const NodeRef ly = t.sub(t.mul(cj, dy), t.mul(sj, dx));
    const NodeRef cd = t.add(t.mul(ci, cj), t.mul(si, sj));
    const NodeRef sd = t.sub(t.mul(si, cj), t.mul(ci, sj));
    edge_sum = t.sum_sets(t.concat({lx, ly, cd, sd}), std::move(incoming));
  } else {
    edge_sum = t.constant(Tensor::zeros({n, 4}));
  }

  // Messages are linear in [v_i ; v_j ; e_ji], so their sum over j factorises
  // into a self term, a neighbour sum and the summed edge features.
  const double degree = static_cast<double>(n - 1);
  for (int l = 0; l < cfg.num_gnn_layers; ++l) {
    const std::string pre = "gnn." + std::to_string(l) + ".";
    const NodeRef self = t.scale(t.bias_add(t.matmul(v, p(pre + "self")), p(pre + "bias")), degree);
    const NodeRef nbr = t.sum_sets(t.matmul(v, p(pre + "neighbor")), neighbours);
    const NodeRef edge = t.matmul(edge_sum, p(pre + "edge"));
    v = t.leaky_relu(t.add(t.add(self, nbr), edge), slope);
  }

  const NodeRef pooled = t.sum_rows(v);
  NodeRef h = t.leaky_relu(t.bias_add(t.matmul(pooled, p("head.0.weight")), p("head.0.bias")), slope);
  t.bias_add(t.matmul(h, p("head.1.weight")), p("head.1.bias"));
}

Tensor EnergyFunction::pose_tensor(std::span<const Pose> poses) const {
  if (poses.size() != n_)
    throw DimensionError("expected " + std::to_string(n_) + " poses, got " +
                         std::to_string(poses.size()));
  Tensor t = Tensor::zeros({n_, 3});
  for (std::size_t i = 0; i < n_; ++i) {
    t.at(i, 0) = poses[i].x;
    t.at(i, 1) = poses[i].y;
    t.at(i, 2) = poses[i].theta;
  }
  return t;
}

diff::Bindings EnergyFunction::bindings(const Tensor& poses) const {
  diff::Bindings b(tape_);
  const auto& ps = model_->parameters();
  for (std::size_t k = 0; k < param_leaves_.size(); ++k) b.bind(param_leaves_[k], ps[k].value);
  b.bind(features_leaf_, features_).bind(scale_leaf_, scales_).bind(pose_leaf_, poses);
  return b;
}

double EnergyFunction::value(std::span<const Pose> poses) const {
  const Tensor pt = pose_tensor(poses);
  return diff::evaluate(tape_, bindings(pt))[0];
}

double EnergyFunction::value_and_pose_gradient(std::span<const Pose> poses,
                                               std::span<PoseGradient> grad) const {
  if (grad.size() != n_) throw DimensionError("pose gradient buffer has wrong size");
  const Tensor pt = pose_tensor(poses);
  const auto eval = diff::forward(tape_, bindings(pt));
  const NodeRef target[] = {pose_leaf_};
  const auto g = diff::backward(tape_, eval, target);
  for (std::size_t i = 0; i < n_; ++i) grad[i] = {g[0].at(i, 0), g[0].at(i, 1), g[0].at(i, 2)};
  return eval.root()[0];
}

double EnergyFunction::accumulate_param_gradient(std::span<const Pose> poses,
                                                 std::vector<Tensor>& grads, double weight) const {
  if (grads.size() != param_leaves_.size()) throw DimensionError("gradient buffer has wrong size");
  const Tensor pt = pose_tensor(poses);
  const auto eval = diff::forward(tape_, bindings(pt));
  const auto g = diff::backward(tape_, eval, param_leaves_, weight);
  for (std::size_t k = 0; k < g.size(); ++k)
    for (std::size_t i = 0; i < g[k].size(); ++i) grads[k][i] += g[k][i];
  return eval.root()[0];
}

double energy(const EnergyModel& model, const SceneGraph& graph) {
  const auto poses = graph.poses();
  return EnergyFunction(model, graph).value(poses);
}

std::vector<PoseGradient> energy_pose_gradient(const EnergyModel& model, const SceneGraph& graph) {
  const auto poses = graph.poses();
  std::vector<PoseGradient> grad(graph.size());
  EnergyFunction(model, graph).value_and_pose_gradient(poses, grad);
  for (std::size_t i = 0; i < graph.size(); ++i)
    if (!graph.nodes()[i].movable) grad[i] = {0.0, 0.0, 0.0};
  return grad;
}

std::vector<Tensor> zero_gradients(const EnergyModel& model) {
  std::vector<Tensor> out;
  for (const auto& p : model.parameters()) out.push_back(Tensor::zeros(p.value.shape()));
  return out;
}

}  // namespace scenescore
