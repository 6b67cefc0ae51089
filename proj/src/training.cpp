#include "scenescore/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <random>

namespace scenescore {

using diff::Tensor;
using nlohmann::json;

void TrainConfig::validate() const {
  if (negatives < 1) throw InvalidArgument("negatives_per_example must be >= 1");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw InvalidArgument("learning_rate must be >= 0");
  if (!(lr_final_scale > 0.0)) throw InvalidArgument("lr_final_scale must be > 0");
  if (chain_steps < 1) throw InvalidArgument("negative chain needs at least one step");
  if (!(energy_l2 >= 0.0)) throw InvalidArgument("energy_l2 must be >= 0");
  if (!(chain_step_start > 0.0) || !(chain_step_end > 0.0))
    throw InvalidArgument("negative chain step sizes must be > 0");
  if (!(chain_temp_start >= 0.0) || !(chain_temp_end >= 0.0))
    throw InvalidArgument("negative chain temperatures must be >= 0");
  if (!(partial_fraction >= 0.0 && partial_fraction <= 1.0))
    throw InvalidArgument("partial_fraction must lie in [0, 1]");
  if (!(replay_fraction >= 0.0 && replay_fraction <= 1.0))
    throw InvalidArgument("replay_fraction must lie in [0, 1]");
  if (replay_fraction > 0.0 && replay_capacity < 1) throw InvalidArgument("replay_capacity must be >= 1");
}

LangevinConfig TrainConfig::negative_chain(std::uint64_t iteration) const {
  return LangevinConfig::annealed(chain_steps, chain_seed(seed, iteration), chain_step_start, chain_step_end,
                                  chain_temp_start, chain_temp_end);
}

json to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations},   {"negatives", c.negatives},
          {"batch_size", c.batch_size},   {"learning_rate", c.learning_rate},
          {"lr_final_scale", c.lr_final_scale},
          {"beta1", c.beta1},             {"beta2", c.beta2},
          {"adam_eps", c.adam_eps},       {"energy_l2", c.energy_l2},
          {"seed", c.seed},               {"chain_steps", c.chain_steps},
          {"chain_step_start", c.chain_step_start}, {"chain_step_end", c.chain_step_end},
          {"chain_temp_start", c.chain_temp_start}, {"chain_temp_end", c.chain_temp_end},
          {"partial_fraction", c.partial_fraction}, {"partial_max_free", c.partial_max_free},
          {"replay_fraction", c.replay_fraction},   {"replay_capacity", c.replay_capacity}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.negatives = j.value("negatives", c.negatives);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.lr_final_scale = j.value("lr_final_scale", c.lr_final_scale);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.energy_l2 = j.value("energy_l2", c.energy_l2);
  c.seed = j.value("seed", c.seed);
  c.chain_steps = j.value("chain_steps", c.chain_steps);
  c.chain_step_start = j.value("chain_step_start", c.chain_step_start);
  c.chain_step_end = j.value("chain_step_end", c.chain_step_end);
  c.chain_temp_start = j.value("chain_temp_start", c.chain_temp_start);
  c.chain_temp_end = j.value("chain_temp_end", c.chain_temp_end);
  c.partial_fraction = j.value("partial_fraction", c.partial_fraction);
  c.partial_max_free = j.value("partial_max_free", c.partial_max_free);
  c.replay_fraction = j.value("replay_fraction", c.replay_fraction);
  c.replay_capacity = j.value("replay_capacity", c.replay_capacity);
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Loss

double infonce_loss(double e_pos, std::span<const double> e_negs) {
  if (e_negs.empty()) throw InvalidArgument("infonce_loss needs at least one negative");
  double m = -e_pos;
  for (double e : e_negs) m = std::max(m, -e);
  double s = std::exp(-e_pos - m);
  for (double e : e_negs) s += std::exp(-e - m);
  return e_pos + m + std::log(s);
}

LossGradient infonce_loss_gradient(double e_pos, std::span<const double> e_negs) {
  if (e_negs.empty()) throw InvalidArgument("infonce_loss needs at least one negative");
  const std::size_t k = e_negs.size() + 1;
  diff::Tape tape;
  const auto energies = tape.leaf("energies");
  Tensor pick = Tensor::zeros({k, 1});
  pick[0] = 1.0;
  const auto positive = tape.matmul(energies, tape.constant(std::move(pick)));
  tape.add(tape.log_sum_exp(tape.neg(energies)), positive);

  std::vector<double> e{e_pos};
  e.insert(e.end(), e_negs.begin(), e_negs.end());
  const Tensor et = Tensor::vector(std::move(e));
  diff::Bindings b(tape);
  b.bind(energies, et);
  const auto eval = diff::forward(tape, b);
  const diff::NodeRef targets[] = {energies};
  const auto g = diff::backward(tape, eval, targets);
  LossGradient out;
  out.loss = eval.root()[0];
  out.d_pos = g[0][0];
  out.d_negs.assign(g[0].data().begin() + 1, g[0].data().end());
  return out;
}

namespace {

struct ExampleTerms {
  double loss;
  double d_pos;
  std::vector<double> d_negs;
};

ExampleTerms example_terms(double e_pos, std::span<const double> e_negs, double energy_l2) {
  const LossGradient lg = infonce_loss_gradient(e_pos, e_negs);
  const double k = static_cast<double>(e_negs.size());
  double mean_sq = 0.0;
  for (double e : e_negs) mean_sq += e * e / k;
  ExampleTerms t{lg.loss + energy_l2 * (e_pos * e_pos + mean_sq), lg.d_pos + 2.0 * energy_l2 * e_pos,
                 lg.d_negs};
  for (std::size_t j = 0; j < e_negs.size(); ++j) t.d_negs[j] += 2.0 * energy_l2 * e_negs[j] / k;
  return t;
}

}  // namespace

double example_loss(const EnergyFunction& f, std::span<const Pose> positive,
                    std::span<const std::vector<Pose>> negatives, double energy_l2) {
  const double e_pos = f.value(positive);
  std::vector<double> e_negs;
  for (const auto& n : negatives) e_negs.push_back(f.value(n));
  return example_terms(e_pos, e_negs, energy_l2).loss;
}

double accumulate_example_gradient(const EnergyFunction& f, std::span<const Pose> positive,
                                   std::span<const std::vector<Pose>> negatives, double energy_l2,
                                   std::vector<Tensor>& grads) {
  const double e_pos = f.value(positive);
  std::vector<double> e_negs;
  for (const auto& n : negatives) e_negs.push_back(f.value(n));
  const ExampleTerms t = example_terms(e_pos, e_negs, energy_l2);
  if (!std::isfinite(t.loss)) return t.loss;
  f.accumulate_param_gradient(positive, grads, t.d_pos);
  for (std::size_t j = 0; j < negatives.size(); ++j)
    f.accumulate_param_gradient(negatives[j], grads, t.d_negs[j]);
  return t.loss;
}

// ---------------------------------------------------------------------------
// Training loop

json Checkpoint::metadata() const {
  return {{"iterations", iterations}, {"loss_history", loss_history}};
}

namespace {

class Adam {
 public:
  Adam(const EnergyModel& model, const TrainConfig& c)
      : cfg_(c), m_(zero_gradients(model)), v_(zero_gradients(model)) {}

  void step(EnergyModel& model, const std::vector<Tensor>& grads) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    const double frac = cfg_.iterations > 1 ? static_cast<double>(t_ - 1) / static_cast<double>(cfg_.iterations - 1) : 0.0;
    const double lr = cfg_.learning_rate * std::pow(cfg_.lr_final_scale, frac);
    auto& params = model.parameters();
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto p = params[k].value.data();
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = grads[k][i];
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g;
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = m_[k][i] / bc1;
        const double vhat = v_[k][i] / bc2;
        p[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.adam_eps);
      }
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<Tensor> m_, v_;
  std::size_t t_ = 0;
};

constexpr std::uint64_t kMaskSalt = 0x6d61736bULL;
constexpr std::uint64_t kReplaySalt = 0x7265706cULL;

// Bounded store of earlier negatives for one scene; the oldest is overwritten.
struct ReplayBuffer {
  std::vector<std::vector<Pose>> items;
  std::size_t next = 0;

  void push(std::vector<Pose> p, std::size_t capacity) {
    if (items.size() < capacity) {
      items.push_back(std::move(p));
    } else {
      items[next] = std::move(p);
      next = (next + 1) % capacity;
    }
  }
};

// Empty (all free) unless this chain is drawn as partial; a partial mask
// frees between 1 and min(max_free, movable - 1) movable objects, count and
// choice uniform.
FixedMask negative_mask(const SceneGraph& g, double partial_fraction, std::size_t max_free, std::uint64_t seed) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (g.nodes()[i].movable) idx.push_back(i);
  const std::size_t n = idx.size();
  if (partial_fraction <= 0.0 || n < 2) return {};
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  if (u(rng) >= partial_fraction) return {};
  const std::size_t hi = max_free == 0 ? n - 1 : std::min(max_free, n - 1);
  const std::size_t k = std::uniform_int_distribution<std::size_t>(1, hi)(rng);
  std::shuffle(idx.begin(), idx.end(), rng);
  FixedMask m(g.size(), true);
  for (std::size_t i = 0; i < k; ++i) m[idx[i]] = false;
  return m;
}

}  // namespace

Checkpoint train(EnergyModel model, std::span<const Scene> dataset, const TrainConfig& config,
                 const ProgressFn& progress) {
  config.validate();
  const auto scenes = filter_split(dataset, Split::Train);
  if (scenes.empty()) throw InvalidArgument("empty training split");

  std::vector<SceneGraph> graphs;
  for (const auto& s : scenes) graphs.push_back(build_graph(s));
  // Built once: each tape binds the model's parameter storage, which the
  // optimiser updates in place.
  std::vector<EnergyFunction> funcs;
  funcs.reserve(graphs.size());
  for (const auto& g : graphs) funcs.emplace_back(model, g);
  std::vector<CostFn> pose_fns;
  for (const auto& f : funcs)
    pose_fns.push_back([&f](std::span<const Pose> p, std::span<PoseGradient> g) {
      return f.value_and_pose_gradient(p, g);
    });
  const double half_extent = model.workspace_half_extent();
  std::vector<ReplayBuffer> buffers(graphs.size());

  Checkpoint ckpt{model, 0, {}};
  Adam adam(model, config);
  std::mt19937_64 order_rng(chain_seed(config.seed, 0x5eed));
  std::vector<std::size_t> order(scenes.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::size_t cursor = order.size();

  for (std::size_t it = 0; it < config.iterations; ++it) {
    const LangevinConfig chain_cfg = config.negative_chain(it);
    auto grads = zero_gradients(model);
    double batch_loss = 0.0;
    std::size_t batch_n = std::min(config.batch_size, scenes.size());
    try {
      for (std::size_t b = 0; b < batch_n; ++b) {
        if (cursor == order.size()) {
          std::shuffle(order.begin(), order.end(), order_rng);
          cursor = 0;
        }
        const std::size_t s = order[cursor++];
        const auto positive = graphs[s].poses();
        std::vector<std::vector<Pose>> negatives;
        for (std::size_t k = 0; k < config.negatives; ++k) {
          const std::uint64_t chain = b * config.negatives + k;
          const FixedMask mask = negative_mask(graphs[s], config.partial_fraction, config.partial_max_free,
                                               chain_seed(chain_cfg.seed ^ kMaskSalt, chain));
          std::mt19937_64 replay_rng(chain_seed(chain_cfg.seed ^ kReplaySalt, chain));
          const bool replay = !buffers[s].items.empty() &&
                              std::uniform_real_distribution<double>(0.0, 1.0)(replay_rng) < config.replay_fraction;
          std::vector<Pose> start = positive;
          FixedMask frozen(graphs[s].size());
          for (std::size_t i = 0; i < frozen.size(); ++i)
            frozen[i] = (!mask.empty() && mask[i]) || !graphs[s].nodes()[i].movable;
          LangevinConfig cfg = chain_cfg;
          if (replay) {
            const auto& prev = buffers[s].items[replay_rng() % buffers[s].items.size()];
            for (std::size_t i = 0; i < start.size(); ++i)
              if (!frozen[i]) start[i] = prev[i];
            cfg.random_init = false;
          }
          auto poses = langevin_chain(pose_fns[s], start, frozen, cfg, {}, half_extent, chain).poses;
          if (config.replay_fraction > 0.0) buffers[s].push(poses, config.replay_capacity);
          negatives.push_back(std::move(poses));
        }
        batch_loss += accumulate_example_gradient(funcs[s], positive, negatives, config.energy_l2, grads);
      }
    } catch (const NumericError& e) {
      ckpt.model = model;
      throw TrainingDiverged(std::string("iteration ") + std::to_string(it) + ": " + e.what(),
                             std::move(ckpt));
    }
    const double mean_loss = batch_loss / static_cast<double>(batch_n);
    if (!std::isfinite(mean_loss)) {
      ckpt.model = model;
      throw TrainingDiverged("non-finite loss at iteration " + std::to_string(it), std::move(ckpt));
    }
    adam.step(model, grads);
    ckpt.loss_history.push_back(mean_loss);
    ckpt.iterations = it + 1;
    if (progress) progress(it, mean_loss);
  }
  ckpt.model = model;
  return ckpt;
}

void write_loss_trace(const std::filesystem::path& path, std::span<const double> losses,
                      const std::string& header_comment) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FileError("cannot write '" + path.string() + "'");
  if (!header_comment.empty()) out << "# " << header_comment << '\n';
  out << "iteration,loss\n";
  out << std::setprecision(17);
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << '\n';
}

}  // namespace scenescore
