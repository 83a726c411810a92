#include "boxhunt/learner.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace boxhunt {

using nlohmann::json;

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay capacity must be positive");
  items_.reserve(capacity);
}

void ReplayBuffer::push(Experience exp) {
  if (items_.size() < capacity_) {
    items_.push_back(std::move(exp));
    return;
  }
  items_[head_] = std::move(exp);
  head_ = (head_ + 1) % capacity_;
}

const Experience& ReplayBuffer::at(std::size_t i) const {
  if (i >= items_.size()) throw std::out_of_range("replay index out of range");
  return items_[(head_ + i) % items_.size()];
}

std::vector<const Experience*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
  std::vector<const Experience*> out;
  if (items_.empty() || n == 0) return out;
  if (items_.size() <= n) {
    for (std::size_t i = 0; i < items_.size(); ++i) out.push_back(&at(i));
    return out;
  }
  // Partial Fisher-Yates over storage slots.
  std::vector<std::size_t> idx(items_.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = i + rng.below(idx.size() - i);
    std::swap(idx[i], idx[j]);
    out.push_back(&items_[idx[i]]);
  }
  return out;
}

TrainConfig TrainConfig::defaults(Variant variant) {
  TrainConfig cfg;
  if (variant == Variant::kDynamic) cfg.eps_start = 1.0;
  return cfg;
}

void TrainConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (steps_per_epoch < 1) throw std::invalid_argument("steps_per_epoch must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (replay_capacity < 1) throw std::invalid_argument("replay_capacity must be >= 1");
  if (batch_size > replay_capacity) throw std::invalid_argument("batch_size exceeds replay capacity");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must be in (0, 1]");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning_rate must be positive");
  }
  if (!prob(eps_start) || !prob(eps_floor) || !(eps_step >= 0.0)) {
    throw std::invalid_argument("epsilon schedule out of range");
  }
  if (target_sync_interval < 0) throw std::invalid_argument("target_sync_interval must be >= 0");
  for (auto h : hidden_dims) {
    if (h == 0) throw std::invalid_argument("hidden layer sizes must be positive");
  }
}

double epsilon(int epoch, const TrainConfig& cfg) {
  // Rounded to 1e-12 so 0.9 - 3 * 0.1 prints as 0.6, not 0.6000000000000001.
  const double raw = cfg.eps_start - cfg.eps_step * epoch;
  const double eps = std::round(raw * 1e12) / 1e12;
  return std::clamp(std::max(cfg.eps_floor, eps), 0.0, 1.0);
}

int argmax(std::span<const double> q) {
  int best = 0;
  for (std::size_t i = 1; i < q.size(); ++i) {
    if (q[i] > q[best]) best = static_cast<int>(i);
  }
  return best;
}

int select_action(const Mlp& net, std::span<const double> state, double eps, Rng& rng) {
  const double u = rng.uniform();
  if (u < eps) return static_cast<int>(rng.below(net.output_dim()));
  const auto q = net.forward(state);
  return argmax(q);
}

double bellman_target(const Experience& exp, const Mlp& target_net, double gamma) {
  if (exp.done || !exp.next_state) return exp.reward;
  const auto q = target_net.forward(*exp.next_state);
  return exp.reward + gamma * *std::max_element(q.begin(), q.end());
}

json to_json(const EpochLog& e) {
  return {{"epoch", e.epoch},
          {"epsilon", e.epsilon},
          {"episodes", e.episodes},
          {"steps", e.steps},
          {"mean_reward", e.mean_reward},
          {"trigger_rate", e.trigger_rate},
          {"mean_episode_length", e.mean_episode_length},
          {"mean_loss", e.mean_loss},
          {"checkpoint", e.checkpoint}};
}

std::string TrainLog::to_jsonl() const {
  std::string out;
  for (const auto& e : epochs) {
    out += to_json(e).dump();
    out += '\n';
  }
  return out;
}

std::string checkpoint_name(int epoch) {
  std::ostringstream os;
  os << "epoch_" << std::setw(3) << std::setfill('0') << epoch << ".ckpt";
  return os.str();
}

std::vector<std::size_t> network_dims(std::size_t input_dim, const TrainConfig& cfg, Variant v) {
  std::vector<std::size_t> dims{input_dim};
  dims.insert(dims.end(), cfg.hidden_dims.begin(), cfg.hidden_dims.end());
  dims.push_back(static_cast<std::size_t>(num_actions(v)));
  return dims;
}

TrainResult train(const Dataset& dataset, const EnvConfig& env_cfg, const TrainConfig& cfg,
                  FeatureExtractor& extractor, const TrainOptions& options) {
  cfg.validate();
  env_cfg.validate();
  if (dataset.empty()) throw std::invalid_argument("training dataset is empty");

  EnvConfig episode_cfg = env_cfg;
  episode_cfg.max_steps = cfg.steps_per_epoch;

  const auto dims = network_dims(state_dim(env_cfg, extractor.dim()), cfg, env_cfg.variant);
  Rng root(cfg.seed);
  TrainResult result;
  result.policy = init_mlp(dims, root.next());
  Mlp target = result.policy;
  Rng order_rng = root.fork();
  Rng action_rng = root.fork();
  Rng replay_rng = root.fork();

  const bool single_network = cfg.target_sync_interval == 0;
  ReplayBuffer replay(cfg.replay_capacity);
  std::int64_t global_step = 0;

  if (options.checkpoint_dir) std::filesystem::create_directories(*options.checkpoint_dir);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double eps = epsilon(epoch, cfg);
    EpochLog elog;
    elog.epoch = epoch;
    elog.epsilon = eps;
    double reward_sum = 0.0;
    double loss_sum = 0.0;
    int triggers = 0;

    for (std::size_t idx : order_rng.permutation(dataset.size())) {
      Episode ep(episode_cfg, dataset.scenes[idx], extractor);
      std::vector<double> state = ep.state().input();
      ++elog.episodes;
      while (!ep.done()) {
        const int action = select_action(result.policy, state, eps, action_rng);
        StepResult sr = ep.step(action);

        Experience exp;
        exp.state = std::move(state);
        exp.action = action;
        exp.reward = sr.reward;
        exp.done = sr.done;
        if (sr.next_state) exp.next_state = sr.next_state->input();
        if (!sr.done) state = *exp.next_state;
        replay.push(std::move(exp));

        const auto batch = replay.sample(cfg.batch_size, replay_rng);
        const Mlp& bootstrap = single_network ? result.policy : target;
        std::vector<QSample> samples;
        samples.reserve(batch.size());
        for (const Experience* e : batch) {
          samples.push_back({e->state, e->action, bellman_target(*e, bootstrap, cfg.gamma)});
        }
        const double loss = sgd_batch(result.policy, samples, cfg.learning_rate);
        ++global_step;
        if (!single_network && global_step % cfg.target_sync_interval == 0) {
          sync_target(result.policy, target);
        }

        reward_sum += sr.reward;
        loss_sum += loss;
        ++elog.steps;
        if (sr.done && action == trigger_action(env_cfg.variant)) ++triggers;

        if (options.on_step) {
          options.on_step(StepInfo{global_step, epoch, loss, sr.reward, action, &result.policy,
                                   single_network ? &result.policy : &target});
        }
      }
    }

    elog.mean_reward = reward_sum / elog.episodes;
    elog.trigger_rate = static_cast<double>(triggers) / elog.episodes;
    elog.mean_episode_length = static_cast<double>(elog.steps) / elog.episodes;
    elog.mean_loss = elog.steps > 0 ? loss_sum / elog.steps : 0.0;
    if (options.checkpoint_dir) {
      const auto path = *options.checkpoint_dir / checkpoint_name(epoch);
      save_checkpoint(result.policy, env_cfg.variant, path);
      elog.checkpoint = path.filename().string();
    }
    result.checkpoints.push_back(result.policy);
    result.log.epochs.push_back(elog);
  }
  return result;
}

}  // namespace boxhunt
