#pragma once

// Offline training: Gaussian policy with tanh squashing, Gaussian
// distributional critic trained by closed-form KL against the soft
// distributional Bellman target, automatic temperature, target networks and
// a uniform replay buffer. The trainer is generic over a small env
// interface so it can be exercised on toy tasks.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "mshield/common.hpp"
#include "mshield/nn.hpp"

namespace mshield {

// --- policy -----------------------------------------------------------------

inline constexpr double kLogStdMin = -20.0;
inline constexpr double kLogStdMax = 2.0;

struct GaussianPolicy {
  Mlp net;  // obs -> [mean_0..mean_{A-1}, logstd_0..logstd_{A-1}]
  Vector act_halfwidth;

  int act_dim() const { return static_cast<int>(act_halfwidth.size()); }
  int obs_dim() const { return net.input_dim(); }

  static GaussianPolicy make(int obs_dim, const Vector& halfwidth,
                             const std::vector<int>& hidden, Rng& rng) {
    std::vector<int> widths;
    widths.push_back(obs_dim);
    for (int h : hidden) widths.push_back(h);
    widths.push_back(2 * static_cast<int>(halfwidth.size()));
    GaussianPolicy p;
    p.net = Mlp::make(widths, rng);
    p.act_halfwidth = halfwidth;
    return p;
  }
};

enum class ActionMode { kStochastic, kMean };

struct SampledAction {
  Vector env_action;  // in env units
  Vector squashed;    // tanh(u), the normalized action fed to the critic
  double log_prob = 0.0;
};

inline double log_one_minus_tanh_sq(double u) {
  const double a = std::fabs(u);
  return 2.0 * (std::log(2.0) - a - std::log1p(std::exp(-2.0 * a)));
}

inline double softplus(double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

// Draw (or take the mean of) the squashed Gaussian policy at one observation.
// The log-probability includes the tanh and affine-scaling corrections, so it
// is a proper density over env actions.
inline SampledAction sample_action(const GaussianPolicy& policy, const Vector& obs,
                                   ActionMode mode, Rng* rng = nullptr) {
  const Vector head = forward1(policy.net, obs);
  const int A = policy.act_dim();
  SampledAction out;
  out.env_action.resize(A);
  out.squashed.resize(A);
  double logp = 0.0;
  for (int d = 0; d < A; ++d) {
    const double mean = head(d);
    const double logstd = clamp(head(A + d), kLogStdMin, kLogStdMax);
    const double std = std::exp(logstd);
    double u = mean;
    double xi = 0.0;
    if (mode == ActionMode::kStochastic) {
      xi = rng->normal();
      u = mean + std * xi;
    }
    const double t = std::tanh(u);
    out.squashed(d) = t;
    out.env_action(d) = policy.act_halfwidth(d) * t;
    logp += -0.5 * xi * xi - logstd - 0.5 * std::log(2.0 * kPi) -
            log_one_minus_tanh_sq(u) - std::log(policy.act_halfwidth(d));
  }
  out.log_prob = logp;
  return out;
}

// --- critic ------------------------------------------------------------------

struct DistributionalCritic {
  Mlp net;  // [obs, squashed action] -> [q_mean, sigma_raw]
  double sigma_min = 1e-3;

  static DistributionalCritic make(int obs_dim, int act_dim,
                                   const std::vector<int>& hidden, Rng& rng,
                                   double sigma_min = 1e-3) {
    std::vector<int> widths;
    widths.push_back(obs_dim + act_dim);
    for (int h : hidden) widths.push_back(h);
    widths.push_back(2);
    DistributionalCritic c;
    c.net = Mlp::make(widths, rng);
    c.sigma_min = sigma_min;
    return c;
  }

  // Returns (mean, sigma) with sigma = softplus(raw) + sigma_min.
  std::pair<double, double> evaluate(const Vector& obs, const Vector& squashed) const {
    Vector x(obs.size() + squashed.size());
    x << obs, squashed;
    const Vector y = forward1(net, x);
    return {y(0), softplus(y(1)) + sigma_min};
  }
};

// --- temperature --------------------------------------------------------------

struct Temperature {
  double log_alpha = std::log(0.2);
  double target_entropy = -2.0;
  AdamParams hp;
  double m = 0.0, v = 0.0;
  long step = 0;

  double alpha() const { return std::exp(log_alpha); }
};

// Gradient step on log(alpha) of J(alpha) = mean(-alpha logp - alpha H_bar);
// d J / d log(alpha) = alpha * mean(-logp - H_bar).
inline double temperature_update(Temperature& temp, const Vector& log_probs,
                                 long global_step) {
  const double grad =
      temp.alpha() * ((-log_probs.array() - temp.target_entropy).mean());
  temp.step += 1;
  const double lr = cosine_lr(temp.hp, global_step);
  temp.m = temp.hp.beta1 * temp.m + (1.0 - temp.hp.beta1) * grad;
  temp.v = temp.hp.beta2 * temp.v + (1.0 - temp.hp.beta2) * grad * grad;
  const double mhat = temp.m / (1.0 - std::pow(temp.hp.beta1, temp.step));
  const double vhat = temp.v / (1.0 - std::pow(temp.hp.beta2, temp.step));
  temp.log_alpha -= lr * mhat / (std::sqrt(vhat) + temp.hp.eps);
  return temp.alpha();
}

// --- replay buffer -------------------------------------------------------------

// Uniform ring buffer with FIFO overwrite. float32 storage keeps memory flat;
// appends are mutex-protected so parallel actors can feed a single learner.
class ReplayBuffer {
 public:
  ReplayBuffer(int obs_dim, int act_dim, long capacity)
      : obs_dim_(obs_dim), act_dim_(act_dim), capacity_(capacity),
        row_(2 * obs_dim + act_dim + 2) {}

  void append(const Vector& obs, const Vector& squashed_action, double reward,
              const Vector& next_obs, bool done) {
    std::lock_guard<std::mutex> lock(mu_);
    if (size_ < capacity_ && static_cast<long>(data_.size()) < capacity_ * row_) {
      data_.resize(std::min<long>(capacity_, size_ + 4096) * row_);
    }
    float* r = data_.data() + cursor_ * row_;
    int k = 0;
    for (int i = 0; i < obs_dim_; ++i) r[k++] = static_cast<float>(obs(i));
    for (int i = 0; i < act_dim_; ++i) r[k++] = static_cast<float>(squashed_action(i));
    r[k++] = static_cast<float>(reward);
    for (int i = 0; i < obs_dim_; ++i) r[k++] = static_cast<float>(next_obs(i));
    r[k++] = done ? 1.0f : 0.0f;
    cursor_ = (cursor_ + 1) % capacity_;
    size_ = std::min(size_ + 1, capacity_);
  }

  long size() const {
    std::lock_guard<std::mutex> lock(mu_);
    return size_;
  }
  long cursor() const {
    std::lock_guard<std::mutex> lock(mu_);
    return cursor_;
  }

  void sample(Rng& rng, int n, Matrix* s, Matrix* a, Vector* r, Matrix* s2,
              Vector* done) const {
    std::lock_guard<std::mutex> lock(mu_);
    s->resize(n, obs_dim_);
    a->resize(n, act_dim_);
    r->resize(n);
    s2->resize(n, obs_dim_);
    done->resize(n);
    for (int i = 0; i < n; ++i) {
      const long idx = static_cast<long>(rng.uniform_index(size_));
      const float* row = data_.data() + idx * row_;
      int k = 0;
      for (int j = 0; j < obs_dim_; ++j) (*s)(i, j) = row[k++];
      for (int j = 0; j < act_dim_; ++j) (*a)(i, j) = row[k++];
      (*r)(i) = row[k++];
      for (int j = 0; j < obs_dim_; ++j) (*s2)(i, j) = row[k++];
      (*done)(i) = row[k++];
    }
  }

 private:
  int obs_dim_, act_dim_;
  long capacity_, row_;
  long size_ = 0, cursor_ = 0;
  std::vector<float> data_;
  mutable std::mutex mu_;
};

// --- losses -------------------------------------------------------------------

struct Batch {
  Matrix s, a;  // a holds squashed (tanh) actions
  Vector r;
  Matrix s2;
  Vector done;

  int size() const { return static_cast<int>(r.size()); }
};

// KL(N(mu0, sigma0^2) || N(mu1, sigma1^2)) in closed form.
inline double gaussian_kl(double mu0, double sigma0, double mu1, double sigma1) {
  return std::log(sigma1 / sigma0) +
         (sigma0 * sigma0 + (mu0 - mu1) * (mu0 - mu1)) / (2.0 * sigma1 * sigma1) - 0.5;
}

struct CriticTargets {
  Vector mu;     // per sample target mean
  Vector sigma;  // per sample target std
};

// Per-sample target distribution parameters induced by the soft
// distributional Bellman operator: a' ~ pi(.|s'), mean shifted by the
// entropy correction, std scaled by gamma. Done transitions collapse to a
// floor-width spike at the stored reward.
inline CriticTargets compute_targets(const GaussianPolicy& policy,
                                     const DistributionalCritic& target_critic,
                                     const Batch& batch, double gamma, double alpha,
                                     Rng& rng) {
  const int n = batch.size();
  const int A = policy.act_dim();
  const Matrix head = forward(policy.net, batch.s2);
  Matrix t2(n, A);
  Vector logp2 = Vector::Zero(n);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < A; ++d) {
      const double mean = head(i, d);
      const double logstd = clamp(head(i, A + d), kLogStdMin, kLogStdMax);
      const double std = std::exp(logstd);
      const double xi = rng.normal();
      const double u = mean + std * xi;
      const double t = std::tanh(u);
      t2(i, d) = t;
      logp2(i) += -0.5 * xi * xi - logstd - 0.5 * std::log(2.0 * kPi) -
                  log_one_minus_tanh_sq(u) - std::log(policy.act_halfwidth(d));
    }
  }
  Matrix x2(n, batch.s2.cols() + A);
  x2.leftCols(batch.s2.cols()) = batch.s2;
  x2.rightCols(A) = t2;
  const Matrix y2 = forward(target_critic.net, x2);

  CriticTargets tg;
  tg.mu.resize(n);
  tg.sigma.resize(n);
  for (int i = 0; i < n; ++i) {
    const double mu2 = y2(i, 0);
    const double sg2 = softplus(y2(i, 1)) + target_critic.sigma_min;
    if (batch.done(i) > 0.5) {
      tg.mu(i) = batch.r(i);
      tg.sigma(i) = target_critic.sigma_min;
    } else {
      tg.mu(i) = batch.r(i) + gamma * (mu2 - alpha * logp2(i));
      tg.sigma(i) = std::max(gamma * sg2, target_critic.sigma_min);
    }
  }
  return tg;
}

struct CriticLossResult {
  double loss = 0.0;
  Gradients grads;
};

// Mean over the batch of KL(target || current) with exact gradients through
// the critic head (sigma via softplus).
inline CriticLossResult critic_loss(const DistributionalCritic& critic,
                                    const Batch& batch, const CriticTargets& targets) {
  const int n = batch.size();
  Matrix x(n, batch.s.cols() + batch.a.cols());
  x.leftCols(batch.s.cols()) = batch.s;
  x.rightCols(batch.a.cols()) = batch.a;
  ForwardCache cache;
  const Matrix y = forward(critic.net, x, &cache);

  double loss = 0.0;
  Matrix dy = Matrix::Zero(n, 2);
  for (int i = 0; i < n; ++i) {
    const double mu_w = y(i, 0);
    const double raw = y(i, 1);
    const double sigma_w = softplus(raw) + critic.sigma_min;
    if (sigma_w < critic.sigma_min * (1.0 - 1e-12)) {
      throw DegenerateSigmaError("critic sigma fell below the floor");
    }
    const double mu_t = targets.mu(i);
    const double sigma_t = targets.sigma(i);
    loss += gaussian_kl(mu_t, sigma_t, mu_w, sigma_w);
    const double inv_n = 1.0 / n;
    const double d_mu = (mu_w - mu_t) / (sigma_w * sigma_w) * inv_n;
    const double d_sigma =
        (1.0 / sigma_w -
         (sigma_t * sigma_t + (mu_t - mu_w) * (mu_t - mu_w)) /
             (sigma_w * sigma_w * sigma_w)) *
        inv_n;
    dy(i, 0) = d_mu;
    dy(i, 1) = d_sigma * sigmoid(raw);
  }
  loss /= n;

  CriticLossResult out;
  out.loss = loss;
  out.grads = backward(critic.net, cache, dy);
  return out;
}

struct ActorLossResult {
  double loss = 0.0;
  Gradients grads;
  Vector log_probs;  // fresh log-probabilities, used for the alpha update
};

// loss = -mean(Q(s, a_theta) - alpha log pi(a_theta | s)) with
// reparameterized actions; gradients flow through both the critic's action
// input and the log-probability.
inline ActorLossResult actor_loss(const GaussianPolicy& policy,
                                  const DistributionalCritic& critic,
                                  const Matrix& s, double alpha, Rng& rng) {
  const int n = static_cast<int>(s.rows());
  const int A = policy.act_dim();
  ForwardCache pol_cache;
  const Matrix head = forward(policy.net, s, &pol_cache);

  Matrix t(n, A), xi(n, A), std_m(n, A), clamp_mask(n, A);
  Vector logp = Vector::Zero(n);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < A; ++d) {
      const double mean = head(i, d);
      const double raw = head(i, A + d);
      const double logstd = clamp(raw, kLogStdMin, kLogStdMax);
      clamp_mask(i, d) = (raw > kLogStdMin && raw < kLogStdMax) ? 1.0 : 0.0;
      const double std = std::exp(logstd);
      const double z = rng.normal();
      const double u = mean + std * z;
      xi(i, d) = z;
      std_m(i, d) = std;
      t(i, d) = std::tanh(u);
      logp(i) += -0.5 * z * z - logstd - 0.5 * std::log(2.0 * kPi) -
                 log_one_minus_tanh_sq(u) - std::log(policy.act_halfwidth(d));
    }
  }

  Matrix x(n, s.cols() + A);
  x.leftCols(s.cols()) = s;
  x.rightCols(A) = t;
  ForwardCache crit_cache;
  const Matrix q = forward(critic.net, x, &crit_cache);

  const double inv_n = 1.0 / n;
  double loss = 0.0;
  for (int i = 0; i < n; ++i) loss += alpha * logp(i) - q(i, 0);
  loss *= inv_n;

  // d loss / d q_mean = -1/n; sigma head unused by the actor objective.
  Matrix dq = Matrix::Zero(n, 2);
  dq.col(0).setConstant(-inv_n);
  Matrix dx;
  backward(critic.net, crit_cache, dq, &dx);
  const Matrix g_t = dx.rightCols(A);  // d loss / d tanh(u) through the critic

  Matrix dhead(n, 2 * A);
  for (int i = 0; i < n; ++i) {
    for (int d = 0; d < A; ++d) {
      const double td = t(i, d);
      const double one_m_t2 = 1.0 - td * td;
      // d loss / d u: alpha-entropy path (d logp/du = 2 tanh u) + critic path.
      const double g_u = inv_n * alpha * 2.0 * td + g_t(i, d) * one_m_t2;
      dhead(i, d) = g_u;
      dhead(i, A + d) =
          (g_u * std_m(i, d) * xi(i, d) - inv_n * alpha) * clamp_mask(i, d);
    }
  }

  ActorLossResult out;
  out.loss = loss;
  out.grads = backward(policy.net, pol_cache, dhead);
  out.log_probs = logp;
  return out;
}

// One scalar sample of the soft distributional Bellman target: a' drawn from
// the policy, Z' drawn from the target critic's Gaussian clipped to +-3
// target sigma; done transitions return the reward alone.
inline double target_return_sample(const DistributionalCritic& target_critic,
                                   const GaussianPolicy& policy, const Vector& s2,
                                   double reward, bool done, double gamma, double alpha,
                                   Rng& rng) {
  if (done || gamma == 0.0) return reward;
  const SampledAction a2 = sample_action(policy, s2, ActionMode::kStochastic, &rng);
  const auto [mu, sigma] = target_critic.evaluate(s2, a2.squashed);
  const double z = clamp(rng.normal(mu, sigma), mu - 3.0 * sigma, mu + 3.0 * sigma);
  return reward + gamma * (z - alpha * a2.log_prob);
}

// --- env interface & trainer ----------------------------------------------------

struct RlEnv {
  virtual ~RlEnv() = default;
  virtual int obs_dim() const = 0;
  virtual int act_dim() const = 0;
  virtual Vector act_halfwidth() const = 0;
  virtual Vector reset(std::uint64_t episode_seed) = 0;
  struct Step {
    Vector obs;
    double reward = 0.0;
    bool done = false;
    bool success = false;
  };
  virtual Step step(const Vector& env_action) = 0;
};

using EnvFactory = std::function<std::unique_ptr<RlEnv>()>;

struct TrainConfig {
  double gamma = 0.99;
  double tau = 0.001;
  int update_delay = 2;
  double reward_scale = 5.0;
  int batch_size = 256;
  long buffer_capacity = 500000;
  long warmup_steps = 2000;
  long total_iterations = 150000;
  std::uint64_t seed = 0;
  std::vector<int> hidden = {64, 64};
  double actor_lr_base = 5e-5, actor_lr_floor = 5e-6;
  double critic_lr_base = 1e-4, critic_lr_floor = 1e-5;
  double alpha_lr_base = 5e-5, alpha_lr_floor = 5e-6;
  double target_entropy = 0.0;  // 0 = use -act_dim
  double sigma_min = 1e-3;
  double init_alpha = 0.2;
  long eval_interval = 2500;
  int eval_episodes = 5;
  int eval_best_k = 3;
  int actors = 1;
  int learners = 1;  // accepted for config compatibility; one learner runs
  int buffers = 1;   // accepted for config compatibility; one buffer is used

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw ConfigError("train.gamma must be in (0,1]");
    if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("train.tau must be in (0,1]");
    if (update_delay < 1) throw ConfigError("train.update_delay must be >= 1");
    if (reward_scale <= 0.0) throw ConfigError("train.reward_scale must be > 0");
    if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
    if (buffer_capacity < batch_size) {
      throw ConfigError("train.buffer_capacity must be >= batch_size");
    }
    if (actors < 1) throw ConfigError("train.actors must be >= 1");
  }
};

struct Checkpoint {
  GaussianPolicy policy;
  GaussianPolicy policy_target;
  DistributionalCritic critic;
  DistributionalCritic critic_target;
  AdamState actor_opt, critic_opt;
  Temperature temperature;
  long iteration = 0;
  long buffer_cursor = 0;

  void save(const std::string& path) const {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw ConfigError("cannot open checkpoint for writing: " + path);
    io::write_u32(os, 0x4d534331);  // "MSC1"
    io::write_u32(os, static_cast<std::uint32_t>(policy.act_halfwidth.size()));
    io::write_doubles(os, policy.act_halfwidth.data(), policy.act_halfwidth.size());
    write_mlp(os, policy.net);
    write_mlp(os, policy_target.net);
    write_mlp(os, critic.net);
    write_mlp(os, critic_target.net);
    io::write_f64(os, critic.sigma_min);
    write_adam(os, actor_opt);
    write_adam(os, critic_opt);
    io::write_f64(os, temperature.log_alpha);
    io::write_f64(os, temperature.target_entropy);
    io::write_f64(os, temperature.m);
    io::write_f64(os, temperature.v);
    io::write_i64(os, temperature.step);
    io::write_f64(os, temperature.hp.lr_base);
    io::write_f64(os, temperature.hp.lr_floor);
    io::write_i64(os, temperature.hp.anneal_steps);
    io::write_i64(os, iteration);
    io::write_i64(os, buffer_cursor);
  }

  static Checkpoint load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open checkpoint: " + path);
    if (io::read_u32(is) != 0x4d534331) {
      throw ConfigError("not a checkpoint file: " + path);
    }
    Checkpoint c;
    const std::uint32_t act_dim = io::read_u32(is);
    c.policy.act_halfwidth.resize(act_dim);
    io::read_doubles(is, c.policy.act_halfwidth.data(), act_dim);
    c.policy.net = read_mlp(is);
    c.policy_target.act_halfwidth = c.policy.act_halfwidth;
    c.policy_target.net = read_mlp(is);
    c.critic.net = read_mlp(is);
    c.critic_target.net = read_mlp(is);
    c.critic.sigma_min = io::read_f64(is);
    c.critic_target.sigma_min = c.critic.sigma_min;
    c.actor_opt = read_adam(is);
    c.critic_opt = read_adam(is);
    c.temperature.log_alpha = io::read_f64(is);
    c.temperature.target_entropy = io::read_f64(is);
    c.temperature.m = io::read_f64(is);
    c.temperature.v = io::read_f64(is);
    c.temperature.step = io::read_i64(is);
    c.temperature.hp.lr_base = io::read_f64(is);
    c.temperature.hp.lr_floor = io::read_f64(is);
    c.temperature.hp.anneal_steps = io::read_i64(is);
    c.iteration = io::read_i64(is);
    c.buffer_cursor = io::read_i64(is);
    return c;
  }
};

struct MetricsRow {
  long iteration = 0;
  double mean_eval_return = 0.0;
  double critic_loss = 0.0;
  double actor_loss = 0.0;
  double alpha = 0.0;
  double success_rate = 0.0;
};

struct TrainCallbacks {
  // Called at every evaluation point with the current metrics row and a
  // checkpoint of the learner state.
  std::function<void(const MetricsRow&, const Checkpoint&)> on_eval;
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<MetricsRow> metrics;
  long env_steps = 0;
  long episodes = 0;
};

class DsacTrainer {
 public:
  DsacTrainer(EnvFactory train_env_factory, EnvFactory eval_env_factory,
              const TrainConfig& cfg)
      : train_factory_(std::move(train_env_factory)),
        eval_factory_(std::move(eval_env_factory)),
        cfg_(cfg) {
    cfg_.validate();
  }

  TrainResult run(const TrainCallbacks& callbacks = {});

 private:
  struct Learner;
  EnvFactory train_factory_;
  EnvFactory eval_factory_;
  TrainConfig cfg_;
};

struct DsacTrainer::Learner {
  TrainConfig cfg;
  GaussianPolicy policy, policy_target;
  DistributionalCritic critic, critic_target;
  AdamState actor_opt, critic_opt;
  Temperature temperature;
  ReplayBuffer buffer;
  Rng update_rng;
  long updates = 0;
  double critic_loss_acc = 0.0, actor_loss_acc = 0.0;
  long critic_loss_n = 0, actor_loss_n = 0;

  Learner(const TrainConfig& c, int obs_dim, const Vector& halfwidth)
      : cfg(c),
        policy(),
        critic(),
        buffer(obs_dim, static_cast<int>(halfwidth.size()), c.buffer_capacity),
        update_rng(Rng(c.seed).derive(0x5c41)) {
    Rng init_rng = Rng(c.seed).derive(0x1417);
    policy = GaussianPolicy::make(obs_dim, halfwidth, c.hidden, init_rng);
    critic = DistributionalCritic::make(obs_dim, static_cast<int>(halfwidth.size()),
                                        c.hidden, init_rng, c.sigma_min);
    policy_target = policy;
    critic_target = critic;
    AdamParams actor_hp{0.9, 0.999, 1e-8, c.actor_lr_base, c.actor_lr_floor,
                        c.total_iterations};
    AdamParams critic_hp{0.9, 0.999, 1e-8, c.critic_lr_base, c.critic_lr_floor,
                         c.total_iterations};
    actor_opt = AdamState::make(policy.net, actor_hp);
    critic_opt = AdamState::make(critic.net, critic_hp);
    temperature.log_alpha = std::log(c.init_alpha);
    temperature.target_entropy =
        c.target_entropy != 0.0 ? c.target_entropy
                                : -static_cast<double>(halfwidth.size());
    temperature.hp = AdamParams{0.9, 0.999, 1e-8, c.alpha_lr_base, c.alpha_lr_floor,
                                c.total_iterations};
  }

  void update(long iteration) {
    Batch batch;
    buffer.sample(update_rng, cfg.batch_size, &batch.s, &batch.a, &batch.r, &batch.s2,
                  &batch.done);
    const double alpha = temperature.alpha();
    const CriticTargets targets =
        compute_targets(policy, critic_target, batch, cfg.gamma, alpha, update_rng);
    CriticLossResult cl = critic_loss(critic, batch, targets);
    if (!std::isfinite(cl.loss) || !cl.grads.all_finite()) {
      throw NonFiniteLossError("critic loss became non-finite at iteration " +
                               std::to_string(iteration));
    }
    adam_step(critic_opt, critic.net, cl.grads, iteration);
    critic_loss_acc += cl.loss;
    critic_loss_n += 1;
    updates += 1;

    if (updates % cfg.update_delay == 0) {
      ActorLossResult al = actor_loss(policy, critic, batch.s, alpha, update_rng);
      if (!std::isfinite(al.loss) || !al.grads.all_finite()) {
        throw NonFiniteLossError("actor loss became non-finite at iteration " +
                                 std::to_string(iteration));
      }
      adam_step(actor_opt, policy.net, al.grads, iteration);
      actor_loss_acc += al.loss;
      actor_loss_n += 1;
      temperature_update(temperature, al.log_probs, iteration);
      soft_update(critic_target.net, critic.net, cfg.tau);
      soft_update(policy_target.net, policy.net, cfg.tau);
      if (!policy.net.all_finite() || !critic.net.all_finite()) {
        throw NonFiniteLossError("parameters became non-finite at iteration " +
                                 std::to_string(iteration));
      }
    }
  }

  Checkpoint checkpoint(long iteration) const {
    Checkpoint c{policy, policy_target, critic, critic_target,
                 actor_opt, critic_opt, temperature, iteration, buffer.cursor()};
    return c;
  }
};

// Mean return over the best k of n noise-free episodes plus success rate.
inline std::pair<double, double> evaluate_policy(RlEnv& env, const GaussianPolicy& policy,
                                                 std::uint64_t seed_base, int episodes,
                                                 int best_k) {
  std::vector<double> returns;
  int successes = 0;
  for (int ep = 0; ep < episodes; ++ep) {
    Vector obs = env.reset(Rng(seed_base).derive(ep).next_u64());
    double ret = 0.0;
    for (;;) {
      const SampledAction a = sample_action(policy, obs, ActionMode::kMean);
      const auto step = env.step(a.env_action);
      ret += step.reward;
      if (step.done) {
        if (step.success) ++successes;
        break;
      }
      obs = step.obs;
    }
    returns.push_back(ret);
  }
  std::sort(returns.begin(), returns.end(), std::greater<double>());
  const int k = std::min<int>(best_k, static_cast<int>(returns.size()));
  double mean = 0.0;
  for (int i = 0; i < k; ++i) mean += returns[i];
  mean /= k;
  return {mean, static_cast<double>(successes) / episodes};
}

inline TrainResult DsacTrainer::run(const TrainCallbacks& callbacks) {
  auto probe_env = train_factory_();
  const int obs_dim = probe_env->obs_dim();
  const Vector halfwidth = probe_env->act_halfwidth();

  Learner learner(cfg_, obs_dim, halfwidth);
  auto eval_env = eval_factory_();

  TrainResult result;
  Rng episode_seeds = Rng(cfg_.seed).derive(0xe7150de5);
  Rng actor_rng = Rng(cfg_.seed).derive(0xA0C7);

  auto run_eval = [&](long iteration) {
    const auto [ret, success] = evaluate_policy(
        *eval_env, learner.policy, Rng(cfg_.seed).derive(0xEA10 + iteration).next_u64(),
        cfg_.eval_episodes, cfg_.eval_best_k);
    MetricsRow row;
    row.iteration = iteration;
    row.mean_eval_return = ret;
    row.critic_loss =
        learner.critic_loss_n ? learner.critic_loss_acc / learner.critic_loss_n : 0.0;
    row.actor_loss =
        learner.actor_loss_n ? learner.actor_loss_acc / learner.actor_loss_n : 0.0;
    row.alpha = learner.temperature.alpha();
    row.success_rate = success;
    learner.critic_loss_acc = learner.actor_loss_acc = 0.0;
    learner.critic_loss_n = learner.actor_loss_n = 0;
    result.metrics.push_back(row);
    if (callbacks.on_eval) callbacks.on_eval(row, learner.checkpoint(iteration));
  };

  if (cfg_.actors <= 1) {
    auto env = train_factory_();
    Vector obs = env->reset(episode_seeds.next_u64());
    for (long iter = 0; iter < cfg_.total_iterations; ++iter) {
      Vector env_action(halfwidth.size());
      Vector squashed(halfwidth.size());
      if (learner.buffer.size() < cfg_.warmup_steps) {
        for (int d = 0; d < halfwidth.size(); ++d) {
          const double t = actor_rng.uniform(-1.0, 1.0);
          squashed(d) = t;
          env_action(d) = t * halfwidth(d);
        }
      } else {
        const SampledAction a =
            sample_action(learner.policy, obs, ActionMode::kStochastic, &actor_rng);
        env_action = a.env_action;
        squashed = a.squashed;
      }
      const auto step = env->step(env_action);
      learner.buffer.append(obs, squashed, step.reward / cfg_.reward_scale, step.obs,
                            step.done);
      result.env_steps += 1;
      if (step.done) {
        obs = env->reset(episode_seeds.next_u64());
        result.episodes += 1;
      } else {
        obs = step.obs;
      }
      if (learner.buffer.size() >= std::max<long>(cfg_.warmup_steps, cfg_.batch_size)) {
        learner.update(iter);
      }
      if ((iter + 1) % cfg_.eval_interval == 0) run_eval(iter + 1);
    }
  } else {
    // Parallel actors feed the shared buffer while the single learner trains;
    // actors act on per-episode snapshots of the policy. Determinism is only
    // guaranteed in single-actor mode.
    std::atomic<bool> stop{false};
    std::atomic<long> env_steps{0}, episodes{0};
    std::mutex policy_mu;
    std::vector<std::thread> workers;
    for (int a = 0; a < cfg_.actors; ++a) {
      workers.emplace_back([&, a]() {
        auto env = train_factory_();
        Rng rng = Rng(cfg_.seed).derive(0xAC100 + a);
        while (!stop.load(std::memory_order_relaxed)) {
          GaussianPolicy snapshot;
          {
            std::lock_guard<std::mutex> lock(policy_mu);
            snapshot = learner.policy;
          }
          Vector obs = env->reset(rng.next_u64());
          for (;;) {
            Vector env_action(halfwidth.size());
            Vector squashed(halfwidth.size());
            if (learner.buffer.size() < cfg_.warmup_steps) {
              for (int d = 0; d < halfwidth.size(); ++d) {
                const double t = rng.uniform(-1.0, 1.0);
                squashed(d) = t;
                env_action(d) = t * halfwidth(d);
              }
            } else {
              const SampledAction sa =
                  sample_action(snapshot, obs, ActionMode::kStochastic, &rng);
              env_action = sa.env_action;
              squashed = sa.squashed;
            }
            const auto step = env->step(env_action);
            learner.buffer.append(obs, squashed, step.reward / cfg_.reward_scale,
                                  step.obs, step.done);
            env_steps.fetch_add(1, std::memory_order_relaxed);
            if (step.done || stop.load(std::memory_order_relaxed)) break;
            obs = step.obs;
          }
          episodes.fetch_add(1, std::memory_order_relaxed);
        }
      });
    }
    const long gate = std::max<long>(cfg_.warmup_steps, cfg_.batch_size);
    while (learner.buffer.size() < gate) {
      std::this_thread::sleep_for(std::chrono::milliseconds(1));
    }
    for (long iter = 0; iter < cfg_.total_iterations; ++iter) {
      {
        std::lock_guard<std::mutex> lock(policy_mu);
        learner.update(iter);
      }
      if ((iter + 1) % cfg_.eval_interval == 0) run_eval(iter + 1);
    }
    stop.store(true);
    for (auto& w : workers) w.join();
    result.env_steps = env_steps.load();
    result.episodes = episodes.load();
  }

  if (result.metrics.empty() ||
      result.metrics.back().iteration != cfg_.total_iterations) {
    run_eval(cfg_.total_iterations);
  }
  result.checkpoint = learner.checkpoint(cfg_.total_iterations);
  return result;
}

}  // namespace mshield
