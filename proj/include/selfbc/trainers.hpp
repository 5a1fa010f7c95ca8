#pragma once

// TD3-style actor-critic trainers with the behavior-cloning family of policy
// constraints: dataset BC (optionally beta-weighted), expected BC toward a
// learned behavior policy, self BC toward an EMA reference policy, and the
// ensemble variant sharing an averaged reference action.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "selfbc/dataset.hpp"
#include "selfbc/evaluation.hpp"
#include "selfbc/numerics.hpp"
#include "selfbc/rng.hpp"

namespace selfbc {

enum class ReferenceInit { kPretrained, kBehavior };
enum class Pretrainer { kBcOnly, kTd3Bc, kTd3Ebc };

inline std::string to_string(ReferenceInit r) { return r == ReferenceInit::kPretrained ? "pretrained" : "behavior"; }

inline ReferenceInit reference_init_from_string(const std::string& s) {
  if (s == "pretrained") return ReferenceInit::kPretrained;
  if (s == "behavior") return ReferenceInit::kBehavior;
  throw InvalidInput("unknown reference init '" + s + "'");
}

inline std::string to_string(Pretrainer p) {
  switch (p) {
    case Pretrainer::kBcOnly: return "bc";
    case Pretrainer::kTd3Bc: return "td3bc";
    case Pretrainer::kTd3Ebc: return "td3ebc";
  }
  return "unknown";
}

inline Pretrainer pretrainer_from_string(const std::string& s) {
  if (s == "bc") return Pretrainer::kBcOnly;
  if (s == "td3bc") return Pretrainer::kTd3Bc;
  if (s == "td3ebc") return Pretrainer::kTd3Ebc;
  throw InvalidInput("unknown pretrainer '" + s + "'");
}

struct TrainerConfig {
  double alpha = 2.5;
  double beta = 1.0;
  double tau = 0.005;
  double scale_ref = 0.01;
  double policy_noise = 0.2;
  double noise_clip = 0.5;
  int policy_update_frequency = 2;
  std::size_t batch_size = 256;
  double gamma = 0.99;
  std::uint64_t n_bc = 10000;
  std::uint64_t n_ebc = 200000;
  std::uint64_t n_selfbc = 1000000;
  int n_ens = 5;
  bool use_ema = true;
  ReferenceInit reference_init = ReferenceInit::kPretrained;
  Pretrainer pretrainer = Pretrainer::kTd3Ebc;

  std::vector<int> hidden_sizes{256, 256};
  double lr = 3e-4;
  bool critic_layer_norm = true;
  // Dataset dones mark the time limit, not an absorbing state.
  bool done_is_timeout = true;
  std::uint64_t eval_every = 5000;
  int eval_episodes = 10;
  bool record_wall_time = false;

  double tau_ref() const { return tau * scale_ref; }

  void validate() const {
    if (!(alpha > 0)) throw InvalidInput("alpha must be positive");
    if (!(beta > 0 && beta <= 1)) throw InvalidInput("beta must lie in (0, 1]");
    if (!(tau > 0 && tau <= 1)) throw InvalidInput("tau must lie in (0, 1]");
    if (!(scale_ref >= 0 && scale_ref <= 1)) throw InvalidInput("scale_ref must lie in [0, 1]");
    if (!(tau_ref() < 1)) throw InvalidInput("tau_ref must lie in [0, 1)");
    if (!(policy_noise >= 0)) throw InvalidInput("policy_noise must be nonnegative");
    if (!(noise_clip >= 0)) throw InvalidInput("noise_clip must be nonnegative");
    if (policy_update_frequency < 1) throw InvalidInput("policy_update_frequency must be at least 1");
    if (batch_size < 1) throw InvalidInput("batch_size must be positive");
    if (!(gamma >= 0 && gamma < 1)) throw InvalidInput("gamma must lie in [0, 1)");
    if (n_ens < 1) throw InvalidInput("n_ens must be at least 1");
    if (hidden_sizes.empty()) throw InvalidInput("hidden_sizes must be nonempty");
    for (int h : hidden_sizes) {
      if (h < 1) throw InvalidInput("hidden sizes must be positive");
    }
    if (!(lr > 0)) throw InvalidInput("lr must be positive");
    if (eval_episodes < 1) throw InvalidInput("eval_episodes must be at least 1");
  }
};

struct TrainerState {
  MlpParams q1, q2, q1_target, q2_target;
  MlpParams policy, policy_target;
  MlpParams reference;
  MlpParams behavior;
  AdamState q1_opt, q2_opt, policy_opt, behavior_opt;
  std::uint64_t step = 0;
};

inline std::vector<int> with_io(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

/// Fresh networks from the init stream, drawn in the order q1, q2, policy,
/// behavior. Targets and the reference start as copies of their sources.
inline TrainerState init_trainer_state(int state_dim, int action_dim, const TrainerConfig& cfg, Rng& rng) {
  cfg.validate();
  TrainerState st;
  const auto critic_sizes = with_io(state_dim + action_dim, cfg.hidden_sizes, 1);
  const auto actor_sizes = with_io(state_dim, cfg.hidden_sizes, action_dim);
  st.q1 = make_mlp(critic_sizes, OutputActivation::kIdentity, 1.0, cfg.critic_layer_norm);
  st.q2 = st.q1;
  st.policy = make_mlp(actor_sizes, OutputActivation::kTanhScaled, 1.0, false);
  st.behavior = st.policy;
  init_uniform_fan_in(st.q1, rng);
  init_uniform_fan_in(st.q2, rng);
  init_uniform_fan_in(st.policy, rng);
  init_uniform_fan_in(st.behavior, rng);
  st.q1_target = st.q1;
  st.q2_target = st.q2;
  st.policy_target = st.policy;
  st.reference = st.policy;
  st.q1_opt = make_adam(st.q1, cfg.lr);
  st.q2_opt = make_adam(st.q2, cfg.lr);
  st.policy_opt = make_adam(st.policy, cfg.lr);
  st.behavior_opt = make_adam(st.behavior, cfg.lr);
  return st;
}

inline Matrix critic_input(const Matrix& states, const Matrix& actions) {
  Matrix x(states.rows() + actions.rows(), states.cols());
  x.topRows(states.rows()) = states;
  x.bottomRows(actions.rows()) = actions;
  return x;
}

// ---------------------------------------------------------------------------
// Critic

inline double clip_noise(double raw, double clip) { return std::clamp(raw, -clip, clip); }

/// Target-policy smoothing noise, clip(N(0, sigma), -c, c), drawn column by
/// column (all action dims of sample 0, then sample 1, ...).
inline Matrix draw_target_noise(Rng& rng, Eigen::Index action_dim, Eigen::Index batch, const TrainerConfig& cfg) {
  Matrix eps(action_dim, batch);
  for (Eigen::Index j = 0; j < batch; ++j) {
    for (Eigen::Index i = 0; i < action_dim; ++i) eps(i, j) = clip_noise(cfg.policy_noise * rng.normal(), cfg.noise_clip);
  }
  return eps;
}

/// y = r + gamma * mask * min(Q1', Q2')(s', clip(pi'(s') + eps, -1, 1)).
/// mask = 1 - done, or 1 everywhere when dones are time limits.
inline Vector critic_target(const Batch& batch, const TrainerState& st, const TrainerConfig& cfg, const Matrix& noise) {
  const double scale = st.policy_target.action_scale;
  Matrix next_a = mlp_forward_batch(st.policy_target, batch.next_states);
  next_a = (next_a + noise).cwiseMax(-scale).cwiseMin(scale);
  const Matrix x = critic_input(batch.next_states, next_a);
  const Matrix q1 = mlp_forward_batch(st.q1_target, x);
  const Matrix q2 = mlp_forward_batch(st.q2_target, x);
  const Vector min_q = q1.cwiseMin(q2).row(0).transpose();
  Vector mask = Vector::Ones(batch.rewards.size());
  if (!cfg.done_is_timeout) mask -= batch.dones;
  return batch.rewards + cfg.gamma * (mask.array() * min_q.array()).matrix();
}

/// mean_i (Q(s_i, a_i) - y_i)^2 and its gradient.
inline LossAndGrad critic_loss_gradient(const MlpParams& q, const Matrix& states, const Matrix& actions, const Vector& y) {
  return mse_loss_gradient(q, critic_input(states, actions), y.transpose());
}

inline double critic_loss_value(const MlpParams& q, const Matrix& states, const Matrix& actions, const Vector& y) {
  const Matrix out = mlp_forward_batch(q, critic_input(states, actions));
  return (out - y.transpose()).squaredNorm() / static_cast<double>(states.cols());
}

struct CriticUpdateInfo {
  double q1_loss = 0.0;
  double q2_loss = 0.0;
};

inline CriticUpdateInfo critic_update(const Batch& batch, TrainerState& st, const Vector& y) {
  CriticUpdateInfo info;
  auto g1 = critic_loss_gradient(st.q1, batch.states, batch.actions, y);
  auto g2 = critic_loss_gradient(st.q2, batch.states, batch.actions, y);
  adam_step(st.q1, g1.grad, st.q1_opt);
  adam_step(st.q2, g2.grad, st.q2_opt);
  info.q1_loss = g1.value;
  info.q2_loss = g2.value;
  return info;
}

// ---------------------------------------------------------------------------
// Policy objectives

/// mean_i ||pi(s_i) - a_i||^2 and its gradient.
inline LossAndGrad bc_loss_gradient(const MlpParams& policy, const Matrix& states, const Matrix& actions) {
  return mse_loss_gradient(policy, states, actions);
}

inline void behavior_cloning_update(const Batch& batch, TrainerState& st) {
  auto g = bc_loss_gradient(st.behavior, batch.states, batch.actions);
  adam_step(st.behavior, g.grad, st.behavior_opt);
}

namespace detail {
inline void warn_once(const char* msg) {
  static bool warned = false;
  if (!warned) {
    std::cerr << "warning: " << msg << "\n";
    warned = true;
  }
}
}  // namespace detail

/// lambda = alpha / mean_i |q_i|; alpha itself when the mean is zero.
inline double q_normalizer_from_values(const RowVector& q_values, double alpha) {
  const double mean_abs = q_values.cwiseAbs().mean();
  if (!(mean_abs > 0.0)) {
    detail::warn_once("mean |Q| is zero; Q normalization falls back to alpha");
    return alpha;
  }
  return alpha / mean_abs;
}

inline double q_normalizer(const Matrix& states, const TrainerState& st, double alpha) {
  const Matrix a = mlp_forward_batch(st.policy, states);
  return q_normalizer_from_values(mlp_forward_batch(st.q1, critic_input(states, a)).row(0), alpha);
}

/// Policy loss (minimized):
///   -lambda * mean_i Q(s_i, pi(s_i)) + beta * mean_i ||pi(s_i) - ref_i||^2
/// with lambda and ref treated as constants and Q's parameters frozen.
inline double policy_loss_value(const MlpParams& policy, const MlpParams& critic, const Matrix& states,
                                const Matrix& ref_actions, double lambda, double beta) {
  const Matrix a = mlp_forward_batch(policy, states);
  const Matrix q = mlp_forward_batch(critic, critic_input(states, a));
  const double n = static_cast<double>(states.cols());
  return -lambda * q.sum() / n + beta * (a - ref_actions).squaredNorm() / n;
}

struct PolicyGradient {
  double loss = 0.0;
  double lambda = 0.0;
  MlpParams grad;
};

/// Gradient of policy_loss_value. When lambda is not given it is computed
/// from the same forward pass via q_normalizer.
inline PolicyGradient policy_loss_gradient(const MlpParams& policy, const MlpParams& critic, const Matrix& states,
                                           const Matrix& ref_actions, double beta, double alpha,
                                           std::optional<double> fixed_lambda = std::nullopt) {
  if (ref_actions.rows() != policy.output_size() || ref_actions.cols() != states.cols()) {
    throw InvalidInput("reference action shape mismatch");
  }
  ForwardCache pcache, qcache;
  const Matrix a = mlp_forward_batch(policy, states, &pcache);
  const Matrix q = mlp_forward_batch(critic, critic_input(states, a), &qcache);
  PolicyGradient out;
  out.lambda = fixed_lambda ? *fixed_lambda : q_normalizer_from_values(q.row(0), alpha);
  const double n = static_cast<double>(states.cols());
  const Matrix diff = a - ref_actions;
  out.loss = -out.lambda * q.sum() / n + beta * diff.squaredNorm() / n;

  const Matrix dq = Matrix::Constant(1, states.cols(), -out.lambda / n);
  const Matrix dx = mlp_backward(critic, qcache, dq, false).input_grad;
  const Matrix da = dx.bottomRows(policy.output_size()) + (2.0 * beta / n) * diff;
  out.grad = mlp_backward(policy, pcache, da).grads;
  return out;
}

/// theta_ref <- tau_ref * theta + (1 - tau_ref) * theta_ref, unless EMA is off.
inline void ema_reference_update(TrainerState& st, const TrainerConfig& cfg) {
  if (!cfg.use_ema) return;
  soft_update(st.reference, st.policy, cfg.tau_ref());
}

inline void soft_update_targets(TrainerState& st, const TrainerConfig& cfg) {
  soft_update(st.q1_target, st.q1, cfg.tau);
  soft_update(st.q2_target, st.q2, cfg.tau);
  soft_update(st.policy_target, st.policy, cfg.tau);
}

inline double policy_step(const Batch& batch, TrainerState& st, const TrainerConfig& cfg, const Matrix& ref_actions,
                          double beta) {
  auto g = policy_loss_gradient(st.policy, st.q1, batch.states, ref_actions, beta, cfg.alpha);
  adam_step(st.policy, g.grad, st.policy_opt);
  return g.loss;
}

/// Dataset-action constraint, beta-weighted (beta = 1 is plain TD3+BC).
inline void policy_update_bc(const Batch& batch, TrainerState& st, const TrainerConfig& cfg) {
  policy_step(batch, st, cfg, batch.actions, cfg.beta);
  soft_update_targets(st, cfg);
}

/// Expected-BC constraint toward the frozen behavior policy.
inline void policy_update_ebc(const Batch& batch, TrainerState& st, const TrainerConfig& cfg) {
  const Matrix ref = mlp_forward_batch(st.behavior, batch.states);
  policy_step(batch, st, cfg, ref, 1.0);
  soft_update_targets(st, cfg);
}

/// Self-BC constraint toward the EMA reference, then the reference update.
inline void policy_update_selfbc(const Batch& batch, TrainerState& st, const TrainerConfig& cfg) {
  const Matrix ref = mlp_forward_batch(st.reference, batch.states);
  policy_step(batch, st, cfg, ref, 1.0);
  ema_reference_update(st, cfg);
  soft_update_targets(st, cfg);
}

/// Mean of the ensemble references' actions on a batch of states.
inline Matrix esbc_shared_action(const Matrix& states, const std::vector<const MlpParams*>& references) {
  if (references.empty()) throw InvalidInput("esbc_shared_action: empty ensemble");
  Matrix sum = Matrix::Zero(references.front()->output_size(), states.cols());
  for (const MlpParams* ref : references) {
    if (!same_architecture(*ref, *references.front())) throw InvalidInput("ensemble references differ in architecture");
    sum += mlp_forward_batch(*ref, states);
  }
  return sum / static_cast<double>(references.size());
}

inline Matrix esbc_shared_action(const Matrix& states, const std::vector<TrainerState>& trainers) {
  std::vector<const MlpParams*> refs;
  refs.reserve(trainers.size());
  for (const auto& t : trainers) refs.push_back(&t.reference);
  return esbc_shared_action(states, refs);
}

inline void esbc_policy_update(const Batch& batch, TrainerState& st, const Matrix& shared_action,
                               const TrainerConfig& cfg) {
  policy_step(batch, st, cfg, shared_action, 1.0);
  ema_reference_update(st, cfg);
  soft_update_targets(st, cfg);
}

// ---------------------------------------------------------------------------
// Training loops

enum class PolicyMode { kBc, kEbc, kSelfBc, kCriticOnly };

/// Sub-stream indices: pretraining uses 0; self-BC trainer i uses 1 + i.
inline constexpr std::uint64_t kPretrainSubstream = 0;
inline constexpr std::uint64_t kSelfBcSubstream = 1;

struct RunStreams {
  Rng sample;
  Rng noise;

  RunStreams(std::uint64_t seed, std::uint64_t sub)
      : sample(make_stream(seed, Stream::kSample, sub)), noise(make_stream(seed, Stream::kNoise, sub)) {}
};

/// One critic step and, on every policy_update_frequency-th step, one policy
/// step of the given mode (which also moves the targets).
inline void td3_train_step(const OfflineDataset& norm_ds, TrainerState& st, const TrainerConfig& cfg, RunStreams& rs,
                           PolicyMode mode) {
  ++st.step;
  const Batch batch = sample_batch(norm_ds, rs.sample, cfg.batch_size);
  const Matrix noise = draw_target_noise(rs.noise, st.policy.output_size(), static_cast<Eigen::Index>(batch.size()), cfg);
  critic_update(batch, st, critic_target(batch, st, cfg, noise));
  if (st.step % static_cast<std::uint64_t>(cfg.policy_update_frequency) != 0) return;
  switch (mode) {
    case PolicyMode::kBc: policy_update_bc(batch, st, cfg); break;
    case PolicyMode::kEbc: policy_update_ebc(batch, st, cfg); break;
    case PolicyMode::kSelfBc: policy_update_selfbc(batch, st, cfg); break;
    case PolicyMode::kCriticOnly: soft_update_targets(st, cfg); break;
  }
}

using MetricsSink = std::function<void(const MetricsRecord&)>;

/// Evaluation context: raw dataset plus its normalization.
struct EvalContext {
  const OfflineDataset* raw = nullptr;
  const NormStats* stats = nullptr;
  std::uint64_t seed = 0;
};

class Evaluator {
 public:
  Evaluator(EvalContext ctx, const TrainerConfig& cfg, MetricsSink sink)
      : ctx_(ctx), cfg_(cfg), sink_(std::move(sink)), start_(std::chrono::steady_clock::now()) {}

  MetricsRecord evaluate(const MlpParams& policy, std::uint64_t step) const {
    MetricsRecord r;
    r.step = step;
    r.mean_return = evaluate_policy(policy, *ctx_.stats, cfg_.eval_episodes, ctx_.seed);
    r.normalized_score = pointmass_normalized_score(r.mean_return);
    r.dataset_bc_mse = dataset_bc_mse(policy, *ctx_.raw, *ctx_.stats);
    if (cfg_.record_wall_time) {
      r.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }
    return r;
  }

  void maybe_emit(const MlpParams& policy, std::uint64_t step, std::uint64_t total) const {
    if (!sink_) return;
    const bool due = step == 0 || step == total || (cfg_.eval_every > 0 && step % cfg_.eval_every == 0);
    if (due) sink_(evaluate(policy, step));
  }

 private:
  EvalContext ctx_;
  TrainerConfig cfg_;
  MetricsSink sink_;
  std::chrono::steady_clock::time_point start_;
};

/// Behavior cloning of pi_b, then (depending on cfg.pretrainer) TD3+EBC,
/// TD3+BC, or critic-only training with the policy pinned to pi_b.
/// Metrics are emitted during the second phase.
inline TrainerState run_pretrain(const OfflineDataset& raw, const TrainerConfig& cfg, std::uint64_t seed,
                                 MetricsSink sink = {}) {
  cfg.validate();
  raw.validate();
  const NormStats stats = compute_norm_stats(raw);
  const OfflineDataset norm_ds = normalized_copy(raw, stats);
  Rng init = make_stream(seed, Stream::kInit);
  TrainerState st = init_trainer_state(raw.state_dim(), raw.action_dim(), cfg, init);
  RunStreams rs(seed, kPretrainSubstream);

  for (std::uint64_t t = 0; t < cfg.n_bc; ++t) {
    behavior_cloning_update(sample_batch(norm_ds, rs.sample, cfg.batch_size), st);
  }

  PolicyMode mode = PolicyMode::kEbc;
  if (cfg.pretrainer == Pretrainer::kTd3Bc) mode = PolicyMode::kBc;
  if (cfg.pretrainer == Pretrainer::kBcOnly) {
    mode = PolicyMode::kCriticOnly;
    st.policy = st.behavior;
    st.policy_target = st.behavior;
  }

  Evaluator eval({&raw, &stats, seed}, cfg, std::move(sink));
  st.step = 0;
  eval.maybe_emit(st.policy, 0, cfg.n_ebc);
  for (std::uint64_t t = 0; t < cfg.n_ebc; ++t) {
    td3_train_step(norm_ds, st, cfg, rs, mode);
    eval.maybe_emit(st.policy, st.step, cfg.n_ebc);
  }
  st.reference = st.policy;
  return st;
}

/// Hard-copies learned networks into the targets and initializes the
/// reference from the learned policy (or from pi_b).
inline void prepare_selfbc(TrainerState& st, const TrainerConfig& cfg) {
  st.q1_target = st.q1;
  st.q2_target = st.q2;
  st.policy_target = st.policy;
  st.reference = cfg.reference_init == ReferenceInit::kPretrained ? st.policy : st.behavior;
  st.step = 0;
}

inline void check_architecture(const TrainerState& st, const TrainerConfig& cfg, int state_dim, int action_dim) {
  const auto critic_sizes = with_io(state_dim + action_dim, cfg.hidden_sizes, 1);
  const auto actor_sizes = with_io(state_dim, cfg.hidden_sizes, action_dim);
  if (st.q1.layer_sizes != critic_sizes || st.q2.layer_sizes != critic_sizes || st.policy.layer_sizes != actor_sizes ||
      st.behavior.layer_sizes != actor_sizes || st.q1.uses_layer_norm != cfg.critic_layer_norm) {
    throw LoadError(LoadErrorKind::kArchitecture, "checkpoint networks do not match the configured architecture");
  }
}

inline TrainerState run_selfbc(const OfflineDataset& raw, TrainerState st, const TrainerConfig& cfg, std::uint64_t seed,
                               MetricsSink sink = {}) {
  cfg.validate();
  raw.validate();
  check_architecture(st, cfg, raw.state_dim(), raw.action_dim());
  const NormStats stats = compute_norm_stats(raw);
  const OfflineDataset norm_ds = normalized_copy(raw, stats);
  prepare_selfbc(st, cfg);
  RunStreams rs(seed, kSelfBcSubstream);
  Evaluator eval({&raw, &stats, seed}, cfg, std::move(sink));
  eval.maybe_emit(st.policy, 0, cfg.n_selfbc);
  for (std::uint64_t t = 0; t < cfg.n_selfbc; ++t) {
    td3_train_step(norm_ds, st, cfg, rs, PolicyMode::kSelfBc);
    eval.maybe_emit(st.policy, st.step, cfg.n_selfbc);
  }
  return st;
}

/// Observation points inside the ensemble loop, for ordering checks.
struct EsbcHooks {
  // Called right after the shared action is computed (policy steps only).
  std::function<void(std::uint64_t step, const std::vector<TrainerState>&, const Matrix& shared)> after_shared_action;
  // Called after every trainer has finished the iteration.
  std::function<void(std::uint64_t step, const std::vector<TrainerState>&)> after_iteration;
};

/// Ensemble self-BC. Every iteration samples one batch; on policy steps the
/// shared reference action is computed from all (pre-update) references
/// before any trainer updates. Metrics follow trainer 0.
inline std::vector<TrainerState> run_esbc(const OfflineDataset& raw, std::vector<TrainerState> trainers,
                                          const TrainerConfig& cfg, std::uint64_t seed, MetricsSink sink = {},
                                          const EsbcHooks& hooks = {}) {
  cfg.validate();
  raw.validate();
  if (trainers.size() != static_cast<std::size_t>(cfg.n_ens)) {
    throw InvalidInput("run_esbc: got " + std::to_string(trainers.size()) + " checkpoints for n_ens = " +
                       std::to_string(cfg.n_ens));
  }
  for (auto& t : trainers) {
    check_architecture(t, cfg, raw.state_dim(), raw.action_dim());
    prepare_selfbc(t, cfg);
  }
  const NormStats stats = compute_norm_stats(raw);
  const OfflineDataset norm_ds = normalized_copy(raw, stats);
  Rng sample = make_stream(seed, Stream::kSample, kSelfBcSubstream);
  std::vector<Rng> noise;
  for (std::size_t i = 0; i < trainers.size(); ++i) noise.push_back(make_stream(seed, Stream::kNoise, kSelfBcSubstream + i));

  Evaluator eval({&raw, &stats, seed}, cfg, std::move(sink));
  eval.maybe_emit(trainers[0].policy, 0, cfg.n_selfbc);
  const auto freq = static_cast<std::uint64_t>(cfg.policy_update_frequency);
  for (std::uint64_t t = 1; t <= cfg.n_selfbc; ++t) {
    const Batch batch = sample_batch(norm_ds, sample, cfg.batch_size);
    const bool policy_turn = t % freq == 0;
    Matrix shared;
    if (policy_turn) {
      shared = esbc_shared_action(batch.states, trainers);
      if (hooks.after_shared_action) hooks.after_shared_action(t, trainers, shared);
    }
    for (std::size_t i = 0; i < trainers.size(); ++i) {
      TrainerState& st = trainers[i];
      st.step = t;
      const Matrix eps =
          draw_target_noise(noise[i], st.policy.output_size(), static_cast<Eigen::Index>(batch.size()), cfg);
      critic_update(batch, st, critic_target(batch, st, cfg, eps));
      if (policy_turn) esbc_policy_update(batch, st, shared, cfg);
    }
    if (hooks.after_iteration) hooks.after_iteration(t, trainers);
    eval.maybe_emit(trainers[0].policy, t, cfg.n_selfbc);
  }
  return trainers;
}

}  // namespace selfbc
