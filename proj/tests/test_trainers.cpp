#include <gtest/gtest.h>

#include <cmath>

#include "helpers.hpp"
#include "selfbc/checkpoint.hpp"
#include "selfbc/trainers.hpp"

namespace selfbc {
namespace {

using testing::random_matrix;

TrainerConfig small_config() {
  TrainerConfig c;
  c.hidden_sizes = {16, 16};
  c.batch_size = 32;
  c.n_bc = 50;
  c.n_ebc = 40;
  c.n_selfbc = 40;
  c.eval_every = 20;
  c.eval_episodes = 2;
  return c;
}

const OfflineDataset& small_dataset() {
  static const OfflineDataset ds = generate_dataset(BehaviorSpec::medium(), 2000, 1);
  return ds;
}

TrainerState random_state(const TrainerConfig& c, std::uint64_t seed) {
  Rng rng(seed);
  return init_trainer_state(4, 2, c, rng);
}

Batch random_batch(const TrainerConfig& c, std::uint64_t seed) {
  const OfflineDataset norm = normalized_copy(small_dataset(), compute_norm_stats(small_dataset()));
  Rng rng(seed);
  return sample_batch(norm, rng, c.batch_size);
}

// Network with all weights zero and a constant output bias.
void make_constant(MlpParams& p, double value) {
  for (auto v : tensor_views(p)) std::fill(v.begin(), v.end(), 0.0);
  for (auto& g : p.ln_gains) g.setOnes();
  p.biases.back().setConstant(p.output_activation == OutputActivation::kTanhScaled ? std::atanh(value) : value);
}

TEST(Config, DefaultsMatchCommonHyperparameters) {
  const TrainerConfig c;
  EXPECT_EQ(c.alpha, 2.5);
  EXPECT_EQ(c.policy_noise, 0.2);
  EXPECT_EQ(c.noise_clip, 0.5);
  EXPECT_EQ(c.policy_update_frequency, 2);
  EXPECT_EQ(c.batch_size, 256u);
  EXPECT_EQ(c.gamma, 0.99);
  EXPECT_EQ(c.tau, 0.005);
  EXPECT_EQ(c.n_ens, 5);
  EXPECT_TRUE(c.critic_layer_norm);
  EXPECT_NEAR(c.tau_ref(), 5e-5, 1e-20);
  EXPECT_LE(c.tau_ref(), c.tau);
  EXPECT_EQ(c.hidden_sizes, (std::vector<int>{256, 256}));
}

TEST(Config, ValidationRejectsBadValues) {
  TrainerConfig c;
  c.beta = 0.0;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = TrainerConfig{};
  c.gamma = 1.0;
  EXPECT_THROW(c.validate(), InvalidInput);
  c = TrainerConfig{};
  c.n_ens = 0;
  EXPECT_THROW(c.validate(), InvalidInput);
}

TEST(CriticTarget, DoneWithAbsorbingSemantics) {
  TrainerConfig c = small_config();
  c.done_is_timeout = false;
  TrainerState st = random_state(c, 1);
  make_constant(st.q1_target, 5.0);
  make_constant(st.q2_target, 7.0);
  Batch b = random_batch(c, 2);
  b.rewards.setOnes();
  b.dones.setOnes();
  const Vector y = critic_target(b, st, c, Matrix::Zero(2, c.batch_size));
  for (Eigen::Index i = 0; i < y.size(); ++i) EXPECT_EQ(y[i], 1.0);
}

TEST(CriticTarget, HandArithmetic) {
  TrainerConfig c = small_config();
  TrainerState st = random_state(c, 1);
  make_constant(st.q1_target, 2.0);
  make_constant(st.q2_target, 3.0);
  Batch b = random_batch(c, 2);
  b.rewards.setConstant(0.5);
  b.dones.setZero();
  const Vector y = critic_target(b, st, c, Matrix::Zero(2, c.batch_size));
  for (Eigen::Index i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], 2.48, 1e-14);
}

TEST(CriticTarget, TimeLimitDoneStillBootstraps) {
  TrainerConfig c = small_config();
  TrainerState st = random_state(c, 1);
  make_constant(st.q1_target, 2.0);
  make_constant(st.q2_target, 2.0);
  Batch b = random_batch(c, 2);
  b.rewards.setZero();
  b.dones.setOnes();
  const Vector y = critic_target(b, st, c, Matrix::Zero(2, c.batch_size));
  EXPECT_NEAR(y[0], 0.99 * 2.0, 1e-14);
}

TEST(CriticTarget, NoiseIsClipped) {
  EXPECT_EQ(clip_noise(0.9, 0.5), 0.5);
  EXPECT_EQ(clip_noise(-0.9, 0.5), -0.5);
  EXPECT_EQ(clip_noise(0.1, 0.5), 0.1);
  TrainerConfig c;
  Rng rng(3);
  const Matrix eps = draw_target_noise(rng, 2, 5000, c);
  EXPECT_LE(eps.cwiseAbs().maxCoeff(), 0.5);
  EXPECT_NEAR(eps.mean(), 0.0, 0.01);
}

TEST(CriticTarget, NextActionClippedToBounds) {
  TrainerConfig c = small_config();
  TrainerState st = random_state(c, 4);
  Batch b = random_batch(c, 5);
  // Huge noise: after clipping the next action sits on the bound, so the
  // target matches the one computed with the bound directly.
  const Matrix big = Matrix::Constant(2, c.batch_size, 10.0);
  const Vector y = critic_target(b, st, c, big);
  const Matrix bound = Matrix::Constant(2, c.batch_size, 1.0);
  const Matrix x = critic_input(b.next_states, bound);
  const RowVector q = mlp_forward_batch(st.q1_target, x).cwiseMin(mlp_forward_batch(st.q2_target, x)).row(0);
  for (Eigen::Index i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], b.rewards[i] + 0.99 * q[i], 1e-13);
}

TEST(CriticUpdate, ExactFitLeavesParamsUnchanged) {
  TrainerConfig c = small_config();
  TrainerState st = random_state(c, 6);
  make_constant(st.q1, 1.25);
  make_constant(st.q2, 1.25);
  const MlpParams q1 = st.q1, q2 = st.q2;
  const Batch b = random_batch(c, 7);
  critic_update(b, st, Vector::Constant(c.batch_size, 1.25));
  EXPECT_TRUE(bit_identical(st.q1, q1));
  EXPECT_TRUE(bit_identical(st.q2, q2));
}

TEST(CriticUpdate, LossMatchesResidualOracle) {
  TrainerConfig c = small_config();
  const TrainerState st = random_state(c, 8);
  const Batch b = random_batch(c, 9);
  Rng rng(10);
  const Vector y = random_matrix(c.batch_size, 1, rng).col(0);
  double oracle = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) {
    Vector x(6);
    x << b.states.col(i), b.actions.col(i);
    const double r = mlp_forward(st.q1, x)[0] - y[i];
    oracle += r * r;
  }
  oracle /= static_cast<double>(b.size());
  EXPECT_NEAR(critic_loss_gradient(st.q1, b.states, b.actions, y).value, oracle, 1e-12);
  EXPECT_NEAR(critic_loss_value(st.q1, b.states, b.actions, y), oracle, 1e-12);
}

TEST(CriticUpdate, GradientMatchesFiniteDifferences) {
  TrainerConfig c = small_config();
  c.hidden_sizes = {6, 5};
  c.batch_size = 8;
  const TrainerState st = random_state(c, 11);
  const Batch b = random_batch(c, 12);
  Rng rng(13);
  const Vector y = random_matrix(8, 1, rng).col(0);
  const auto g = critic_loss_gradient(st.q1, b.states, b.actions, y);
  const auto fd = finite_diff_grad(st.q1, [&](const MlpParams& q) { return critic_loss_value(q, b.states, b.actions, y); });
  EXPECT_LT(relative_error(g.grad, fd), 1e-6);
}

TEST(BehaviorCloning, ZeroLossAndOffsetLoss) {
  MlpParams p = make_mlp({4, 3, 2});
  make_constant(p, 0.0);
  Matrix s = Matrix::Zero(4, 10);
  Matrix a = Matrix::Zero(2, 10);
  EXPECT_EQ(bc_loss_gradient(p, s, a).value, 0.0);
  const double delta = 0.3;
  make_constant(p, delta);
  EXPECT_NEAR(bc_loss_gradient(p, s, a).value, 2 * delta * delta, 1e-15);
}

TEST(BehaviorCloning, ReducesDatasetMse) {
  TrainerConfig c = small_config();
  TrainerState st = random_state(c, 14);
  const auto& ds = small_dataset();
  const NormStats stats = compute_norm_stats(ds);
  const OfflineDataset norm = normalized_copy(ds, stats);
  const double before = dataset_bc_mse(st.behavior, ds, stats);
  Rng rng(15);
  for (int i = 0; i < 300; ++i) behavior_cloning_update(sample_batch(norm, rng, c.batch_size), st);
  EXPECT_LT(dataset_bc_mse(st.behavior, ds, stats), before);
}

TEST(QNormalizer, Examples) {
  EXPECT_NEAR(q_normalizer_from_values(RowVector::Constant(4, 100.0), 2.5), 0.025, 1e-17);
  EXPECT_EQ(q_normalizer_from_values(RowVector::Constant(4, -1.0), 2.5), 2.5);
  EXPECT_EQ(q_normalizer_from_values(RowVector::Zero(4), 2.5), 2.5);
  Rng rng(1);
  const RowVector q = random_matrix(1, 30, rng, -50, 80).row(0);
  EXPECT_NEAR(q_normalizer_from_values(q, 1.7) * q.cwiseAbs().mean(), 1.7, 1e-14);
}

TEST(QNormalizer, UsesFirstCriticAtPolicyActions) {
  TrainerConfig c = small_config();
  const TrainerState st = random_state(c, 16);
  const Batch b = random_batch(c, 17);
  const Matrix a = mlp_forward_batch(st.policy, b.states);
  const double mean_abs = mlp_forward_batch(st.q1, critic_input(b.states, a)).cwiseAbs().mean();
  EXPECT_NEAR(q_normalizer(b.states, st, 2.5), 2.5 / mean_abs, 1e-14);
}

// Policy objectives with lambda held at the value the update would use.
void expect_policy_gradient_matches_fd(const TrainerState& st, const Batch& b, const Matrix& ref, double beta) {
  const double lambda = q_normalizer(b.states, st, 2.5);
  const auto g = policy_loss_gradient(st.policy, st.q1, b.states, ref, beta, 2.5);
  EXPECT_NEAR(g.lambda, lambda, 1e-15);
  const auto fd = finite_diff_grad(st.policy, [&](const MlpParams& p) {
    return policy_loss_value(p, st.q1, b.states, ref, lambda, beta);
  });
  EXPECT_LT(relative_error(g.grad, fd), 1e-6);
}

TEST(PolicyObjectives, GradientsMatchFiniteDifferences) {
  TrainerConfig c = small_config();
  c.hidden_sizes = {6, 5};
  c.batch_size = 8;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    const TrainerState st = random_state(c, 20 + seed);
    const Batch b = random_batch(c, 30 + seed);
    expect_policy_gradient_matches_fd(st, b, b.actions, 1.0);                                // TD3+BC
    expect_policy_gradient_matches_fd(st, b, b.actions, 0.1);                                // beta-weighted
    expect_policy_gradient_matches_fd(st, b, mlp_forward_batch(st.behavior, b.states), 1.0);  // EBC
    expect_policy_gradient_matches_fd(st, b, mlp_forward_batch(st.reference, b.states), 1.0); // SelfBC
  }
}

TEST(PolicyObjectives, ZeroCriticBcMatchesBehaviorCloningGradient) {
  TrainerConfig c = small_config();
  TrainerState st = random_state(c, 40);
  make_constant(st.q1, 0.0);
  const Batch b = random_batch(c, 41);
  const auto g = policy_loss_gradient(st.policy, st.q1, b.states, b.actions, 1.0, 2.5);
  const auto bc = bc_loss_gradient(st.policy, b.states, b.actions);
  EXPECT_LT(relative_error(g.grad, bc.grad), 1e-14);
}

TEST(PolicyObjectives, EbcAtBehaviorWithZeroCriticHasZeroGradient) {
  TrainerConfig c = small_config();
  TrainerState st = random_state(c, 42);
  make_constant(st.q1, 0.0);
  st.policy = st.behavior;
  const Batch b = random_batch(c, 43);
  const auto g = policy_loss_gradient(st.policy, st.q1, b.states, mlp_forward_batch(st.behavior, b.states), 1.0, 2.5);
  EXPECT_EQ(squared_norm(g.grad), 0.0);
}

TEST(PolicyObjectives, ZeroCriticEbcIsClosedForm) {
  TrainerConfig c = small_config();
  TrainerState st = random_state(c, 44);
  make_constant(st.q1, 0.0);
  const Batch b = random_batch(c, 45);
  const Matrix target = mlp_forward_batch(st.behavior, b.states);
  const auto g = policy_loss_gradient(st.policy, st.q1, b.states, target, 1.0, 2.5);
  // 2 (pi - pi_b) dpi/dtheta averaged = gradient of the mean squared error toward pi_b.
  EXPECT_LT(relative_error(g.grad, mse_loss_gradient(st.policy, b.states, target).grad), 1e-14);
}

TEST(PolicyObjectives, ReferenceParamsNeverEnterGradient) {
  TrainerConfig c = small_config();
  TrainerState st = random_state(c, 46);
  const Batch b = random_batch(c, 47);
  const Matrix ref = mlp_forward_batch(st.reference, b.states);
  const auto g1 = policy_loss_gradient(st.policy, st.q1, b.states, ref, 1.0, 2.5);
  Rng rng(48);
  init_uniform_fan_in(st.reference, rng);
  const auto g2 = policy_loss_gradient(st.policy, st.q1, b.states, ref, 1.0, 2.5);
  EXPECT_TRUE(bit_identical(g1.grad, g2.grad));
  EXPECT_TRUE(same_architecture(g1.grad, st.policy));
}

TEST(PolicyUpdates, BcUpdateMovesTargets) {
  TrainerConfig c = small_config();
  TrainerState st = random_state(c, 50);
  Rng rng(51);
  init_uniform_fan_in(st.q1, rng);
  const TrainerState before = st;
  const Batch b = random_batch(c, 52);
  policy_update_bc(b, st, c);
  EXPECT_FALSE(bit_identical(st.policy, before.policy));
  EXPECT_FALSE(bit_identical(st.q1_target, before.q1_target));
  EXPECT_TRUE(bit_identical(st.reference, before.reference));
  EXPECT_TRUE(bit_identical(st.behavior, before.behavior));
}

TEST(PolicyUpdates, DatasetActionEbcEqualsBcWithUnitBeta) {
  TrainerConfig c = small_config();
  c.beta = 1.0;
  TrainerState a = random_state(c, 53);
  TrainerState b = a;
  const Batch batch = random_batch(c, 54);
  policy_update_bc(batch, a, c);
  policy_step(batch, b, c, batch.actions, 1.0);
  soft_update_targets(b, c);
  EXPECT_TRUE(bit_identical(a.policy, b.policy));
  EXPECT_TRUE(bit_identical(a.policy_target, b.policy_target));
}

TEST(PolicyUpdates, SelfBcFixedPointWithZeroCritic) {
  TrainerConfig c = small_config();
  TrainerState st = random_state(c, 55);
  make_constant(st.q1, 0.0);
  st.reference = st.policy;
  const MlpParams before = st.policy;
  const Batch b = random_batch(c, 56);
  const auto g = policy_loss_gradient(st.policy, st.q1, b.states, mlp_forward_batch(st.reference, b.states), 1.0, 2.5);
  EXPECT_EQ(squared_norm(g.grad), 0.0);
  policy_update_selfbc(b, st, c);
  EXPECT_TRUE(bit_identical(st.policy, before));
  EXPECT_LT(relative_error(st.reference, before), 1e-15);
}

TEST(Ema, SingleStepExample) {
  MlpParams ref = make_mlp({1, 1});
  MlpParams pol = ref;
  pol.weights[0](0, 0) = 1.0;
  soft_update(ref, pol, 5e-5);
  EXPECT_NEAR(ref.weights[0](0, 0), 5e-5, 1e-20);
}

TEST(Ema, ZeroRateAndDisabledFlagLeaveReference) {
  TrainerConfig c = small_config();
  TrainerState st = random_state(c, 57);
  Rng rng(58);
  init_uniform_fan_in(st.policy, rng);
  const MlpParams ref = st.reference;
  c.scale_ref = 0.0;
  ema_reference_update(st, c);
  EXPECT_TRUE(bit_identical(st.reference, ref));
  c.scale_ref = 1.0;
  c.use_ema = false;
  ema_reference_update(st, c);
  EXPECT_TRUE(bit_identical(st.reference, ref));
}

TEST(Ema, GeometricClosedForm) {
  for (double tau_ref : {5e-5, 5e-6}) {
    TrainerConfig c;
    c.tau = 0.005;
    c.scale_ref = tau_ref / c.tau;
    TrainerState st;
    st.policy = testing::random_mlp({3, 4, 2}, 1);
    st.reference = testing::random_mlp({3, 4, 2}, 2);
    const auto theta = flatten(st.policy), theta0 = flatten(st.reference);
    int done = 0;
    for (int k : {1, 10, 1000}) {
      for (; done < k; ++done) ema_reference_update(st, c);
      const double decay = std::pow(1.0 - c.tau_ref(), k);
      const auto now = flatten(st.reference);
      for (std::size_t i = 0; i < now.size(); ++i) {
        EXPECT_NEAR(now[i], decay * theta0[i] + (1 - decay) * theta[i], 1e-12);
      }
    }
  }
}

TEST(Ema, ReferenceStaysInConvexHullOfHistory) {
  TrainerConfig c = small_config();
  c.scale_ref = 0.5;
  const auto& ds = small_dataset();
  const OfflineDataset norm = normalized_copy(ds, compute_norm_stats(ds));
  TrainerState st = random_state(c, 59);
  Rng rng(60);
  init_uniform_fan_in(st.reference, rng);
  RunStreams rs(1, 1);
  const std::size_t n = st.policy.parameter_count();
  std::vector<double> lo = flatten(st.reference), hi = lo;
  for (int t = 0; t < 60; ++t) {
    td3_train_step(norm, st, c, rs, PolicyMode::kSelfBc);
    const auto p = flatten(st.policy), r = flatten(st.reference);
    for (std::size_t i = 0; i < n; i += 7) {
      // The reference moves toward the policy after the policy step, so
      // the hull includes the current policy value.
      lo[i] = std::min(lo[i], p[i]);
      hi[i] = std::max(hi[i], p[i]);
      ASSERT_GE(r[i], lo[i] - 1e-15);
      ASSERT_LE(r[i], hi[i] + 1e-15);
    }
  }
}

TEST(Esbc, SharedActionAverages) {
  std::vector<MlpParams> refs(3, make_mlp({2, 3, 1}, OutputActivation::kTanhScaled));
  make_constant(refs[0], 0.2);
  make_constant(refs[1], 0.4);
  make_constant(refs[2], 0.6);
  std::vector<const MlpParams*> ptrs{&refs[0], &refs[1], &refs[2]};
  const Matrix a = esbc_shared_action(Matrix::Zero(2, 4), ptrs);
  for (Eigen::Index j = 0; j < 4; ++j) EXPECT_NEAR(a(0, j), 0.4, 1e-15);
}

TEST(Esbc, IdenticalReferencesAndSingleton) {
  const MlpParams r = testing::random_mlp({2, 3, 2}, 3, OutputActivation::kTanhScaled);
  Rng rng(4);
  const Matrix s = random_matrix(2, 5, rng);
  const Matrix direct = mlp_forward_batch(r, s);
  EXPECT_EQ(esbc_shared_action(s, {&r}), direct);
  EXPECT_LT((esbc_shared_action(s, {&r, &r, &r}) - direct).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_THROW(esbc_shared_action(s, std::vector<const MlpParams*>{}), InvalidInput);
}

TEST(Esbc, SharedActionCarriesNoGradient) {
  TrainerConfig c = small_config();
  std::vector<TrainerState> ens{random_state(c, 61), random_state(c, 62)};
  const Batch b = random_batch(c, 63);
  const Matrix shared = esbc_shared_action(b.states, ens);
  TrainerState a = ens[0], a2 = ens[0];
  Rng rng(64);
  init_uniform_fan_in(ens[1].reference, rng);
  esbc_policy_update(b, a, shared, c);
  esbc_policy_update(b, a2, shared, c);
  EXPECT_TRUE(bit_identical(a.policy, a2.policy));
}

TEST(Esbc, WrongCheckpointCountThrows) {
  TrainerConfig c = small_config();
  c.n_ens = 3;
  std::vector<TrainerState> two{random_state(c, 1), random_state(c, 2)};
  EXPECT_THROW(run_esbc(small_dataset(), two, c, 0), InvalidInput);
}

TEST(Reductions, EsbcSingletonEqualsSelfBc) {
  TrainerConfig c = small_config();
  c.n_ens = 1;
  const TrainerState pre = run_pretrain(small_dataset(), c, 3);
  std::vector<MetricsRecord> m1, m2;
  const TrainerState a = run_selfbc(small_dataset(), pre, c, 4, [&](const MetricsRecord& r) { m1.push_back(r); });
  const auto e = run_esbc(small_dataset(), {pre}, c, 4, [&](const MetricsRecord& r) { m2.push_back(r); });
  EXPECT_TRUE(bit_identical(a, e[0]));
  EXPECT_EQ(m1, m2);
}

TEST(Reductions, FrozenBehaviorReferenceEqualsEbc) {
  TrainerConfig c = small_config();
  c.scale_ref = 0.0;
  const auto& ds = small_dataset();
  const OfflineDataset norm = normalized_copy(ds, compute_norm_stats(ds));
  TrainerState ebc = random_state(c, 70);
  ebc.reference = ebc.behavior;
  TrainerState self = ebc;
  RunStreams r1(5, 1), r2(5, 1);
  for (int t = 0; t < 40; ++t) {
    td3_train_step(norm, ebc, c, r1, PolicyMode::kEbc);
    td3_train_step(norm, self, c, r2, PolicyMode::kSelfBc);
  }
  EXPECT_TRUE(bit_identical(ebc, self));
}

TEST(Pretrain, BcOnlyPinsPolicyToBehavior) {
  TrainerConfig c = small_config();
  c.pretrainer = Pretrainer::kBcOnly;
  const TrainerState st = run_pretrain(small_dataset(), c, 2);
  EXPECT_TRUE(bit_identical(st.policy, st.behavior));
  EXPECT_TRUE(bit_identical(st.reference, st.behavior));
}

TEST(Pretrain, MetricsCadence) {
  TrainerConfig c = small_config();
  std::vector<std::uint64_t> steps;
  run_pretrain(small_dataset(), c, 2, [&](const MetricsRecord& r) { steps.push_back(r.step); });
  EXPECT_EQ(steps, (std::vector<std::uint64_t>{0, 20, 40}));
}

TEST(Pretrain, DeterministicAndCheckpointRoundTrip) {
  TrainerConfig c = small_config();
  const TrainerState a = run_pretrain(small_dataset(), c, 9);
  const TrainerState b = run_pretrain(small_dataset(), c, 9);
  EXPECT_TRUE(bit_identical(a, b));
  const TrainerState back = checkpoint_from_bytes(checkpoint_to_bytes(a));
  EXPECT_TRUE(bit_identical(a, back));
  EXPECT_TRUE(bit_identical(a.policy_opt.second_moment, back.policy_opt.second_moment));
  EXPECT_EQ(a.q1_opt.step_count, back.q1_opt.step_count);
}

TEST(SelfBc, PreparationCopiesPolicyIntoReference) {
  TrainerConfig c = small_config();
  TrainerState st = run_pretrain(small_dataset(), c, 9);
  Rng rng(1);
  init_uniform_fan_in(st.reference, rng);
  prepare_selfbc(st, c);
  EXPECT_TRUE(bit_identical(st.reference, st.policy));
  EXPECT_TRUE(bit_identical(st.q1_target, st.q1));
  EXPECT_TRUE(bit_identical(st.policy_target, st.policy));
  c.reference_init = ReferenceInit::kBehavior;
  prepare_selfbc(st, c);
  EXPECT_TRUE(bit_identical(st.reference, st.behavior));
}

TEST(SelfBc, WithoutEmaReferenceIsConstant) {
  TrainerConfig c = small_config();
  c.use_ema = false;
  const TrainerState pre = run_pretrain(small_dataset(), c, 9);
  const TrainerState st = run_selfbc(small_dataset(), pre, c, 1);
  EXPECT_TRUE(bit_identical(st.reference, pre.policy));
  EXPECT_FALSE(bit_identical(st.policy, pre.policy));
}

TEST(SelfBc, ArchitectureMismatchIsLoadError) {
  TrainerConfig c = small_config();
  const TrainerState pre = run_pretrain(small_dataset(), c, 9);
  c.hidden_sizes = {8, 8};
  try {
    run_selfbc(small_dataset(), pre, c, 1);
    FAIL();
  } catch (const LoadError& e) {
    EXPECT_EQ(e.kind(), LoadErrorKind::kArchitecture);
  }
}

TEST(Esbc, SharedActionComputedBeforeAnyReferenceMoves) {
  TrainerConfig c = small_config();
  c.n_ens = 3;
  c.scale_ref = 1.0;
  std::vector<TrainerState> pre;
  for (std::uint64_t s = 0; s < 3; ++s) pre.push_back(run_pretrain(small_dataset(), c, 20 + s));
  std::vector<MlpParams> last;
  for (const auto& t : pre) last.push_back(t.policy);  // references right after preparation
  int checks = 0;
  EsbcHooks hooks;
  hooks.after_shared_action = [&](std::uint64_t, const std::vector<TrainerState>& ts, const Matrix&) {
    for (std::size_t i = 0; i < ts.size(); ++i) ASSERT_TRUE(bit_identical(ts[i].reference, last[i]));
    ++checks;
  };
  hooks.after_iteration = [&](std::uint64_t, const std::vector<TrainerState>& ts) {
    for (std::size_t i = 0; i < ts.size(); ++i) last[i] = ts[i].reference;
  };
  run_esbc(small_dataset(), pre, c, 7, {}, hooks);
  EXPECT_EQ(checks, 20);
}

TEST(Checkpoint, CorruptionDetected) {
  TrainerConfig c = small_config();
  auto bytes = checkpoint_to_bytes(random_state(c, 1));
  auto kind_of = [](const std::vector<std::uint8_t>& b) {
    try {
      checkpoint_from_bytes(b);
    } catch (const LoadError& e) {
      return e.kind();
    }
    ADD_FAILURE() << "load unexpectedly succeeded";
    return LoadErrorKind::kIo;
  };
  auto magic = bytes;
  magic[1] = 'X';
  EXPECT_EQ(kind_of(magic), LoadErrorKind::kMagicMismatch);
  auto version = bytes;
  version[4] = 9;
  EXPECT_EQ(kind_of(version), LoadErrorKind::kVersionMismatch);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_EQ(kind_of(truncated), LoadErrorKind::kTruncated);
  auto flipped = bytes;
  flipped[bytes.size() - 3] ^= 0x40;
  EXPECT_EQ(kind_of(flipped), LoadErrorKind::kChecksum);
}

}  // namespace
}  // namespace selfbc
