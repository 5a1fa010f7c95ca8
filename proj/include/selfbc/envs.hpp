#pragma once

// Desk-scale environments: a 2-D point mass for training experiments and
// random finite MDPs for exact verification.

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "selfbc/error.hpp"
#include "selfbc/rng.hpp"

namespace selfbc {

namespace pointmass {

inline constexpr int kHorizon = 100;
inline constexpr int kStateDim = 4;
inline constexpr int kActionDim = 2;
inline constexpr double kDamping = 0.95;
inline constexpr double kAccelGain = 0.1;
inline constexpr double kDt = 0.1;
inline constexpr double kActionCost = 0.01;
inline constexpr std::array<double, 2> kGoal{0.8, 0.8};

// Mean undiscounted return of the random and expert scripted controllers over
// 100 episodes drawn from seed kReferenceSeed (see reference_returns()).
inline constexpr std::uint64_t kReferenceSeed = 20240601;
inline constexpr int kReferenceEpisodes = 100;
inline constexpr double kRandomRef = -128.8483922621341;
inline constexpr double kExpertRef = -15.607645039064742;

}  // namespace pointmass

using Vec2 = std::array<double, 2>;

struct PointMassState {
  Vec2 position{0.0, 0.0};
  Vec2 velocity{0.0, 0.0};
  int t = 0;

  // Network observation: (px, py, vx, vy).
  std::array<double, pointmass::kStateDim> observation() const {
    return {position[0], position[1], velocity[0], velocity[1]};
  }

  bool operator==(const PointMassState&) const = default;
};

struct StepResult {
  PointMassState state;
  double reward = 0.0;
  bool done = false;
};

inline PointMassState pointmass_reset(Rng& rng) {
  PointMassState s;
  s.position[0] = rng.uniform(-1.0, 1.0);
  s.position[1] = rng.uniform(-1.0, 1.0);
  return s;
}

inline StepResult pointmass_step(const PointMassState& s, const Vec2& action) {
  for (double a : action) {
    if (!(a >= -1.0 && a <= 1.0)) throw InvalidInput("point-mass action outside [-1, 1]");
  }
  if (s.t >= pointmass::kHorizon) throw InvalidInput("point-mass episode already finished");
  StepResult r;
  r.state.t = s.t + 1;
  double dist2 = 0.0;
  for (int i = 0; i < 2; ++i) {
    r.state.velocity[i] = std::clamp(pointmass::kDamping * s.velocity[i] + pointmass::kAccelGain * action[i], -1.0, 1.0);
    r.state.position[i] = std::clamp(s.position[i] + pointmass::kDt * r.state.velocity[i], -1.0, 1.0);
    const double d = r.state.position[i] - pointmass::kGoal[i];
    dist2 += d * d;
  }
  const double effort = action[0] * action[0] + action[1] * action[1];
  r.reward = -std::sqrt(dist2) - pointmass::kActionCost * effort;
  r.done = r.state.t == pointmass::kHorizon;
  return r;
}

enum class BehaviorKind { kExpert, kMedium, kRandom };

inline std::string to_string(BehaviorKind k) {
  switch (k) {
    case BehaviorKind::kExpert: return "expert";
    case BehaviorKind::kMedium: return "medium";
    case BehaviorKind::kRandom: return "random";
  }
  return "unknown";
}

inline BehaviorKind behavior_kind_from_string(const std::string& s) {
  if (s == "expert") return BehaviorKind::kExpert;
  if (s == "medium") return BehaviorKind::kMedium;
  if (s == "random") return BehaviorKind::kRandom;
  throw InvalidInput("unknown behavior kind '" + s + "'");
}

struct BehaviorSpec {
  BehaviorKind kind = BehaviorKind::kExpert;
  double noise_sigma = 0.0;
  double random_action_prob = 0.0;

  static BehaviorSpec expert() { return {BehaviorKind::kExpert, 0.0, 0.0}; }
  static BehaviorSpec medium() { return {BehaviorKind::kMedium, 0.3, 0.2}; }
  static BehaviorSpec random() { return {BehaviorKind::kRandom, 0.0, 1.0}; }

  static BehaviorSpec of(BehaviorKind k) {
    switch (k) {
      case BehaviorKind::kExpert: return expert();
      case BehaviorKind::kMedium: return medium();
      case BehaviorKind::kRandom: return random();
    }
    return expert();
  }

  void validate() const {
    if (!(noise_sigma >= 0.0)) throw InvalidInput("noise_sigma must be nonnegative");
    if (!(random_action_prob >= 0.0 && random_action_prob <= 1.0)) {
      throw InvalidInput("random_action_prob must lie in [0, 1]");
    }
  }
};

inline Vec2 expert_action(const PointMassState& s) {
  Vec2 a;
  for (int i = 0; i < 2; ++i) {
    a[i] = std::clamp(3.0 * (pointmass::kGoal[i] - s.position[i]) - 1.0 * s.velocity[i], -1.0, 1.0);
  }
  return a;
}

/// Dataset-collection policy. Draw order for medium: two normals (noise),
/// one uniform (replacement test), then two uniforms only if replaced.
inline Vec2 scripted_controller(const BehaviorSpec& spec, const PointMassState& s, Rng& rng) {
  spec.validate();
  switch (spec.kind) {
    case BehaviorKind::kExpert: return expert_action(s);
    case BehaviorKind::kRandom: return {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
    case BehaviorKind::kMedium: {
      Vec2 a = expert_action(s);
      for (double& x : a) x += spec.noise_sigma * rng.normal();
      if (rng.uniform() < spec.random_action_prob) a = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)};
      for (double& x : a) x = std::clamp(x, -1.0, 1.0);
      return a;
    }
  }
  return {0.0, 0.0};
}

/// Mean undiscounted return of a scripted controller over n episodes.
inline double controller_mean_return(const BehaviorSpec& spec, int episodes, std::uint64_t seed) {
  Rng rng = make_stream(seed, Stream::kEval);
  double total = 0.0;
  for (int e = 0; e < episodes; ++e) {
    PointMassState s = pointmass_reset(rng);
    for (int t = 0; t < pointmass::kHorizon; ++t) {
      auto r = pointmass_step(s, scripted_controller(spec, s, rng));
      total += r.reward;
      s = r.state;
    }
  }
  return total / episodes;
}

struct ReferenceReturns {
  double random_ref;
  double expert_ref;
};

/// Recomputes the frozen normalization references from rollouts.
inline ReferenceReturns reference_returns() {
  return {controller_mean_return(BehaviorSpec::random(), pointmass::kReferenceEpisodes, pointmass::kReferenceSeed),
          controller_mean_return(BehaviorSpec::expert(), pointmass::kReferenceEpisodes, pointmass::kReferenceSeed)};
}

/// Finite MDP with P[s][a][s'] stored flat as P[(s * n_actions + a) * n_states + s'].
struct FiniteMdp {
  int n_states = 0;
  int n_actions = 0;
  std::vector<double> P;
  std::vector<double> r;  // r[s * n_actions + a]
  double gamma = 0.9;
  std::vector<double> rho0;

  double prob(int s, int a, int next) const {
    return P[(static_cast<std::size_t>(s) * n_actions + a) * n_states + next];
  }
  double reward(int s, int a) const { return r[static_cast<std::size_t>(s) * n_actions + a]; }

  void validate(double tol = 1e-12) const {
    if (n_states <= 0 || n_actions <= 0) throw InvalidInput("mdp needs positive state and action counts");
    if (!(gamma >= 0.0 && gamma < 1.0)) throw InvalidInput("mdp gamma must lie in [0, 1)");
    if (P.size() != static_cast<std::size_t>(n_states) * n_actions * n_states ||
        r.size() != static_cast<std::size_t>(n_states) * n_actions || rho0.size() != static_cast<std::size_t>(n_states)) {
      throw InvalidInput("mdp array sizes inconsistent");
    }
    for (int s = 0; s < n_states; ++s) {
      for (int a = 0; a < n_actions; ++a) {
        double sum = 0.0;
        for (int t = 0; t < n_states; ++t) {
          if (prob(s, a, t) < 0.0) throw InvalidInput("negative transition probability");
          sum += prob(s, a, t);
        }
        if (std::abs(sum - 1.0) > tol) throw InvalidInput("transition row does not sum to 1");
      }
    }
    double sum = 0.0;
    for (double p : rho0) {
      if (p < 0.0) throw InvalidInput("negative initial probability");
      sum += p;
    }
    if (std::abs(sum - 1.0) > tol) throw InvalidInput("rho0 does not sum to 1");
  }
};

namespace detail {

// Dirichlet(1, ..., 1) via normalized Exp(1) draws.
inline void fill_flat_dirichlet(Rng& rng, double* out, int n) {
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    out[i] = -std::log(1.0 - rng.uniform());
    sum += out[i];
  }
  for (int i = 0; i < n; ++i) out[i] /= sum;
}

}  // namespace detail

/// Random MDP: each P[s][a] ~ Dirichlet(1), r ~ U[0,1], rho0 ~ Dirichlet(1).
/// Draw order: all transition rows, then rewards, then rho0.
inline FiniteMdp random_finite_mdp(std::uint64_t seed, int n_states, int n_actions, double gamma) {
  if (n_states < 2 || n_states > 12) throw InvalidInput("n_states must lie in [2, 12]");
  if (n_actions < 2 || n_actions > 6) throw InvalidInput("n_actions must lie in [2, 6]");
  if (!(gamma > 0.0 && gamma < 1.0)) throw InvalidInput("gamma must lie in (0, 1)");
  Rng rng = make_stream(seed, Stream::kMdp);
  FiniteMdp m;
  m.n_states = n_states;
  m.n_actions = n_actions;
  m.gamma = gamma;
  m.P.resize(static_cast<std::size_t>(n_states) * n_actions * n_states);
  for (int sa = 0; sa < n_states * n_actions; ++sa) {
    detail::fill_flat_dirichlet(rng, m.P.data() + static_cast<std::size_t>(sa) * n_states, n_states);
  }
  m.r.resize(static_cast<std::size_t>(n_states) * n_actions);
  for (double& x : m.r) x = rng.uniform();
  m.rho0.resize(n_states);
  detail::fill_flat_dirichlet(rng, m.rho0.data(), n_states);
  return m;
}

}  // namespace selfbc
