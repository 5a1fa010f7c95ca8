#pragma once

// Exact tabular checks of the policy-improvement machinery: policy
// evaluation, discounted visitation, CPI mixtures, performance difference,
// visitation and improvement bounds, and the weighted-BC gradient identity.
//
// Expectation convention: rho denotes the unnormalized discounted visitation
// (sums to 1/(1-gamma)); expectations over states use the normalized
// d = (1-gamma) * rho, and bound terms carry an explicit 1/(1-gamma).

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "selfbc/envs.hpp"
#include "selfbc/error.hpp"
#include "selfbc/numerics.hpp"
#include "selfbc/rng.hpp"

namespace selfbc {

struct TabularPolicy {
  Matrix probs;  // n_states x n_actions, row-stochastic

  int n_states() const { return static_cast<int>(probs.rows()); }
  int n_actions() const { return static_cast<int>(probs.cols()); }

  void validate(double tol = 1e-12) const {
    if (probs.size() == 0) throw InvalidInput("empty policy");
    if ((probs.array() < 0.0).any()) throw InvalidInput("policy has negative entries");
    for (Eigen::Index s = 0; s < probs.rows(); ++s) {
      if (std::abs(probs.row(s).sum() - 1.0) > tol) throw InvalidInput("policy row does not sum to 1");
    }
  }
};

inline void check_compatible(const FiniteMdp& mdp, const TabularPolicy& pi) {
  mdp.validate(1e-9);
  pi.validate(1e-9);
  if (pi.n_states() != mdp.n_states || pi.n_actions() != mdp.n_actions) {
    throw InvalidInput("policy shape does not match mdp");
  }
}

inline TabularPolicy random_tabular_policy(Rng& rng, int n_states, int n_actions) {
  TabularPolicy pi{Matrix(n_states, n_actions)};
  std::vector<double> row(n_actions);
  for (int s = 0; s < n_states; ++s) {
    detail::fill_flat_dirichlet(rng, row.data(), n_actions);
    for (int a = 0; a < n_actions; ++a) pi.probs(s, a) = row[a];
  }
  return pi;
}

/// P_pi[s][s'] = sum_a pi(a|s) P(s'|s,a).
inline Matrix policy_transition(const FiniteMdp& mdp, const TabularPolicy& pi) {
  Matrix P = Matrix::Zero(mdp.n_states, mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      for (int t = 0; t < mdp.n_states; ++t) P(s, t) += pi.probs(s, a) * mdp.prob(s, a, t);
    }
  }
  return P;
}

inline Vector policy_reward(const FiniteMdp& mdp, const TabularPolicy& pi) {
  Vector r = Vector::Zero(mdp.n_states);
  for (int s = 0; s < mdp.n_states; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) r[s] += pi.probs(s, a) * mdp.reward(s, a);
  }
  return r;
}

inline Vector rho0_vector(const FiniteMdp& mdp) {
  return Eigen::Map<const Vector>(mdp.rho0.data(), mdp.n_states);
}

struct EvalResult {
  Matrix Q;
  Vector V;
  Matrix A;
  double J = 0.0;
};

inline EvalResult exact_eval(const FiniteMdp& mdp, const TabularPolicy& pi) {
  check_compatible(mdp, pi);
  const int S = mdp.n_states;
  const Matrix M = Matrix::Identity(S, S) - mdp.gamma * policy_transition(mdp, pi);
  Eigen::FullPivLU<Matrix> lu(M);
  if (!lu.isInvertible()) throw NumericalError("policy evaluation system is singular");
  EvalResult out;
  out.V = lu.solve(policy_reward(mdp, pi));
  out.Q.resize(S, mdp.n_actions);
  for (int s = 0; s < S; ++s) {
    for (int a = 0; a < mdp.n_actions; ++a) {
      double next = 0.0;
      for (int t = 0; t < S; ++t) next += mdp.prob(s, a, t) * out.V[t];
      out.Q(s, a) = mdp.reward(s, a) + mdp.gamma * next;
    }
  }
  out.A = out.Q.colwise() - out.V;
  out.J = rho0_vector(mdp).dot(out.V);
  return out;
}

/// Unnormalized rho = (I - gamma P_pi^T)^{-1} rho0.
inline Vector visitation(const FiniteMdp& mdp, const TabularPolicy& pi) {
  check_compatible(mdp, pi);
  const int S = mdp.n_states;
  const Matrix M = Matrix::Identity(S, S) - mdp.gamma * policy_transition(mdp, pi).transpose();
  Eigen::FullPivLU<Matrix> lu(M);
  if (!lu.isInvertible()) throw NumericalError("visitation system is singular");
  return lu.solve(rho0_vector(mdp));
}

inline Vector normalized_visitation(const FiniteMdp& mdp, const TabularPolicy& pi) {
  return (1.0 - mdp.gamma) * visitation(mdp, pi);
}

struct IdentitySides {
  double lhs = 0.0;
  double rhs = 0.0;
};

/// lhs = J(pi') - J(pi); rhs = sum_s rho_{pi'}(s) sum_a pi'(a|s) A_pi(s,a).
inline IdentitySides perf_diff_identity(const FiniteMdp& mdp, const TabularPolicy& pi_prime, const TabularPolicy& pi) {
  const EvalResult ep = exact_eval(mdp, pi_prime);
  const EvalResult e = exact_eval(mdp, pi);
  const Vector rho = visitation(mdp, pi_prime);
  IdentitySides out;
  out.lhs = ep.J - e.J;
  out.rhs = rho.dot(pi_prime.probs.cwiseProduct(e.A).rowwise().sum());
  return out;
}

inline double tv_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size() || p.empty()) throw InvalidInput("tv_divergence: size mismatch");
  double sp = 0.0, sq = 0.0, l1 = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) throw InvalidInput("tv_divergence: negative probability");
    sp += p[i];
    sq += q[i];
    l1 += std::abs(p[i] - q[i]);
  }
  if (std::abs(sp - 1.0) > 1e-9 || std::abs(sq - 1.0) > 1e-9) throw InvalidInput("tv_divergence: not a distribution");
  return std::min(1.0, 0.5 * l1);
}

/// Per-state TV between two policies.
inline Vector policy_tv(const TabularPolicy& p, const TabularPolicy& q) {
  if (p.probs.rows() != q.probs.rows() || p.probs.cols() != q.probs.cols()) throw InvalidInput("policy shape mismatch");
  Vector out(p.n_states());
  for (int s = 0; s < p.n_states(); ++s) {
    const RowVector a = p.probs.row(s), b = q.probs.row(s);
    out[s] = tv_divergence(std::span<const double>(a.data(), a.size()), std::span<const double>(b.data(), b.size()));
  }
  return out;
}

inline TabularPolicy cpi_mixture(const TabularPolicy& pi_k, const TabularPolicy& pi_prime, double kappa) {
  if (!(kappa >= 0.0 && kappa <= 1.0)) throw InvalidInput("kappa must lie in [0, 1]");
  if (pi_k.probs.rows() != pi_prime.probs.rows() || pi_k.probs.cols() != pi_prime.probs.cols()) {
    throw InvalidInput("policy shape mismatch");
  }
  return {(1.0 - kappa) * pi_k.probs + kappa * pi_prime.probs};
}

inline void check_state_distribution(const FiniteMdp& mdp, const Vector& rho_D) {
  if (rho_D.size() != mdp.n_states) throw InvalidInput("rho_D has wrong length");
  if ((rho_D.array() < 0.0).any() || std::abs(rho_D.sum() - 1.0) > 1e-9) {
    throw InvalidInput("rho_D is not a distribution");
  }
}

/// sum_s rho_D(s) sum_a pi(a|s) A_{pi_k}(s,a) for a normalized rho_D.
inline double j_delta_hat(const FiniteMdp& mdp, const Vector& rho_D, const TabularPolicy& pi, const TabularPolicy& pi_k) {
  check_state_distribution(mdp, rho_D);
  check_compatible(mdp, pi);
  const EvalResult ek = exact_eval(mdp, pi_k);
  return rho_D.dot(pi.probs.cwiseProduct(ek.A).rowwise().sum());
}

struct LinearitySides {
  double mixture = 0.0;  // j_delta_hat of the kappa-mixture
  double scaled = 0.0;   // kappa * j_delta_hat(pi')
};

inline LinearitySides j_delta_hat_linearity(const FiniteMdp& mdp, const Vector& rho_D, const TabularPolicy& pi_k,
                                            const TabularPolicy& pi_prime, double kappa) {
  return {j_delta_hat(mdp, rho_D, cpi_mixture(pi_k, pi_prime, kappa), pi_k),
          kappa * j_delta_hat(mdp, rho_D, pi_prime, pi_k)};
}

struct Lemma4Sides {
  double lhs_l1 = 0.0;
  double rhs_bound = 0.0;
  bool holds(double tol = 1e-9) const { return lhs_l1 <= rhs_bound + tol; }
};

/// ||rho_pi - rho_{pi_k}||_1 against (2 gamma/(1-gamma)) E_{d_{pi_k}}[TV(pi||pi_k)] / (1-gamma).
inline Lemma4Sides lemma4_check(const FiniteMdp& mdp, const TabularPolicy& pi, const TabularPolicy& pi_k) {
  const double g = mdp.gamma;
  Lemma4Sides out;
  out.lhs_l1 = (visitation(mdp, pi) - visitation(mdp, pi_k)).lpNorm<1>();
  out.rhs_bound = 2.0 * g / (1.0 - g) * normalized_visitation(mdp, pi_k).dot(policy_tv(pi, pi_k)) / (1.0 - g);
  return out;
}

struct BoundTerms {
  double j_delta = 0.0;          // J(pi) - J(pi_k), pi the kappa-mixture
  double j_delta_hat = 0.0;      // sum_s rho_D(s) sum_a pi(a|s) A_{pi_k}(s,a)
  double term_prime_ref = 0.0;   // pi' vs pi_k drift
  double term_ref_behavior = 0.0;
  double term_behavior_approx = 0.0;
  double A_sup = 0.0;
  double kappa = 0.0;
  double rhs = 0.0;

  double margin() const { return j_delta - rhs; }
  bool holds(double tol = 1e-9) const { return j_delta >= rhs - tol; }
};

/// Improvement lower bound for the CPI step pi = (1-kappa) pi_k + kappa pi':
///   rhs = j_delta_hat/(1-gamma)
///       - (2 gamma kappa^2/(1-gamma)^2) A_sup E_{d_{pi_k}}[TV(pi'||pi_k)]
///       - (2 gamma kappa  /(1-gamma)^2) A_sup E_{d_{pi_b}}[TV(pi_k||pi_b)]
///       - (  gamma kappa  /(1-gamma)^2) A_sup E_{s~rho_D, a~pi_b_D}[1 - pi_b(a|s)]
/// with A_sup = 2 max|A_{pi_k}| max_s TV(pi'||pi_k). pi_b_D is the
/// dataset's action distribution and defaults to pi_b.
inline BoundTerms theorem1_check(const FiniteMdp& mdp, const TabularPolicy& pi_b, const TabularPolicy& pi_k,
                                 const TabularPolicy& pi_prime, double kappa, const Vector& rho_D,
                                 const std::optional<TabularPolicy>& pi_b_D = std::nullopt) {
  check_compatible(mdp, pi_b);
  check_compatible(mdp, pi_k);
  check_compatible(mdp, pi_prime);
  check_state_distribution(mdp, rho_D);
  const TabularPolicy& data_pi = pi_b_D ? *pi_b_D : pi_b;
  check_compatible(mdp, data_pi);

  const double g = mdp.gamma;
  const double h = 1.0 / (1.0 - g);
  const TabularPolicy pi = cpi_mixture(pi_k, pi_prime, kappa);
  const EvalResult ek = exact_eval(mdp, pi_k);

  BoundTerms b;
  b.kappa = kappa;
  b.j_delta = exact_eval(mdp, pi).J - ek.J;
  b.j_delta_hat = rho_D.dot(pi.probs.cwiseProduct(ek.A).rowwise().sum());
  const Vector tv_prime = policy_tv(pi_prime, pi_k);
  b.A_sup = 2.0 * ek.A.cwiseAbs().maxCoeff() * tv_prime.maxCoeff();
  b.term_prime_ref = 2.0 * g * kappa * kappa * h * h * b.A_sup * normalized_visitation(mdp, pi_k).dot(tv_prime);
  b.term_ref_behavior =
      2.0 * g * kappa * h * h * b.A_sup * normalized_visitation(mdp, pi_b).dot(policy_tv(pi_k, pi_b));
  const Vector miss = data_pi.probs.cwiseProduct((1.0 - pi_b.probs.array()).matrix()).rowwise().sum();
  b.term_behavior_approx = g * kappa * h * h * b.A_sup * rho_D.dot(miss);
  b.rhs = b.j_delta_hat * h - b.term_prime_ref - b.term_ref_behavior - b.term_behavior_approx;
  return b;
}

struct WeightedBehaviorSpec {
  Matrix weights;         // n_states x n_actions, nonnegative
  TabularPolicy pi_b_D;   // dataset action distribution
  Matrix action_values;   // scalar action assigned to each (s, a)

  /// C(s) = sum_a pi_b_D(a|s) w(s,a).
  Vector normalizer() const { return pi_b_D.probs.cwiseProduct(weights).rowwise().sum(); }
};

struct WbcGradients {
  Vector grad_wbc;
  Vector grad_ewbc;
};

/// Per-state gradients with respect to the policy output pi(s):
///   grad_wbc  = (1/C) sum_a pi_b_D(a|s) w(s,a) 2 (pi(s) - a)
///   grad_ewbc = 2 (pi(s) - E_{q_w}[a]),  q_w(a|s) = pi_b_D(a|s) w(s,a) / C
inline WbcGradients wbc_equivalence_check(const WeightedBehaviorSpec& spec, const Vector& policy_scalar) {
  spec.pi_b_D.validate(1e-9);
  const Eigen::Index S = spec.pi_b_D.probs.rows(), A = spec.pi_b_D.probs.cols();
  if (spec.weights.rows() != S || spec.weights.cols() != A || spec.action_values.rows() != S ||
      spec.action_values.cols() != A || policy_scalar.size() != S) {
    throw InvalidInput("weighted behavior spec shape mismatch");
  }
  if ((spec.weights.array() < 0.0).any()) throw InvalidInput("weights must be nonnegative");
  const Vector C = spec.normalizer();
  WbcGradients out{Vector(S), Vector(S)};
  for (Eigen::Index s = 0; s < S; ++s) {
    if (!(C[s] > 0.0)) throw InvalidInput("weighted behavior normalizer is zero at state " + std::to_string(s));
    double wbc = 0.0, mean = 0.0;
    for (Eigen::Index a = 0; a < A; ++a) {
      const double m = spec.pi_b_D.probs(s, a) * spec.weights(s, a);
      wbc += m * 2.0 * (policy_scalar[s] - spec.action_values(s, a));
      mean += m / C[s] * spec.action_values(s, a);
    }
    out.grad_wbc[s] = wbc / C[s];
    out.grad_ewbc[s] = 2.0 * (policy_scalar[s] - mean);
  }
  return out;
}

struct TheoryInstance {
  std::uint64_t seed = 0;
  FiniteMdp mdp;
  TabularPolicy pi_b, pi_k, pi_prime;
  Vector rho_D;
};

/// Random configuration: 2-8 states, 2-4 actions, gamma in [0.5, 0.99],
/// random pi_b, pi_k, pi' and rho_D = d_{pi_b}.
inline TheoryInstance random_theory_instance(std::uint64_t seed) {
  Rng rng = make_stream(seed, Stream::kMdp, 1);
  TheoryInstance inst;
  inst.seed = seed;
  const int S = 2 + static_cast<int>(rng.index(7));
  const int A = 2 + static_cast<int>(rng.index(3));
  const double gamma = rng.uniform(0.5, 0.99);
  inst.mdp = random_finite_mdp(seed, S, A, gamma);
  inst.pi_b = random_tabular_policy(rng, S, A);
  inst.pi_k = random_tabular_policy(rng, S, A);
  inst.pi_prime = random_tabular_policy(rng, S, A);
  inst.rho_D = normalized_visitation(inst.mdp, inst.pi_b);
  return inst;
}

/// Runs every exact check on `instances` random configurations for each
/// kappa and returns the JSON report (per-instance rows plus pass counts).
inline nlohmann::json verify_theory(int instances, const std::vector<double>& kappas, std::uint64_t seed0 = 0) {
  if (instances < 1) throw InvalidInput("instances must be at least 1");
  if (kappas.empty()) throw InvalidInput("at least one kappa is required");
  for (double k : kappas) {
    if (!(k >= 0.0 && k <= 1.0)) throw InvalidInput("kappa must lie in [0, 1]");
  }
  nlohmann::json rows = nlohmann::json::array();
  int n_checks = 0, n_pass = 0, n_probe = 0;
  bool all_pass = true;
  for (int i = 0; i < instances; ++i) {
    const TheoryInstance inst = random_theory_instance(seed0 + static_cast<std::uint64_t>(i));
    const auto id = perf_diff_identity(inst.mdp, inst.pi_prime, inst.pi_k);
    const auto l4 = lemma4_check(inst.mdp, inst.pi_prime, inst.pi_k);
    for (double kappa : kappas) {
      const BoundTerms b = theorem1_check(inst.mdp, inst.pi_b, inst.pi_k, inst.pi_prime, kappa, inst.rho_D);
      const auto lin = j_delta_hat_linearity(inst.mdp, inst.rho_D, inst.pi_k, inst.pi_prime, kappa);
      const bool probe_applies = b.rhs > 0.0;
      const bool probe_ok = !probe_applies || b.j_delta > 0.0;
      const bool pass = b.holds() && l4.holds() && std::abs(id.lhs - id.rhs) < 1e-9 &&
                        std::abs(lin.mixture - lin.scaled) < 1e-12 && probe_ok;
      n_probe += probe_applies ? 1 : 0;
      ++n_checks;
      n_pass += pass ? 1 : 0;
      all_pass = all_pass && pass;
      rows.push_back({{"seed", inst.seed},
                      {"n_states", inst.mdp.n_states},
                      {"n_actions", inst.mdp.n_actions},
                      {"gamma", inst.mdp.gamma},
                      {"kappa", kappa},
                      {"lhs", b.j_delta},
                      {"rhs", b.rhs},
                      {"margin", b.margin()},
                      {"j_delta_hat", b.j_delta_hat},
                      {"A_sup", b.A_sup},
                      {"lemma4_lhs", l4.lhs_l1},
                      {"lemma4_rhs", l4.rhs_bound},
                      {"identity_gap", std::abs(id.lhs - id.rhs)},
                      {"linearity_gap", std::abs(lin.mixture - lin.scaled)},
                      {"small_kappa_regime", kappa <= 5e-5},
                      {"pass", pass}});
    }
  }
  return {{"convention", "expectations under normalized d = (1-gamma) rho; bound terms carry explicit 1/(1-gamma)"},
          {"instances", instances},
          {"kappas", kappas},
          {"checks", n_checks},
          {"passed", n_pass},
          {"positive_rhs_probes", n_probe},
          {"all_pass", all_pass},
          {"results", rows}};
}

}  // namespace selfbc
