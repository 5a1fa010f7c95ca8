#pragma once

// Dense feed-forward networks with hand-written reverse mode, Adam, and
// Polyak averaging. Batches are column-major: one sample per column.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "selfbc/error.hpp"
#include "selfbc/rng.hpp"

namespace selfbc {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

enum class OutputActivation { kIdentity, kTanhScaled };

inline constexpr double kLayerNormEps = 1e-5;

/// Parameters of a fully connected ReLU network.
///
/// weights[l] maps layer l to layer l+1 and has shape
/// layer_sizes[l+1] x layer_sizes[l]. When uses_layer_norm is set, every
/// hidden pre-activation is layer-normalized (with a learned gain and bias)
/// before the ReLU. The same type holds gradients and Adam moments.
struct MlpParams {
  std::vector<int> layer_sizes;
  std::vector<Matrix> weights;
  std::vector<Vector> biases;
  std::vector<Vector> ln_gains;
  std::vector<Vector> ln_biases;
  OutputActivation output_activation = OutputActivation::kIdentity;
  double action_scale = 1.0;
  bool uses_layer_norm = false;

  std::size_t num_affine() const { return weights.size(); }
  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l + 1 < layer_sizes.size(); ++l) {
      n += static_cast<std::size_t>(layer_sizes[l] + 1) * static_cast<std::size_t>(layer_sizes[l + 1]);
    }
    if (uses_layer_norm) {
      for (std::size_t l = 1; l + 1 < layer_sizes.size(); ++l) n += 2 * static_cast<std::size_t>(layer_sizes[l]);
    }
    return n;
  }
};

/// Zero-valued network of the given architecture.
inline MlpParams make_mlp(std::vector<int> layer_sizes, OutputActivation output = OutputActivation::kIdentity,
                          double action_scale = 1.0, bool layer_norm = false) {
  if (layer_sizes.size() < 2) throw InvalidInput("mlp needs at least an input and an output layer");
  for (int s : layer_sizes) {
    if (s <= 0) throw InvalidInput("layer sizes must be positive");
  }
  if (output == OutputActivation::kTanhScaled && !(action_scale > 0.0)) {
    throw InvalidInput("action_scale must be positive");
  }
  MlpParams p;
  p.layer_sizes = std::move(layer_sizes);
  p.output_activation = output;
  p.action_scale = action_scale;
  p.uses_layer_norm = layer_norm;
  for (std::size_t l = 0; l + 1 < p.layer_sizes.size(); ++l) {
    p.weights.push_back(Matrix::Zero(p.layer_sizes[l + 1], p.layer_sizes[l]));
    p.biases.push_back(Vector::Zero(p.layer_sizes[l + 1]));
  }
  if (layer_norm) {
    for (std::size_t l = 1; l + 1 < p.layer_sizes.size(); ++l) {
      p.ln_gains.push_back(Vector::Ones(p.layer_sizes[l]));
      p.ln_biases.push_back(Vector::Zero(p.layer_sizes[l]));
    }
  }
  return p;
}

inline bool same_architecture(const MlpParams& a, const MlpParams& b) {
  return a.layer_sizes == b.layer_sizes && a.uses_layer_norm == b.uses_layer_norm &&
         a.output_activation == b.output_activation;
}

/// Every tensor as a flat span, in canonical order: for each affine layer
/// weight then bias, followed by each layer-norm gain then bias.
inline std::vector<std::span<double>> tensor_views(MlpParams& p) {
  std::vector<std::span<double>> views;
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    views.emplace_back(p.weights[l].data(), static_cast<std::size_t>(p.weights[l].size()));
    views.emplace_back(p.biases[l].data(), static_cast<std::size_t>(p.biases[l].size()));
  }
  for (std::size_t l = 0; l < p.ln_gains.size(); ++l) {
    views.emplace_back(p.ln_gains[l].data(), static_cast<std::size_t>(p.ln_gains[l].size()));
    views.emplace_back(p.ln_biases[l].data(), static_cast<std::size_t>(p.ln_biases[l].size()));
  }
  return views;
}

inline std::vector<std::span<const double>> tensor_views(const MlpParams& p) {
  std::vector<std::span<const double>> views;
  for (auto v : tensor_views(const_cast<MlpParams&>(p))) views.emplace_back(v.data(), v.size());
  return views;
}

inline std::vector<double> flatten(const MlpParams& p) {
  std::vector<double> out;
  out.reserve(p.parameter_count());
  for (auto v : tensor_views(p)) out.insert(out.end(), v.begin(), v.end());
  return out;
}

inline void assign_flat(MlpParams& p, std::span<const double> flat) {
  if (flat.size() != p.parameter_count()) throw InvalidInput("flat parameter vector has wrong length");
  std::size_t offset = 0;
  for (auto v : tensor_views(p)) {
    std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(offset), v.size(), v.begin());
    offset += v.size();
  }
}

inline MlpParams zeros_like(const MlpParams& p) {
  MlpParams z = p;
  for (auto v : tensor_views(z)) std::fill(v.begin(), v.end(), 0.0);
  return z;
}

/// Weights and biases ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in)); layer-norm
/// gains 1 and biases 0. Draw order is the canonical tensor order.
inline void init_uniform_fan_in(MlpParams& p, Rng& rng) {
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(p.layer_sizes[l]));
    for (Eigen::Index i = 0; i < p.weights[l].size(); ++i) p.weights[l].data()[i] = rng.uniform(-bound, bound);
    for (Eigen::Index i = 0; i < p.biases[l].size(); ++i) p.biases[l][i] = rng.uniform(-bound, bound);
  }
  for (std::size_t l = 0; l < p.ln_gains.size(); ++l) {
    p.ln_gains[l].setOnes();
    p.ln_biases[l].setZero();
  }
}

/// Intermediate values kept by a forward pass for the backward pass.
struct ForwardCache {
  std::vector<Matrix> layer_inputs;  // input of each affine layer
  std::vector<Matrix> pre_relu;      // hidden values fed to ReLU (after layer-norm if any)
  std::vector<Matrix> normalized;    // layer-norm x-hat per hidden layer
  std::vector<RowVector> inv_std;    // layer-norm 1/sigma per hidden layer and sample
  Matrix output;
};

inline void check_input(const MlpParams& p, const Matrix& x) {
  if (x.rows() != p.input_size()) {
    throw InvalidInput("mlp input has " + std::to_string(x.rows()) + " rows, expected " +
                       std::to_string(p.input_size()));
  }
}

/// Batched forward pass; x is input_size x batch.
inline Matrix mlp_forward_batch(const MlpParams& p, const Matrix& x, ForwardCache* cache = nullptr) {
  check_input(p, x);
  if (cache) {
    cache->layer_inputs.clear();
    cache->pre_relu.clear();
    cache->normalized.clear();
    cache->inv_std.clear();
  }
  Matrix h = x;
  const std::size_t n = p.weights.size();
  for (std::size_t l = 0; l < n; ++l) {
    Matrix z = p.weights[l] * h;
    z.colwise() += p.biases[l];
    if (cache) cache->layer_inputs.push_back(std::move(h));
    if (l + 1 == n) {
      if (p.output_activation == OutputActivation::kTanhScaled) z = p.action_scale * z.array().tanh();
      if (cache) cache->output = z;
      return z;
    }
    if (p.uses_layer_norm) {
      const RowVector mean = z.colwise().mean();
      z.rowwise() -= mean;
      const RowVector inv_std =
          ((z.array().square().colwise().sum() / static_cast<double>(z.rows())) + kLayerNormEps).rsqrt().matrix();
      z = z.array().rowwise() * inv_std.array();
      if (cache) {
        cache->normalized.push_back(z);
        cache->inv_std.push_back(inv_std);
      }
      z = z.array().colwise() * p.ln_gains[l].array();
      z.colwise() += p.ln_biases[l];
    }
    if (cache) cache->pre_relu.push_back(z);
    h = z.cwiseMax(0.0);
  }
  return h;  // unreachable: n >= 1
}

inline Vector mlp_forward(const MlpParams& p, const Vector& x) {
  if (x.size() != p.input_size()) {
    throw InvalidInput("mlp input has length " + std::to_string(x.size()) + ", expected " +
                       std::to_string(p.input_size()));
  }
  return mlp_forward_batch(p, Matrix(x)).col(0);
}

struct BackwardResult {
  MlpParams grads;   // empty architecture when parameter gradients were not requested
  Matrix input_grad;
};

/// Reverse pass for d(loss)/d(output) = output_grad (output_size x batch).
/// With want_param_grads=false only the input gradient is formed.
inline BackwardResult mlp_backward(const MlpParams& p, const ForwardCache& cache, const Matrix& output_grad,
                                   bool want_param_grads = true) {
  const std::size_t n = p.weights.size();
  if (cache.layer_inputs.size() != n) throw InvalidInput("forward cache does not match network");
  if (output_grad.rows() != p.output_size() || output_grad.cols() != cache.output.cols()) {
    throw InvalidInput("output gradient shape mismatch");
  }
  BackwardResult result;
  if (want_param_grads) result.grads = zeros_like(p);

  Matrix g = output_grad;
  if (p.output_activation == OutputActivation::kTanhScaled) {
    // out = s*tanh(z)  =>  dz = dout * (s - out^2/s)
    g = g.array() * (p.action_scale - cache.output.array().square() / p.action_scale);
  }
  for (std::size_t l = n; l-- > 0;) {
    if (want_param_grads) {
      result.grads.weights[l].noalias() = g * cache.layer_inputs[l].transpose();
      result.grads.biases[l] = g.rowwise().sum();
    }
    Matrix gin = p.weights[l].transpose() * g;
    if (l == 0) {
      result.input_grad = std::move(gin);
      break;
    }
    const std::size_t h = l - 1;
    gin = (cache.pre_relu[h].array() > 0.0).select(gin, 0.0);
    if (p.uses_layer_norm) {
      const Matrix& xhat = cache.normalized[h];
      if (want_param_grads) {
        result.grads.ln_gains[h] = (gin.array() * xhat.array()).rowwise().sum();
        result.grads.ln_biases[h] = gin.rowwise().sum();
      }
      Matrix dxhat = gin.array().colwise() * p.ln_gains[h].array();
      const double width = static_cast<double>(dxhat.rows());
      const RowVector sum_d = dxhat.colwise().sum();
      const RowVector sum_dx = (dxhat.array() * xhat.array()).colwise().sum();
      Matrix dz = width * dxhat.array();
      dz.rowwise() -= sum_d;
      dz -= (xhat.array().rowwise() * sum_dx.array()).matrix();
      gin = dz.array().rowwise() * (cache.inv_std[h].array() / width);
    }
    g = std::move(gin);
  }
  return result;
}

/// Adam optimizer state; moments share the parameter architecture.
struct AdamState {
  std::uint64_t step_count = 0;
  MlpParams first_moment;
  MlpParams second_moment;
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

inline AdamState make_adam(const MlpParams& p, double lr = 3e-4, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8) {
  if (!(lr > 0) || !(beta1 > 0) || !(beta2 > 0) || !(eps > 0)) throw InvalidInput("adam hyperparameters must be positive");
  return AdamState{0, zeros_like(p), zeros_like(p), lr, beta1, beta2, eps};
}

/// One bias-corrected Adam step, in place.
inline void adam_step(MlpParams& params, const MlpParams& grads, AdamState& state) {
  if (!same_architecture(params, grads) || !same_architecture(params, state.first_moment) ||
      !same_architecture(params, state.second_moment)) {
    throw InvalidInput("adam: parameter, gradient, and moment shapes differ");
  }
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  auto pv = tensor_views(params);
  auto gv = tensor_views(grads);
  auto mv = tensor_views(state.first_moment);
  auto vv = tensor_views(state.second_moment);
  for (std::size_t k = 0; k < pv.size(); ++k) {
    double* p = pv[k].data();
    const double* g = gv[k].data();
    double* m = mv[k].data();
    double* v = vv[k].data();
    for (std::size_t i = 0; i < pv[k].size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      p[i] -= state.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
    }
  }
}

/// target <- tau * source + (1 - tau) * target.
inline void soft_update(MlpParams& target, const MlpParams& source, double tau) {
  if (!(tau >= 0.0 && tau <= 1.0)) throw InvalidInput("soft_update: tau must lie in [0, 1]");
  if (!same_architecture(target, source)) throw InvalidInput("soft_update: architectures differ");
  auto tv = tensor_views(target);
  auto sv = tensor_views(source);
  for (std::size_t k = 0; k < tv.size(); ++k) {
    for (std::size_t i = 0; i < tv[k].size(); ++i) tv[k][i] = tau * sv[k][i] + (1.0 - tau) * tv[k][i];
  }
}

using ScalarLoss = std::function<double(const MlpParams&)>;

/// Central differences, one coordinate at a time.
inline MlpParams finite_diff_grad(const MlpParams& params, const ScalarLoss& loss, double h = 1e-6) {
  if (!(h > 0)) throw InvalidInput("finite difference step must be positive");
  MlpParams probe = params;
  MlpParams grad = zeros_like(params);
  auto pv = tensor_views(probe);
  auto gv = tensor_views(grad);
  for (std::size_t k = 0; k < pv.size(); ++k) {
    for (std::size_t i = 0; i < pv[k].size(); ++i) {
      const double saved = pv[k][i];
      pv[k][i] = saved + h;
      const double up = loss(probe);
      pv[k][i] = saved - h;
      const double down = loss(probe);
      pv[k][i] = saved;
      gv[k][i] = (up - down) / (2.0 * h);
    }
  }
  return grad;
}

struct LossAndGrad {
  double value = 0.0;
  MlpParams grad;
};

/// mean over columns of ||f(x) - y||^2 and its parameter gradient.
inline LossAndGrad mse_loss_gradient(const MlpParams& p, const Matrix& inputs, const Matrix& targets) {
  ForwardCache cache;
  const Matrix out = mlp_forward_batch(p, inputs, &cache);
  if (targets.rows() != out.rows() || targets.cols() != out.cols()) throw InvalidInput("target shape mismatch");
  const Matrix diff = out - targets;
  const double batch = static_cast<double>(inputs.cols());
  LossAndGrad r;
  r.value = diff.squaredNorm() / batch;
  r.grad = mlp_backward(p, cache, (2.0 / batch) * diff).grads;
  return r;
}

inline double squared_norm(const MlpParams& p) {
  double s = 0.0;
  for (auto v : tensor_views(p)) {
    for (double x : v) s += x * x;
  }
  return s;
}

/// ||a - b|| / max(||a||, ||b||, floor), over all tensors.
inline double relative_error(const MlpParams& a, const MlpParams& b, double floor = 1e-12) {
  if (!same_architecture(a, b)) throw InvalidInput("relative_error: architectures differ");
  double diff = 0.0;
  auto av = tensor_views(a);
  auto bv = tensor_views(b);
  for (std::size_t k = 0; k < av.size(); ++k) {
    for (std::size_t i = 0; i < av[k].size(); ++i) diff += (av[k][i] - bv[k][i]) * (av[k][i] - bv[k][i]);
  }
  const double scale = std::max({std::sqrt(squared_norm(a)), std::sqrt(squared_norm(b)), floor});
  return std::sqrt(diff) / scale;
}

inline bool bit_identical(const MlpParams& a, const MlpParams& b) {
  if (!same_architecture(a, b)) return false;
  auto av = tensor_views(a);
  auto bv = tensor_views(b);
  for (std::size_t k = 0; k < av.size(); ++k) {
    if (std::memcmp(av[k].data(), bv[k].data(), av[k].size() * sizeof(double)) != 0) return false;
  }
  return a.action_scale == b.action_scale;
}

}  // namespace selfbc
