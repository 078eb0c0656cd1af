#pragma once

// Shallow neural network: input -> tanh hidden layer -> softmax, trained
// with mini-batch SGD on mean cross-entropy.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <vector>

#include "tracelens/dataset.hpp"
#include "tracelens/random.hpp"

namespace tracelens::models {

/// Weight matrices are row-major: w1 is hidden x d, w2 is classes x hidden.
/// Inputs enter the hidden layer as (x - shift) * scale; fitting sets
/// shift/scale to the training mean and inverse standard deviation.
struct MlpParams {
  std::size_t input = 0;
  std::size_t hidden = 0;
  std::size_t classes = 0;
  std::vector<double> w1, b1, w2, b2;
  std::vector<double> shift, scale;

  bool operator==(const MlpParams&) const = default;
};

struct MlpOptions {
  int hidden = 32;
  int epochs = 20;
  double learning_rate = 0.01;
  int batch_size = 32;
  /// Step size in epoch e is learning_rate / (1 + decay * e).
  double decay = 0.5;
};

/// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
inline MlpParams mlp_init(std::size_t input, std::size_t hidden, std::size_t classes, Rng& rng) {
  MlpParams p{.input = input, .hidden = hidden, .classes = classes};
  const double limit1 = std::sqrt(6.0 / static_cast<double>(input + hidden));
  const double limit2 = std::sqrt(6.0 / static_cast<double>(hidden + classes));
  p.w1.resize(hidden * input);
  for (auto& w : p.w1) w = rng.uniform(-limit1, limit1);
  p.b1.assign(hidden, 0.0);
  p.w2.resize(classes * hidden);
  for (auto& w : p.w2) w = rng.uniform(-limit2, limit2);
  p.b2.assign(classes, 0.0);
  p.shift.assign(input, 0.0);
  p.scale.assign(input, 1.0);
  return p;
}

namespace detail {

struct MlpActivations {
  std::vector<double> input;
  std::vector<double> hidden;
  std::vector<double> proba;
};

inline void softmax_in_place(std::span<double> z) {
  const double top = *std::max_element(z.begin(), z.end());
  double total = 0.0;
  for (auto& v : z) {
    v = std::exp(v - top);
    total += v;
  }
  for (auto& v : z) v /= total;
}

inline void mlp_forward(const MlpParams& p, std::span<const double> x, MlpActivations& act) {
  act.input.resize(p.input);
  for (std::size_t j = 0; j < p.input; ++j) act.input[j] = (x[j] - p.shift[j]) * p.scale[j];
  act.hidden.resize(p.hidden);
  act.proba.resize(p.classes);
  for (std::size_t h = 0; h < p.hidden; ++h) {
    const double* w = p.w1.data() + h * p.input;
    double a = p.b1[h];
    for (std::size_t j = 0; j < p.input; ++j) a += w[j] * act.input[j];
    act.hidden[h] = std::tanh(a);
  }
  for (std::size_t c = 0; c < p.classes; ++c) {
    const double* w = p.w2.data() + c * p.hidden;
    double z = p.b2[c];
    for (std::size_t h = 0; h < p.hidden; ++h) z += w[h] * act.hidden[h];
    act.proba[c] = z;
  }
  softmax_in_place(act.proba);
}

/// Adds d(loss)/d(params) for one sample to `grad` (same layout as the
/// params) and returns the sample's cross-entropy.
inline double mlp_accumulate(const MlpParams& p, std::span<const double> x, int label,
                             MlpActivations& act, std::vector<double>& delta_hidden,
                             MlpParams& grad) {
  mlp_forward(p, x, act);
  const auto y = static_cast<std::size_t>(label);
  const double loss = -std::log(std::max(act.proba[y], 1e-300));
  delta_hidden.assign(p.hidden, 0.0);
  for (std::size_t c = 0; c < p.classes; ++c) {
    const double dz = act.proba[c] - (c == y ? 1.0 : 0.0);
    grad.b2[c] += dz;
    double* gw = grad.w2.data() + c * p.hidden;
    const double* w = p.w2.data() + c * p.hidden;
    for (std::size_t h = 0; h < p.hidden; ++h) {
      gw[h] += dz * act.hidden[h];
      delta_hidden[h] += dz * w[h];
    }
  }
  for (std::size_t h = 0; h < p.hidden; ++h) {
    const double da = delta_hidden[h] * (1.0 - act.hidden[h] * act.hidden[h]);
    grad.b1[h] += da;
    double* gw = grad.w1.data() + h * p.input;
    for (std::size_t j = 0; j < p.input; ++j) gw[j] += da * act.input[j];
  }
  return loss;
}

inline MlpParams zeros_like(const MlpParams& p) {
  MlpParams g{.input = p.input, .hidden = p.hidden, .classes = p.classes,
              .shift = p.shift, .scale = p.scale};
  g.w1.assign(p.w1.size(), 0.0);
  g.b1.assign(p.b1.size(), 0.0);
  g.w2.assign(p.w2.size(), 0.0);
  g.b2.assign(p.b2.size(), 0.0);
  return g;
}

template <typename Params, typename Fn>
void for_each_array(Params& p, Fn&& fn) {
  fn(p.w1);
  fn(p.b1);
  fn(p.w2);
  fn(p.b2);
}

/// Per-feature mean and inverse population standard deviation; constant
/// features keep scale 1.
inline void fit_standardization(const LabeledDataset& train, MlpParams& p) {
  const auto n = static_cast<double>(train.size());
  std::vector<double> mean(train.dim, 0.0), var(train.dim, 0.0);
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto x = train.row(i);
    for (std::size_t j = 0; j < train.dim; ++j) mean[j] += x[j];
  }
  for (auto& v : mean) v /= n;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto x = train.row(i);
    for (std::size_t j = 0; j < train.dim; ++j) var[j] += (x[j] - mean[j]) * (x[j] - mean[j]);
  }
  for (std::size_t j = 0; j < train.dim; ++j) {
    const double sd = std::sqrt(var[j] / n);
    p.shift[j] = mean[j];
    p.scale[j] = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
}

}  // namespace detail

inline std::vector<double> mlp_predict(const MlpParams& p, std::span<const double> x) {
  detail::MlpActivations act;
  detail::mlp_forward(p, x, act);
  return act.proba;
}

/// Mean cross-entropy over `batch` and its gradient.
inline double mlp_loss_and_gradient(const MlpParams& p, const LabeledDataset& batch,
                                    MlpParams* grad) {
  MlpParams g = detail::zeros_like(p);
  detail::MlpActivations act;
  std::vector<double> delta;
  double loss = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    loss += detail::mlp_accumulate(p, batch.row(i), batch.labels[i], act, delta, g);
  }
  const double scale = 1.0 / static_cast<double>(batch.size());
  if (grad != nullptr) {
    detail::for_each_array(g, [scale](std::vector<double>& a) {
      for (auto& v : a) v *= scale;
    });
    *grad = std::move(g);
  }
  return loss * scale;
}

inline MlpParams mlp_fit(const LabeledDataset& train, const MlpOptions& options,
                         std::uint64_t seed) {
  Rng init_rng(seed);
  MlpParams p = mlp_init(train.dim, static_cast<std::size_t>(options.hidden),
                         static_cast<std::size_t>(train.classes), init_rng);
  if (options.epochs == 0) return p;
  detail::fit_standardization(train, p);
  Rng order_rng(derive_seed(seed, 1));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  MlpParams grad = detail::zeros_like(p);
  detail::MlpActivations act;
  std::vector<double> delta;
  const auto batch = static_cast<std::size_t>(options.batch_size);

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    const double rate = options.learning_rate / (1.0 + options.decay * epoch);
    order_rng.shuffle(std::span(order));
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t end = std::min(start + batch, order.size());
      detail::for_each_array(grad, [](std::vector<double>& a) {
        std::fill(a.begin(), a.end(), 0.0);
      });
      for (std::size_t i = start; i < end; ++i) {
        detail::mlp_accumulate(p, train.row(order[i]), train.labels[order[i]], act, delta, grad);
      }
      const double step = rate / static_cast<double>(end - start);
      auto update = [step](std::vector<double>& w, const std::vector<double>& g) {
        for (std::size_t k = 0; k < w.size(); ++k) w[k] -= step * g[k];
      };
      update(p.w1, grad.w1);
      update(p.b1, grad.b1);
      update(p.w2, grad.w2);
      update(p.b2, grad.b2);
    }
  }
  return p;
}

/// Largest relative disagreement between the analytic gradient and a
/// central difference with step `epsilon`, over every parameter.
inline double mlp_gradient_check(const MlpParams& params, const LabeledDataset& batch,
                                 double epsilon) {
  MlpParams analytic;
  mlp_loss_and_gradient(params, batch, &analytic);
  MlpParams probe = params;
  double worst = 0.0;

  auto check_array = [&](std::vector<double>& values, const std::vector<double>& grads) {
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      values[k] = saved + epsilon;
      const double up = mlp_loss_and_gradient(probe, batch, nullptr);
      values[k] = saved - epsilon;
      const double down = mlp_loss_and_gradient(probe, batch, nullptr);
      values[k] = saved;
      const double numeric = (up - down) / (2.0 * epsilon);
      const double a = grads[k];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-12});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  };
  check_array(probe.w1, analytic.w1);
  check_array(probe.b1, analytic.b1);
  check_array(probe.w2, analytic.w2);
  check_array(probe.b2, analytic.b2);
  return worst;
}

}  // namespace tracelens::models
