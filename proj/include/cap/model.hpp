#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cap/errors.hpp"
#include "cap/types.hpp"

namespace cap {

enum class Architecture { Linear, OneHiddenLayer };

struct ArchitectureSpec {
  Architecture kind = Architecture::Linear;
  Index input_dim = 0;
  Index num_classes = 0;
  Index hidden_units = 0;  // used by OneHiddenLayer only

  bool operator==(const ArchitectureSpec&) const = default;
};

// Dense layer stack: weights[l] is (out x in), biases[l] has length out.
template <typename Scalar>
struct Parameters {
  std::vector<Matrix<Scalar>> weights;
  std::vector<Vector<Scalar>> biases;

  std::size_t num_layers() const { return weights.size(); }

  Parameters zeros_like() const {
    Parameters out;
    for (const auto& w : weights) out.weights.push_back(Matrix<Scalar>::Zero(w.rows(), w.cols()));
    for (const auto& b : biases) out.biases.push_back(Vector<Scalar>::Zero(b.size()));
    return out;
  }

  bool same_shape(const Parameters& other) const {
    if (weights.size() != other.weights.size() || biases.size() != other.biases.size()) return false;
    for (std::size_t l = 0; l < weights.size(); ++l) {
      if (weights[l].rows() != other.weights[l].rows() || weights[l].cols() != other.weights[l].cols())
        return false;
      if (biases[l].size() != other.biases[l].size()) return false;
    }
    return true;
  }

  Index size() const {
    Index total = 0;
    for (const auto& w : weights) total += w.size();
    for (const auto& b : biases) total += b.size();
    return total;
  }

  bool all_finite() const {
    for (const auto& w : weights)
      if (!w.allFinite()) return false;
    for (const auto& b : biases)
      if (!b.allFinite()) return false;
    return true;
  }

  // Visits every tensor as (name, mutable flat view).
  template <typename Fn>
  void for_each_tensor(Fn&& fn) {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      fn("layer" + std::to_string(l) + ".weight", weights[l].reshaped());
      fn("layer" + std::to_string(l) + ".bias", biases[l].reshaped());
    }
  }
  template <typename Fn>
  void for_each_tensor(Fn&& fn) const {
    for (std::size_t l = 0; l < weights.size(); ++l) {
      fn("layer" + std::to_string(l) + ".weight", weights[l].reshaped());
      fn("layer" + std::to_string(l) + ".bias", biases[l].reshaped());
    }
  }

  // Flat copy in layer order (weight column-major, then bias).
  Vector<Scalar> flatten() const {
    Vector<Scalar> flat(size());
    Index offset = 0;
    for_each_tensor([&](const std::string&, auto view) {
      flat.segment(offset, view.size()) = view;
      offset += view.size();
    });
    return flat;
  }

  void assign_flat(const Vector<Scalar>& flat) {
    if (flat.size() != size()) throw ShapeError("flat parameter vector has the wrong length");
    Index offset = 0;
    for_each_tensor([&](const std::string&, auto view) {
      view = flat.segment(offset, view.size());
      offset += view.size();
    });
  }
};

template <typename Scalar>
struct ClassifierModel {
  ArchitectureSpec spec;
  Parameters<Scalar> params;

  Index input_dim() const { return spec.input_dim; }
  Index num_classes() const { return spec.num_classes; }
};

using Model = ClassifierModel<double>;

inline void validate(const ArchitectureSpec& spec) {
  if (spec.input_dim < 1) throw ConfigError("model.input_dim", "must be >= 1");
  if (spec.num_classes < 1) throw ConfigError("model.num_classes", "must be >= 1");
  if (spec.kind == Architecture::OneHiddenLayer && spec.hidden_units < 1)
    throw ConfigError("model.hidden_units", "must be >= 1 for a one-hidden-layer model");
}

// Weights uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], biases zero.
template <typename Scalar = double>
ClassifierModel<Scalar> initialize_model(const ArchitectureSpec& spec, std::uint64_t seed) {
  validate(spec);
  std::vector<std::pair<Index, Index>> shapes;  // (out, in)
  if (spec.kind == Architecture::Linear) {
    shapes.emplace_back(spec.num_classes, spec.input_dim);
  } else {
    shapes.emplace_back(spec.hidden_units, spec.input_dim);
    shapes.emplace_back(spec.num_classes, spec.hidden_units);
  }
  std::mt19937_64 rng(seed);
  ClassifierModel<Scalar> model;
  model.spec = spec;
  for (auto [out, in] : shapes) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    std::uniform_real_distribution<double> uniform(-bound, bound);
    Matrix<Scalar> w(out, in);
    for (Index c = 0; c < in; ++c)
      for (Index r = 0; r < out; ++r) w(r, c) = Scalar(uniform(rng));
    model.params.weights.push_back(std::move(w));
    model.params.biases.push_back(Vector<Scalar>::Zero(out));
  }
  return model;
}

template <typename Scalar>
Matrix<Scalar> sigmoid(const Matrix<Scalar>& logits) {
  return logits.unaryExpr([](Scalar z) {
    using std::exp;
    if (z >= Scalar(0)) return Scalar(1) / (Scalar(1) + exp(-z));
    const Scalar e = exp(z);
    return e / (Scalar(1) + e);
  });
}

// Pre-activations of every layer; the last entry holds the output logits.
template <typename Scalar, typename Derived>
std::vector<Matrix<Scalar>> pre_activations(const ClassifierModel<Scalar>& model,
                                            const Eigen::MatrixBase<Derived>& features) {
  if (features.cols() != model.input_dim())
    throw ShapeError("forward: feature width " + std::to_string(features.cols()) +
                     " does not match model input dimension " + std::to_string(model.input_dim()));
  std::vector<Matrix<Scalar>> z;
  Matrix<Scalar> input = features.template cast<Scalar>();
  for (std::size_t l = 0; l < model.params.num_layers(); ++l) {
    Matrix<Scalar> out = input * model.params.weights[l].transpose();
    out.rowwise() += model.params.biases[l].transpose();
    z.push_back(out);
    if (l + 1 < model.params.num_layers()) input = out.cwiseMax(Scalar(0));
  }
  return z;
}

// B x d features -> B x q probabilities, sigmoid per class.
template <typename Scalar, typename Derived>
Matrix<Scalar> forward(const ClassifierModel<Scalar>& model, const Eigen::MatrixBase<Derived>& features) {
  return sigmoid<Scalar>(pre_activations(model, features).back());
}

// Parameter gradients of a scalar objective, given its gradient with respect
// to the B x q output probabilities.
template <typename Scalar, typename DerivedX, typename DerivedG>
Parameters<Scalar> backward(const ClassifierModel<Scalar>& model,
                            const Eigen::MatrixBase<DerivedX>& features,
                            const Eigen::MatrixBase<DerivedG>& grad_probabilities) {
  if (grad_probabilities.rows() != features.rows() || grad_probabilities.cols() != model.num_classes())
    throw ShapeError("backward: gradient is " + std::to_string(grad_probabilities.rows()) + "x" +
                     std::to_string(grad_probabilities.cols()) + ", expected " +
                     std::to_string(features.rows()) + "x" + std::to_string(model.num_classes()));
  const auto z = pre_activations(model, features);
  const Matrix<Scalar> probabilities = sigmoid<Scalar>(z.back());

  Parameters<Scalar> grads = model.params.zeros_like();
  Matrix<Scalar> delta = grad_probabilities.template cast<Scalar>().cwiseProduct(
      probabilities.cwiseProduct((Scalar(1) - probabilities.array()).matrix()));

  for (std::size_t l = model.params.num_layers(); l-- > 0;) {
    const Matrix<Scalar> input =
        l == 0 ? Matrix<Scalar>(features.template cast<Scalar>()) : Matrix<Scalar>(z[l - 1].cwiseMax(Scalar(0)));
    grads.weights[l].noalias() = delta.transpose() * input;
    grads.biases[l] = delta.colwise().sum().transpose();
    if (l > 0) {
      Matrix<Scalar> upstream = delta * model.params.weights[l];
      delta = upstream.cwiseProduct(
          z[l - 1].unaryExpr([](Scalar v) { return v > Scalar(0) ? Scalar(1) : Scalar(0); }));
    }
  }
  return grads;
}

enum class OptimizerKind { Sgd, Adam };

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::Adam;
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  // Linear warm-up of the learning rate over this many steps (0 = constant).
  std::uint64_t warmup_steps = 0;

  double rate_at(std::uint64_t step) const {
    if (warmup_steps == 0 || step >= warmup_steps) return learning_rate;
    return learning_rate * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
};

template <typename Scalar>
struct OptimizerState {
  OptimizerSettings settings;
  std::uint64_t step = 0;
  Parameters<Scalar> first_moment;   // empty for SGD
  Parameters<Scalar> second_moment;  // empty for SGD
};

template <typename Scalar>
OptimizerState<Scalar> make_optimizer(const OptimizerSettings& settings, const ClassifierModel<Scalar>& model) {
  if (!(settings.learning_rate >= 0.0) || !std::isfinite(settings.learning_rate))
    throw ConfigError("learning_rate", "must be a finite value >= 0");
  OptimizerState<Scalar> state;
  state.settings = settings;
  if (settings.kind == OptimizerKind::Adam) {
    state.first_moment = model.params.zeros_like();
    state.second_moment = model.params.zeros_like();
  }
  return state;
}

// SGD: theta -= lr * g. Adam: bias-corrected moment estimates.
template <typename Scalar>
void optimizer_step(OptimizerState<Scalar>& state, ClassifierModel<Scalar>& model,
                    const Parameters<Scalar>& gradients) {
  if (!gradients.same_shape(model.params)) throw ShapeError("optimizer_step: gradient shapes differ from the model");
  gradients.for_each_tensor([](const std::string& name, auto view) {
    if (!view.allFinite()) throw NumericError("optimizer_step: non-finite gradient in " + name);
  });

  const Scalar lr = Scalar(state.settings.rate_at(state.step));
  ++state.step;
  if (state.settings.kind == OptimizerKind::Sgd) {
    for (std::size_t l = 0; l < model.params.num_layers(); ++l) {
      model.params.weights[l] -= lr * gradients.weights[l];
      model.params.biases[l] -= lr * gradients.biases[l];
    }
    return;
  }

  if (!state.first_moment.same_shape(model.params) || !state.second_moment.same_shape(model.params))
    throw ShapeError("optimizer_step: moment accumulators do not match the model");
  const Scalar b1 = Scalar(state.settings.beta1);
  const Scalar b2 = Scalar(state.settings.beta2);
  const Scalar eps = Scalar(state.settings.epsilon);
  const Scalar correction1 = Scalar(1) - std::pow(b1, Scalar(state.step));
  const Scalar correction2 = Scalar(1) - std::pow(b2, Scalar(state.step));
  auto update = [&](auto& param, auto& m, auto& v, const auto& g) {
    m = b1 * m + (Scalar(1) - b1) * g;
    v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / correction1) / ((v.array() / correction2).sqrt() + eps);
  };
  for (std::size_t l = 0; l < model.params.num_layers(); ++l) {
    update(model.params.weights[l], state.first_moment.weights[l], state.second_moment.weights[l],
           gradients.weights[l]);
    update(model.params.biases[l], state.first_moment.biases[l], state.second_moment.biases[l],
           gradients.biases[l]);
  }
}

inline constexpr double kDefaultEmaDecay = 0.9997;

template <typename Scalar>
struct EmaShadow {
  Parameters<Scalar> params;
  double decay = kDefaultEmaDecay;
};

template <typename Scalar>
EmaShadow<Scalar> make_ema(const ClassifierModel<Scalar>& model, double decay = kDefaultEmaDecay) {
  if (!(decay >= 0.0 && decay <= 1.0)) throw ConfigError("ema_decay", "must lie in [0, 1]");
  return EmaShadow<Scalar>{model.params, decay};
}

// shadow <- decay * shadow + (1 - decay) * model
template <typename Scalar>
void ema_update(EmaShadow<Scalar>& shadow, const ClassifierModel<Scalar>& model) {
  if (!shadow.params.same_shape(model.params)) throw ShapeError("ema_update: shadow shapes differ from the model");
  const Scalar decay = Scalar(shadow.decay);
  const Scalar rest = Scalar(1) - decay;
  for (std::size_t l = 0; l < model.params.num_layers(); ++l) {
    shadow.params.weights[l] = decay * shadow.params.weights[l] + rest * model.params.weights[l];
    shadow.params.biases[l] = decay * shadow.params.biases[l] + rest * model.params.biases[l];
  }
}

// The model evaluated with the shadow's parameters.
template <typename Scalar>
ClassifierModel<Scalar> with_parameters(const ClassifierModel<Scalar>& model, const Parameters<Scalar>& params) {
  if (!params.same_shape(model.params)) throw ShapeError("with_parameters: shapes differ from the model");
  return ClassifierModel<Scalar>{model.spec, params};
}

}  // namespace cap
