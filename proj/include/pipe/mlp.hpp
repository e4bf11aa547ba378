#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "pipe/error.hpp"
#include "pipe/rng.hpp"

namespace riskpipe {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// tanh through the vectorized exp; Eigen's double tanh is scalar and was the
// largest single cost of a training epoch. Absolute error is a few ulps of 1.
template <class Derived>
auto fast_tanh(const Eigen::ArrayBase<Derived>& x) {
  return 1.0 - 2.0 / ((2.0 * x).exp() + 1.0);
}

// How network inputs map onto the problem: the first state_dim inputs are
// state coordinates (system dimensions listed in state_map), then the
// horizon T when present, then lambda when lambda_input is set. Inputs are
// normalized to [-1, 1] with input_lo / input_hi before the first layer.
struct InputLayout {
  int state_dim = 1;
  bool has_time = true;
  bool lambda_input = false;
  std::vector<int> state_map;  // empty: identity 0..state_dim-1
  std::vector<double> input_lo;
  std::vector<double> input_hi;

  int input_dim() const { return state_dim + (has_time ? 1 : 0) + (lambda_input ? 1 : 0); }

  int system_dim(int i) const {
    return state_map.empty() ? i : state_map[static_cast<std::size_t>(i)];
  }

  bool operator==(const InputLayout&) const = default;
};

// Default layout for a bare d_in-input net: every input is a state
// coordinate, no time input, identity normalization.
inline InputLayout identity_layout(int d_in) {
  InputLayout layout;
  layout.state_dim = d_in;
  layout.has_time = false;
  layout.input_lo.assign(static_cast<std::size_t>(d_in), -1.0);
  layout.input_hi.assign(static_cast<std::size_t>(d_in), 1.0);
  return layout;
}

// Fully connected tanh network with a linear scalar output. All weights and
// biases live in one flat vector, layer by layer: the weight matrix
// (out x in) in row-major order, then the bias vector.
struct MlpParams {
  std::vector<int> layer_sizes;
  Eigen::VectorXd theta;
  InputLayout layout;
  std::string activation = "tanh";

  int input_dim() const { return layer_sizes.front(); }
  int layer_count() const { return static_cast<int>(layer_sizes.size()) - 1; }
  int fan_in(int l) const { return layer_sizes[static_cast<std::size_t>(l)]; }
  int fan_out(int l) const { return layer_sizes[static_cast<std::size_t>(l) + 1]; }

  Eigen::Index weight_offset(int l) const {
    Eigen::Index off = 0;
    for (int k = 0; k < l; ++k) off += static_cast<Eigen::Index>(fan_out(k)) * (fan_in(k) + 1);
    return off;
  }
  Eigen::Index bias_offset(int l) const {
    return weight_offset(l) + static_cast<Eigen::Index>(fan_out(l)) * fan_in(l);
  }

  Eigen::Map<const RowMajorMatrix> weight(int l) const {
    return {theta.data() + weight_offset(l), fan_out(l), fan_in(l)};
  }
  Eigen::Map<RowMajorMatrix> weight(int l) {
    return {theta.data() + weight_offset(l), fan_out(l), fan_in(l)};
  }
  Eigen::Map<const Eigen::VectorXd> bias(int l) const {
    return {theta.data() + bias_offset(l), fan_out(l)};
  }
  Eigen::Map<Eigen::VectorXd> bias(int l) { return {theta.data() + bias_offset(l), fan_out(l)}; }

  Eigen::VectorXd input_center() const {
    Eigen::VectorXd c(input_dim());
    for (int k = 0; k < input_dim(); ++k) {
      const auto i = static_cast<std::size_t>(k);
      c[k] = 0.5 * (layout.input_lo[i] + layout.input_hi[i]);
    }
    return c;
  }
  Eigen::VectorXd input_scale() const {
    Eigen::VectorXd s(input_dim());
    for (int k = 0; k < input_dim(); ++k) {
      const auto i = static_cast<std::size_t>(k);
      s[k] = 2.0 / (layout.input_hi[i] - layout.input_lo[i]);
    }
    return s;
  }

  static Eigen::Index parameter_count(const std::vector<int>& sizes) {
    Eigen::Index n = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      n += static_cast<Eigen::Index>(sizes[l + 1]) * (sizes[l] + 1);
    }
    return n;
  }

  void validate() const {
    require(layer_sizes.size() >= 2, ErrorKind::BadShape, "need at least input and output layers");
    for (int s : layer_sizes) require(s >= 1, ErrorKind::BadShape, "layer sizes must be >= 1");
    require(layer_sizes.back() == 1, ErrorKind::BadShape, "output layer must have size 1");
    require(theta.size() == parameter_count(layer_sizes), ErrorKind::BadShape,
            "parameter vector length does not match layer sizes");
    require(layout.input_dim() == input_dim(), ErrorKind::BadShape,
            "input layout does not match the first layer size");
    require(layout.state_dim >= 0, ErrorKind::BadShape, "negative state_dim");
    require(layout.state_map.empty() ||
                static_cast<int>(layout.state_map.size()) == layout.state_dim,
            ErrorKind::BadShape, "state_map length must equal state_dim");
    require(static_cast<int>(layout.input_lo.size()) == input_dim() &&
                static_cast<int>(layout.input_hi.size()) == input_dim(),
            ErrorKind::BadShape, "normalization bounds must have one entry per input");
    for (int k = 0; k < input_dim(); ++k) {
      const auto i = static_cast<std::size_t>(k);
      require(layout.input_lo[i] < layout.input_hi[i], ErrorKind::BadShape,
              "normalization bounds need lo < hi");
    }
    require(activation == "tanh", ErrorKind::BadShape, "unsupported activation '" + activation + "'");
    require(theta.allFinite(), ErrorKind::BadShape, "parameters must be finite");
  }
};

inline MlpParams init_glorot(const std::vector<int>& layer_sizes, std::uint64_t seed,
                             InputLayout layout) {
  require(layer_sizes.size() >= 2, ErrorKind::BadShape, "need at least input and output layers");
  for (int s : layer_sizes) require(s >= 1, ErrorKind::BadShape, "zero-size layer");
  MlpParams p;
  p.layer_sizes = layer_sizes;
  p.layout = std::move(layout);
  p.theta = Eigen::VectorXd::Zero(MlpParams::parameter_count(layer_sizes));
  RngStream rng(seed);
  for (int l = 0; l < p.layer_count(); ++l) {
    const double limit = std::sqrt(6.0 / static_cast<double>(p.fan_in(l) + p.fan_out(l)));
    auto w = p.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = rng.uniform(-limit, limit);
    }
  }
  p.validate();
  return p;
}

inline MlpParams init_glorot(const std::vector<int>& layer_sizes, std::uint64_t seed) {
  require(!layer_sizes.empty(), ErrorKind::BadShape, "empty layer list");
  return init_glorot(layer_sizes, seed, identity_layout(layer_sizes.front()));
}

// Input sizes of each layer for a hidden-width/depth architecture.
inline std::vector<int> mlp_architecture(int input_dim, int hidden_layers, int width) {
  std::vector<int> sizes{input_dim};
  for (int i = 0; i < hidden_layers; ++i) sizes.push_back(width);
  sizes.push_back(1);
  return sizes;
}

enum class JetOrder { Value = 0, Gradient = 1, Hessian = 2 };

// Network output and its input derivatives for a batch of B points.
// grad is (input_dim x B); hess holds d2F/dx_i^2 for the state inputs
// only, (state_dim x B).
struct JetBatch {
  Eigen::RowVectorXd value;
  Eigen::MatrixXd grad;
  Eigen::MatrixXd hess;

  void resize(Eigen::Index batch, int input_dim, int state_dim, JetOrder order) {
    value.setZero(batch);
    grad.setZero(order >= JetOrder::Gradient ? input_dim : 0, batch);
    hess.setZero(order >= JetOrder::Hessian ? state_dim : 0, batch);
  }
};

struct NetJet {
  double value = 0.0;
  Eigen::VectorXd input_grad;
  Eigen::VectorXd input_hess_diag;
};

// Forward propagation of value, input gradient and diagonal input Hessian
// through the network for a batch of points, with a matching reverse pass
// that accumulates parameter gradients of any loss built from those fields.
//
// Channels are stored side by side in one matrix per layer, each B columns
// wide: [value | d/du_0 .. d/du_{n-1} | d2/du_0^2 .. d2/du_{s-1}^2]. The
// input scaling is folded into the first-layer direction channels, so every
// derivative comes out in physical units.
class JetEngine {
 public:
  void forward(const MlpParams& params, const Eigen::MatrixXd& inputs, JetOrder order) {
    const int d_in = params.input_dim();
    require(inputs.rows() == d_in, ErrorKind::BadShape,
            "input has " + std::to_string(inputs.rows()) + " rows, network expects " +
                std::to_string(d_in));
    order_ = order;
    batch_ = inputs.cols();
    d_in_ = d_in;
    n_state_ = order >= JetOrder::Hessian ? params.layout.state_dim : 0;
    n_grad_ = order >= JetOrder::Gradient ? d_in : 0;
    channels_ = 1 + n_grad_ + n_state_;
    const int layers = params.layer_count();
    h_.resize(static_cast<std::size_t>(layers) + 1);
    a_.resize(static_cast<std::size_t>(layers));

    const Eigen::Index cb = channels_ * batch_;
    auto& h0 = h_[0];
    h0.setZero(d_in, cb);
    const Eigen::VectorXd center = params.input_center();
    const Eigen::VectorXd scale = params.input_scale();
    h0.leftCols(batch_) = ((inputs.colwise() - center).array().colwise() * scale.array()).matrix();
    for (int k = 0; k < n_grad_; ++k) block(h0, 1 + k).row(k).setConstant(scale[k]);

    for (int l = 0; l < layers; ++l) {
      const auto W = params.weight(l);
      auto& a = a_[static_cast<std::size_t>(l)];
      a.resize(W.rows(), cb);
      // The value channel goes through its own product so that a value-only
      // pass reproduces it bit for bit.
      block(a, 0).noalias() = W * block(h_[static_cast<std::size_t>(l)], 0);
      block(a, 0).colwise() += params.bias(l);
      if (channels_ > 1) {
        a.rightCols(cb - batch_).noalias() = W * h_[static_cast<std::size_t>(l)].rightCols(cb - batch_);
      }
      auto& h = h_[static_cast<std::size_t>(l) + 1];
      if (l + 1 == layers) {
        h = a;
      } else {
        tanh_forward(a, h);
      }
    }
  }

  // Extracts the output jet fields of the last forward pass.
  void jets(JetBatch& out) const {
    out.resize(batch_, d_in_, n_state_, order_);
    const auto& y = h_.back();
    out.value = block(y, 0);
    for (int k = 0; k < n_grad_; ++k) out.grad.row(k) = block(y, 1 + k);
    for (int i = 0; i < n_state_; ++i) out.hess.row(i) = block(y, 1 + n_grad_ + i);
  }

  // Adds d(sum_j adjoint_j . jet_j)/d(theta) into grad (flat layout of theta).
  void backward(const MlpParams& params, const JetBatch& adjoint, Eigen::Ref<Eigen::VectorXd> grad) {
    require(grad.size() == params.theta.size(), ErrorKind::BadShape, "gradient length mismatch");
    require(adjoint.value.size() == batch_, ErrorKind::BadShape, "adjoint batch size mismatch");
    const Eigen::Index cb = channels_ * batch_;
    Eigen::MatrixXd abar(1, cb);
    block(abar, 0) = adjoint.value;
    for (int k = 0; k < n_grad_; ++k) block(abar, 1 + k) = adjoint.grad.row(k);
    for (int i = 0; i < n_state_; ++i) block(abar, 1 + n_grad_ + i) = adjoint.hess.row(i);

    const int layers = params.layer_count();
    Eigen::MatrixXd hbar;
    for (int l = layers - 1; l >= 0; --l) {
      if (l + 1 < layers) tanh_backward(hbar, a_[static_cast<std::size_t>(l)],
                                        h_[static_cast<std::size_t>(l) + 1], abar);
      const auto& hin = h_[static_cast<std::size_t>(l)];
      Eigen::Map<RowMajorMatrix> gw(grad.data() + params.weight_offset(l), params.fan_out(l),
                                    params.fan_in(l));
      gw.noalias() += abar * hin.transpose();
      Eigen::Map<Eigen::VectorXd> gb(grad.data() + params.bias_offset(l), params.fan_out(l));
      gb += block(abar, 0).rowwise().sum();
      if (l > 0) hbar.noalias() = params.weight(l).transpose() * abar;
    }
  }

  Eigen::Index batch() const { return batch_; }

 private:
  Eigen::MatrixXd::ColsBlockXpr block(Eigen::MatrixXd& m, int channel) const {
    return m.middleCols(static_cast<Eigen::Index>(channel) * batch_, batch_);
  }
  Eigen::MatrixXd::ConstColsBlockXpr block(const Eigen::MatrixXd& m, int channel) const {
    return m.middleCols(static_cast<Eigen::Index>(channel) * batch_, batch_);
  }

  void tanh_forward(const Eigen::MatrixXd& a, Eigen::MatrixXd& h) const {
    h.resize(a.rows(), a.cols());
    block(h, 0) = fast_tanh(block(a, 0).array()).matrix();
    if (channels_ == 1) return;
    const Eigen::ArrayXXd hv = block(h, 0).array();
    const Eigen::ArrayXXd s = 1.0 - hv.square();
    for (int k = 0; k < n_grad_; ++k) block(h, 1 + k) = (s * block(a, 1 + k).array()).matrix();
    if (n_state_ == 0) return;
    const Eigen::ArrayXXd t = -2.0 * hv * s;
    for (int i = 0; i < n_state_; ++i) {
      const auto ag = block(a, 1 + i).array();
      block(h, 1 + n_grad_ + i) =
          (s * block(a, 1 + n_grad_ + i).array() + t * ag.square()).matrix();
    }
  }

  // Given hbar (adjoint of this layer's outputs), writes the adjoint of its
  // pre-activations into abar.
  void tanh_backward(const Eigen::MatrixXd& hbar, const Eigen::MatrixXd& a,
                     const Eigen::MatrixXd& h, Eigen::MatrixXd& abar) const {
    abar.resize(a.rows(), a.cols());
    const Eigen::ArrayXXd hv = block(h, 0).array();
    const Eigen::ArrayXXd s = 1.0 - hv.square();
    Eigen::ArrayXXd sbar = Eigen::ArrayXXd::Zero(hv.rows(), hv.cols());
    Eigen::ArrayXXd tbar = Eigen::ArrayXXd::Zero(hv.rows(), hv.cols());
    for (int k = 0; k < n_grad_; ++k) {
      const auto hb = block(hbar, 1 + k).array();
      block(abar, 1 + k) = (hb * s).matrix();
      sbar += hb * block(a, 1 + k).array();
    }
    if (n_state_ > 0) {
      const Eigen::ArrayXXd t = -2.0 * hv * s;
      for (int i = 0; i < n_state_; ++i) {
        const auto hb = block(hbar, 1 + n_grad_ + i).array();
        const auto ag = block(a, 1 + i).array();
        block(abar, 1 + n_grad_ + i) = (hb * s).matrix();
        block(abar, 1 + i) += (2.0 * hb * t * ag).matrix();
        sbar += hb * block(a, 1 + n_grad_ + i).array();
        tbar += hb * ag.square();
      }
    }
    // s = 1 - h^2, t = -2h + 2h^3
    const Eigen::ArrayXXd htotal =
        block(hbar, 0).array() - 2.0 * hv * sbar + tbar * (6.0 * hv.square() - 2.0);
    block(abar, 0) = (htotal * s).matrix();
  }

  JetOrder order_ = JetOrder::Value;
  Eigen::Index batch_ = 0;
  int d_in_ = 0;
  int n_grad_ = 0;
  int n_state_ = 0;
  int channels_ = 1;
  std::vector<Eigen::MatrixXd> h_;  // layer inputs/outputs, h_[0] = network input channels
  std::vector<Eigen::MatrixXd> a_;  // pre-activations
};

inline Eigen::RowVectorXd forward_batch(const MlpParams& params, const Eigen::MatrixXd& inputs) {
  JetEngine engine;
  engine.forward(params, inputs, JetOrder::Value);
  JetBatch out;
  engine.jets(out);
  return out.value;
}

inline double forward(const MlpParams& params, std::span<const double> input) {
  require(static_cast<int>(input.size()) == params.input_dim(), ErrorKind::BadShape,
          "input length " + std::to_string(input.size()) + " != " +
              std::to_string(params.input_dim()));
  const Eigen::MatrixXd in = Eigen::Map<const Eigen::VectorXd>(input.data(),
                                                               static_cast<Eigen::Index>(input.size()));
  return forward_batch(params, in)[0];
}

inline NetJet forward_jet(const MlpParams& params, std::span<const double> input) {
  require(static_cast<int>(input.size()) == params.input_dim(), ErrorKind::BadShape,
          "input length " + std::to_string(input.size()) + " != " +
              std::to_string(params.input_dim()));
  const Eigen::MatrixXd in = Eigen::Map<const Eigen::VectorXd>(input.data(),
                                                               static_cast<Eigen::Index>(input.size()));
  JetEngine engine;
  engine.forward(params, in, JetOrder::Hessian);
  JetBatch out;
  engine.jets(out);
  return NetJet{out.value[0], out.grad.col(0), out.hess.col(0)};
}

struct LossGradient {
  double loss = 0.0;          // mean of the per-point losses
  Eigen::VectorXd gradient;   // d(loss)/d(theta), flat layout of MlpParams::theta
};

// loss_terms(jets, adjoint) returns the per-point losses l_j and writes
// dl_j/d(jet field) into adjoint (already sized like jets). The result is the
// exact parameter gradient of mean_j l_j.
template <class LossTerms>
LossGradient loss_param_gradient(const MlpParams& params, const Eigen::MatrixXd& inputs,
                                 JetOrder order, LossTerms&& loss_terms) {
  JetEngine engine;
  engine.forward(params, inputs, order);
  JetBatch jets;
  engine.jets(jets);
  JetBatch adjoint;
  adjoint.resize(engine.batch(), params.input_dim(), order >= JetOrder::Hessian ? params.layout.state_dim : 0, order);
  const Eigen::VectorXd terms = loss_terms(static_cast<const JetBatch&>(jets), adjoint);
  require(terms.size() == engine.batch(), ErrorKind::BadShape, "one loss term per point expected");
  for (Eigen::Index j = 0; j < terms.size(); ++j) {
    const bool finite = std::isfinite(terms[j]) && std::isfinite(adjoint.value[j]) &&
                        (adjoint.grad.cols() == 0 || adjoint.grad.col(j).allFinite()) &&
                        (adjoint.hess.cols() == 0 || adjoint.hess.col(j).allFinite());
    if (!finite) {
      throw Error(ErrorKind::NonFiniteGradient, "loss term " + std::to_string(j) + " is non-finite");
    }
  }
  const double inv = terms.size() > 0 ? 1.0 / static_cast<double>(terms.size()) : 0.0;
  adjoint.value *= inv;
  adjoint.grad *= inv;
  adjoint.hess *= inv;
  LossGradient out;
  out.loss = terms.sum() * inv;
  out.gradient = Eigen::VectorXd::Zero(params.theta.size());
  engine.backward(params, adjoint, out.gradient);
  if (!out.gradient.allFinite()) {
    throw Error(ErrorKind::NonFiniteGradient, "parameter gradient is non-finite");
  }
  return out;
}

}  // namespace riskpipe
