#include "marginlab/net.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <utility>

#include "marginlab/errors.hpp"
#include "marginlab/rng.hpp"
#include "wire.hpp"

namespace marginlab {

namespace {

std::size_t batch_rows(const Tensor& x) { return x.dim(0); }

std::size_t features_per_row(const Tensor& x) {
  return x.size() / x.dim(0);
}

}  // namespace

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

DenseLayer::DenseLayer(std::size_t out_dim, std::size_t in_dim)
    : weight_({out_dim, in_dim}) {}

Tensor DenseLayer::eval(const Tensor& x) const {
  const std::size_t batch = batch_rows(x);
  const std::size_t in = weight_.dim(1);
  const std::size_t out = weight_.dim(0);
  if (features_per_row(x) != in) {
    throw ValidationError("dense layer expects " + std::to_string(in) +
                          " features, got " +
                          std::to_string(features_per_row(x)));
  }
  Tensor y({batch, out});
  const double* xd = x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t o = 0; o < out; ++o) {
      double acc = 0.0;
      const double* wrow = weight_.data() + o * in;
      const double* xrow = xd + b * in;
      for (std::size_t i = 0; i < in; ++i) acc += wrow[i] * xrow[i];
      y.at(b, o) = acc;
    }
  }
  return y;
}

Tensor DenseLayer::forward(const Tensor& x, Mode mode) {
  if (mode == Mode::train) {
    cached_input_ = x;
    has_cache_ = true;
  }
  return eval(x);
}

Tensor DenseLayer::backward(const Tensor& grad_out,
                            std::vector<Tensor>& param_grads) {
  if (!has_cache_) throw StateError("dense backward without forward");
  const Tensor& x = cached_input_;
  const std::size_t batch = batch_rows(x);
  const std::size_t in = weight_.dim(1);
  const std::size_t out = weight_.dim(0);

  Tensor grad_w({out, in});
  Tensor grad_x(x.shape());
  const double* xd = x.data();
  double* gxd = grad_x.data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xrow = xd + b * in;
    double* gxrow = gxd + b * in;
    for (std::size_t o = 0; o < out; ++o) {
      const double g = grad_out.at(b, o);
      double* gwrow = grad_w.data() + o * in;
      const double* wrow = weight_.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) {
        gwrow[i] += g * xrow[i];
        gxrow[i] += g * wrow[i];
      }
    }
  }
  param_grads.push_back(std::move(grad_w));
  has_cache_ = false;
  return grad_x;
}

std::unique_ptr<Layer> DenseLayer::clone() const {
  auto copy = std::make_unique<DenseLayer>(weight_.dim(0), weight_.dim(1));
  copy->weight_ = weight_;
  return copy;
}

// ---------------------------------------------------------------------------
// Conv2d
// ---------------------------------------------------------------------------

Conv2dLayer::Conv2dLayer(std::size_t out_channels, std::size_t in_channels)
    : weight_({out_channels, in_channels, kKernel, kKernel}) {}

Tensor Conv2dLayer::eval(const Tensor& x) const {
  if (x.rank() != 4) {
    throw ValidationError("conv2d expects a [N,C,H,W] batch");
  }
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = weight_.dim(0);
  if (ci != weight_.dim(1)) {
    throw ValidationError("conv2d expects " + std::to_string(weight_.dim(1)) +
                          " input channels, got " + std::to_string(ci));
  }
  const std::size_t oh = (h + 2 * kPad - kKernel) / kStride + 1;
  const std::size_t ow = (w + 2 * kPad - kKernel) / kStride + 1;

  Tensor y({n, co, oh, ow});
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < co; ++o) {
      for (std::size_t yy = 0; yy < oh; ++yy) {
        for (std::size_t xx = 0; xx < ow; ++xx) {
          double acc = 0.0;
          for (std::size_t c = 0; c < ci; ++c) {
            for (std::size_t kh = 0; kh < kKernel; ++kh) {
              const std::ptrdiff_t ih =
                  static_cast<std::ptrdiff_t>(yy * kStride + kh) -
                  static_cast<std::ptrdiff_t>(kPad);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kw = 0; kw < kKernel; ++kw) {
                const std::ptrdiff_t iw =
                    static_cast<std::ptrdiff_t>(xx * kStride + kw) -
                    static_cast<std::ptrdiff_t>(kPad);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
                acc += weight_.at(o, c, kh, kw) *
                       x.at(b, c, static_cast<std::size_t>(ih),
                            static_cast<std::size_t>(iw));
              }
            }
          }
          y.at(b, o, yy, xx) = acc;
        }
      }
    }
  }
  return y;
}

Tensor Conv2dLayer::forward(const Tensor& x, Mode mode) {
  if (mode == Mode::train) {
    cached_input_ = x;
    has_cache_ = true;
  }
  return eval(x);
}

Tensor Conv2dLayer::backward(const Tensor& grad_out,
                             std::vector<Tensor>& param_grads) {
  if (!has_cache_) throw StateError("conv2d backward without forward");
  const Tensor& x = cached_input_;
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t co = weight_.dim(0);
  const std::size_t oh = grad_out.dim(2), ow = grad_out.dim(3);

  Tensor grad_w(weight_.shape());
  Tensor grad_x(x.shape());
  for (std::size_t b = 0; b < n; ++b) {
    for (std::size_t o = 0; o < co; ++o) {
      for (std::size_t yy = 0; yy < oh; ++yy) {
        for (std::size_t xx = 0; xx < ow; ++xx) {
          const double g = grad_out.at(b, o, yy, xx);
          if (g == 0.0) continue;
          for (std::size_t c = 0; c < ci; ++c) {
            for (std::size_t kh = 0; kh < kKernel; ++kh) {
              const std::ptrdiff_t ih =
                  static_cast<std::ptrdiff_t>(yy * kStride + kh) -
                  static_cast<std::ptrdiff_t>(kPad);
              if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(h)) continue;
              for (std::size_t kw = 0; kw < kKernel; ++kw) {
                const std::ptrdiff_t iw =
                    static_cast<std::ptrdiff_t>(xx * kStride + kw) -
                    static_cast<std::ptrdiff_t>(kPad);
                if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(w)) continue;
                const auto uih = static_cast<std::size_t>(ih);
                const auto uiw = static_cast<std::size_t>(iw);
                grad_w.at(o, c, kh, kw) += g * x.at(b, c, uih, uiw);
                grad_x.at(b, c, uih, uiw) += g * weight_.at(o, c, kh, kw);
              }
            }
          }
        }
      }
    }
  }
  param_grads.push_back(std::move(grad_w));
  has_cache_ = false;
  return grad_x;
}

std::unique_ptr<Layer> Conv2dLayer::clone() const {
  auto copy = std::make_unique<Conv2dLayer>(weight_.dim(0), weight_.dim(1));
  copy->weight_ = weight_;
  return copy;
}

// ---------------------------------------------------------------------------
// ReLU
// ---------------------------------------------------------------------------

Tensor ReluLayer::eval(const Tensor& x) const {
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = std::max(y[i], 0.0);
  return y;
}

Tensor ReluLayer::forward(const Tensor& x, Mode mode) {
  if (mode == Mode::train) {
    cached_input_ = x;
    has_cache_ = true;
  }
  return eval(x);
}

Tensor ReluLayer::backward(const Tensor& grad_out,
                           std::vector<Tensor>& /*param_grads*/) {
  if (!has_cache_) throw StateError("relu backward without forward");
  Tensor grad_x(cached_input_.shape());
  // Derivative at exactly 0 is taken as 0.
  for (std::size_t i = 0; i < grad_x.size(); ++i) {
    grad_x[i] = cached_input_[i] > 0.0 ? grad_out[i] : 0.0;
  }
  has_cache_ = false;
  return grad_x;
}

std::unique_ptr<Layer> ReluLayer::clone() const {
  return std::make_unique<ReluLayer>();
}

// ---------------------------------------------------------------------------
// BatchNorm
// ---------------------------------------------------------------------------

BatchNormLayer::BatchNormLayer(std::size_t channels, double epsilon,
                               double momentum)
    : scale_({channels}),
      shift_({channels}),
      running_mean_({channels}),
      running_var_({channels}),
      epsilon_(epsilon),
      momentum_(momentum) {
  scale_.fill(1.0);
  running_var_.fill(1.0);
}

namespace {

struct BnLayout {
  std::size_t channels;
  std::size_t per_channel;  // reduction-set size m
  // flat index of element k (0..per_channel) of channel c
  std::size_t (*index)(const Tensor&, std::size_t c, std::size_t k);
};

std::size_t bn_index_rank2(const Tensor& x, std::size_t c, std::size_t k) {
  return k * x.dim(1) + c;
}

std::size_t bn_index_rank4(const Tensor& x, std::size_t c, std::size_t k) {
  const std::size_t hw = x.dim(2) * x.dim(3);
  const std::size_t n = k / hw;
  return (n * x.dim(1) + c) * hw + k % hw;
}

BnLayout bn_layout(const Tensor& x, std::size_t expected_channels) {
  BnLayout layout{};
  if (x.rank() == 2) {
    layout = {x.dim(1), x.dim(0), &bn_index_rank2};
  } else if (x.rank() == 4) {
    layout = {x.dim(1), x.dim(0) * x.dim(2) * x.dim(3), &bn_index_rank4};
  } else {
    throw ValidationError("batchnorm expects a rank-2 or rank-4 batch");
  }
  if (layout.channels != expected_channels) {
    throw ValidationError("batchnorm expects " +
                          std::to_string(expected_channels) +
                          " channels, got " + std::to_string(layout.channels));
  }
  return layout;
}

}  // namespace

Tensor BatchNormLayer::eval(const Tensor& x) const {
  const BnLayout layout = bn_layout(x, channels());
  Tensor y(x.shape());
  for (std::size_t c = 0; c < layout.channels; ++c) {
    const double inv_std = 1.0 / std::sqrt(running_var_[c] + epsilon_);
    for (std::size_t k = 0; k < layout.per_channel; ++k) {
      const std::size_t i = layout.index(x, c, k);
      y[i] = scale_[c] * (x[i] - running_mean_[c]) * inv_std + shift_[c];
    }
  }
  return y;
}

Tensor BatchNormLayer::forward(const Tensor& x, Mode mode) {
  if (mode == Mode::eval) return eval(x);

  const BnLayout layout = bn_layout(x, channels());
  const auto m = static_cast<double>(layout.per_channel);
  Tensor y(x.shape());
  cached_xhat_ = Tensor(x.shape());
  cached_inv_std_.assign(layout.channels, 0.0);

  for (std::size_t c = 0; c < layout.channels; ++c) {
    double mean = 0.0;
    for (std::size_t k = 0; k < layout.per_channel; ++k) {
      mean += x[layout.index(x, c, k)];
    }
    mean /= m;
    double var = 0.0;
    for (std::size_t k = 0; k < layout.per_channel; ++k) {
      const double d = x[layout.index(x, c, k)] - mean;
      var += d * d;
    }
    var /= m;  // biased, both for normalization and the running estimate

    const double inv_std = 1.0 / std::sqrt(var + epsilon_);
    cached_inv_std_[c] = inv_std;
    for (std::size_t k = 0; k < layout.per_channel; ++k) {
      const std::size_t i = layout.index(x, c, k);
      const double xhat = (x[i] - mean) * inv_std;
      cached_xhat_[i] = xhat;
      y[i] = scale_[c] * xhat + shift_[c];
    }
    running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * mean;
    running_var_[c] = (1.0 - momentum_) * running_var_[c] + momentum_ * var;
  }
  has_cache_ = true;
  return y;
}

Tensor BatchNormLayer::backward(const Tensor& grad_out,
                                std::vector<Tensor>& param_grads) {
  if (!has_cache_) throw StateError("batchnorm backward without forward");
  const Tensor& xhat = cached_xhat_;
  const BnLayout layout = bn_layout(xhat, channels());
  const auto m = static_cast<double>(layout.per_channel);

  Tensor grad_scale({channels()});
  Tensor grad_shift({channels()});
  Tensor grad_x(xhat.shape());

  for (std::size_t c = 0; c < layout.channels; ++c) {
    double sum_dy = 0.0;
    double sum_dy_xhat = 0.0;
    for (std::size_t k = 0; k < layout.per_channel; ++k) {
      const std::size_t i = layout.index(xhat, c, k);
      sum_dy += grad_out[i];
      sum_dy_xhat += grad_out[i] * xhat[i];
    }
    grad_shift[c] = sum_dy;
    grad_scale[c] = sum_dy_xhat;

    // Backprop through the batch statistics:
    // dx = (scale * inv_std) * (dy - mean(dy) - xhat * mean(dy * xhat))
    const double coeff = scale_[c] * cached_inv_std_[c];
    for (std::size_t k = 0; k < layout.per_channel; ++k) {
      const std::size_t i = layout.index(xhat, c, k);
      grad_x[i] =
          coeff * (grad_out[i] - sum_dy / m - xhat[i] * (sum_dy_xhat / m));
    }
  }
  param_grads.push_back(std::move(grad_scale));
  param_grads.push_back(std::move(grad_shift));
  has_cache_ = false;
  return grad_x;
}

std::unique_ptr<Layer> BatchNormLayer::clone() const {
  auto copy = std::make_unique<BatchNormLayer>(channels(), epsilon_, momentum_);
  copy->scale_ = scale_;
  copy->shift_ = shift_;
  copy->running_mean_ = running_mean_;
  copy->running_var_ = running_var_;
  return copy;
}

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

Network::Network(const Network& other) : num_classes_(other.num_classes_) {
  layers_.reserve(other.layers_.size());
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this == &other) return *this;
  Network copy(other);
  *this = std::move(copy);
  return *this;
}

std::size_t Network::depth() const {
  std::size_t k = 0;
  for (const auto& l : layers_) {
    if (l->kind() == LayerKind::dense || l->kind() == LayerKind::conv2d) ++k;
  }
  return k;
}

bool Network::is_homogeneous() const {
  for (const auto& l : layers_) {
    if (l->kind() == LayerKind::batchnorm) return false;
  }
  return true;
}

Tensor Network::forward(const Tensor& batch, Mode mode) {
  if (mode == Mode::eval) return eval(batch);
  Tensor x = batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i]->forward(x, Mode::train);
    if (!x.all_finite()) {
      throw NumericError("non-finite activation in layer " + std::to_string(i),
                         static_cast<int>(i));
    }
  }
  has_forward_cache_ = true;
  return x;
}

Tensor Network::eval(const Tensor& batch) const {
  Tensor x = batch;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    x = layers_[i]->eval(x);
    if (!x.all_finite()) {
      throw NumericError("non-finite activation in layer " + std::to_string(i),
                         static_cast<int>(i));
    }
  }
  return x;
}

Gradients Network::backward(const Tensor& loss_grad) {
  if (!has_forward_cache_) {
    throw StateError("backward without a matching train-mode forward");
  }
  Gradients grads;
  grads.per_layer.resize(layers_.size());
  Tensor g = loss_grad;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    g = layers_[i]->backward(g, grads.per_layer[i]);
  }
  has_forward_cache_ = false;
  return grads;
}

void Network::append(std::unique_ptr<Layer> layer) {
  layers_.push_back(std::move(layer));
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

Network init_network(const std::vector<LayerSpec>& arch, double init_std,
                     std::uint64_t seed) {
  if (init_std <= 0.0) throw ValidationError("init_std must be > 0");
  if (arch.empty()) throw ValidationError("architecture is empty");
  if (arch.back().kind != LayerKind::dense) {
    throw ValidationError("network must end with a dense layer");
  }

  Network net;
  Rng rng(seed);

  // Composition tracking. features = known flat feature count (dense chain),
  // channels = known channel count (conv chain); 0 = unknown.
  std::size_t features = 0;
  std::size_t channels = 0;

  for (const LayerSpec& spec : arch) {
    switch (spec.kind) {
      case LayerKind::dense: {
        std::size_t in = spec.in_dim;
        if (in == 0) {
          if (features != 0) {
            in = features;
          } else {
            throw ValidationError(
                "dense layer needs an explicit in_dim here (no inferable "
                "feature count)");
          }
        } else if (features != 0 && in != features) {
          throw ValidationError("dense in_dim " + std::to_string(in) +
                                " does not match preceding output " +
                                std::to_string(features));
        }
        if (spec.out_dim == 0) throw ValidationError("dense out_dim is 0");
        auto layer = std::make_unique<DenseLayer>(spec.out_dim, in);
        for (std::size_t i = 0; i < layer->weight_.size(); ++i) {
          layer->weight_[i] = init_std * rng.gaussian();
        }
        net.append(std::move(layer));
        features = spec.out_dim;
        channels = 0;
        break;
      }
      case LayerKind::conv2d: {
        if (features != 0) {
          throw ValidationError("conv2d cannot follow a dense layer");
        }
        std::size_t in_c = spec.in_channels;
        if (in_c == 0) {
          if (channels != 0) {
            in_c = channels;
          } else {
            throw ValidationError(
                "conv2d layer needs an explicit in_channels here");
          }
        } else if (channels != 0 && in_c != channels) {
          throw ValidationError("conv2d in_channels " + std::to_string(in_c) +
                                " does not match preceding output " +
                                std::to_string(channels));
        }
        if (spec.out_channels == 0) {
          throw ValidationError("conv2d out_channels is 0");
        }
        auto layer = std::make_unique<Conv2dLayer>(spec.out_channels, in_c);
        for (std::size_t i = 0; i < layer->weight_.size(); ++i) {
          layer->weight_[i] = init_std * rng.gaussian();
        }
        net.append(std::move(layer));
        channels = spec.out_channels;
        break;
      }
      case LayerKind::relu:
        net.append(std::make_unique<ReluLayer>());
        break;
      case LayerKind::batchnorm: {
        std::size_t ch = spec.channels;
        const std::size_t known = channels != 0 ? channels : features;
        if (ch == 0) {
          if (known == 0) {
            throw ValidationError(
                "batchnorm needs an explicit channel count here");
          }
          ch = known;
        } else if (known != 0 && ch != known) {
          throw ValidationError("batchnorm channels " + std::to_string(ch) +
                                " does not match preceding output " +
                                std::to_string(known));
        }
        net.append(std::make_unique<BatchNormLayer>(ch));
        break;
      }
    }
  }
  if (net.depth() == 0) {
    throw ValidationError("network has no weight-bearing layer");
  }
  net.set_num_classes(static_cast<std::uint32_t>(arch.back().out_dim));
  return net;
}

// ---------------------------------------------------------------------------
// Norms and conventions
// ---------------------------------------------------------------------------

LayerNorms layer_norms(const Network& net, NormConvention convention) {
  if (net.depth() == 0) {
    throw ValidationError("layer_norms needs a weight-bearing layer");
  }
  LayerNorms result;
  double conv_prod = 1.0;
  double all_prod = 1.0;
  double bn_prod = 1.0;
  double last_fc = 0.0;
  bool has_conv = false;
  bool has_bn = false;
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    const Layer& l = net.layer(i);
    switch (l.kind()) {
      case LayerKind::dense: {
        const double norm = l.params()[0]->frobenius_norm();
        result.per_layer.push_back(norm);
        all_prod *= norm;
        last_fc = norm;
        break;
      }
      case LayerKind::conv2d: {
        const double norm = l.params()[0]->frobenius_norm();
        result.per_layer.push_back(norm);
        all_prod *= norm;
        conv_prod *= norm;
        has_conv = true;
        break;
      }
      case LayerKind::batchnorm:
        bn_prod *= l.params()[0]->frobenius_norm();  // L2 of the scale vector
        has_bn = true;
        break;
      case LayerKind::relu:
        break;
    }
  }

  switch (convention) {
    case NormConvention::conv_product:
      if (has_conv) {
        result.product = conv_prod;
      } else {
        result.product = all_prod;
        result.fell_back_to_all_weights = true;
      }
      break;
    case NormConvention::bn_times_last_fc:
      if (!has_bn) {
        throw ConventionError(
            "batchnorm norm product requested on a batchnorm-free network");
      }
      if (last_fc == 0.0) {
        throw ConventionError(
            "batchnorm norm product needs a dense layer in the network");
      }
      result.product = bn_prod * last_fc;
      break;
    case NormConvention::all_weight_product:
      result.product = all_prod;
      break;
  }
  return result;
}

NormConvention default_convention(const Network& net) {
  bool has_bn = false;
  bool has_conv = false;
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    if (net.layer(i).kind() == LayerKind::batchnorm) has_bn = true;
    if (net.layer(i).kind() == LayerKind::conv2d) has_conv = true;
  }
  if (has_bn) return NormConvention::bn_times_last_fc;
  if (has_conv) return NormConvention::conv_product;
  return NormConvention::all_weight_product;
}

void check_convention(const Network& net, NormConvention convention) {
  const bool homogeneous = net.is_homogeneous();
  switch (convention) {
    case NormConvention::conv_product:
    case NormConvention::all_weight_product:
      if (!homogeneous) {
        throw ConventionError(
            "weight-norm division requires a homogeneous (batchnorm-free) "
            "network; use the batchnorm convention instead");
      }
      break;
    case NormConvention::bn_times_last_fc:
      // layer_norms validates the bn/dense requirements.
      layer_norms(net, convention);
      break;
  }
}

Tensor normalized_forward(const Network& net, const Tensor& batch,
                          NormConvention convention) {
  check_convention(net, convention);
  const double rho = layer_norms(net, convention).product;
  if (rho <= 0.0 || !std::isfinite(rho)) {
    throw NumericError("degenerate norm product " + std::to_string(rho));
  }
  Tensor scores = net.eval(batch);
  scores.scale(1.0 / rho);
  return scores;
}

Tensor normalized_forward(const Network& net, const Tensor& batch) {
  return normalized_forward(net, batch, default_convention(net));
}

Tensor make_batch(const Dataset& ds, const std::vector<std::size_t>& indices) {
  if (indices.empty()) throw ValidationError("empty batch");
  const Tensor& first = ds.example(indices[0]).features;
  std::vector<std::size_t> shape;
  shape.push_back(indices.size());
  for (std::size_t d : first.shape()) shape.push_back(d);
  Tensor batch(shape);
  const std::size_t row = first.size();
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor& f = ds.example(indices[b]).features;
    if (!f.same_shape(first)) {
      throw ValidationError("inconsistent feature shapes in batch");
    }
    std::copy(f.data(), f.data() + row, batch.data() + b * row);
  }
  return batch;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

void save_checkpoint(const Network& net, const std::string& path) {
  std::string buf;
  wire::append_u32le(buf, kCheckpointMagic);
  wire::append_u32le(buf, static_cast<std::uint32_t>(net.num_layers()));
  for (std::size_t i = 0; i < net.num_layers(); ++i) {
    const Layer& l = net.layer(i);
    wire::append_u8(buf, static_cast<std::uint8_t>(l.kind()));
    switch (l.kind()) {
      case LayerKind::dense:
      case LayerKind::conv2d: {
        const Tensor& w = *l.params()[0];
        wire::append_u32le(buf, static_cast<std::uint32_t>(w.rank()));
        for (std::size_t d : w.shape()) {
          wire::append_u32le(buf, static_cast<std::uint32_t>(d));
        }
        for (std::size_t k = 0; k < w.size(); ++k) {
          wire::append_f64le(buf, w[k]);
        }
        break;
      }
      case LayerKind::relu:
        wire::append_u32le(buf, 0);
        break;
      case LayerKind::batchnorm: {
        const auto& bn = static_cast<const BatchNormLayer&>(l);
        wire::append_u32le(buf, 1);
        wire::append_u32le(buf, static_cast<std::uint32_t>(bn.channels()));
        for (const Tensor* t :
             {&bn.scale_, &bn.shift_, &bn.running_mean_, &bn.running_var_}) {
          for (std::size_t k = 0; k < t->size(); ++k) {
            wire::append_f64le(buf, (*t)[k]);
          }
        }
        wire::append_f64le(buf, bn.epsilon());
        break;
      }
    }
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

Network load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string buf = ss.str();
  wire::Reader r(buf);

  if (r.u32le() != kCheckpointMagic) {
    throw ParseError("bad checkpoint magic at byte offset 0", 0);
  }
  const std::uint32_t num_layers = r.u32le();
  Network net;
  std::uint32_t last_dense_out = 0;
  for (std::uint32_t li = 0; li < num_layers; ++li) {
    const std::size_t kind_offset = r.offset();
    const std::uint8_t kind = r.u8();
    const std::uint32_t rank = r.u32le();
    std::vector<std::size_t> dims(rank);
    for (std::uint32_t d = 0; d < rank; ++d) dims[d] = r.u32le();
    switch (static_cast<LayerKind>(kind)) {
      case LayerKind::dense: {
        if (rank != 2) {
          throw ParseError("dense layer with rank != 2 at byte offset " +
                               std::to_string(kind_offset),
                           static_cast<long>(kind_offset));
        }
        auto layer = std::make_unique<DenseLayer>(dims[0], dims[1]);
        for (std::size_t k = 0; k < layer->weight_.size(); ++k) {
          layer->weight_[k] = r.f64le();
        }
        last_dense_out = static_cast<std::uint32_t>(dims[0]);
        net.append(std::move(layer));
        break;
      }
      case LayerKind::conv2d: {
        if (rank != 4 || dims[2] != 3 || dims[3] != 3) {
          throw ParseError("conv2d layer with unexpected dims at byte offset " +
                               std::to_string(kind_offset),
                           static_cast<long>(kind_offset));
        }
        auto layer = std::make_unique<Conv2dLayer>(dims[0], dims[1]);
        for (std::size_t k = 0; k < layer->weight_.size(); ++k) {
          layer->weight_[k] = r.f64le();
        }
        net.append(std::move(layer));
        break;
      }
      case LayerKind::relu:
        if (rank != 0) {
          throw ParseError("relu layer with payload at byte offset " +
                               std::to_string(kind_offset),
                           static_cast<long>(kind_offset));
        }
        net.append(std::make_unique<ReluLayer>());
        break;
      case LayerKind::batchnorm: {
        if (rank != 1) {
          throw ParseError("batchnorm layer with rank != 1 at byte offset " +
                               std::to_string(kind_offset),
                           static_cast<long>(kind_offset));
        }
        const std::size_t ch = dims[0];
        Tensor scale({ch}), shift({ch}), mean({ch}), var({ch});
        for (Tensor* t : {&scale, &shift, &mean, &var}) {
          for (std::size_t k = 0; k < ch; ++k) (*t)[k] = r.f64le();
        }
        const double eps = r.f64le();
        auto layer = std::make_unique<BatchNormLayer>(ch, eps);
        layer->scale_ = std::move(scale);
        layer->shift_ = std::move(shift);
        layer->running_mean_ = std::move(mean);
        layer->running_var_ = std::move(var);
        net.append(std::move(layer));
        break;
      }
      default:
        throw ParseError("unknown layer kind " + std::to_string(kind) +
                             " at byte offset " + std::to_string(kind_offset),
                         static_cast<long>(kind_offset));
    }
  }
  if (!r.at_end()) {
    throw ParseError("trailing bytes at byte offset " +
                         std::to_string(r.offset()),
                     static_cast<long>(r.offset()));
  }
  net.set_num_classes(last_dense_out);
  return net;
}

}  // namespace marginlab
