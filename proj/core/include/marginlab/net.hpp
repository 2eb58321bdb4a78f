#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "marginlab/dataset.hpp"
#include "marginlab/tensor.hpp"

namespace marginlab {

enum class LayerKind : std::uint8_t {
  dense = 0,
  conv2d = 1,
  relu = 2,
  batchnorm = 3,
};

enum class Mode { train, eval };

// Architecture element. In-dimensions of 0 are inferred by composition from
// the preceding layer where possible; the first weight-bearing layer and any
// dense layer placed after a conv stack must declare theirs (spatial extent
// is unknown until a batch is seen).
struct LayerSpec {
  LayerKind kind = LayerKind::relu;
  std::size_t out_dim = 0;       // dense
  std::size_t in_dim = 0;        // dense, 0 = infer
  std::size_t out_channels = 0;  // conv2d
  std::size_t in_channels = 0;   // conv2d, 0 = infer
  std::size_t channels = 0;      // batchnorm, 0 = infer

  static LayerSpec dense(std::size_t out, std::size_t in = 0) {
    return {.kind = LayerKind::dense, .out_dim = out, .in_dim = in};
  }
  static LayerSpec conv2d(std::size_t out_c, std::size_t in_c = 0) {
    return {.kind = LayerKind::conv2d, .out_channels = out_c,
            .in_channels = in_c};
  }
  static LayerSpec relu() { return {.kind = LayerKind::relu}; }
  static LayerSpec batchnorm(std::size_t ch = 0) {
    return {.kind = LayerKind::batchnorm, .channels = ch};
  }
};

// Per-layer gradient tensors, congruent to each layer's parameter tensors:
// empty for relu, {W} for dense/conv, {scale, shift} for batchnorm.
struct Gradients {
  std::vector<std::vector<Tensor>> per_layer;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;

  // Train mode caches activations for backward (and updates batchnorm
  // running statistics); eval mode computes without mutating anything.
  virtual Tensor forward(const Tensor& x, Mode mode) = 0;
  // Pure eval-mode forward.
  virtual Tensor eval(const Tensor& x) const = 0;
  // Consumes the cache from the last train-mode forward. Fills one gradient
  // tensor per parameter and returns the gradient wrt the layer input.
  virtual Tensor backward(const Tensor& grad_out,
                          std::vector<Tensor>& param_grads) = 0;

  virtual std::vector<Tensor*> params() { return {}; }
  virtual std::vector<const Tensor*> params() const { return {}; }
  virtual std::unique_ptr<Layer> clone() const = 0;
};

class DenseLayer final : public Layer {
 public:
  DenseLayer(std::size_t out_dim, std::size_t in_dim);
  LayerKind kind() const override { return LayerKind::dense; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor eval(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out,
                  std::vector<Tensor>& param_grads) override;
  std::vector<Tensor*> params() override { return {&weight_}; }
  std::vector<const Tensor*> params() const override { return {&weight_}; }
  std::unique_ptr<Layer> clone() const override;

  Tensor weight_;  // [out, in]; rank-4 inputs are consumed flattened

 private:
  Tensor cached_input_;
  bool has_cache_ = false;
};

// 3x3 kernel, stride 2, zero padding of width 1, so each layer halves the
// spatial size (32 -> 16 -> 8 -> 4 -> 2). No bias.
class Conv2dLayer final : public Layer {
 public:
  Conv2dLayer(std::size_t out_channels, std::size_t in_channels);
  LayerKind kind() const override { return LayerKind::conv2d; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor eval(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out,
                  std::vector<Tensor>& param_grads) override;
  std::vector<Tensor*> params() override { return {&weight_}; }
  std::vector<const Tensor*> params() const override { return {&weight_}; }
  std::unique_ptr<Layer> clone() const override;

  Tensor weight_;  // [out_c, in_c, 3, 3]

  static constexpr std::size_t kKernel = 3;
  static constexpr std::size_t kStride = 2;
  static constexpr std::size_t kPad = 1;

 private:
  Tensor cached_input_;
  bool has_cache_ = false;
};

class ReluLayer final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::relu; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor eval(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out,
                  std::vector<Tensor>& param_grads) override;
  std::unique_ptr<Layer> clone() const override;

 private:
  Tensor cached_input_;
  bool has_cache_ = false;
};

// Standard batchnorm with affine scale and shift. Train mode normalizes by
// biased batch statistics and folds them into the running estimates; eval
// mode normalizes by the running estimates. Rank-2 inputs normalize per
// feature, rank-4 per channel over (batch, height, width).
class BatchNormLayer final : public Layer {
 public:
  explicit BatchNormLayer(std::size_t channels, double epsilon = 1e-5,
                          double momentum = 0.1);
  LayerKind kind() const override { return LayerKind::batchnorm; }
  Tensor forward(const Tensor& x, Mode mode) override;
  Tensor eval(const Tensor& x) const override;
  Tensor backward(const Tensor& grad_out,
                  std::vector<Tensor>& param_grads) override;
  std::vector<Tensor*> params() override { return {&scale_, &shift_}; }
  std::vector<const Tensor*> params() const override {
    return {&scale_, &shift_};
  }
  std::unique_ptr<Layer> clone() const override;

  std::size_t channels() const { return scale_.size(); }
  double epsilon() const { return epsilon_; }

  Tensor scale_;         // gamma, init 1
  Tensor shift_;         // beta, init 0
  Tensor running_mean_;  // init 0
  Tensor running_var_;   // init 1

 private:
  double epsilon_;
  double momentum_;
  Tensor cached_xhat_;
  std::vector<double> cached_inv_std_;
  bool has_cache_ = false;
};

// Ordered homogeneous layers. A network with no batchnorm (and, by
// construction, no bias anywhere) is homogeneous: scaling all weights by
// alpha scales the scores by alpha^K, K the number of weight-bearing layers.
class Network {
 public:
  Network() = default;
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  std::size_t num_layers() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_[i]; }
  const Layer& layer(std::size_t i) const { return *layers_[i]; }

  std::uint32_t num_classes() const { return num_classes_; }
  // Number of weight-bearing (dense/conv) layers.
  std::size_t depth() const;
  bool is_homogeneous() const;

  // Train mode caches activations and updates batchnorm running statistics;
  // a NaN anywhere raises NumericError carrying the offending layer index.
  Tensor forward(const Tensor& batch, Mode mode);
  // Pure function of (weights, batch); uses batchnorm running statistics.
  Tensor eval(const Tensor& batch) const;
  // Gradients of the scalar loss wrt every parameter tensor, given the loss
  // gradient at the scores. Requires a matching train-mode forward.
  Gradients backward(const Tensor& loss_grad);

  void append(std::unique_ptr<Layer> layer);
  void set_num_classes(std::uint32_t c) { num_classes_ = c; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  std::uint32_t num_classes_ = 0;
  bool has_forward_cache_ = false;
};

// Margin normalization conventions (which layer norms enter the product).
enum class NormConvention {
  conv_product,        // product of conv-layer Frobenius norms
  bn_times_last_fc,    // product of batchnorm scale norms x last dense norm
  all_weight_product,  // product of all dense/conv Frobenius norms
};

struct LayerNorms {
  std::vector<double> per_layer;  // Frobenius norm per weight-bearing layer
  double product = 1.0;           // over the convention-selected layers
  bool fell_back_to_all_weights = false;  // conv_product on a conv-free net
};

// Builds the network and draws every dense/conv weight i.i.d.
// normal(0, init_std^2) from the seeded generator, layer by layer in
// row-major element order. Batchnorm starts at scale 1, shift 0.
Network init_network(const std::vector<LayerSpec>& arch, double init_std,
                     std::uint64_t seed);

// Frobenius norm per weight-bearing layer (rho_k) and the product selected
// by the convention. The batchnorm convention multiplies the Euclidean norms
// of the batchnorm scale vectors with the last dense layer's norm.
LayerNorms layer_norms(const Network& net, NormConvention convention);

NormConvention default_convention(const Network& net);

// Throws ConventionError unless the convention fits the network: the
// homogeneity-based products require a batchnorm-free net, the batchnorm
// product requires batchnorm plus a dense layer.
void check_convention(const Network& net, NormConvention convention);

// Scores divided by the convention's norm product: f(V;x) up to the
// convention's choice of which layers carry the scale.
Tensor normalized_forward(const Network& net, const Tensor& batch,
                          NormConvention convention);
Tensor normalized_forward(const Network& net, const Tensor& batch);

// Assembles [B, ...feature shape] from the given global indices.
Tensor make_batch(const Dataset& ds, const std::vector<std::size_t>& indices);

// Checkpoint format: little-endian [u32 magic][u32 num_layers], then per
// layer [u8 kind][u32 rank][u32 dims...][f64 payload...]. Batchnorm payload
// is scale, shift, running mean, running var, epsilon in that order.
inline constexpr std::uint32_t kCheckpointMagic = 0x4E455457;
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);

}  // namespace marginlab
