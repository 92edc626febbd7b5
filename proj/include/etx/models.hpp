#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "etx/autograd.hpp"
#include "etx/data.hpp"
#include "etx/ops.hpp"
#include "etx/tensor.hpp"

namespace etx {

namespace layer {

struct FullyConnected {
  std::size_t in = 0;
  std::size_t out = 0;

  bool operator==(const FullyConnected&) const = default;
};
struct Relu {
  bool operator==(const Relu&) const = default;
};
struct Conv {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;

  bool operator==(const Conv&) const = default;
};
struct BatchNorm {
  std::size_t channels = 0;

  bool operator==(const BatchNorm&) const = default;
};
struct MaxPool {
  std::size_t kernel = 2;
  std::size_t stride = 2;

  bool operator==(const MaxPool&) const = default;
};
struct Flatten {
  bool operator==(const Flatten&) const = default;
};

}  // namespace layer

using LayerSpec =
    std::variant<layer::FullyConnected, layer::Relu, layer::Conv, layer::BatchNorm, layer::MaxPool, layer::Flatten>;

struct NetworkSpec {
  std::string name;
  Shape input_shape;  // per sample, without the batch dimension
  std::vector<LayerSpec> layers;
  std::size_t classes = 2;

  bool operator==(const NetworkSpec&) const = default;
};

// Walks the layer chain and returns the per-sample output shape.
// Throws ConfigError on an incompatible chain or when the output is not `classes` logits.
Shape validate_spec(const NetworkSpec& spec);

// Plain-text "key = value" description, one layer per line; spec_from_text inverts it.
std::string spec_to_text(const NetworkSpec& spec);
NetworkSpec spec_from_text(std::string_view text);

struct PresetOptions {
  std::size_t fc_shallow_hidden = 100;
  std::vector<std::size_t> fc_deep_hidden{512, 256, 128, 64};
  // Divides every convolutional channel count (1 keeps the published widths).
  std::size_t conv_width_divisor = 1;
};

// fc_shallow, fc_deep, conv_a, conv_b.
std::map<std::string, NetworkSpec> preset_specs(const PresetOptions& options = {});
NetworkSpec preset_spec(std::string_view name, const PresetOptions& options = {});

enum class Mode { train, eval };

/// Instantiated parameters for a NetworkSpec.
///
/// Weights are drawn uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] layer by layer from a
/// generator seeded with `seed`; biases start at zero, batchnorm at gamma=1, beta=0.
/// Fully-connected weights are [out x in], so row j of the first layer is the
/// weight vector of hidden unit j over the input space.
class Network {
 public:
  Network(NetworkSpec spec, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  std::uint64_t seed() const { return seed_; }
  Mode mode() const { return mode_; }
  void set_mode(Mode mode) { mode_ = mode; }

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::size_t parameter_count() const;

  // Weight matrix of layer 0; throws ConfigError unless it is fully connected.
  Tensor& first_layer_weight();
  const Tensor& first_layer_weight() const;

  void zero_grad();

  // Records a forward pass over batch [B x input_shape...] with every parameter as a
  // gradient-receiving leaf. Batchnorm uses batch statistics in train mode.
  Var forward(Tape& tape, const Var& batch);

  // Evaluation-mode pass that records no parameter gradients; gradients can still
  // flow to `batch` when it requires one.
  Var forward_eval(Tape& tape, const Var& batch) const;

  // Evaluation-mode logits [B x classes].
  Tensor infer(const Tensor& batch) const;

 private:
  struct Slot {
    std::size_t weight = 0;  // index into params_, valid when has_params
    std::size_t bias = 0;
    bool has_params = false;
    std::size_t running = 0;  // index into running_, valid for batchnorm
  };

  // param(index) -> Var binds a parameter; norm(x, gamma, beta, running index) -> Var applies batchnorm.
  template <typename ParamFn, typename NormFn>
  Var run(Tape& tape, const Var& batch, ParamFn&& param, NormFn&& norm) const;

  NetworkSpec spec_;
  std::uint64_t seed_;
  Mode mode_ = Mode::train;
  std::vector<Tensor> params_;
  std::vector<Slot> slots_;
  std::vector<BatchNormRunning> running_;
};

inline Network build(const NetworkSpec& spec, std::uint64_t seed) { return Network(spec, seed); }

// Arg-max class per sample of `dataset`, evaluated in chunks; ties go to the lower class.
std::vector<int> predict(const Network& net, const Dataset& dataset, std::size_t chunk = 250);

// Fraction of samples whose prediction equals the label. Throws InputError on an empty dataset.
double accuracy(const Network& net, const Dataset& dataset, std::size_t chunk = 250);

}  // namespace etx
