#include "etx/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "etx/error.hpp"
#include "etx/seeding.hpp"

namespace etx {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

std::string layer_to_text(const LayerSpec& layer) {
  return std::visit(
      Overloaded{
          [](const layer::FullyConnected& l) {
            return "fully_connected in=" + std::to_string(l.in) + " out=" + std::to_string(l.out);
          },
          [](const layer::Relu&) { return std::string("relu"); },
          [](const layer::Conv& l) {
            return "conv in=" + std::to_string(l.in) + " out=" + std::to_string(l.out) +
                   " kernel=" + std::to_string(l.kernel) + " stride=" + std::to_string(l.stride) +
                   " padding=" + std::to_string(l.padding);
          },
          [](const layer::BatchNorm& l) { return "batchnorm channels=" + std::to_string(l.channels); },
          [](const layer::MaxPool& l) {
            return "maxpool kernel=" + std::to_string(l.kernel) + " stride=" + std::to_string(l.stride);
          },
          [](const layer::Flatten&) { return std::string("flatten"); },
      },
      layer);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::size_t parse_size(const std::string& text, const std::string& what) {
  try {
    std::size_t used = 0;
    const unsigned long long v = std::stoull(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return static_cast<std::size_t>(v);
  } catch (const std::exception&) {
    throw ConfigError("bad " + what + " '" + text + "'");
  }
}

Shape parse_shape(const std::string& text) {
  Shape shape;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) shape.push_back(parse_size(trim(part), "shape extent"));
  if (shape.empty()) throw ConfigError("empty shape");
  return shape;
}

std::string shape_text(const Shape& shape) {
  std::string out;
  for (std::size_t i = 0; i < shape.size(); ++i) out += (i ? "x" : "") + std::to_string(shape[i]);
  return out;
}

LayerSpec layer_from_text(const std::string& text) {
  std::stringstream ss(text);
  std::string kind;
  ss >> kind;
  std::map<std::string, std::size_t> fields;
  std::string token;
  while (ss >> token) {
    const auto eq = token.find('=');
    if (eq == std::string::npos) throw ConfigError("bad layer field '" + token + "'");
    fields[token.substr(0, eq)] = parse_size(token.substr(eq + 1), token.substr(0, eq));
  }
  auto get = [&](const char* key) {
    const auto it = fields.find(key);
    if (it == fields.end()) throw ConfigError("layer '" + kind + "' is missing '" + key + "'");
    return it->second;
  };
  if (kind == "fully_connected") return layer::FullyConnected{get("in"), get("out")};
  if (kind == "relu") return layer::Relu{};
  if (kind == "conv") return layer::Conv{get("in"), get("out"), get("kernel"), get("stride"), get("padding")};
  if (kind == "batchnorm") return layer::BatchNorm{get("channels")};
  if (kind == "maxpool") return layer::MaxPool{get("kernel"), get("stride")};
  if (kind == "flatten") return layer::Flatten{};
  throw ConfigError("unknown layer kind '" + kind + "'");
}

std::size_t scaled(std::size_t channels, std::size_t divisor) { return std::max<std::size_t>(1, channels / divisor); }

NetworkSpec make_fc(std::string name, const std::vector<std::size_t>& hidden) {
  NetworkSpec spec{std::move(name), Shape{kCifarImageBytes}, {}, 2};
  std::size_t width = kCifarImageBytes;
  for (std::size_t h : hidden) {
    spec.layers.push_back(layer::FullyConnected{width, h});
    spec.layers.push_back(layer::Relu{});
    width = h;
  }
  spec.layers.push_back(layer::FullyConnected{width, 2});
  return spec;
}

NetworkSpec make_conv_a(std::size_t div) {
  NetworkSpec spec{"conv_a", Shape{3, 32, 32}, {}, 2};
  const std::size_t widths[] = {scaled(128, div), scaled(128, div), scaled(256, div), scaled(256, div)};
  std::size_t in = 3;
  for (std::size_t w : widths) {
    spec.layers.push_back(layer::Conv{in, w, 5, 2, 1});
    spec.layers.push_back(layer::Relu{});
    in = w;
  }
  spec.layers.push_back(layer::Flatten{});
  spec.layers.push_back(layer::FullyConnected{in, 2});
  return spec;
}

NetworkSpec make_conv_b(std::size_t div) {
  NetworkSpec spec{"conv_b", Shape{3, 32, 32}, {}, 2};
  auto block = [&](std::size_t in, std::size_t out, std::size_t padding) {
    spec.layers.push_back(layer::Conv{in, out, 3, 1, padding});
    spec.layers.push_back(layer::BatchNorm{out});
    spec.layers.push_back(layer::Relu{});
  };
  const std::size_t c128 = scaled(128, div), c256 = scaled(256, div), c512 = scaled(512, div),
                    c1024 = scaled(1024, div);
  block(3, c128, 1);
  block(c128, c128, 1);
  spec.layers.push_back(layer::MaxPool{2, 2});
  block(c128, c256, 1);
  block(c256, c256, 1);
  spec.layers.push_back(layer::MaxPool{2, 2});
  block(c256, c512, 1);
  block(c512, c512, 1);
  spec.layers.push_back(layer::MaxPool{2, 2});
  block(c512, c1024, 0);
  spec.layers.push_back(layer::MaxPool{2, 2});
  spec.layers.push_back(layer::Flatten{});
  spec.layers.push_back(layer::FullyConnected{c1024, 2});
  return spec;
}

}  // namespace

Shape validate_spec(const NetworkSpec& spec) {
  if (spec.input_shape.empty() || shape_numel(spec.input_shape) == 0) throw ConfigError("spec has an empty input shape");
  if (spec.classes != 2) throw ConfigError("only binary classifiers (2 logits) are supported");
  if (spec.layers.empty()) throw ConfigError("spec has no layers");
  Shape shape = spec.input_shape;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const std::string where = "layer " + std::to_string(i) + " (" + layer_to_text(spec.layers[i]) + ") on input " +
                              shape_to_string(shape);
    std::visit(Overloaded{
                   [&](const layer::FullyConnected& l) {
                     if (shape.size() != 1 || shape[0] != l.in || l.out == 0) throw ConfigError(where + ": incompatible");
                     shape = Shape{l.out};
                   },
                   [&](const layer::Relu&) {},
                   [&](const layer::Conv& l) {
                     if (shape.size() != 3 || shape[0] != l.in || l.out == 0 || l.kernel == 0 || l.stride == 0) {
                       throw ConfigError(where + ": incompatible");
                     }
                     if (shape[1] + 2 * l.padding < l.kernel || shape[2] + 2 * l.padding < l.kernel) {
                       throw ConfigError(where + ": non-positive output extent");
                     }
                     shape = Shape{l.out, (shape[1] + 2 * l.padding - l.kernel) / l.stride + 1,
                                   (shape[2] + 2 * l.padding - l.kernel) / l.stride + 1};
                   },
                   [&](const layer::BatchNorm& l) {
                     if ((shape.size() != 3 && shape.size() != 1) || shape[0] != l.channels) {
                       throw ConfigError(where + ": channel mismatch");
                     }
                   },
                   [&](const layer::MaxPool& l) {
                     if (shape.size() != 3 || l.kernel == 0 || l.stride == 0 || shape[1] < l.kernel ||
                         shape[2] < l.kernel) {
                       throw ConfigError(where + ": invalid pooling geometry");
                     }
                     shape = Shape{shape[0], (shape[1] - l.kernel) / l.stride + 1, (shape[2] - l.kernel) / l.stride + 1};
                   },
                   [&](const layer::Flatten&) { shape = Shape{shape_numel(shape)}; },
               },
               spec.layers[i]);
  }
  if (shape != Shape{spec.classes}) {
    throw ConfigError("network ends in " + shape_to_string(shape) + ", expected " + std::to_string(spec.classes) +
                      " logits");
  }
  return shape;
}

std::string spec_to_text(const NetworkSpec& spec) {
  std::string out;
  out += "name = " + spec.name + "\n";
  out += "input_shape = " + shape_text(spec.input_shape) + "\n";
  out += "classes = " + std::to_string(spec.classes) + "\n";
  out += "layers = " + std::to_string(spec.layers.size()) + "\n";
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    out += "layer." + std::to_string(i) + " = " + layer_to_text(spec.layers[i]) + "\n";
  }
  return out;
}

NetworkSpec spec_from_text(std::string_view text) {
  NetworkSpec spec;
  std::map<std::size_t, LayerSpec> layers;
  std::size_t declared = 0;
  bool have_count = false;
  std::stringstream ss{std::string(text)};
  std::string line;
  while (std::getline(ss, line)) {
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("bad spec line '" + t + "'");
    const std::string key = trim(t.substr(0, eq)), value = trim(t.substr(eq + 1));
    if (key == "name") {
      spec.name = value;
    } else if (key == "input_shape") {
      spec.input_shape = parse_shape(value);
    } else if (key == "classes") {
      spec.classes = parse_size(value, "class count");
    } else if (key == "layers") {
      declared = parse_size(value, "layer count");
      have_count = true;
    } else if (key.rfind("layer.", 0) == 0) {
      layers[parse_size(key.substr(6), "layer index")] = layer_from_text(value);
    } else {
      throw ConfigError("unknown spec key '" + key + "'");
    }
  }
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto it = layers.find(i);
    if (it == layers.end()) throw ConfigError("spec skips layer " + std::to_string(i));
    spec.layers.push_back(it->second);
  }
  if (have_count && declared != spec.layers.size()) throw ConfigError("spec declares a different layer count");
  return spec;
}

std::map<std::string, NetworkSpec> preset_specs(const PresetOptions& options) {
  if (options.conv_width_divisor == 0) throw ConfigError("conv width divisor must be positive");
  std::map<std::string, NetworkSpec> out;
  out["fc_shallow"] = make_fc("fc_shallow", {options.fc_shallow_hidden});
  out["fc_deep"] = make_fc("fc_deep", options.fc_deep_hidden);
  out["conv_a"] = make_conv_a(options.conv_width_divisor);
  out["conv_b"] = make_conv_b(options.conv_width_divisor);
  for (const auto& [name, spec] : out) validate_spec(spec);
  return out;
}

NetworkSpec preset_spec(std::string_view name, const PresetOptions& options) {
  auto all = preset_specs(options);
  const auto it = all.find(std::string(name));
  if (it == all.end()) throw ConfigError("unknown architecture '" + std::string(name) + "'");
  return it->second;
}

Network::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)), seed_(seed) {
  validate_spec(spec_);
  Rng rng(seed_);
  auto uniform_fill = [&](Tensor& t, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.values()) v = (2.0 * uniform01(rng) - 1.0) * bound;
  };
  for (const LayerSpec& l : spec_.layers) {
    Slot slot;
    if (const auto* fc = std::get_if<layer::FullyConnected>(&l)) {
      slot.has_params = true;
      slot.weight = params_.size();
      params_.emplace_back(Shape{fc->out, fc->in});
      uniform_fill(params_.back(), fc->in);
      slot.bias = params_.size();
      params_.emplace_back(Shape{fc->out}, 0.0);
    } else if (const auto* cv = std::get_if<layer::Conv>(&l)) {
      slot.has_params = true;
      slot.weight = params_.size();
      params_.emplace_back(Shape{cv->out, cv->in, cv->kernel, cv->kernel});
      uniform_fill(params_.back(), cv->in * cv->kernel * cv->kernel);
      slot.bias = params_.size();
      params_.emplace_back(Shape{cv->out}, 0.0);
    } else if (const auto* bn = std::get_if<layer::BatchNorm>(&l)) {
      slot.has_params = true;
      slot.weight = params_.size();
      params_.emplace_back(Shape{bn->channels}, 1.0);
      slot.bias = params_.size();
      params_.emplace_back(Shape{bn->channels}, 0.0);
      slot.running = running_.size();
      running_.emplace_back(bn->channels);
    }
    slots_.push_back(slot);
  }
}

std::vector<Tensor*> Network::parameters() {
  std::vector<Tensor*> out;
  for (Tensor& p : params_) out.push_back(&p);
  return out;
}

std::vector<const Tensor*> Network::parameters() const {
  std::vector<const Tensor*> out;
  for (const Tensor& p : params_) out.push_back(&p);
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& p : params_) n += p.numel();
  return n;
}

Tensor& Network::first_layer_weight() {
  if (!std::holds_alternative<layer::FullyConnected>(spec_.layers.front())) {
    throw ConfigError("network '" + spec_.name + "' does not start with a fully-connected layer");
  }
  return params_[slots_.front().weight];
}

const Tensor& Network::first_layer_weight() const { return const_cast<Network*>(this)->first_layer_weight(); }

void Network::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

template <typename ParamFn, typename NormFn>
Var Network::run(Tape& tape, const Var& batch, ParamFn&& param, NormFn&& norm) const {
  (void)tape;
  Var x = batch;
  for (std::size_t i = 0; i < spec_.layers.size(); ++i) {
    const Slot& slot = slots_[i];
    x = std::visit(Overloaded{
                       [&](const layer::FullyConnected&) { return linear(x, param(slot.weight), param(slot.bias)); },
                       [&](const layer::Relu&) { return relu(x); },
                       [&](const layer::Conv& l) {
                         return conv2d(x, param(slot.weight), param(slot.bias), l.stride, l.padding);
                       },
                       [&](const layer::BatchNorm&) {
                         return norm(x, param(slot.weight), param(slot.bias), slot.running);
                       },
                       [&](const layer::MaxPool& l) { return maxpool2d(x, l.kernel, l.stride); },
                       [&](const layer::Flatten&) { return flatten(x); },
                   },
                   spec_.layers[i]);
  }
  return x;
}

namespace {

void check_batch(const NetworkSpec& spec, const Var& batch) {
  const Shape& s = batch.shape();
  if (s.size() != spec.input_shape.size() + 1 || !std::equal(spec.input_shape.begin(), spec.input_shape.end(), s.begin() + 1)) {
    throw DimensionError("batch " + shape_to_string(s) + " does not match network input " +
                         shape_to_string(spec.input_shape));
  }
}

}  // namespace

Var Network::forward(Tape& tape, const Var& batch) {
  check_batch(spec_, batch);
  const bool training = mode_ == Mode::train;
  return run(
      tape, batch, [&](std::size_t idx) { return tape.parameter(params_[idx]); },
      [&](const Var& x, const Var& g, const Var& b, std::size_t r) {
        return training ? batchnorm2d_train(x, g, b, running_[r]) : batchnorm2d_eval(x, g, b, running_[r]);
      });
}

Var Network::forward_eval(Tape& tape, const Var& batch) const {
  check_batch(spec_, batch);
  return run(
      tape, batch, [&](std::size_t idx) { return tape.view(params_[idx]); },
      [&](const Var& x, const Var& g, const Var& b, std::size_t r) { return batchnorm2d_eval(x, g, b, running_[r]); });
}

Tensor Network::infer(const Tensor& batch) const {
  Tape tape;
  return forward_eval(tape, tape.constant(batch)).tensor();
}

std::vector<int> predict(const Network& net, const Dataset& dataset, std::size_t chunk) {
  if (chunk == 0) chunk = 1;
  std::vector<int> out;
  out.reserve(dataset.size());
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < dataset.size(); start += chunk) {
    idx.clear();
    for (std::size_t i = start; i < std::min(dataset.size(), start + chunk); ++i) idx.push_back(i);
    const Tensor logits = net.infer(dataset.batch(idx, net.spec().input_shape));
    const std::size_t classes = logits.dim(1);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c) {
        if (logits[r * classes + c] > logits[r * classes + best]) best = c;
      }
      out.push_back(static_cast<int>(best));
    }
  }
  return out;
}

double accuracy(const Network& net, const Dataset& dataset, std::size_t chunk) {
  if (dataset.size() == 0) throw InputError("accuracy of an empty dataset");
  const auto pred = predict(net, dataset, chunk);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == dataset.labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(dataset.size());
}

}  // namespace etx
