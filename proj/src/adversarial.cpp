#include "etx/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "etx/error.hpp"

namespace etx {

std::string_view to_string(AttackMethod method) { return method == AttackMethod::grad ? "grad" : "sign"; }

AttackMethod parse_attack_method(std::string_view name) {
  if (name == "grad") return AttackMethod::grad;
  if (name == "sign") return AttackMethod::sign;
  throw ConfigError("unknown adversarial method '" + std::string(name) + "' (expected grad or sign)");
}

std::vector<std::vector<double>> input_gradients(const Network& net, const Tensor& batch,
                                                 std::span<const int> labels) {
  Tape tape;
  Var x = tape.input(batch);
  Var loss = log_softmax_nll(net.forward_eval(tape, x), labels);
  tape.backward(loss);
  const std::size_t rows = batch.dim(0);
  const std::size_t per = batch.numel() / rows;
  // The loss is a batch mean; undo the 1/B factor so each row is that sample's own gradient.
  const auto scale = static_cast<double>(rows);
  const auto g = x.tensor().grad();
  std::vector<std::vector<double>> out(rows, std::vector<double>(per));
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < per; ++i) out[r][i] = g[r * per + i] * scale;
  }
  return out;
}

std::vector<double> input_gradient(const Network& net, std::span<const double> x, int y) {
  const Shape& in = net.spec().input_shape;
  if (x.size() != shape_numel(in)) {
    throw DimensionError("sample of " + std::to_string(x.size()) + " values does not match input " +
                         shape_to_string(in));
  }
  Shape shape{1};
  shape.insert(shape.end(), in.begin(), in.end());
  const int labels[] = {y};
  return input_gradients(net, Tensor(shape, std::vector<double>(x.begin(), x.end())), labels).front();
}

Direction direction_from_gradient(std::span<const double> gradient, AttackMethod method) {
  Direction d;
  d.method = method;
  d.values.assign(gradient.size(), 0.0);
  const bool zero = std::all_of(gradient.begin(), gradient.end(), [](double v) { return v == 0.0; });
  if (zero) {
    d.degenerate = true;
    return d;
  }
  if (method == AttackMethod::sign) {
    for (std::size_t i = 0; i < gradient.size(); ++i) d.values[i] = gradient[i] > 0 ? 1.0 : gradient[i] < 0 ? -1.0 : 0.0;
    return d;
  }
  // Rescale by the largest magnitude first so squaring cannot underflow or overflow.
  double peak = 0.0;
  for (double v : gradient) peak = std::max(peak, std::abs(v));
  double ss = 0.0;
  for (double v : gradient) ss += (v / peak) * (v / peak);
  const double norm = std::sqrt(ss);
  for (std::size_t i = 0; i < gradient.size(); ++i) d.values[i] = gradient[i] / peak / norm;
  return d;
}

Direction adversarial_direction(const Network& net, std::span<const double> x, int y, AttackMethod method) {
  return direction_from_gradient(input_gradient(net, x, y), method);
}

std::vector<Direction> adversarial_directions(const Network& net, const Dataset& dataset,
                                              std::span<const std::size_t> indices, AttackMethod method,
                                              int model_id, std::size_t chunk) {
  if (chunk == 0) chunk = 1;
  std::vector<Direction> out;
  out.reserve(indices.size());
  for (std::size_t start = 0; start < indices.size(); start += chunk) {
    const auto part = indices.subspan(start, std::min(chunk, indices.size() - start));
    const auto grads =
        input_gradients(net, dataset.batch(part, net.spec().input_shape), dataset.batch_labels(part));
    for (std::size_t r = 0; r < part.size(); ++r) {
      Direction d = direction_from_gradient(grads[r], method);
      d.model_id = model_id;
      d.sample_id = part[r];
      out.push_back(std::move(d));
    }
  }
  return out;
}

double angle_between(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw DomainError("angle between vectors of length " + std::to_string(u.size()) + " and " +
                      std::to_string(v.size()));
  }
  double uv = 0.0, uu = 0.0, vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    uv += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw DomainError("angle with a zero vector is undefined");
  // sqrt(uu * uu) == uu exactly, so identical vectors give exactly 0 degrees.
  const double c = std::clamp(uv / std::sqrt(uu * vv), -1.0, 1.0);
  return std::acos(c) * 180.0 / std::numbers::pi;
}

double fold_angle(double degrees) {
  if (!(degrees >= 0.0 && degrees <= 180.0)) throw DomainError("angle " + std::to_string(degrees) + " outside [0, 180]");
  return degrees <= 90.0 ? degrees : 180.0 - degrees;
}

}  // namespace etx
