#include "clinrisk/tensor.hpp"

#include <cmath>
#include <sstream>

#include "clinrisk/errors.hpp"

namespace clinrisk {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (auto d : s) {
    if (d <= 0) throw DimensionError("tensor extent must be positive, got shape " + shape_str(s));
    n *= d;
  }
  return n;
}

Tensor::Tensor(Shape shape, bool requires_grad) {
  node_ = std::make_shared<Node>();
  node_->values.assign(static_cast<std::size_t>(shape_numel(shape)), real{0});
  node_->shape = std::move(shape);
  node_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return Tensor(std::move(shape), requires_grad);
}

Tensor Tensor::full(Shape shape, real value, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  for (auto& v : t.node_->values) v = value;
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<real> values, bool requires_grad) {
  if (shape_numel(shape) != static_cast<std::int64_t>(values.size()))
    throw DimensionError("value count " + std::to_string(values.size()) +
                         " does not match shape " + shape_str(shape));
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = std::move(shape);
  t.node_->values = std::move(values);
  t.node_->requires_grad = requires_grad;
  return t;
}

Tensor Tensor::randn(Shape shape, SeededRng& rng, real stddev, bool requires_grad) {
  Tensor t(std::move(shape), requires_grad);
  for (auto& v : t.node_->values) v = static_cast<real>(rng.normal()) * stddev;
  return t;
}

std::int64_t Tensor::dim(int i) const {
  const int rank = static_cast<int>(node_->shape.size());
  if (i < 0) i += rank;
  if (i < 0 || i >= rank)
    throw DimensionError("axis " + std::to_string(i) + " out of range for shape " +
                         shape_str(node_->shape));
  return node_->shape[static_cast<std::size_t>(i)];
}

real Tensor::item() const {
  if (size() != 1)
    throw ContractError("item() requires a scalar tensor, got shape " + shape_str(shape()));
  return node_->values[0];
}

std::vector<real>& Tensor::grad() const {
  if (node_->grad.empty()) node_->grad.assign(node_->values.size(), real{0});
  return node_->grad;
}

Tensor Tensor::clone() const {
  Tensor t;
  t.node_ = std::make_shared<Node>();
  t.node_->shape = node_->shape;
  t.node_->values = node_->values;
  t.node_->requires_grad = node_->requires_grad;
  return t;
}

bool Tensor::all_finite() const {
  for (real v : node_->values)
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

}  // namespace clinrisk
