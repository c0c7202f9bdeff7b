#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "clinrisk/rng.hpp"

namespace clinrisk {

// Element type of all numeric math. Double keeps enough headroom for
// finite-difference verification; a float profile can be selected at
// configure time for long training runs.
#ifdef CLINRISK_REAL32
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);
std::int64_t shape_numel(const Shape& s);

/// Dense row-major tensor with an optional gradient buffer. Copies are
/// shallow: two Tensor handles may share one underlying buffer, which is
/// how the gradient tape identifies values across operations. Values are
/// treated as immutable once an op has consumed them; only parameter
/// initialisation and the optimizer write through data().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<real> values,
                     bool requires_grad = false);
  static Tensor randn(Shape shape, SeededRng& rng, real stddev,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  /// Extent along axis i; negative i counts from the end.
  std::int64_t dim(int i) const;
  std::int64_t size() const { return static_cast<std::int64_t>(node_->values.size()); }

  const std::vector<real>& values() const { return node_->values; }
  real* data() { return node_->values.data(); }
  const real* data() const { return node_->values.data(); }
  real item() const;  // scalar tensors only

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool v) {
    node_->requires_grad = v;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient buffer, allocated zero on first access. Like the rest of
  /// the handle, constness is shallow: the buffer lives on the shared
  /// node, so backward rules can accumulate through captured copies.
  std::vector<real>& grad() const;
  void zero_grad() const { node_->grad.clear(); }

  /// Stable identity of the underlying buffer (used by tests asserting
  /// tape topology).
  const void* id() const { return node_.get(); }

  /// Deep copy with its own buffer and no gradient.
  Tensor clone() const;

  bool all_finite() const;

 private:
  struct Node {
    Shape shape;
    std::vector<real> values;
    std::vector<real> grad;  // empty until touched
    bool requires_grad = false;
  };
  std::shared_ptr<Node> node_;
};

}  // namespace clinrisk
