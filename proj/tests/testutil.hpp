#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "clinrisk/ops.hpp"
#include "clinrisk/tape.hpp"
#include "clinrisk/tensor.hpp"
#include "doctest.h"

namespace testutil {

using clinrisk::SeededRng;
using clinrisk::Tape;
using clinrisk::Tensor;
using clinrisk::real;

inline Tensor random_tensor(clinrisk::Shape shape, SeededRng& rng, double scale = 1.0,
                            bool requires_grad = false) {
  return Tensor::randn(std::move(shape), rng, static_cast<real>(scale), requires_grad);
}

/// Independent gradient oracle: central finite differences with step h,
/// checked against the tape gradient entry by entry. `loss_fn` must
/// rebuild the whole forward pass from the current parameter values.
inline void check_gradients(const std::function<Tensor(Tape&)>& loss_fn,
                            std::vector<Tensor> params, double tol = 1e-4,
                            double h = 1e-5, std::size_t max_entries_per_param = 0) {
  for (auto& p : params) p.zero_grad();
  Tape tape;
  Tensor loss = loss_fn(tape);
  REQUIRE(loss.size() == 1);
  tape.backward(loss);

  auto loss_value = [&]() {
    Tape silent(false);
    return static_cast<double>(loss_fn(silent).item());
  };

  for (auto& p : params) {
    REQUIRE(p.has_grad());
    const auto& g = p.grad();
    const std::size_t n = static_cast<std::size_t>(p.size());
    const std::size_t step =
        (max_entries_per_param && n > max_entries_per_param) ? n / max_entries_per_param : 1;
    for (std::size_t i = 0; i < n; i += step) {
      const real keep = p.data()[i];
      p.data()[i] = keep + static_cast<real>(h);
      const double up = loss_value();
      p.data()[i] = keep - static_cast<real>(h);
      const double down = loss_value();
      p.data()[i] = keep;
      const double fd = (up - down) / (2.0 * h);
      const double an = static_cast<double>(g[i]);
      const double rel = std::abs(an - fd) / std::max({std::abs(an), std::abs(fd), 1e-3});
      INFO("entry ", i, ": analytic ", an, " vs finite-difference ", fd);
      CHECK(rel < tol);
    }
  }
}

}  // namespace testutil
