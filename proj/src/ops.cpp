#include "clinrisk/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <utility>

#include "clinrisk/errors.hpp"

namespace clinrisk::ops {
namespace {

using EMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

MapC as_matrix(const Tensor& t, std::int64_t rows, std::int64_t cols) {
  return MapC(t.data(), rows, cols);
}

// 2-D view of an arbitrary tensor: all leading axes flattened into rows.
std::pair<std::int64_t, std::int64_t> rows_cols(const Tensor& t) {
  const std::int64_t last = t.dim(-1);
  return {t.size() / last, last};
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shapes differ, " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

bool track(const Tape& tape, const Tensor& a) {
  return tape.recording() && a.requires_grad();
}
bool track(const Tape& tape, const Tensor& a, const Tensor& b) {
  return tape.recording() && (a.requires_grad() || b.requires_grad());
}

}  // namespace

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(0))
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out({m, n});
  MapM(out.data(), m, n).noalias() = as_matrix(a, m, k) * as_matrix(b, k, n);
  if (track(tape, a, b)) {
    out.set_requires_grad(true);
    tape.record([a, b, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      MapC g(out.grad().data(), m, n);
      if (a.requires_grad())
        MapM(a.grad().data(), m, k).noalias() += g * as_matrix(b, k, n).transpose();
      if (b.requires_grad())
        MapM(b.grad().data(), k, n).noalias() += as_matrix(a, m, k).transpose() * g;
    });
  }
  return out;
}

Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2 || a.dim(1) != b.dim(1))
    throw DimensionError("matmul_nt: incompatible shapes " + shape_str(a.shape()) +
                         " x " + shape_str(b.shape()) + "^T");
  const auto m = a.dim(0), k = a.dim(1), n = b.dim(0);
  Tensor out({m, n});
  MapM(out.data(), m, n).noalias() = as_matrix(a, m, k) * as_matrix(b, n, k).transpose();
  if (track(tape, a, b)) {
    out.set_requires_grad(true);
    tape.record([a, b, out, m, k, n]() mutable {
      if (!out.has_grad()) return;
      MapC g(out.grad().data(), m, n);
      if (a.requires_grad())
        MapM(a.grad().data(), m, k).noalias() += g * as_matrix(b, n, k);
      if (b.requires_grad())
        MapM(b.grad().data(), n, k).noalias() += g.transpose() * as_matrix(a, m, k);
    });
  }
  return out;
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out(a.shape());
  const auto n = a.size();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] + b.data()[i];
  if (track(tape, a, b)) {
    out.set_requires_grad(true);
    tape.record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  const auto n = a.size();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  if (track(tape, a, b)) {
    out.set_requires_grad(true);
    tape.record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
      }
    });
  }
  return out;
}

Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  const auto n = a.size();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  if (track(tape, a, b)) {
    out.set_requires_grad(true);
    tape.record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a.data()[i];
      }
    });
  }
  return out;
}

Tensor scale(Tape& tape, const Tensor& a, real c) {
  Tensor out(a.shape());
  const auto n = a.size();
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * c;
  if (track(tape, a)) {
    out.set_requires_grad(true);
    tape.record([a, out, c]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& ga = a.grad();
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
  }
  return out;
}

Tensor add_rowvec(Tape& tape, const Tensor& a, const Tensor& b) {
  const auto [m, n] = rows_cols(a);
  if (b.size() != n)
    throw DimensionError("add_rowvec: row vector " + shape_str(b.shape()) +
                         " does not match last extent of " + shape_str(a.shape()));
  Tensor out(a.shape());
  for (std::int64_t r = 0; r < m; ++r)
    for (std::int64_t c = 0; c < n; ++c)
      out.data()[r * n + c] = a.data()[r * n + c] + b.data()[c];
  if (track(tape, a, b)) {
    out.set_requires_grad(true);
    tape.record([a, b, out, m = m, n = n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::int64_t r = 0; r < m; ++r)
          for (std::int64_t c = 0; c < n; ++c) gb[c] += g[r * n + c];
      }
    });
  }
  return out;
}

Tensor sum(Tape& tape, const Tensor& a) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i) acc += static_cast<double>(a.data()[i]);
  Tensor out = Tensor::from({1}, {static_cast<real>(acc)});
  if (track(tape, a)) {
    out.set_requires_grad(true);
    tape.record([a, out]() mutable {
      if (!out.has_grad()) return;
      const real g = out.grad()[0];
      auto& ga = a.grad();
      for (auto& v : ga) v += g;
    });
  }
  return out;
}

Tensor dot(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.shape().size() != 1 || b.shape().size() != 1 || a.size() != b.size())
    throw DimensionError("dot: expected equal-length vectors, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
  double acc = 0.0;
  for (std::int64_t i = 0; i < a.size(); ++i)
    acc += static_cast<double>(a.data()[i]) * static_cast<double>(b.data()[i]);
  Tensor out = Tensor::from({1}, {static_cast<real>(acc)});
  if (track(tape, a, b)) {
    out.set_requires_grad(true);
    tape.record([a, b, out]() mutable {
      if (!out.has_grad()) return;
      const real g = out.grad()[0];
      if (a.requires_grad()) {
        auto& ga = a.grad();
        for (std::int64_t i = 0; i < a.size(); ++i) ga[i] += g * b.data()[i];
      }
      if (b.requires_grad()) {
        auto& gb = b.grad();
        for (std::int64_t i = 0; i < b.size(); ++i) gb[i] += g * a.data()[i];
      }
    });
  }
  return out;
}

Tensor matvec(Tape& tape, const Tensor& m, const Tensor& v) {
  if (m.shape().size() != 2 || v.shape().size() != 1 || m.dim(1) != v.size())
    throw DimensionError("matvec: incompatible shapes " + shape_str(m.shape()) + " x " +
                         shape_str(v.shape()));
  const auto r = m.dim(0), c = m.dim(1);
  Tensor out({r});
  Eigen::Map<Eigen::Matrix<real, Eigen::Dynamic, 1>>(out.data(), r).noalias() =
      as_matrix(m, r, c) * Eigen::Map<const Eigen::Matrix<real, Eigen::Dynamic, 1>>(v.data(), c);
  if (track(tape, m, v)) {
    out.set_requires_grad(true);
    tape.record([m, v, out, r, c]() mutable {
      if (!out.has_grad()) return;
      using EVec = Eigen::Matrix<real, Eigen::Dynamic, 1>;
      Eigen::Map<const EVec> g(out.grad().data(), r);
      if (m.requires_grad())
        MapM(m.grad().data(), r, c).noalias() +=
            g * Eigen::Map<const EVec>(v.data(), c).transpose();
      if (v.requires_grad())
        Eigen::Map<EVec>(v.grad().data(), c).noalias() += as_matrix(m, r, c).transpose() * g;
    });
  }
  return out;
}

Tensor select_row(Tape& tape, const Tensor& x, std::int64_t i) {
  if (x.shape().size() != 2)
    throw DimensionError("select_row: expected a 2-D tensor, got " + shape_str(x.shape()));
  const auto n = x.dim(0), h = x.dim(1);
  if (i < 0 || i >= n)
    throw ContractError("select_row: row " + std::to_string(i) + " out of range [0, " +
                        std::to_string(n) + ")");
  Tensor out({h});
  for (std::int64_t c = 0; c < h; ++c) out.data()[c] = x.data()[i * h + c];
  if (track(tape, x)) {
    out.set_requires_grad(true);
    tape.record([x, out, i, h]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (std::int64_t c = 0; c < h; ++c) gx[i * h + c] += g[c];
    });
  }
  return out;
}

Tensor mean_stack(Tape& tape, const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("mean_stack: no tensors given");
  const auto n = parts[0].size();
  for (const auto& p : parts) check_same_shape(parts[0], p, "mean_stack");
  Tensor out(parts[0].shape());
  const real inv = real{1} / static_cast<real>(parts.size());
  for (const auto& p : parts)
    for (std::int64_t i = 0; i < n; ++i) out.data()[i] += p.data()[i];
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] *= inv;
  bool any = false;
  for (const auto& p : parts) any = any || p.requires_grad();
  if (tape.recording() && any) {
    out.set_requires_grad(true);
    tape.record([parts, out, inv]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      for (auto& p : parts) {
        if (!p.requires_grad()) continue;
        auto& gp = p.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gp[i] += g[i] * inv;
      }
    });
  }
  return out;
}

Tensor softmax_lastdim(Tape& tape, const Tensor& x) {
  const auto [m, n] = rows_cols(x);
  if (n < 1) throw DimensionError("softmax_lastdim: empty last axis");
  Tensor out(x.shape());
  for (std::int64_t r = 0; r < m; ++r) {
    const real* xi = x.data() + r * n;
    real* yi = out.data() + r * n;
    real mx = xi[0];
    for (std::int64_t c = 1; c < n; ++c) mx = std::max(mx, xi[c]);
    double z = 0.0;
    for (std::int64_t c = 0; c < n; ++c) {
      yi[c] = std::exp(xi[c] - mx);
      z += static_cast<double>(yi[c]);
    }
    const real invz = static_cast<real>(1.0 / z);
    for (std::int64_t c = 0; c < n; ++c) yi[c] *= invz;
  }
  if (track(tape, x)) {
    out.set_requires_grad(true);
    tape.record([x, out, m = m, n = n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (std::int64_t r = 0; r < m; ++r) {
        const real* yi = out.data() + r * n;
        const real* gi = g.data() + r * n;
        double dotgy = 0.0;
        for (std::int64_t c = 0; c < n; ++c) dotgy += static_cast<double>(gi[c]) * yi[c];
        for (std::int64_t c = 0; c < n; ++c)
          gx[r * n + c] += yi[c] * (gi[c] - static_cast<real>(dotgy));
      }
    });
  }
  return out;
}

Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  real eps) {
  const auto [m, n] = rows_cols(x);
  if (gain.size() != n || bias.size() != n)
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " do not match last extent of " +
                         shape_str(x.shape()));
  if (!(eps > real{0})) throw ContractError("layer_norm: eps must be > 0");
  Tensor out(x.shape());
  std::vector<real> xhat(static_cast<std::size_t>(x.size()));
  std::vector<real> inv_std(static_cast<std::size_t>(m));
  for (std::int64_t r = 0; r < m; ++r) {
    const real* xi = x.data() + r * n;
    double mean = 0.0;
    for (std::int64_t c = 0; c < n; ++c) mean += xi[c];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::int64_t c = 0; c < n; ++c) {
      const double d = xi[c] - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    const real istd = static_cast<real>(1.0 / std::sqrt(var + static_cast<double>(eps)));
    inv_std[static_cast<std::size_t>(r)] = istd;
    for (std::int64_t c = 0; c < n; ++c) {
      const real xh = (xi[c] - static_cast<real>(mean)) * istd;
      xhat[static_cast<std::size_t>(r * n + c)] = xh;
      out.data()[r * n + c] = xh * gain.data()[c] + bias.data()[c];
    }
  }
  if (track(tape, x, gain) || track(tape, bias)) {
    out.set_requires_grad(true);
    tape.record([x, gain, bias, out, xh = std::move(xhat), istd = std::move(inv_std),
                 m = m, n = n]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      for (std::int64_t r = 0; r < m; ++r) {
        const real* gi = g.data() + r * n;
        const real* xhr = xh.data() + r * n;
        if (gain.requires_grad()) {
          auto& gg = gain.grad();
          for (std::int64_t c = 0; c < n; ++c) gg[c] += gi[c] * xhr[c];
        }
        if (bias.requires_grad()) {
          auto& gb = bias.grad();
          for (std::int64_t c = 0; c < n; ++c) gb[c] += gi[c];
        }
        if (x.requires_grad()) {
          auto& gx = x.grad();
          double mean_gd = 0.0, mean_gdxh = 0.0;
          for (std::int64_t c = 0; c < n; ++c) {
            const double gd = static_cast<double>(gi[c]) * gain.data()[c];
            mean_gd += gd;
            mean_gdxh += gd * xhr[c];
          }
          mean_gd /= static_cast<double>(n);
          mean_gdxh /= static_cast<double>(n);
          const real is = istd[static_cast<std::size_t>(r)];
          for (std::int64_t c = 0; c < n; ++c) {
            const double gd = static_cast<double>(gi[c]) * gain.data()[c];
            gx[r * n + c] += is * static_cast<real>(gd - mean_gd - xhr[c] * mean_gdxh);
          }
        }
      }
    });
  }
  return out;
}

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
}  // namespace

Tensor gelu(Tape& tape, const Tensor& x) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x.data()[i]);
    out.data()[i] = static_cast<real>(v * 0.5 * (1.0 + std::erf(v * kInvSqrt2)));
  }
  if (track(tape, x)) {
    out.set_requires_grad(true);
    tape.record([x, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (std::int64_t i = 0; i < x.size(); ++i) {
        const double v = static_cast<double>(x.data()[i]);
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        gx[i] += g[i] * static_cast<real>(cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor sigmoid(Tape& tape, const Tensor& x) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const double v = static_cast<double>(x.data()[i]);
    out.data()[i] = static_cast<real>(v >= 0 ? 1.0 / (1.0 + std::exp(-v))
                                             : std::exp(v) / (1.0 + std::exp(v)));
  }
  if (track(tape, x)) {
    out.set_requires_grad(true);
    tape.record([x, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (std::int64_t i = 0; i < x.size(); ++i) {
        const real y = out.data()[i];
        gx[i] += g[i] * y * (real{1} - y);
      }
    });
  }
  return out;
}

Tensor tanh_act(Tape& tape, const Tensor& x) {
  Tensor out(x.shape());
  for (std::int64_t i = 0; i < x.size(); ++i)
    out.data()[i] = static_cast<real>(std::tanh(static_cast<double>(x.data()[i])));
  if (track(tape, x)) {
    out.set_requires_grad(true);
    tape.record([x, out]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (std::int64_t i = 0; i < x.size(); ++i) {
        const real y = out.data()[i];
        gx[i] += g[i] * (real{1} - y * y);
      }
    });
  }
  return out;
}

Tensor dropout(Tape& tape, const Tensor& x, real p) {
  if (p < real{0} || p >= real{1})
    throw ContractError("dropout: p must be in [0, 1)");
  if (p == real{0}) return x;
  Tensor out(x.shape());
  std::vector<real> keep(static_cast<std::size_t>(x.size()));
  const real scale = real{1} / (real{1} - p);
  for (std::int64_t i = 0; i < x.size(); ++i) {
    keep[static_cast<std::size_t>(i)] =
        (tape.rng().uniform() < static_cast<double>(p)) ? real{0} : scale;
    out.data()[i] = x.data()[i] * keep[static_cast<std::size_t>(i)];
  }
  if (track(tape, x)) {
    out.set_requires_grad(true);
    tape.record([x, out, k = std::move(keep)]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gx = x.grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * k[i];
    });
  }
  return out;
}

Tensor embedding_lookup(Tape& tape, const Tensor& table,
                        const std::vector<std::int32_t>& ids) {
  if (table.shape().size() != 2)
    throw DimensionError("embedding_lookup: table must be 2-D, got " +
                         shape_str(table.shape()));
  const auto v = table.dim(0), h = table.dim(1);
  const auto n = static_cast<std::int64_t>(ids.size());
  for (auto id : ids)
    if (id < 0 || id >= v)
      throw DataError("embedding_lookup: id " + std::to_string(id) +
                      " outside table of size " + std::to_string(v));
  Tensor out({n, h});
  for (std::int64_t i = 0; i < n; ++i)
    for (std::int64_t c = 0; c < h; ++c)
      out.data()[i * h + c] = table.data()[static_cast<std::int64_t>(ids[i]) * h + c];
  if (track(tape, table)) {
    out.set_requires_grad(true);
    tape.record([table, out, ids, n, h]() mutable {
      if (!out.has_grad()) return;
      const auto& g = out.grad();
      auto& gt = table.grad();
      for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t c = 0; c < h; ++c)
          gt[static_cast<std::int64_t>(ids[i]) * h + c] += g[i * h + c];
    });
  }
  return out;
}

Tensor cross_entropy_masked(Tape& tape, const Tensor& logits,
                            const std::vector<std::int32_t>& targets,
                            const std::vector<std::uint8_t>& select) {
  if (logits.shape().size() != 2)
    throw DimensionError("cross_entropy_masked: logits must be 2-D, got " +
                         shape_str(logits.shape()));
  const auto n = logits.dim(0), v = logits.dim(1);
  if (static_cast<std::int64_t>(targets.size()) != n ||
      static_cast<std::int64_t>(select.size()) != n)
    throw DimensionError("cross_entropy_masked: targets/select length must equal row count");
  std::vector<std::int64_t> rows;
  for (std::int64_t i = 0; i < n; ++i)
    if (select[static_cast<std::size_t>(i)]) rows.push_back(i);
  if (rows.empty()) throw ContractError("cross_entropy_masked: no rows selected");
  // Probabilities are kept only for the selected rows; backward reuses them.
  std::vector<real> probs(rows.size() * static_cast<std::size_t>(v));
  double loss = 0.0;
  for (std::size_t ri = 0; ri < rows.size(); ++ri) {
    const std::int64_t i = rows[ri];
    const std::int32_t t = targets[static_cast<std::size_t>(i)];
    if (t < 0 || t >= v)
      throw DataError("cross_entropy_masked: target " + std::to_string(t) +
                      " outside vocabulary of size " + std::to_string(v));
    const real* li = logits.data() + i * v;
    real mx = li[0];
    for (std::int64_t c = 1; c < v; ++c) mx = std::max(mx, li[c]);
    double z = 0.0;
    real* pi = probs.data() + ri * static_cast<std::size_t>(v);
    for (std::int64_t c = 0; c < v; ++c) {
      pi[c] = std::exp(li[c] - mx);
      z += static_cast<double>(pi[c]);
    }
    const real invz = static_cast<real>(1.0 / z);
    for (std::int64_t c = 0; c < v; ++c) pi[c] *= invz;
    loss += std::log(z) + static_cast<double>(mx) - static_cast<double>(li[t]);
  }
  loss /= static_cast<double>(rows.size());
  Tensor out = Tensor::from({1}, {static_cast<real>(loss)});
  if (track(tape, logits)) {
    out.set_requires_grad(true);
    tape.record([logits, out, targets, rows, p = std::move(probs), v]() mutable {
      if (!out.has_grad()) return;
      const real g = out.grad()[0] / static_cast<real>(rows.size());
      auto& gl = logits.grad();
      for (std::size_t ri = 0; ri < rows.size(); ++ri) {
        const std::int64_t i = rows[ri];
        const real* pi = p.data() + ri * static_cast<std::size_t>(v);
        for (std::int64_t c = 0; c < v; ++c) gl[i * v + c] += g * pi[c];
        gl[i * v + targets[static_cast<std::size_t>(i)]] -= g;
      }
    });
  }
  return out;
}

Tensor bce_with_logit(Tape& tape, const Tensor& logit, real target) {
  if (logit.size() != 1)
    throw ContractError("bce_with_logit: logit must be scalar, got shape " +
                        shape_str(logit.shape()));
  const double z = static_cast<double>(logit.data()[0]);
  const double t = static_cast<double>(target);
  // max(z,0) - t*z + log(1 + exp(-|z|)) is stable for any z.
  const double loss = std::max(z, 0.0) - t * z + std::log1p(std::exp(-std::abs(z)));
  Tensor out = Tensor::from({1}, {static_cast<real>(loss)});
  if (track(tape, logit)) {
    out.set_requires_grad(true);
    tape.record([logit, out, t]() mutable {
      if (!out.has_grad()) return;
      const double z = static_cast<double>(logit.data()[0]);
      const double s = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
      logit.grad()[0] += out.grad()[0] * static_cast<real>(s - t);
    });
  }
  return out;
}

}  // namespace clinrisk::ops
