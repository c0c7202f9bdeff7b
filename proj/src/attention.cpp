#include "clinrisk/attention.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <utility>

#include "clinrisk/errors.hpp"

namespace clinrisk {
namespace {

constexpr real kMaskBias = real{-1e9};

using EMat = Eigen::Matrix<real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EVec = Eigen::Matrix<real, Eigen::Dynamic, 1>;
using StridedC = Eigen::Map<const EMat, 0, Eigen::OuterStride<>>;
using Strided = Eigen::Map<EMat, 0, Eigen::OuterStride<>>;

// Rows [row0, row0+len) of one head's slice inside a [n, heads*d] buffer.
StridedC head_rows(const real* base, std::int64_t row0, std::int64_t len,
                   std::int64_t head_off, std::int64_t d, std::int64_t stride) {
  return StridedC(base + row0 * stride + head_off, len, d, Eigen::OuterStride<>(stride));
}
Strided head_rows_mut(real* base, std::int64_t row0, std::int64_t len,
                      std::int64_t head_off, std::int64_t d, std::int64_t stride) {
  return Strided(base + row0 * stride + head_off, len, d, Eigen::OuterStride<>(stride));
}

void check_qkv(const Tensor& q, const Tensor& k, const Tensor& v,
               const AttentionMask& mask, const AttentionConfig& cfg) {
  cfg.validate();
  mask.validate();
  if (q.shape().size() != 2 || q.shape() != k.shape() || q.shape() != v.shape())
    throw DimensionError("attention: q/k/v shapes differ: " + shape_str(q.shape()) + ", " +
                         shape_str(k.shape()) + ", " + shape_str(v.shape()));
  if (q.dim(1) != cfg.hidden())
    throw DimensionError("attention: input width " + shape_str(q.shape()) +
                         " does not equal num_heads*head_dim = " +
                         std::to_string(cfg.hidden()));
  if (q.dim(0) < 1) throw DimensionError("attention: empty sequence");
  if (mask.length() != q.dim(0))
    throw DimensionError("attention: mask length " + std::to_string(mask.length()) +
                         " does not match sequence length " + std::to_string(q.dim(0)));
}

// Stable softmax in place over a small score vector.
void softmax_inplace(EVec& s) {
  const real mx = s.maxCoeff();
  double z = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    s[i] = std::exp(s[i] - mx);
    z += static_cast<double>(s[i]);
  }
  s *= static_cast<real>(1.0 / z);
}

std::vector<std::int64_t> valid_globals(const AttentionMask& mask) {
  std::vector<std::int64_t> g;
  for (std::int64_t j = 0; j < mask.length(); ++j)
    if (mask.global[static_cast<std::size_t>(j)] && mask.padding[static_cast<std::size_t>(j)])
      g.push_back(j);
  return g;
}

}  // namespace

void AttentionConfig::validate() const {
  if (num_heads <= 0 || head_dim <= 0)
    throw ConfigError("attention: num_heads and head_dim must be positive");
  if (window < 2) throw ConfigError("attention: window must be >= 2");
  if (window % 2 != 0) throw ConfigError("attention: window must be even");
}

AttentionMask AttentionMask::all_valid(std::int64_t n) {
  AttentionMask m;
  m.padding.assign(static_cast<std::size_t>(n), 1);
  m.global.assign(static_cast<std::size_t>(n), 0);
  return m;
}

AttentionMask AttentionMask::classify(std::int64_t n) {
  AttentionMask m = all_valid(n);
  m.global[0] = 1;
  return m;
}

void AttentionMask::validate() const {
  if (padding.size() != global.size())
    throw DimensionError("attention mask: padding and global lengths differ");
  for (std::size_t i = 0; i < padding.size(); ++i)
    if (global[i] && !padding[i])
      throw ContractError("attention mask: position " + std::to_string(i) +
                          " is global but padded");
}

Tensor dense_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                       const AttentionMask& mask, const AttentionConfig& cfg) {
  check_qkv(q, k, v, mask, cfg);
  const std::int64_t n = q.dim(0), h = cfg.num_heads, d = cfg.head_dim, hd = cfg.hidden();
  const real inv_sqrt_d = static_cast<real>(1.0 / std::sqrt(static_cast<double>(d)));

  Tensor out({n, hd});
  const bool rec = tape.recording() &&
                   (q.requires_grad() || k.requires_grad() || v.requires_grad());
  // One weight matrix per head, retained only when a backward pass can happen.
  std::vector<EMat> saved;
  if (rec) saved.resize(static_cast<std::size_t>(h));

  for (std::int64_t hh = 0; hh < h; ++hh) {
    const std::int64_t off = hh * d;
    auto Q = head_rows(q.data(), 0, n, off, d, hd);
    auto K = head_rows(k.data(), 0, n, off, d, hd);
    auto V = head_rows(v.data(), 0, n, off, d, hd);
    EMat S(n, n);
    S.noalias() = Q * K.transpose();
    S *= inv_sqrt_d;
    for (std::int64_t j = 0; j < n; ++j)
      if (!mask.padding[static_cast<std::size_t>(j)]) S.col(j).array() += kMaskBias;
    for (std::int64_t i = 0; i < n; ++i) {
      EVec row = S.row(i);
      softmax_inplace(row);
      S.row(i) = row;
    }
    auto O = head_rows_mut(out.data(), 0, n, off, d, hd);
    O.noalias() = S * V;
    if (rec) saved[static_cast<std::size_t>(hh)] = std::move(S);
  }
  for (std::int64_t i = 0; i < n; ++i)
    if (!mask.padding[static_cast<std::size_t>(i)])
      std::fill(out.data() + i * hd, out.data() + (i + 1) * hd, real{0});

  if (rec) {
    out.set_requires_grad(true);
    tape.record([q, k, v, out, mask, cfg, w = std::move(saved), n, h, d, hd,
                 inv_sqrt_d]() mutable {
      if (!out.has_grad()) return;
      std::vector<real> gout = out.grad();
      for (std::int64_t i = 0; i < n; ++i)
        if (!mask.padding[static_cast<std::size_t>(i)])
          std::fill(gout.begin() + i * hd, gout.begin() + (i + 1) * hd, real{0});
      for (std::int64_t hh = 0; hh < h; ++hh) {
        const std::int64_t off = hh * d;
        auto Q = head_rows(q.data(), 0, n, off, d, hd);
        auto K = head_rows(k.data(), 0, n, off, d, hd);
        auto V = head_rows(v.data(), 0, n, off, d, hd);
        auto G = head_rows(gout.data(), 0, n, off, d, hd);
        const EMat& A = w[static_cast<std::size_t>(hh)];
        // dV = A^T G
        if (v.requires_grad()) {
          auto GV = head_rows_mut(v.grad().data(), 0, n, off, d, hd);
          GV.noalias() += A.transpose() * G;
        }
        if (q.requires_grad() || k.requires_grad()) {
          EMat dA(n, n);
          dA.noalias() = G * V.transpose();
          // dS = A o (dA - rowsum(A o dA))
          for (std::int64_t i = 0; i < n; ++i) {
            const real c = static_cast<real>(
                (A.row(i).array() * dA.row(i).array()).sum());
            dA.row(i) = A.row(i).array() * (dA.row(i).array() - c);
          }
          dA *= inv_sqrt_d;
          if (q.requires_grad()) {
            auto GQ = head_rows_mut(q.grad().data(), 0, n, off, d, hd);
            GQ.noalias() += dA * K;
          }
          if (k.requires_grad()) {
            auto GK = head_rows_mut(k.grad().data(), 0, n, off, d, hd);
            GK.noalias() += dA.transpose() * Q;
          }
        }
      }
    });
  }
  return out;
}

namespace {

// Banded forward/backward share this walk. For each valid query the key
// list is the window slice [lo, hi] followed by out-of-window globals;
// global queries use the full range instead.
struct BandLayout {
  std::int64_t lo = 0, hi = -1;           // window slice (inclusive)
  std::vector<std::int64_t>* extras = nullptr;  // globals outside [lo, hi]
};

}  // namespace

Tensor longformer_attention(Tape& tape, const Tensor& q, const Tensor& k, const Tensor& v,
                            const AttentionMask& mask, const AttentionConfig& cfg) {
  check_qkv(q, k, v, mask, cfg);
  const std::int64_t n = q.dim(0), h = cfg.num_heads, d = cfg.head_dim, hd = cfg.hidden();
  const std::int64_t half = cfg.window / 2;
  const real inv_sqrt_d = static_cast<real>(1.0 / std::sqrt(static_cast<double>(d)));
  const std::vector<std::int64_t> globals = valid_globals(mask);

  Tensor out({n, hd});
  const bool rec = tape.recording() &&
                   (q.requires_grad() || k.requires_grad() || v.requires_grad());
  // Saved softmax weights, flat per head in query order. Offsets are
  // recomputed in backward from the same geometry.
  std::vector<std::vector<real>> saved(rec ? static_cast<std::size_t>(h) : 0);

  for (std::int64_t hh = 0; hh < h; ++hh) {
    const std::int64_t off = hh * d;
    auto K = head_rows(k.data(), 0, n, off, d, hd);
    auto V = head_rows(v.data(), 0, n, off, d, hd);
    std::vector<real>* keep = rec ? &saved[static_cast<std::size_t>(hh)] : nullptr;
    for (std::int64_t i = 0; i < n; ++i) {
      real* oi = out.data() + i * hd + off;
      if (!mask.padding[static_cast<std::size_t>(i)]) {
        std::fill(oi, oi + d, real{0});
        continue;
      }
      Eigen::Map<const EVec> qi(q.data() + i * hd + off, d);
      Eigen::Map<EVec> outv(oi, d);
      if (mask.global[static_cast<std::size_t>(i)]) {
        // Global query: one pass over every key.
        EVec s(n);
        s.noalias() = K * qi;
        s *= inv_sqrt_d;
        for (std::int64_t j = 0; j < n; ++j)
          if (!mask.padding[static_cast<std::size_t>(j)]) s[j] += kMaskBias;
        softmax_inplace(s);
        outv.noalias() = V.transpose() * s;
        if (keep) keep->insert(keep->end(), s.data(), s.data() + n);
      } else {
        const std::int64_t lo = std::max<std::int64_t>(0, i - half);
        const std::int64_t hi = std::min<std::int64_t>(n - 1, i + half);
        const std::int64_t band = hi - lo + 1;
        std::int64_t extra = 0;
        for (auto gpos : globals)
          if (gpos < lo || gpos > hi) ++extra;
        EVec s(band + extra);
        auto Kb = head_rows(k.data(), lo, band, off, d, hd);
        s.head(band).noalias() = Kb * qi;
        std::int64_t e = band;
        for (auto gpos : globals)
          if (gpos < lo || gpos > hi)
            s[e++] = K.row(gpos).dot(qi);
        s *= inv_sqrt_d;
        for (std::int64_t j = 0; j < band; ++j)
          if (!mask.padding[static_cast<std::size_t>(lo + j)]) s[j] += kMaskBias;
        softmax_inplace(s);
        auto Vb = head_rows(v.data(), lo, band, off, d, hd);
        outv.noalias() = Vb.transpose() * s.head(band);
        e = band;
        for (auto gpos : globals)
          if (gpos < lo || gpos > hi) outv.noalias() += s[e++] * V.row(gpos).transpose();
        if (keep) keep->insert(keep->end(), s.data(), s.data() + s.size());
      }
    }
  }

  if (rec) {
    out.set_requires_grad(true);
    tape.record([q, k, v, out, mask, cfg, globals, saved = std::move(saved), n, h, d, hd,
                 half, inv_sqrt_d]() mutable {
      if (!out.has_grad()) return;
      const auto& gout = out.grad();
      for (std::int64_t hh = 0; hh < h; ++hh) {
        const std::int64_t off = hh * d;
        auto K = head_rows(k.data(), 0, n, off, d, hd);
        auto V = head_rows(v.data(), 0, n, off, d, hd);
        const std::vector<real>& w = saved[static_cast<std::size_t>(hh)];
        std::size_t pos = 0;
        for (std::int64_t i = 0; i < n; ++i) {
          if (!mask.padding[static_cast<std::size_t>(i)]) continue;
          Eigen::Map<const EVec> gi(gout.data() + i * hd + off, d);
          Eigen::Map<const EVec> qi(q.data() + i * hd + off, d);
          const bool is_global = mask.global[static_cast<std::size_t>(i)] != 0;
          std::int64_t lo = 0, band = n, extra = 0;
          if (!is_global) {
            lo = std::max<std::int64_t>(0, i - half);
            const std::int64_t hi = std::min<std::int64_t>(n - 1, i + half);
            band = hi - lo + 1;
            for (auto gpos : globals)
              if (gpos < lo || gpos > lo + band - 1) ++extra;
          }
          const std::int64_t len = band + extra;
          Eigen::Map<const EVec> a(w.data() + pos, len);
          pos += static_cast<std::size_t>(len);

          // dA_j = gi . V_j over the key list, then the softmax pullback.
          EVec dA(len);
          auto Vb = head_rows(v.data(), lo, band, off, d, hd);
          dA.head(band).noalias() = Vb * gi;
          std::int64_t e = band;
          if (!is_global)
            for (auto gpos : globals)
              if (gpos < lo || gpos > lo + band - 1) dA[e++] = V.row(gpos).dot(gi);
          const real c = static_cast<real>(a.dot(dA));
          EVec dS = (a.array() * (dA.array() - c)).matrix() * inv_sqrt_d;

          if (v.requires_grad()) {
            auto GVb = head_rows_mut(v.grad().data(), lo, band, off, d, hd);
            GVb.noalias() += a.head(band) * gi.transpose();
            e = band;
            if (!is_global)
              for (auto gpos : globals)
                if (gpos < lo || gpos > lo + band - 1) {
                  Eigen::Map<EVec> gv(v.grad().data() + gpos * hd + off, d);
                  gv.noalias() += a[e++] * gi;
                }
          }
          if (q.requires_grad()) {
            Eigen::Map<EVec> gq(q.grad().data() + i * hd + off, d);
            auto Kb = head_rows(k.data(), lo, band, off, d, hd);
            gq.noalias() += Kb.transpose() * dS.head(band);
            e = band;
            if (!is_global)
              for (auto gpos : globals)
                if (gpos < lo || gpos > lo + band - 1)
                  gq.noalias() += dS[e++] * K.row(gpos).transpose();
          }
          if (k.requires_grad()) {
            auto GKb = head_rows_mut(k.grad().data(), lo, band, off, d, hd);
            GKb.noalias() += dS.head(band) * qi.transpose();
            e = band;
            if (!is_global)
              for (auto gpos : globals)
                if (gpos < lo || gpos > lo + band - 1) {
                  Eigen::Map<EVec> gk(k.grad().data() + gpos * hd + off, d);
                  gk.noalias() += dS[e++] * qi;
                }
          }
        }
      }
    });
  }
  return out;
}

std::vector<std::int64_t> receptive_set(std::int64_t i, std::int64_t n,
                                        const AttentionMask& mask,
                                        const AttentionConfig& cfg) {
  cfg.validate();
  mask.validate();
  if (i < 0 || i >= n)
    throw ContractError("receptive_set: position " + std::to_string(i) +
                        " out of range [0, " + std::to_string(n) + ")");
  std::vector<std::int64_t> set;
  if (!mask.padding[static_cast<std::size_t>(i)]) return set;
  if (mask.global[static_cast<std::size_t>(i)]) {
    for (std::int64_t j = 0; j < n; ++j)
      if (mask.padding[static_cast<std::size_t>(j)]) set.push_back(j);
    return set;
  }
  const std::int64_t half = cfg.window / 2;
  const std::int64_t lo = std::max<std::int64_t>(0, i - half);
  const std::int64_t hi = std::min<std::int64_t>(n - 1, i + half);
  for (std::int64_t j = 0; j < n; ++j) {
    if (!mask.padding[static_cast<std::size_t>(j)]) continue;
    const bool in_window = j >= lo && j <= hi;
    if (in_window || mask.global[static_cast<std::size_t>(j)]) set.push_back(j);
  }
  return set;
}

}  // namespace clinrisk
