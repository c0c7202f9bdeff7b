#pragma once

#include <cstdint>
#include <vector>

#include "clinrisk/tape.hpp"
#include "clinrisk/tensor.hpp"

namespace clinrisk::ops {

/// Standard matrix product [m,k] x [k,n] -> [m,n].
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);

/// a x b^T for [m,k] x [n,k] -> [m,n]. Used for the tied output
/// projection against the embedding table.
Tensor matmul_nt(Tape& tape, const Tensor& a, const Tensor& b);

Tensor add(Tape& tape, const Tensor& a, const Tensor& b);  // same shape
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(Tape& tape, const Tensor& a, real c);

/// Adds row vector b [n] to every row of a [m,n].
Tensor add_rowvec(Tape& tape, const Tensor& a, const Tensor& b);

/// Sum of all entries -> scalar.
Tensor sum(Tape& tape, const Tensor& a);

/// Dot product of two 1-D tensors -> scalar.
Tensor dot(Tape& tape, const Tensor& a, const Tensor& b);

/// Matrix-vector product [r,c] x [c] -> [r].
Tensor matvec(Tape& tape, const Tensor& m, const Tensor& v);

/// Row i of x [n,h] -> 1-D [h].
Tensor select_row(Tape& tape, const Tensor& x, std::int64_t i);

/// Elementwise mean of equally shaped 1-D tensors -> 1-D.
Tensor mean_stack(Tape& tape, const std::vector<Tensor>& parts);

/// Numerically stable softmax over the last axis; each slice sums to 1.
Tensor softmax_lastdim(Tape& tape, const Tensor& x);

/// Standardises each last-axis slice to mean 0 / variance 1 (population
/// variance, eps inside the square root), then applies gain and bias.
Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gain,
                  const Tensor& bias, real eps);

/// Exact Gaussian-CDF GELU: x * Phi(x).
Tensor gelu(Tape& tape, const Tensor& x);

Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor tanh_act(Tape& tape, const Tensor& x);

/// Inverted dropout with keep-scaling; identity when p == 0. Noise comes
/// from the tape's seeded stream.
Tensor dropout(Tape& tape, const Tensor& x, real p);

/// Gathers rows of table [V,h] by id -> [n,h]. Backward scatter-adds.
Tensor embedding_lookup(Tape& tape, const Tensor& table,
                        const std::vector<std::int32_t>& ids);

/// Mean token-level cross entropy over the rows where select[i] != 0.
/// Fused log-softmax keeps large logits stable.
Tensor cross_entropy_masked(Tape& tape, const Tensor& logits,
                            const std::vector<std::int32_t>& targets,
                            const std::vector<std::uint8_t>& select);

/// Binary cross entropy of a scalar logit against target in {0,1}.
Tensor bce_with_logit(Tape& tape, const Tensor& logit, real target);

}  // namespace clinrisk::ops
