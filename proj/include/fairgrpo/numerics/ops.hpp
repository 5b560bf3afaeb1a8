#pragma once

// Differentiable operations over Tensor. All matrices are row-major;
// "rows" ops treat a rank-2 tensor as a list of row vectors.

#include <cstdint>
#include <span>

#include "fairgrpo/numerics/tensor.hpp"

namespace fairgrpo::num {

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
// [m,k] x [n,k]^T -> [m,n]; the layout of linear-layer weights.
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
// a[m,n] + row[n] broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
// tanh approximation.
Tensor gelu(const Tensor& a);
Tensor relu(const Tensor& a);
// Gradient is zero where the input was clipped.
Tensor clamp(const Tensor& a, double lo, double hi);
// Elementwise min; ties route the gradient to `a`.
Tensor minimum(const Tensor& a, const Tensor& b);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Max-subtracted softmax along `axis` (negative counts from the back).
Tensor softmax(const Tensor& x, int axis = -1);
Tensor log_softmax(const Tensor& x, int axis = -1);

// Row-wise normalisation of x[m,n] with affine gamma[n], beta[n].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

// Gathers rows table[ids[i]] -> [ids.size(), d].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);
Tensor select_rows(const Tensor& x, std::span<const std::size_t> rows);
// out[i] = x[i, cols[i]] -> [m]
Tensor pick(const Tensor& x, std::span<const std::int32_t> cols);

// Mean token cross-entropy of logits[m,V]; targets < 0 are ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int32_t> targets);

struct AttentionShape {
  std::size_t batch = 1;
  std::size_t seq = 1;
  std::size_t heads = 1;
  bool causal = true;
};

// Multi-head scaled dot-product attention over q,k,v[batch*seq, d].
// key_mask[batch*seq] marks real (non-pad) positions. Queries with no
// visible key produce zeros.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionShape& shape,
                 std::span<const std::uint8_t> key_mask);

// Masked mean over the seq axis of x[batch*seq, d] -> [batch, d]. Rows with
// no real token pool to zero.
Tensor mean_pool(const Tensor& x, std::size_t batch, std::size_t seq,
                 std::span<const std::uint8_t> mask);

// Inverted dropout with a mask drawn from `seed`; identity when p == 0.
Tensor dropout(const Tensor& x, double p, std::uint64_t seed);

Tensor reshape(const Tensor& x, Shape shape);

}  // namespace fairgrpo::num
