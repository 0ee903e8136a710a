#pragma once

#include <vector>

#include "mbrec/rng.hpp"
#include "mbrec/tensor.hpp"

namespace mbrec::nn {

// Differentiable ops. Every op takes the tape first; passing nullptr runs pure
// inference (no closure recorded, output does not require grad). An op output
// requires grad iff a tape is given and at least one input requires grad.

// [M x K] * [K x N] -> [M x N]
Tensor matmul(GradientTape* tape, const Tensor& a, const Tensor& b);

// a * b^T: [M x K] * [N x K] -> [M x N]
Tensor matmul_nt(GradientTape* tape, const Tensor& a, const Tensor& b);

Tensor add(GradientTape* tape, const Tensor& a, const Tensor& b);
Tensor sub(GradientTape* tape, const Tensor& a, const Tensor& b);
Tensor mul(GradientTape* tape, const Tensor& a, const Tensor& b);
Tensor scale(GradientTape* tape, const Tensor& a, scalar c);

// x [N x D] + bias [D] broadcast over rows.
Tensor add_bias(GradientTape* tape, const Tensor& x, const Tensor& bias);

Tensor relu(GradientTape* tape, const Tensor& x);

// Row-wise softmax with max subtraction; exact zeros for -inf-like masked entries.
Tensor softmax_rows(GradientTape* tape, const Tensor& x);

// Per-row layer normalization with learned gain/bias, population variance.
Tensor layer_norm(GradientTape* tape, const Tensor& x, const Tensor& gain, const Tensor& bias,
                  scalar eps = 1e-6);

// out[i, :] = table[ids[i], :]
Tensor embedding_gather(GradientTape* tape, const Tensor& table, const std::vector<int>& ids);

// Row subset selection; gradient scatters back additively.
Tensor gather_rows(GradientTape* tape, const Tensor& x, const std::vector<std::size_t>& idx);

// Places row i of x at row idx[i] of an [n_rows x D] zero tensor.
Tensor scatter_rows(GradientTape* tape, const Tensor& x, const std::vector<std::size_t>& idx,
                    std::size_t n_rows);

Tensor concat_cols(GradientTape* tape, const std::vector<Tensor>& parts);
Tensor slice_cols(GradientTape* tape, const Tensor& x, std::size_t start, std::size_t width);

// Scalar sum of squared entries.
Tensor sum_squares(GradientTape* tape, const Tensor& x);

// Inverted dropout: scales kept entries by 1/(1-rate). rate 0 returns x as-is.
Tensor dropout(GradientTape* tape, const Tensor& x, scalar rate, Rng& rng);

struct CrossEntropyResult {
    Tensor loss;       // scalar: mean over counted rows
    int counted = 0;   // rows not equal to ignore_index
    bool all_ignored = false;
};

// Mean token cross entropy over rows whose target is not ignore_index, computed
// from logits with max-subtraction stabilization. If every target is ignored the
// loss is an exact zero (detached) and all_ignored is set.
CrossEntropyResult softmax_cross_entropy(GradientTape* tape, const Tensor& logits,
                                         const std::vector<int>& targets, int ignore_index = -1);

}  // namespace mbrec::nn
