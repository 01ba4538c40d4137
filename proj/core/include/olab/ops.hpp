#pragma once

#include "olab/tensor.hpp"

namespace olab {

/// C = A B for rank-2 operands. Summation over the inner axis runs
/// left-to-right, so results are bitwise reproducible across runs.
Tensor matmul(const Tensor &a, const Tensor &b);
/// C = A^T B without materialising the transpose.
Tensor matmul_tn(const Tensor &a, const Tensor &b);
/// C = A B^T without materialising the transpose.
Tensor matmul_nt(const Tensor &a, const Tensor &b);

Tensor transpose(const Tensor &m);

/// Row-wise softmax of `logits` with an additive mask whose entries are 0 or
/// -infinity. Uses per-row max subtraction. Throws if a row is fully masked.
Tensor masked_softmax(const Tensor &logits, const Tensor &mask);
/// Softmax with no mask.
Tensor softmax_rows(const Tensor &logits);

enum class ReduceKind { Sum, Mean, Max, AbsMedian };

/// Reduce `x` along `axis`, dropping that axis (rank-1 input reduces to a
/// rank-1 tensor of size 1). AbsMedian is the median of absolute values with
/// even-count midpoint averaging.
Tensor reduce(const Tensor &x, ReduceKind kind, std::size_t axis);
/// Reduce every element of `x` to a scalar.
double reduce_all(const Tensor &x, ReduceKind kind);

double frobenius_norm(const Tensor &x);
double max_abs(const Tensor &x);

} // namespace olab
