#pragma once

#include "d3desk/tensor.hpp"

namespace d3desk::ad {

// Elementwise. Shapes must match exactly, except that the second operand of
// add/sub/mul may omit the leading (batch/row) dimension and is then applied
// to every row. No other broadcasting.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, Scalar s);
Tensor add_scalar(const Tensor& a, Scalar s);

Tensor relu(const Tensor& a);
Tensor tanh_op(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor exp_op(const Tensor& a);
Tensor log_op(const Tensor& a);
Tensor abs_op(const Tensor& a);

// Linear algebra (2D, with 1D vectors promoted on either side).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

// Softmax family over the last dimension (1D vector or 2D row-wise).
Tensor softmax(const Tensor& a);
Tensor log_softmax(const Tensor& a);

// Reductions to a single element.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor max_all(const Tensor& a);  // ties: first index

// Reductions over dim 0 of a 2D tensor: [n,f] -> [f].
Tensor mean_dim0(const Tensor& a);
Tensor max_dim0(const Tensor& a);  // ties: first row

// Structure.
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, int dim);
Tensor slice(const Tensor& a, int dim, int start, int len);
Tensor stack_rows(const std::vector<Tensor>& rows);       // k×[f] -> [k,f]
Tensor gather_rows(const Tensor& a, std::vector<int> ix); // [n,f] -> [|ix|,f]

// Embedding lookup is row gathering from a [V,E] table.
inline Tensor embedding(const Tensor& table, std::vector<int> ids) {
  return gather_rows(table, std::move(ids));
}

// Losses. cross_entropy takes logits [n,C] (or [C]) and one target id per
// row; result is the mean over rows. bce_with_logits matches targets in
// [0,1] elementwise, mean-reduced, computed in the numerically stable form.
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& targets);
Tensor bce_with_logits(const Tensor& logits, const std::vector<Scalar>& targets);

// Row-wise cosine similarity of [n,d] against [n,d] -> [n]; 1D inputs are a
// single row. Zero-norm rows are guarded to avoid division by zero.
Tensor cosine_rows(const Tensor& a, const Tensor& b);

Tensor l1_norm(const Tensor& a);
Tensor l2_norm(const Tensor& a);

}  // namespace d3desk::ad
