#pragma once

#include <vector>

#include "pflab/tape.hpp"
#include "pflab/tensor.hpp"

namespace pflab::ops {

// Primitive set. Every backward rule below is written in terms of these same
// primitives, so the set is closed under differentiation and gradients of
// gradients come out of the ordinary backward machinery.

Tensor add(Tape& t, const Tensor& a, const Tensor& b);
Tensor sub(Tape& t, const Tensor& a, const Tensor& b);
Tensor mul(Tape& t, const Tensor& a, const Tensor& b);
Tensor div(Tape& t, const Tensor& a, const Tensor& b);
Tensor neg(Tape& t, const Tensor& a);
Tensor add_const(Tape& t, const Tensor& a, double c);
Tensor mul_const(Tape& t, const Tensor& a, double c);
Tensor exp(Tape& t, const Tensor& a);
Tensor log(Tape& t, const Tensor& a);
Tensor tanh(Tape& t, const Tensor& a);
Tensor sqrt(Tape& t, const Tensor& a);

// Elementwise minimum; on ties gradient goes to the first argument.
Tensor min2(Tape& t, const Tensor& a, const Tensor& b);
// Clamp to [lo, hi]; gradient passes where the input lies inside the range.
Tensor clamp_const(Tape& t, const Tensor& a, double lo, double hi);

// a [m,k] x b [k,n] -> [m,n]; trans flags reinterpret the stored operands.
Tensor matmul(Tape& t, const Tensor& a, const Tensor& b, bool trans_a = false,
              bool trans_b = false);

Tensor reshape(Tape& t, const Tensor& a, Shape shape);

// X [m,n], idx[m] -> [m] picking X[i, idx[i]].
Tensor gather_rows(Tape& t, const Tensor& x, std::vector<int> idx);
// v [m], idx[m], n -> [m,n] with out[i, idx[i]] = v[i].
Tensor scatter_rows(Tape& t, const Tensor& v, std::vector<int> idx, int n);

Tensor sum_all(Tape& t, const Tensor& a);              // -> scalar
Tensor expand(Tape& t, const Tensor& s, Shape shape);  // scalar -> shape
Tensor sum_axis0(Tape& t, const Tensor& x);            // [m,n] -> [n]
Tensor broadcast_row(Tape& t, const Tensor& v, int m); // [n]   -> [m,n]
Tensor sum_axis1(Tape& t, const Tensor& x);            // [m,n] -> [m]
Tensor broadcast_col(Tape& t, const Tensor& v, int n); // [m]   -> [m,n]

// Composites (no nodes of their own).

Tensor bias_add(Tape& t, const Tensor& x, const Tensor& b);
Tensor mean_all(Tape& t, const Tensor& a);
Tensor dot_flat(Tape& t, const Tensor& a, const Tensor& b);

// Row-wise log-sum-exp, shifted by the (detached) row max; the shift cancels
// analytically so gradients stay exact while large logits cannot overflow.
Tensor logsumexp_rows(Tape& t, const Tensor& x);
Tensor log_softmax_rows(Tape& t, const Tensor& x);
Tensor softmax_rows(Tape& t, const Tensor& x);

// 1-d conveniences on [n] vectors.
Tensor softmax(Tape& t, const Tensor& logits);
Tensor cross_entropy_onehot(Tape& t, const Tensor& logits, int target);

}  // namespace pflab::ops
