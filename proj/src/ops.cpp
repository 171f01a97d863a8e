#include "pflab/ops.hpp"

#include <algorithm>
#include <cmath>

#include "pflab/common.hpp"

#ifdef PFLAB_USE_CBLAS
#include <cblas.h>
#endif

namespace pflab::ops {

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* name) {
  check(a.shape() == b.shape(),
        std::string(name) + ": shape mismatch " + shape_str(a.shape()) +
            " vs " + shape_str(b.shape()));
}

Tensor binary_map(Tape& t, const Tensor& a, const Tensor& b, const char* name,
                  double (*f)(double, double), Tape::Vjp vjp) {
  require_same_shape(a, b, name);
  Tensor out = Tensor::zeros(a.shape());
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.mutable_data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = f(ad[i], bd[i]);
  t.emit(out, {t.watch(a), t.watch(b)}, std::move(vjp));
  return out;
}

void gemm(bool ta, bool tb, int m, int n, int k, const double* a, int lda,
          const double* b, int ldb, double* c, int ldc) {
#ifdef PFLAB_USE_CBLAS
  cblas_dgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans,
              tb ? CblasTrans : CblasNoTrans, m, n, k, 1.0, a, lda, b, ldb,
              0.0, c, ldc);
#else
  std::fill(c, c + static_cast<size_t>(m) * static_cast<size_t>(ldc), 0.0);
  auto A = [&](int i, int j) { return ta ? a[j * lda + i] : a[i * lda + j]; };
  auto B = [&](int i, int j) { return tb ? b[j * ldb + i] : b[i * ldb + j]; };
  for (int i = 0; i < m; ++i)
    for (int p = 0; p < k; ++p) {
      double av = A(i, p);
      if (av == 0.0) continue;
      for (int j = 0; j < n; ++j) c[i * ldc + j] += av * B(p, j);
    }
#endif
}

}  // namespace

Tensor add(Tape& t, const Tensor& a, const Tensor& b) {
  return binary_map(
      t, a, b, "add", [](double x, double y) { return x + y; },
      [](Tape&, const Tensor& g, const std::vector<bool>& need) {
        std::vector<Tensor> r(2);
        if (need[0]) r[0] = g;
        if (need[1]) r[1] = g;
        return r;
      });
}

Tensor sub(Tape& t, const Tensor& a, const Tensor& b) {
  return binary_map(
      t, a, b, "sub", [](double x, double y) { return x - y; },
      [](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
        std::vector<Tensor> r(2);
        if (need[0]) r[0] = g;
        if (need[1]) r[1] = neg(tp, g);
        return r;
      });
}

Tensor mul(Tape& t, const Tensor& a, const Tensor& b) {
  return binary_map(
      t, a, b, "mul", [](double x, double y) { return x * y; },
      [a, b](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
        std::vector<Tensor> r(2);
        if (need[0]) r[0] = mul(tp, g, b);
        if (need[1]) r[1] = mul(tp, g, a);
        return r;
      });
}

Tensor div(Tape& t, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  Tensor out = Tensor::zeros(a.shape());
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.mutable_data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] / bd[i];
  t.emit(out, {t.watch(a), t.watch(b)},
         [out, b](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(2);
           if (need[0]) r[0] = div(tp, g, b);
           if (need[1]) r[1] = neg(tp, mul(tp, g, div(tp, out, b)));
           return r;
         });
  return out;
}

Tensor neg(Tape& t, const Tensor& a) { return mul_const(t, a, -1.0); }

Tensor add_const(Tape& t, const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  auto ad = a.data();
  auto od = out.mutable_data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] + c;
  t.emit(out, {t.watch(a)},
         [](Tape&, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(1);
           if (need[0]) r[0] = g;
           return r;
         });
  return out;
}

Tensor mul_const(Tape& t, const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  auto ad = a.data();
  auto od = out.mutable_data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = ad[i] * c;
  t.emit(out, {t.watch(a)},
         [c](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(1);
           if (need[0]) r[0] = mul_const(tp, g, c);
           return r;
         });
  return out;
}

Tensor exp(Tape& t, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  auto ad = a.data();
  auto od = out.mutable_data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = std::exp(ad[i]);
  t.emit(out, {t.watch(a)},
         [out](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(1);
           if (need[0]) r[0] = mul(tp, g, out);
           return r;
         });
  return out;
}

Tensor log(Tape& t, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  auto ad = a.data();
  auto od = out.mutable_data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = std::log(ad[i]);
  t.emit(out, {t.watch(a)},
         [a](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(1);
           if (need[0]) r[0] = div(tp, g, a);
           return r;
         });
  return out;
}

Tensor tanh(Tape& t, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  auto ad = a.data();
  auto od = out.mutable_data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = std::tanh(ad[i]);
  t.emit(out, {t.watch(a)},
         [out](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(1);
           if (need[0]) {
             Tensor one_minus_sq =
                 add_const(tp, neg(tp, mul(tp, out, out)), 1.0);
             r[0] = mul(tp, g, one_minus_sq);
           }
           return r;
         });
  return out;
}

Tensor sqrt(Tape& t, const Tensor& a) {
  Tensor out = Tensor::zeros(a.shape());
  auto ad = a.data();
  auto od = out.mutable_data();
  for (size_t i = 0; i < od.size(); ++i) od[i] = std::sqrt(ad[i]);
  t.emit(out, {t.watch(a)},
         [out](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(1);
           if (need[0]) r[0] = div(tp, g, mul_const(tp, out, 2.0));
           return r;
         });
  return out;
}

Tensor min2(Tape& t, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "min2");
  Tensor out = Tensor::zeros(a.shape());
  Tensor mask_a = Tensor::zeros(a.shape());
  Tensor mask_b = Tensor::zeros(a.shape());
  auto ad = a.data();
  auto bd = b.data();
  auto od = out.mutable_data();
  auto ma = mask_a.mutable_data();
  auto mb = mask_b.mutable_data();
  for (size_t i = 0; i < od.size(); ++i) {
    bool first = ad[i] <= bd[i];
    od[i] = first ? ad[i] : bd[i];
    ma[i] = first ? 1.0 : 0.0;
    mb[i] = first ? 0.0 : 1.0;
  }
  t.emit(out, {t.watch(a), t.watch(b)},
         [mask_a, mask_b](Tape& tp, const Tensor& g,
                          const std::vector<bool>& need) {
           std::vector<Tensor> r(2);
           if (need[0]) r[0] = mul(tp, g, mask_a);
           if (need[1]) r[1] = mul(tp, g, mask_b);
           return r;
         });
  return out;
}

Tensor clamp_const(Tape& t, const Tensor& a, double lo, double hi) {
  check(lo <= hi, "clamp_const: lo > hi");
  Tensor out = Tensor::zeros(a.shape());
  Tensor mask = Tensor::zeros(a.shape());
  auto ad = a.data();
  auto od = out.mutable_data();
  auto md = mask.mutable_data();
  for (size_t i = 0; i < od.size(); ++i) {
    od[i] = std::min(hi, std::max(lo, ad[i]));
    md[i] = (ad[i] >= lo && ad[i] <= hi) ? 1.0 : 0.0;
  }
  t.emit(out, {t.watch(a)},
         [mask](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(1);
           if (need[0]) r[0] = mul(tp, g, mask);
           return r;
         });
  return out;
}

Tensor matmul(Tape& t, const Tensor& a, const Tensor& b, bool trans_a,
              bool trans_b) {
  check(!(trans_a && trans_b), "matmul: double-transpose form is not used");
  check(a.rank() == 2 && b.rank() == 2, "matmul: operands must be rank 2");
  int m = trans_a ? a.dim(1) : a.dim(0);
  int k = trans_a ? a.dim(0) : a.dim(1);
  int kb = trans_b ? b.dim(1) : b.dim(0);
  int n = trans_b ? b.dim(0) : b.dim(1);
  check(k == kb, "matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                     (trans_a ? "^T" : "") + " x " + shape_str(b.shape()) +
                     (trans_b ? "^T" : ""));
  Tensor out = Tensor::zeros({m, n});
  gemm(trans_a, trans_b, m, n, k, a.data().data(), a.dim(1), b.data().data(),
       b.dim(1), out.mutable_data().data(), n);
  t.emit(out, {t.watch(a), t.watch(b)},
         [a, b, trans_a, trans_b](Tape& tp, const Tensor& g,
                                  const std::vector<bool>& need) {
           std::vector<Tensor> r(2);
           if (!trans_a && !trans_b) {
             if (need[0]) r[0] = matmul(tp, g, b, false, true);
             if (need[1]) r[1] = matmul(tp, a, g, true, false);
           } else if (!trans_a && trans_b) {
             if (need[0]) r[0] = matmul(tp, g, b, false, false);
             if (need[1]) r[1] = matmul(tp, g, a, true, false);
           } else {  // trans_a && !trans_b
             if (need[0]) r[0] = matmul(tp, b, g, false, true);
             if (need[1]) r[1] = matmul(tp, a, g, false, false);
           }
           return r;
         });
  return out;
}

Tensor reshape(Tape& t, const Tensor& a, Shape shape) {
  check(shape_numel(shape) == a.size(),
        "reshape: element count mismatch " + shape_str(a.shape()) + " -> " +
            shape_str(shape));
  Tensor out = Tensor::from_data(shape,
                                 std::vector<double>(a.data().begin(),
                                                     a.data().end()));
  Shape orig = a.shape();
  t.emit(out, {t.watch(a)},
         [orig](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(1);
           if (need[0]) r[0] = reshape(tp, g, orig);
           return r;
         });
  return out;
}

Tensor gather_rows(Tape& t, const Tensor& x, std::vector<int> idx) {
  check(x.rank() == 2, "gather_rows: rank-2 input required");
  int m = x.dim(0), n = x.dim(1);
  check(static_cast<int>(idx.size()) == m, "gather_rows: index count mismatch");
  for (int i : idx)
    check(i >= 0 && i < n, "gather_rows: index " + std::to_string(i) +
                               " out of range [0," + std::to_string(n) + ")");
  Tensor out = Tensor::zeros({m});
  auto xd = x.data();
  auto od = out.mutable_data();
  for (int i = 0; i < m; ++i)
    od[static_cast<size_t>(i)] =
        xd[static_cast<size_t>(i) * static_cast<size_t>(n) +
           static_cast<size_t>(idx[static_cast<size_t>(i)])];
  t.emit(out, {t.watch(x)},
         [idx, n](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(1);
           if (need[0]) r[0] = scatter_rows(tp, g, idx, n);
           return r;
         });
  return out;
}

Tensor scatter_rows(Tape& t, const Tensor& v, std::vector<int> idx, int n) {
  check(v.rank() == 1, "scatter_rows: rank-1 input required");
  int m = v.dim(0);
  check(static_cast<int>(idx.size()) == m, "scatter_rows: index count mismatch");
  Tensor out = Tensor::zeros({m, n});
  auto vd = v.data();
  auto od = out.mutable_data();
  for (int i = 0; i < m; ++i) {
    int j = idx[static_cast<size_t>(i)];
    check(j >= 0 && j < n, "scatter_rows: index out of range");
    od[static_cast<size_t>(i) * static_cast<size_t>(n) +
       static_cast<size_t>(j)] = vd[static_cast<size_t>(i)];
  }
  t.emit(out, {t.watch(v)},
         [idx](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(1);
           if (need[0]) r[0] = gather_rows(tp, g, idx);
           return r;
         });
  return out;
}

Tensor sum_all(Tape& t, const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  Tensor out = Tensor::scalar(s);
  Shape orig = a.shape();
  t.emit(out, {t.watch(a)},
         [orig](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(1);
           if (need[0]) r[0] = expand(tp, g, orig);
           return r;
         });
  return out;
}

Tensor expand(Tape& t, const Tensor& s, Shape shape) {
  check(s.size() == 1 && s.rank() == 0, "expand: scalar input required");
  Tensor out = Tensor::full(shape, s.item());
  t.emit(out, {t.watch(s)},
         [](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(1);
           if (need[0]) r[0] = sum_all(tp, g);
           return r;
         });
  return out;
}

Tensor sum_axis0(Tape& t, const Tensor& x) {
  check(x.rank() == 2, "sum_axis0: rank-2 input required");
  int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({n});
  auto xd = x.data();
  auto od = out.mutable_data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      od[static_cast<size_t>(j)] +=
          xd[static_cast<size_t>(i) * static_cast<size_t>(n) +
             static_cast<size_t>(j)];
  t.emit(out, {t.watch(x)},
         [m](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(1);
           if (need[0]) r[0] = broadcast_row(tp, g, m);
           return r;
         });
  return out;
}

Tensor broadcast_row(Tape& t, const Tensor& v, int m) {
  check(v.rank() == 1, "broadcast_row: rank-1 input required");
  int n = v.dim(0);
  Tensor out = Tensor::zeros({m, n});
  auto vd = v.data();
  auto od = out.mutable_data();
  for (int i = 0; i < m; ++i)
    std::copy(vd.begin(), vd.end(),
              od.begin() + static_cast<size_t>(i) * static_cast<size_t>(n));
  t.emit(out, {t.watch(v)},
         [](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(1);
           if (need[0]) r[0] = sum_axis0(tp, g);
           return r;
         });
  return out;
}

Tensor sum_axis1(Tape& t, const Tensor& x) {
  check(x.rank() == 2, "sum_axis1: rank-2 input required");
  int m = x.dim(0), n = x.dim(1);
  Tensor out = Tensor::zeros({m});
  auto xd = x.data();
  auto od = out.mutable_data();
  for (int i = 0; i < m; ++i) {
    double s = 0.0;
    for (int j = 0; j < n; ++j)
      s += xd[static_cast<size_t>(i) * static_cast<size_t>(n) +
              static_cast<size_t>(j)];
    od[static_cast<size_t>(i)] = s;
  }
  t.emit(out, {t.watch(x)},
         [n](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(1);
           if (need[0]) r[0] = broadcast_col(tp, g, n);
           return r;
         });
  return out;
}

Tensor broadcast_col(Tape& t, const Tensor& v, int n) {
  check(v.rank() == 1, "broadcast_col: rank-1 input required");
  int m = v.dim(0);
  Tensor out = Tensor::zeros({m, n});
  auto vd = v.data();
  auto od = out.mutable_data();
  for (int i = 0; i < m; ++i)
    std::fill_n(od.begin() + static_cast<size_t>(i) * static_cast<size_t>(n),
                n, vd[static_cast<size_t>(i)]);
  t.emit(out, {t.watch(v)},
         [](Tape& tp, const Tensor& g, const std::vector<bool>& need) {
           std::vector<Tensor> r(1);
           if (need[0]) r[0] = sum_axis1(tp, g);
           return r;
         });
  return out;
}

Tensor bias_add(Tape& t, const Tensor& x, const Tensor& b) {
  return add(t, x, broadcast_row(t, b, x.dim(0)));
}

Tensor mean_all(Tape& t, const Tensor& a) {
  return mul_const(t, sum_all(t, a), 1.0 / static_cast<double>(a.size()));
}

Tensor dot_flat(Tape& t, const Tensor& a, const Tensor& b) {
  return sum_all(t, mul(t, a, b));
}

Tensor logsumexp_rows(Tape& t, const Tensor& x) {
  check(x.rank() == 2, "logsumexp_rows: rank-2 input required");
  int m = x.dim(0), n = x.dim(1);
  Tensor row_max = Tensor::zeros({m});
  auto xd = x.data();
  auto md = row_max.mutable_data();
  for (int i = 0; i < m; ++i) {
    double mx = xd[static_cast<size_t>(i) * static_cast<size_t>(n)];
    for (int j = 1; j < n; ++j)
      mx = std::max(mx, xd[static_cast<size_t>(i) * static_cast<size_t>(n) +
                           static_cast<size_t>(j)]);
    md[static_cast<size_t>(i)] = mx;
  }
  Tensor shifted = sub(t, x, broadcast_col(t, row_max, n));
  Tensor sums = sum_axis1(t, exp(t, shifted));
  return add(t, log(t, sums), row_max);
}

Tensor log_softmax_rows(Tape& t, const Tensor& x) {
  return sub(t, x, broadcast_col(t, logsumexp_rows(t, x), x.dim(1)));
}

Tensor softmax_rows(Tape& t, const Tensor& x) {
  return exp(t, log_softmax_rows(t, x));
}

Tensor softmax(Tape& t, const Tensor& logits) {
  check(logits.rank() == 1, "softmax: rank-1 logits required");
  check(logits.all_finite(), "softmax: non-finite logits");
  Tensor rows = reshape(t, logits, {1, logits.dim(0)});
  return reshape(t, softmax_rows(t, rows), {logits.dim(0)});
}

Tensor cross_entropy_onehot(Tape& t, const Tensor& logits, int target) {
  check(logits.rank() == 1, "cross_entropy_onehot: rank-1 logits required");
  check(logits.all_finite(), "cross_entropy_onehot: non-finite logits");
  int n = logits.dim(0);
  check(target >= 0 && target < n,
        "cross_entropy_onehot: target " + std::to_string(target) +
            " out of range [0," + std::to_string(n) + ")");
  Tensor rows = reshape(t, logits, {1, n});
  Tensor lse = logsumexp_rows(t, rows);
  Tensor picked = gather_rows(t, rows, {target});
  return reshape(t, sub(t, lse, picked), {});
}

}  // namespace pflab::ops
