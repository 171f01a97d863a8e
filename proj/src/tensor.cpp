#include "pflab/tensor.hpp"

#include <cmath>
#include <sstream>

#include "pflab/common.hpp"

namespace pflab {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  auto st = std::make_shared<TensorStorage>();
  st->shape = std::move(shape);
  for (int d : st->shape) check(d > 0, "Tensor: nonpositive dimension");
  st->data.assign(static_cast<size_t>(shape_numel(st->shape)), 0.0);
  st->requires_grad = requires_grad;
  return Tensor(std::move(st));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = zeros(std::move(shape), requires_grad);
  for (double& v : t.mutable_data()) v = value;
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({}, value, requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data,
                         bool requires_grad) {
  check(shape_numel(shape) == static_cast<int64_t>(data.size()),
        "Tensor: shape " + shape_str(shape) + " does not match data length " +
            std::to_string(data.size()));
  auto st = std::make_shared<TensorStorage>();
  st->shape = std::move(shape);
  st->data = std::move(data);
  st->requires_grad = requires_grad;
  return Tensor(std::move(st));
}

std::span<const double> Tensor::grad() const {
  check(has_grad(), "Tensor: no gradient recorded");
  return s_->grad;
}

void Tensor::accumulate_grad(std::span<const double> g) {
  check(g.size() == s_->data.size(), "Tensor: gradient length mismatch");
  if (s_->grad.empty()) s_->grad.assign(s_->data.size(), 0.0);
  for (size_t i = 0; i < g.size(); ++i) s_->grad[i] += g[i];
}

double Tensor::item() const {
  check(size() == 1, "Tensor: item() on non-scalar of shape " +
                         shape_str(s_->shape));
  return s_->data[0];
}

double Tensor::at(int r, int c) const {
  check(rank() == 2, "Tensor: 2-d index on tensor of shape " +
                         shape_str(s_->shape));
  return s_->data[static_cast<size_t>(r) * static_cast<size_t>(dim(1)) +
                  static_cast<size_t>(c)];
}

bool Tensor::all_finite() const {
  for (double v : s_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor Tensor::clone() const {
  auto st = std::make_shared<TensorStorage>();
  st->shape = s_->shape;
  st->data = s_->data;
  st->requires_grad = s_->requires_grad;
  return Tensor(std::move(st));
}

}  // namespace pflab
