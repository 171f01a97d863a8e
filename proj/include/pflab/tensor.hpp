#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace pflab {

using Shape = std::vector<int>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorStorage {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass populates it
  bool requires_grad = false;
};

// Dense n-d array of doubles, shared-storage value handle. Rank 0 (scalar),
// 1 and 2 are what the library actually uses.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data,
                          bool requires_grad = false);

  bool defined() const { return s_ != nullptr; }
  const Shape& shape() const { return s_->shape; }
  int rank() const { return static_cast<int>(s_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(s_->data.size()); }
  int dim(int i) const { return s_->shape[static_cast<size_t>(i)]; }

  std::span<const double> data() const { return s_->data; }
  std::span<double> mutable_data() { return s_->data; }

  bool requires_grad() const { return s_->requires_grad; }
  void set_requires_grad(bool v) { s_->requires_grad = v; }

  bool has_grad() const { return !s_->grad.empty(); }
  std::span<const double> grad() const;
  void zero_grad() { s_->grad.clear(); }
  void accumulate_grad(std::span<const double> g);

  double item() const;  // scalar tensors only
  double at(int64_t i) const { return s_->data[static_cast<size_t>(i)]; }
  double at(int r, int c) const;

  bool all_finite() const;

  // Deep copy with fresh storage.
  Tensor clone() const;
  // Same data, fresh storage, requires_grad off. Used for constant snapshots.
  Tensor detach() const { Tensor t = clone(); t.set_requires_grad(false); return t; }

  // Storage identity; keys gradient maps and tape registries.
  const TensorStorage* storage() const { return s_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorStorage> s) : s_(std::move(s)) {}
  std::shared_ptr<TensorStorage> s_;
};

}  // namespace pflab
