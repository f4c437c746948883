#include "evmamba/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

namespace evm {

namespace {
std::atomic<Precision> g_precision{Precision::f64};
std::atomic<bool> g_check_finite{false};
}  // namespace

void set_precision(Precision p) { g_precision = p; }
Precision precision() { return g_precision; }
void set_check_finite(bool on) { g_check_finite = on; }
bool check_finite() { return g_check_finite; }

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
}

namespace {
void validate_shape(const Shape& shape) {
  for (auto e : shape) {
    if (e == 0) throw Error("tensor extents must be positive, got " + shape_str(shape));
  }
}
}  // namespace

Tensor::Tensor() = default;

Tensor::Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}

Tensor::Tensor(Shape shape, std::vector<double> data) {
  validate_shape(shape);
  if (numel_of(shape) != data.size()) {
    throw Error("tensor shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                " elements");
  }
  node_ = std::make_shared<detail::TensorNode>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
}

Tensor Tensor::zeros(const Shape& shape) { return full(shape, 0.0); }
Tensor Tensor::ones(const Shape& shape) { return full(shape, 1.0); }

Tensor Tensor::full(const Shape& shape, double value) {
  validate_shape(shape);
  return Tensor(shape, std::vector<double>(numel_of(shape), value));
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

Tensor Tensor::from(const Shape& shape, std::initializer_list<double> values) {
  return Tensor(shape, std::vector<double>(values));
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) throw Error("axis " + std::to_string(axis) + " out of range for " + shape_str(shape()));
  return node_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw Error("item() on non-scalar tensor " + shape_str(shape()));
  return node_->data[0];
}

Tensor& Tensor::set_requires_grad(bool on) {
  node_->requires_grad = on;
  return *this;
}

Tensor Tensor::grad() const {
  if (node_->grad.empty()) return Tensor::zeros(shape());
  return Tensor(shape(), node_->grad);
}

void Tensor::zero_grad() { node_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(shape(), node_->data); }

Tensor make_result(Shape shape, std::vector<double> data) {
  if (precision() == Precision::f32) {
    for (auto& v : data) v = static_cast<double>(static_cast<float>(v));
  }
  if (check_finite()) {
    for (auto v : data) {
      if (!std::isfinite(v)) throw Error("non-finite value in op result of shape " + shape_str(shape));
    }
  }
  return Tensor(std::move(shape), std::move(data));
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw Error("shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

bool all_close(const Tensor& a, const Tensor& b, double tol) {
  return a.shape() == b.shape() && max_abs_diff(a, b) <= tol;
}

}  // namespace evm
