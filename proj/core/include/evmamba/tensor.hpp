#pragma once

#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace evm {

/// Thrown for every contract violation detected by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);
std::size_t numel_of(const Shape& shape);

enum class Precision { f32, f64 };

/// Arithmetic precision used for every op result. In f32 mode results are
/// rounded to the nearest float after each op.
void set_precision(Precision p);
Precision precision();

/// When enabled, every op result is scanned for NaN/Inf and an Error is thrown.
void set_check_finite(bool on);
bool check_finite();

class Tape;

namespace detail {
struct TensorNode {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // accumulated leaf gradient, empty until backward
  bool requires_grad = false;
  bool is_leaf = true;
};
}  // namespace detail

/// Dense row-major real array. Copies share the underlying buffer; the shape
/// never changes after construction.
class Tensor {
 public:
  Tensor();
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(const Shape& shape);
  static Tensor ones(const Shape& shape);
  static Tensor full(const Shape& shape, double value);
  static Tensor scalar(double value);
  static Tensor from(const Shape& shape, std::initializer_list<double> values);

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->data.size(); }
  bool defined() const { return node_ != nullptr; }

  std::span<const double> data() const { return node_->data; }
  double operator[](std::size_t i) const { return node_->data[i]; }
  double item() const;

  /// Direct write access. Only meaningful for leaves (parameters, inputs);
  /// callers must not mutate a tensor a live tape still references.
  std::span<double> mutable_data() { return node_->data; }

  bool requires_grad() const { return node_->requires_grad; }
  Tensor& set_requires_grad(bool on);

  /// Leaf gradient accumulated by Tape::backward (zeros if none yet).
  Tensor grad() const;
  void zero_grad();

  /// Fresh leaf holding a copy of the values.
  Tensor detach() const;
  Tensor clone() const { return detach(); }

  bool same_node(const Tensor& other) const { return node_ == other.node_; }
  detail::TensorNode* node() const { return node_.get(); }

 private:
  friend class Tape;
  explicit Tensor(std::shared_ptr<detail::TensorNode> node);
  std::shared_ptr<detail::TensorNode> node_;
};

/// Builds an op result: applies the global precision rounding and the
/// optional finite check.
Tensor make_result(Shape shape, std::vector<double> data);

bool all_close(const Tensor& a, const Tensor& b, double tol);
double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace evm
