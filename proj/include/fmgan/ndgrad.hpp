#pragma once

// Dense 64-bit tensors and a dynamic reverse-mode tape.
//
// Tensors are rank 1 or rank 2, stored row-major. A rank-1 tensor of extent d
// behaves as a d x 1 column wherever a matrix is expected. Every forward op
// checks that its output is finite and throws NumericError otherwise.
//
// A Tape records ops as they execute. Leaves are named; gradients are returned
// by name from Tape::backward. Nodes whose inputs are all constants carry no
// backward closure, so evaluating a frozen sub-network costs forward work only.

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "fmgan/error.hpp"

namespace fmgan::ndgrad {

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor zeros(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }
  static Tensor vector(std::vector<double> values);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor identity(std::size_t n);
  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::size_t rows() const noexcept { return shape_.empty() ? 0 : shape_[0]; }
  std::size_t cols() const noexcept { return shape_.size() < 2 ? 1 : shape_[1]; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  // Scalar value of a single-entry tensor.
  double item() const;
  std::string shape_string() const;
  bool same_shape(const Tensor& other) const noexcept { return rows() == other.rows() && cols() == other.cols(); }
  bool all_finite() const noexcept;

  void fill(double v);
  Tensor& operator+=(const Tensor& other);
  Tensor& operator*=(double s);

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

// Value-level kernels shared by the tape ops and the solvers.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
// Column-wise softmax of a / temperature, with max subtraction.
Tensor softmax(const Tensor& a, double temperature = 1.0);
// Exponential with arguments below -700 clamped to -700.
double safe_exp(double x) noexcept;
double max_abs(const Tensor& a) noexcept;

class Tape;

// Handle to a node on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
};

using Gradients = std::map<std::string, Tensor>;

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value);
  // Named leaf. Registering an existing name returns the existing node.
  Var leaf(const std::string& name, const Tensor& value, bool requires_grad = true);
  // Records an op output. `backward` receives the upstream gradient.
  Var push(Tensor value, bool requires_grad, Backward backward);

  const Tensor& value(Var v) const { return nodes_[v.id].value; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }
  // Gradient slot of a node, zero-initialized on first touch.
  Tensor& grad(std::size_t id);
  std::size_t size() const noexcept { return nodes_.size(); }

  // Reverse pass from a scalar loss. Returns one gradient per trainable leaf;
  // leaves the loss does not reach get zeros.
  Gradients backward(Var loss);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
    std::string leaf_name;
  };

  std::vector<Node> nodes_;
  std::map<std::string, std::size_t> leaves_;
};

// Differentiable ops. Shapes follow the Tensor conventions above.
Var matmul(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
// a (m x n) plus bias (m) broadcast over columns.
Var add_bias(Var a, Var bias);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);
Var tanh(Var a);
Var sigmoid(Var a);
Var abs(Var a);
Var softmax(Var a, double temperature);
Var log_softmax(Var a);
// Per-row maximum of a d x L' map; gradient to the first maximal column.
Var max_over_time(Var feature_map);
// Elementwise maximum across same-shaped inputs; ties go to the lowest index.
Var maximum(std::span<const Var> inputs);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, std::size_t begin, std::size_t count);
// Columns of `table` selected by ids.
Var gather_cols(Var table, std::span<const int> ids);
// Entries a(ids[j], j) as a rank-1 tensor of length cols(a).
Var pick(Var a, std::span<const int> ids);
// Columns divided by max(norm, floor). The floor branch is a constant divisor.
Var normalize_cols(Var a, double floor);
// Frobenius product with a constant tensor.
Var dot_const(Var a, const Tensor& weights);
Var sum(Var a);
Var mean(Var a);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

// Scalar objective built on a fresh tape from named parameter leaves.
using ScalarFn = std::function<Var(Tape&, const std::map<std::string, Var>&)>;

// Max over all parameter entries of |analytic - central difference| / max(1, |central difference|).
double grad_check(const ScalarFn& f, const std::map<std::string, Tensor>& params, double eps);

// Value of f at the given parameters, evaluated without gradient bookkeeping.
double evaluate(const ScalarFn& f, const std::map<std::string, Tensor>& params);

}  // namespace fmgan::ndgrad
