#pragma once

#include <functional>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace ct {

/// Dense rank-2 tensor of doubles with an optional gradient buffer.
///
/// Tensor is a shared handle: copying a Tensor aliases the same storage, so a
/// parameter held by an optimizer and used inside a forward pass is one
/// object. Use clone() for a deep copy. All learnable state in the project is
/// made of these.
class Tensor {
 public:
  Tensor() : n_(std::make_shared<Node>()) {}
  Tensor(int rows, int cols, bool requires_grad = false);

  static Tensor zeros(int rows, int cols) { return Tensor(rows, cols); }
  static Tensor full(int rows, int cols, double value);
  /// Row-major initializer, e.g. from_rows({{1,2},{3,4}}).
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor row(std::initializer_list<double> values);
  static Tensor scalar(double value);

  int rows() const { return n_->rows; }
  int cols() const { return n_->cols; }
  int size() const { return n_->rows * n_->cols; }

  double& at(int r, int c) { return n_->value[static_cast<std::size_t>(r) * n_->cols + c]; }
  double at(int r, int c) const { return n_->value[static_cast<std::size_t>(r) * n_->cols + c]; }
  std::vector<double>& data() { return n_->value; }
  const std::vector<double>& data() const { return n_->value; }

  bool requires_grad() const { return n_->requires_grad; }
  Tensor& set_requires_grad(bool on);
  std::vector<double>& grad();
  const std::vector<double>& grad() const;
  void zero_grad();

  /// Deep copy with fresh storage; grad buffer is copied too.
  Tensor clone() const;
  /// Value of a 1x1 tensor.
  double item() const;
  bool same_shape(const Tensor& other) const {
    return rows() == other.rows() && cols() == other.cols();
  }
  bool aliases(const Tensor& other) const { return n_ == other.n_; }
  std::string shape_str() const;

 private:
  struct Node {
    int rows = 0;
    int cols = 0;
    std::vector<double> value;
    std::vector<double> grad;  // sized rows*cols iff requires_grad
    bool requires_grad = false;
  };
  std::shared_ptr<Node> n_;
  friend class Tape;
};

/// Axis along which a softmax normalizes. Axis::cols normalizes across the
/// columns of each row (every row sums to 1); Axis::rows normalizes down the
/// rows of each column (every column sums to 1).
enum class Axis { rows, cols };

enum class Activation { relu, leaky_relu, sigmoid };

/// Ordered record of executed operations for reverse-mode differentiation.
///
/// Every op appends its backward closure in execution order, which is a
/// topological order by construction; backward() replays the record once in
/// reverse. An op is recorded only when some input requires a gradient, so
/// computation over frozen parameters (the teacher branch) leaves the tape
/// untouched. One training run owns one tape; concurrent runs need disjoint
/// tapes.
class Tape {
 public:
  Tensor matmul(const Tensor& a, const Tensor& b);
  Tensor transpose(const Tensor& x);
  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  /// Elementwise (Hadamard) product.
  Tensor mul(const Tensor& a, const Tensor& b);
  Tensor scale(const Tensor& x, double c);
  /// Adds a 1xC row vector to every row of x.
  Tensor add_rowvec(const Tensor& x, const Tensor& bias);
  Tensor softmax(const Tensor& x, Axis axis);
  Tensor relu(const Tensor& x);
  Tensor leaky_relu(const Tensor& x, double slope);
  Tensor sigmoid(const Tensor& x);
  Tensor activate(const Tensor& x, Activation kind, double slope = 0.0);
  Tensor select_rows(const Tensor& x, const std::vector<int>& indices);
  Tensor select_cols(const Tensor& x, const std::vector<int>& indices);
  /// Sum of all entries, as 1x1.
  Tensor sum(const Tensor& x);
  /// Per-column sums, as 1xC.
  Tensor col_sums(const Tensor& x);

  // Scalar loss primitives. Gradients are recorded for every differentiable
  // input that requires them; targets are typically constants.
  Tensor smooth_l1(const Tensor& pred, const Tensor& target);
  Tensor mse(const Tensor& pred, const Tensor& target);
  /// Mean binary cross-entropy; probabilities clamped to [kBceEps, 1-kBceEps].
  Tensor bce(const Tensor& prob, const Tensor& label);
  /// Mean negative log-softmax at the target class index, one index per row.
  Tensor cross_entropy(const Tensor& logits, const std::vector<int>& classes);

  /// Populates grads of every requires_grad ancestor of `loss`. Repeated calls
  /// without zero_grad accumulate into leaf gradients.
  void backward(const Tensor& loss);
  void clear() { entries_.clear(); }
  std::size_t op_count() const { return entries_.size(); }

  static constexpr double kBceEps = 1e-7;

 private:
  struct Entry {
    std::shared_ptr<Tensor::Node> out;  // kept alive for the replay
    std::function<void()> back;
  };
  std::vector<Entry> entries_;
  void record(const Tensor& out, std::function<void()> back);
};

/// Max relative error between backward() gradients of f and central finite
/// differences, probing every element of x. f must rebuild the scalar loss on
/// the supplied tape from x's current contents. Denominator is
/// max(|analytic|, |numeric|, 1e-8).
double grad_check(const std::function<Tensor(Tape&)>& f, Tensor x, double h = 1e-5);

/// Per-element relative errors, same contract as grad_check but with the
/// denominator floor exposed: probing a suspect element again at a different
/// step or floor separates activation-kink crossings and roundoff noise on
/// near-zero gradients from genuine gradient mismatches.
std::vector<double> grad_check_detail(const std::function<Tensor(Tape&)>& f, Tensor x,
                                      double h = 1e-5, double denom_floor = 1e-8);

}  // namespace ct
