#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "equirl/error.hpp"

namespace equirl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Named learnable tensor. Gradients accumulate into `grad` on Tape::backward.
struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v) : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  /// Gradient of the last backward pass (zero matrix if none reached this node).
  Matrix grad() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

/// Define-by-run reverse-mode tape. Nodes are appended in evaluation order, so
/// the node list is always topologically sorted.
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Var constant(Matrix value);
  Var leaf(Parameter& param);

  /// Propagates d(loss)/d(node) to every node and accumulates into parameters.
  void backward(const Var& loss);

  Var push(Matrix value, std::vector<int> parents, Backward backward);

  const Matrix& value(int id) const { return nodes_[id].value; }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  /// Adds `delta` to the gradient of node `id` (no-op for constants).
  void accumulate(int id, const Matrix& delta);
  /// Gradient buffer of `id`; empty if nothing reached it.
  const Matrix& grad(int id) const { return nodes_[id].grad; }
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    std::vector<int> parents;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

namespace ad {

Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Adds a 1 x n row to every row of a.
Var add_row(const Var& a, const Var& row);
Var scale(const Var& a, double s);
Var hadamard(const Var& a, const Var& b);
Var sigmoid(const Var& a);
Var tanh(const Var& a);
Var exp(const Var& a);
Var relu(const Var& a);
Var square(const Var& a);
/// Row-wise log-softmax.
Var log_softmax(const Var& a);
/// Picks a(r, index[r]) for each row; result is rows x 1.
Var gather(const Var& a, std::span<const int> index);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count);
Var sum(const Var& a);
Var mean(const Var& a);
/// Row sums: rows x 1.
Var row_sum(const Var& a);
/// out.flat[k] = a.flat[source[k]] (row-major flat indices), or 0 when source[k] < 0.
Var remap(const Var& a, Eigen::Index rows, Eigen::Index cols, std::shared_ptr<const std::vector<int>> source);
/// Reshapes basis * coeffs (basis is (rows*cols) x k, row-major flattening) into rows x cols.
Var combine(const Var& coeffs, std::shared_ptr<const Matrix> basis, Eigen::Index rows, Eigen::Index cols);

}  // namespace ad

// ---------------------------------------------------------------------------
// Optimizers

struct OptimizerConfig {
  enum class Kind { sgd, adam } kind = Kind::adam;
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config) : config_(config) {}

  /// Applies one update from each parameter's `grad`. Throws non_finite_gradient
  /// (naming the parameter) before touching any value if a gradient is NaN/Inf.
  void step(std::span<Parameter* const> params);
  const OptimizerConfig& config() const { return config_; }
  long steps() const { return t_; }

 private:
  OptimizerConfig config_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

/// Scales all gradients so their global L2 norm is at most max_norm. Returns the pre-clip norm.
double clip_grad_norm(std::span<Parameter* const> params, double max_norm);

// ---------------------------------------------------------------------------
// Checkpoints
//
// Text format, version 1:
//   equirl-checkpoint 1
//   <count>
//   <name> <rows> <cols>
//   <rows*cols hex-float values, row-major, space separated>
//   ...
// Hex floats make the round trip bit-exact.

void save_checkpoint(const std::string& path, std::span<const Parameter* const> params);
/// Loads values into params matched by name; shapes must agree.
void load_checkpoint(const std::string& path, std::span<Parameter* const> params);

}  // namespace equirl
