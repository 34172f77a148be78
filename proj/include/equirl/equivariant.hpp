#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <string>
#include <vector>

#include "equirl/autodiff.hpp"
#include "equirl/group.hpp"

namespace equirl {

/// Orthonormal (Frobenius) basis of { B : rho_out(g) B = B rho_in(g) for all g }.
struct IntertwinerBasis {
  Representation rho_in;
  Representation rho_out;
  std::vector<Matrix> basis;  ///< each dim_out x dim_in

  int count() const { return static_cast<int>(basis.size()); }
  /// Column k is basis[k] flattened row-major; (dim_out * dim_in) x count.
  Matrix stacked() const;
};

/// Null space of the stacked constraints rho_out(g) B - B rho_in(g) = 0, via SVD.
IntertwinerBasis solve_intertwiner_basis(const Representation& rho_in, const Representation& rho_out);

/// Memoized solve_intertwiner_basis; safe to call from several threads.
std::shared_ptr<const IntertwinerBasis> cached_intertwiner_basis(const Representation& rho_in,
                                                                 const Representation& rho_out);

/// Ordered list of feature fields; the layer-level representation is their direct sum.
using FieldType = std::vector<Representation>;

FieldType repeat(const Representation& rep, int count);
FieldType concat(const FieldType& a, const FieldType& b);
int dimension(const FieldType& type);
Representation as_representation(const FieldType& type);

/// Pointwise nonlinearities commute with the group only on permutation representations.
void require_pointwise_safe(const FieldType& type, const std::string& where);

enum class Constraint { equivariant, dense };

/// y = x W^T + b. In equivariant mode W is a combination of per-field-pair
/// intertwiner bases and b lives in the invariant subspace of rho_out, so the
/// map commutes with the group for every coefficient vector.
class Linear {
 public:
  struct Realized {
    Var weight;  ///< dim_out x dim_in
    Var bias;    ///< 1 x dim_out, or invalid
  };

  Linear(std::string name, FieldType in, FieldType out, Constraint constraint, bool bias, std::mt19937_64& rng,
         double gain = 1.0);

  Realized realize(Tape& tape);
  static Var apply(const Realized& r, const Var& x);
  Var forward(Tape& tape, const Var& x) { return apply(realize(tape), x); }

  Matrix weight_matrix() const;
  Eigen::RowVectorXd bias_vector() const;

  const FieldType& in_type() const { return in_; }
  const FieldType& out_type() const { return out_; }
  int in_dim() const { return in_dim_; }
  int out_dim() const { return out_dim_; }
  Constraint constraint() const { return constraint_; }
  std::vector<Parameter*> parameters();
  Parameter& coefficients() { return weight_; }
  Parameter* bias_parameter() { return has_bias_ ? &bias_ : nullptr; }

 private:
  struct Block {
    int out_offset, in_offset, out_dim, in_dim, coeff_offset;
    std::shared_ptr<const Matrix> basis;  // (out_dim*in_dim) x k
  };
  struct BiasBlock {
    int out_offset, out_dim, coeff_offset;
    std::shared_ptr<const Matrix> basis;  // out_dim x k
  };
  // Blocks sharing one basis, realized with a single matrix product.
  struct BlockGroup {
    std::shared_ptr<const Matrix> basis;
    std::vector<int> members;  // indices into blocks_
  };

  Var realize_weight(Tape& tape);
  Var realize_bias(Tape& tape);

  std::string name_;
  FieldType in_, out_;
  Constraint constraint_;
  bool has_bias_;
  int in_dim_, out_dim_;
  std::shared_ptr<const std::vector<Block>> blocks_;
  std::shared_ptr<const std::vector<BlockGroup>> groups_;
  std::shared_ptr<const std::vector<BiasBlock>> bias_blocks_;
  Parameter weight_;
  Parameter bias_;
};

/// Group convolution on square grids. Each output pixel applies one
/// equivariant Linear to the k x k input patch, whose representation is the
/// grid action on the patch; this realizes rotated kernels with cyclically
/// permuted channel blocks from a single shared parameter set.
class Conv2d {
 public:
  Conv2d(std::string name, FieldType in, FieldType out, int kernel, int padding, int height, int width,
         Constraint constraint, std::mt19937_64& rng);

  /// x: batch x (in_channels * H * W), channel-major per sample.
  Var forward(Tape& tape, const Var& x) { return apply(linear_.realize(tape), x); }
  /// Same with weights already realized on the tape.
  Var apply(const Linear::Realized& weights, const Var& x);

  int out_height() const { return out_h_; }
  int out_width() const { return out_w_; }
  int kernel() const { return kernel_; }
  const FieldType& in_type() const { return in_; }
  const FieldType& out_type() const { return out_; }
  Linear& patch_linear() { return linear_; }
  std::vector<Parameter*> parameters() { return linear_.parameters(); }

 private:
  std::shared_ptr<const std::vector<int>> im2col_map(int batch);
  std::shared_ptr<const std::vector<int>> col2im_map(int batch);

  FieldType in_, out_;
  int kernel_, padding_, height_, width_, out_h_, out_w_;
  Linear linear_;
  std::map<int, std::shared_ptr<const std::vector<int>>> im2col_cache_, col2im_cache_;
};

FieldType patch_type(const FieldType& in, int kernel);

struct LstmState {
  Var h;
  Var c;
};

enum class InitMode { zero, random };

/// LSTM cell whose fused gate pre-activation [i; f; o; g] is one Linear from
/// [x ; h] to four copies of the hidden field type. With regular-representation
/// hidden fields the elementwise gating commutes with the group.
class LstmCell {
 public:
  LstmCell(std::string name, FieldType input, FieldType hidden, Constraint constraint, std::mt19937_64& rng,
           bool candidate_tanh_twice = true);

  /// c_t = f * c + i * tanh(g_t), h_t = o * tanh(c_t), where g_t = tanh(pre_g).
  /// With candidate_tanh_twice = false the candidate is tanh(pre_g) applied once.
  LstmState step(const Linear::Realized& gates, const Var& x, const LstmState& state) const;
  LstmState step(Tape& tape, const Var& x, const LstmState& state) { return step(gates_.realize(tape), x, state); }

  Linear& gates() { return gates_; }
  const FieldType& hidden_type() const { return hidden_; }
  int hidden_dim() const { return hidden_dim_; }
  bool candidate_tanh_twice() const { return candidate_tanh_twice_; }
  std::vector<Parameter*> parameters() { return gates_.parameters(); }

 private:
  FieldType input_, hidden_;
  int hidden_dim_;
  bool candidate_tanh_twice_;
  Linear gates_;
};

/// batch x hidden_dim state pair. Zero mode is invariant under every rho(g).
std::pair<Matrix, Matrix> initial_state(int batch, int hidden_dim, InitMode mode, std::mt19937_64& rng);

/// Two-layer outputter: relu(Linear(in -> hidden)) -> Linear(hidden -> out).
/// Actor heads end in the action representation (regular for discrete
/// actions); critic heads end in the trivial representation.
class Head {
 public:
  Head(std::string name, FieldType in, FieldType hidden, FieldType out, Constraint constraint, std::mt19937_64& rng);

  struct Realized {
    Linear::Realized first;
    Linear::Realized second;
  };

  Realized realize(Tape& tape) { return {first_.realize(tape), second_.realize(tape)}; }
  static Var apply(const Realized& r, const Var& x);
  Var forward(Tape& tape, const Var& x) { return apply(realize(tape), x); }
  std::vector<Parameter*> parameters();
  const FieldType& out_type() const { return second_.out_type(); }

 private:
  Linear first_;
  Linear second_;
};

}  // namespace equirl
