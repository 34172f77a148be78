#include "equirl/autodiff.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

namespace equirl {

namespace {

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    std::ostringstream os;
    os << op << ": " << a.rows() << "x" << a.cols() << " vs " << b.rows() << "x" << b.cols();
    throw Error(ErrorCode::shape, os.str());
  }
}

void require_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw Error(ErrorCode::shape, "operands live on different tapes");
}

}  // namespace

const Matrix& Var::value() const { return tape_->value(id_); }

Matrix Var::grad() const {
  const Matrix& g = tape_->grad(id_);
  if (g.size() == 0) return Matrix::Zero(rows(), cols());
  return g;
}

Var Tape::constant(Matrix value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::leaf(Parameter& param) {
  Node n;
  n.value = param.value;
  n.param = &param;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Matrix value, std::vector<int> parents, Backward backward) {
  Node n;
  n.value = std::move(value);
  for (int p : parents) n.requires_grad = n.requires_grad || nodes_[p].requires_grad;
  n.parents = std::move(parents);
  if (n.requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const Matrix& delta) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) n.grad = delta;
  else n.grad += delta;
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw Error(ErrorCode::shape, "loss lives on a different tape");
  if (loss.rows() != 1 || loss.cols() != 1)
    throw Error(ErrorCode::rank, "backward needs a scalar loss, got " + std::to_string(loss.rows()) + "x" +
                                     std::to_string(loss.cols()));
  for (auto& n : nodes_) n.grad.resize(0, 0);
  accumulate(loss.id(), Matrix::Ones(1, 1));
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) continue;
    if (n.backward) n.backward(*this, id);
    if (n.param) n.param->grad += n.grad;
  }
}

namespace ad {

Var matmul(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows())
    throw Error(ErrorCode::shape, "matmul: " + std::to_string(a.cols()) + " vs " + std::to_string(b.rows()));
  Tape* t = a.tape();
  const int ia = a.id(), ib = b.id();
  return t->push(a.value() * b.value(), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib).transpose());
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.value(ia).transpose() * g);
  });
}

Var matmul_nt(const Var& a, const Var& b) {
  require_same_tape(a, b);
  if (a.cols() != b.cols())
    throw Error(ErrorCode::shape, "matmul_nt: " + std::to_string(a.cols()) + " vs " + std::to_string(b.cols()));
  Tape* t = a.tape();
  const int ia = a.id(), ib = b.id();
  return t->push(a.value() * b.value().transpose(), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g * tp.value(ib));
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.transpose() * tp.value(ia));
  });
}

Var add(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "add");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() + b.value(), {ia, ib}, [ia, ib](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad(self));
    tp.accumulate(ib, tp.grad(self));
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "sub");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value() - b.value(), {ia, ib}, [ia, ib](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad(self));
    if (tp.requires_grad(ib)) tp.accumulate(ib, -tp.grad(self));
  });
}

Var add_row(const Var& a, const Var& row) {
  require_same_tape(a, row);
  if (row.rows() != 1 || row.cols() != a.cols()) throw Error(ErrorCode::shape, "add_row: bias shape mismatch");
  const int ia = a.id(), ib = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape()->push(std::move(out), {ia, ib}, [ia, ib](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad(self));
    if (tp.requires_grad(ib)) tp.accumulate(ib, tp.grad(self).colwise().sum());
  });
}

Var scale(const Var& a, double s) {
  const int ia = a.id();
  return a.tape()->push(a.value() * s, {ia}, [ia, s](Tape& tp, int self) { tp.accumulate(ia, tp.grad(self) * s); });
}

Var hadamard(const Var& a, const Var& b) {
  require_same_tape(a, b);
  require_same_shape(a, b, "hadamard");
  const int ia = a.id(), ib = b.id();
  return a.tape()->push(a.value().cwiseProduct(b.value()), {ia, ib}, [ia, ib](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    if (tp.requires_grad(ia)) tp.accumulate(ia, g.cwiseProduct(tp.value(ib)));
    if (tp.requires_grad(ib)) tp.accumulate(ib, g.cwiseProduct(tp.value(ia)));
  });
}

Var sigmoid(const Var& a) {
  const int ia = a.id();
  Matrix y = a.value().unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return a.tape()->push(std::move(y), {ia}, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    tp.accumulate(ia, tp.grad(self).cwiseProduct(y.cwiseProduct((1.0 - y.array()).matrix())));
  });
}

Var exp(const Var& a) {
  const int ia = a.id();
  Matrix y = a.value().array().exp().matrix();
  return a.tape()->push(std::move(y), {ia}, [ia](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad(self).cwiseProduct(tp.value(self)));
  });
}

Var tanh(const Var& a) {
  const int ia = a.id();
  Matrix y = a.value().array().tanh().matrix();
  return a.tape()->push(std::move(y), {ia}, [ia](Tape& tp, int self) {
    const Matrix& y = tp.value(self);
    tp.accumulate(ia, (tp.grad(self).array() * (1.0 - y.array().square())).matrix());
  });
}

Var relu(const Var& a) {
  const int ia = a.id();
  Matrix y = a.value().cwiseMax(0.0);
  return a.tape()->push(std::move(y), {ia}, [ia](Tape& tp, int self) {
    const Matrix& x = tp.value(ia);
    tp.accumulate(ia, (tp.grad(self).array() * (x.array() > 0.0).cast<double>()).matrix());
  });
}

Var square(const Var& a) {
  const int ia = a.id();
  return a.tape()->push(a.value().array().square().matrix(), {ia}, [ia](Tape& tp, int self) {
    tp.accumulate(ia, 2.0 * tp.grad(self).cwiseProduct(tp.value(ia)));
  });
}

Var log_softmax(const Var& a) {
  const int ia = a.id();
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    y.row(r) = x.row(r).array() - lse;
  }
  return a.tape()->push(std::move(y), {ia}, [ia](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    const Matrix p = tp.value(self).array().exp().matrix();
    Matrix d = g - (p.array().colwise() * g.rowwise().sum().array()).matrix();
    tp.accumulate(ia, d);
  });
}

Var gather(const Var& a, std::span<const int> index) {
  if (static_cast<Eigen::Index>(index.size()) != a.rows()) throw Error(ErrorCode::shape, "gather: index count != rows");
  const int ia = a.id();
  const Eigen::Index cols = a.cols();
  Matrix y(a.rows(), 1);
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    if (index[r] < 0 || index[r] >= cols) throw Error(ErrorCode::shape, "gather: index out of range");
    y(r, 0) = a.value()(r, index[r]);
  }
  std::vector<int> idx(index.begin(), index.end());
  return a.tape()->push(std::move(y), {ia}, [ia, idx = std::move(idx), cols](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix d = Matrix::Zero(g.rows(), cols);
    for (Eigen::Index r = 0; r < g.rows(); ++r) d(r, idx[r]) = g(r, 0);
    tp.accumulate(ia, d);
  });
}

Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw Error(ErrorCode::shape, "concat of nothing");
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (const auto& p : parts) {
    require_same_tape(parts.front(), p);
    if (p.rows() != rows) throw Error(ErrorCode::shape, "concat_cols: row mismatch");
    cols += p.cols();
    ids.push_back(p.id());
    widths.push_back(p.cols());
  }
  Matrix y(rows, cols);
  Eigen::Index off = 0;
  for (const auto& p : parts) {
    y.middleCols(off, p.cols()) = p.value();
    off += p.cols();
  }
  auto parents = ids;
  return parts.front().tape()->push(std::move(y), std::move(parents),
                                    [ids = std::move(ids), widths = std::move(widths)](Tape& tp, int self) {
                                      const Matrix& g = tp.grad(self);
                                      Eigen::Index o = 0;
                                      for (size_t i = 0; i < ids.size(); ++i) {
                                        if (tp.requires_grad(ids[i])) tp.accumulate(ids[i], g.middleCols(o, widths[i]));
                                        o += widths[i];
                                      }
                                    });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw Error(ErrorCode::shape, "slice_cols out of range");
  const int ia = a.id();
  const Eigen::Index cols = a.cols();
  return a.tape()->push(a.value().middleCols(start, count), {ia}, [ia, start, count, cols](Tape& tp, int self) {
    Matrix d = Matrix::Zero(tp.grad(self).rows(), cols);
    d.middleCols(start, count) = tp.grad(self);
    tp.accumulate(ia, d);
  });
}

Var sum(const Var& a) {
  const int ia = a.id();
  const Eigen::Index r = a.rows(), c = a.cols();
  return a.tape()->push(Matrix::Constant(1, 1, a.value().sum()), {ia}, [ia, r, c](Tape& tp, int self) {
    tp.accumulate(ia, Matrix::Constant(r, c, tp.grad(self)(0, 0)));
  });
}

Var mean(const Var& a) {
  if (a.value().size() == 0) throw Error(ErrorCode::shape, "mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

Var row_sum(const Var& a) {
  const int ia = a.id();
  const Eigen::Index c = a.cols();
  return a.tape()->push(a.value().rowwise().sum(), {ia}, [ia, c](Tape& tp, int self) {
    tp.accumulate(ia, tp.grad(self).replicate(1, c));
  });
}

Var remap(const Var& a, Eigen::Index rows, Eigen::Index cols, std::shared_ptr<const std::vector<int>> source) {
  if (static_cast<Eigen::Index>(source->size()) != rows * cols) throw Error(ErrorCode::shape, "remap: map size");
  using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const int ia = a.id();
  const Eigen::Index ar = a.rows(), ac = a.cols();
  // Flat indices are row-major on both sides.
  const RowMatrix x = a.value();
  RowMatrix y(rows, cols);
  const auto& src = *source;
  const double* xd = x.data();
  double* yd = y.data();
  for (size_t i = 0; i < src.size(); ++i) yd[i] = src[i] < 0 ? 0.0 : xd[src[i]];
  return a.tape()->push(Matrix(y), {ia}, [ia, ar, ac, source](Tape& tp, int self) {
    const RowMatrix g = tp.grad(self);
    RowMatrix d = RowMatrix::Zero(ar, ac);
    const auto& src = *source;
    const double* gd = g.data();
    double* dd = d.data();
    for (size_t i = 0; i < src.size(); ++i)
      if (src[i] >= 0) dd[src[i]] += gd[i];
    tp.accumulate(ia, Matrix(d));
  });
}

Var combine(const Var& coeffs, std::shared_ptr<const Matrix> basis, Eigen::Index rows, Eigen::Index cols) {
  if (coeffs.cols() != 1 || coeffs.rows() != basis->cols() || basis->rows() != rows * cols)
    throw Error(ErrorCode::shape, "combine: basis/coefficient shape mismatch");
  const int ic = coeffs.id();
  const Vector flat = (*basis) * coeffs.value().col(0);
  Matrix y = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(flat.data(), rows, cols);
  return coeffs.tape()->push(std::move(y), {ic}, [ic, basis](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gr = g;
    const Eigen::Map<const Vector> gflat(gr.data(), gr.size());
    tp.accumulate(ic, basis->transpose() * gflat);
  });
}

}  // namespace ad

// ---------------------------------------------------------------------------

void Optimizer::step(std::span<Parameter* const> params) {
  for (const Parameter* p : params)
    if (!p->grad.allFinite()) throw Error(ErrorCode::non_finite_gradient, "parameter '" + p->name + "'");
  if (config_.kind == OptimizerConfig::Kind::sgd) {
    for (Parameter* p : params) p->value -= config_.learning_rate * p->grad;
    ++t_;
    return;
  }
  if (m_.size() != params.size()) {
    m_.clear();
    v_.clear();
    for (const Parameter* p : params) {
      m_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
      v_.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (size_t i = 0; i < params.size(); ++i) {
    Parameter& p = *params[i];
    m_[i] = config_.beta1 * m_[i] + (1.0 - config_.beta1) * p.grad;
    v_[i] = config_.beta2 * v_[i] + (1.0 - config_.beta2) * p.grad.cwiseProduct(p.grad);
    const auto m_hat = m_[i].array() / bc1;
    const auto v_hat = v_[i].array() / bc2;
    p.value.array() -= config_.learning_rate * m_hat / (v_hat.sqrt() + config_.epsilon);
  }
}

double clip_grad_norm(std::span<Parameter* const> params, double max_norm) {
  double sq = 0.0;
  for (const Parameter* p : params) sq += p->grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (Parameter* p : params) p->grad *= s;
  }
  return norm;
}

void save_checkpoint(const std::string& path, std::span<const Parameter* const> params) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::parse, "cannot write checkpoint " + path);
  out << "equirl-checkpoint 1\n" << params.size() << "\n";
  char buf[64];
  for (const Parameter* p : params) {
    out << p->name << " " << p->value.rows() << " " << p->value.cols() << "\n";
    for (Eigen::Index r = 0; r < p->value.rows(); ++r)
      for (Eigen::Index c = 0; c < p->value.cols(); ++c) {
        std::snprintf(buf, sizeof buf, "%a", p->value(r, c));
        out << buf << ((r + 1 == p->value.rows() && c + 1 == p->value.cols()) ? "" : " ");
      }
    out << "\n";
  }
}

void load_checkpoint(const std::string& path, std::span<Parameter* const> params) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::parse, "cannot read checkpoint " + path);
  std::string magic;
  int version = 0;
  size_t count = 0;
  in >> magic >> version >> count;
  if (magic != "equirl-checkpoint" || version != 1) throw Error(ErrorCode::parse, "not a v1 checkpoint: " + path);
  std::map<std::string, Parameter*> by_name;
  for (Parameter* p : params) by_name[p->name] = p;
  for (size_t i = 0; i < count; ++i) {
    std::string name;
    Eigen::Index rows = 0, cols = 0;
    if (!(in >> name >> rows >> cols)) throw Error(ErrorCode::parse, "truncated checkpoint " + path);
    Matrix m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        std::string tok;
        in >> tok;
        m(r, c) = std::strtod(tok.c_str(), nullptr);
      }
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(ErrorCode::parse, "checkpoint has unknown parameter '" + name + "'");
    if (it->second->value.rows() != rows || it->second->value.cols() != cols)
      throw Error(ErrorCode::shape, "checkpoint shape mismatch for '" + name + "'");
    it->second->value = m;
  }
}

}  // namespace equirl
