#include "equirl/equivariant.hpp"

#include <map>

#include <cmath>

namespace equirl {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Matrix IntertwinerBasis::stacked() const {
  const int rows = rho_out.dimension() * rho_in.dimension();
  Matrix out(rows, count());
  for (int k = 0; k < count(); ++k) {
    const RowMatrix b = basis[k];
    out.col(k) = Eigen::Map<const Vector>(b.data(), rows);
  }
  return out;
}

IntertwinerBasis solve_intertwiner_basis(const Representation& rho_in, const Representation& rho_out) {
  if (rho_in.group() != rho_out.group())
    throw Error(ErrorCode::group_mismatch, rho_in.group().name() + " vs " + rho_out.group().name());
  const Group& group = rho_in.group();
  const int din = rho_in.dimension();
  const int dout = rho_out.dimension();
  const int n = din * dout;

  // Row-major vec(B): unknown index a*din + b. For each g the residual
  // (rho_out B - B rho_in)[a, b] contributes one constraint row.
  Matrix constraints = Matrix::Zero(static_cast<Eigen::Index>(group.order()) * n, n);
  for (int g = 0; g < group.order(); ++g) {
    const Matrix& ro = rho_out.matrix(g);
    const Matrix& ri = rho_in.matrix(g);
    const Eigen::Index base = static_cast<Eigen::Index>(g) * n;
    for (int a = 0; a < dout; ++a)
      for (int b = 0; b < din; ++b) {
        const Eigen::Index row = base + a * din + b;
        for (int c = 0; c < dout; ++c)
          if (ro(a, c) != 0.0) constraints(row, c * din + b) += ro(a, c);
        for (int c = 0; c < din; ++c)
          if (ri(c, b) != 0.0) constraints(row, a * din + c) -= ri(c, b);
      }
  }

  Eigen::JacobiSVD<Matrix, Eigen::ColPivHouseholderQRPreconditioner> svd(constraints, Eigen::ComputeFullV);
  const Vector& sv = svd.singularValues();
  const double tol = 1e-9 * std::max(1.0, sv.size() ? sv(0) : 0.0);
  IntertwinerBasis out{rho_in, rho_out, {}};
  const Matrix& v = svd.matrixV();
  for (int k = 0; k < n; ++k) {
    const double s = k < sv.size() ? sv(k) : 0.0;
    if (s > tol) continue;
    Vector col = v.col(k);
    // Sign convention: first significant entry positive.
    for (int i = 0; i < n; ++i)
      if (std::abs(col(i)) > 1e-12) {
        if (col(i) < 0) col = -col;
        break;
      }
    out.basis.push_back(Eigen::Map<const RowMatrix>(col.data(), dout, din));
  }
  return out;
}

std::shared_ptr<const IntertwinerBasis> cached_intertwiner_basis(const Representation& rho_in,
                                                                 const Representation& rho_out) {
  static std::mutex mutex;
  static std::map<std::string, std::shared_ptr<const IntertwinerBasis>> cache;
  const std::string key = rho_in.group().name() + "|" + rho_in.name() + "|" + rho_out.name();
  {
    std::lock_guard lock(mutex);
    auto it = cache.find(key);
    if (it != cache.end()) return it->second;
  }
  auto solved = std::make_shared<const IntertwinerBasis>(solve_intertwiner_basis(rho_in, rho_out));
  std::lock_guard lock(mutex);
  return cache.emplace(key, std::move(solved)).first->second;
}

FieldType repeat(const Representation& rep, int count) { return FieldType(static_cast<size_t>(count), rep); }

FieldType concat(const FieldType& a, const FieldType& b) {
  FieldType out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

int dimension(const FieldType& type) {
  int d = 0;
  for (const auto& r : type) d += r.dimension();
  return d;
}

Representation as_representation(const FieldType& type) { return direct_sum(type); }

void require_pointwise_safe(const FieldType& type, const std::string& where) {
  for (const auto& r : type)
    if (!r.is_permutation())
      throw Error(ErrorCode::rep_mismatch, where + ": pointwise nonlinearity on non-permutation field '" + r.name() + "'");
}

// ---------------------------------------------------------------------------
// Linear

Linear::Linear(std::string name, FieldType in, FieldType out, Constraint constraint, bool bias, std::mt19937_64& rng,
               double gain)
    : name_(std::move(name)),
      in_(std::move(in)),
      out_(std::move(out)),
      constraint_(constraint),
      has_bias_(bias),
      in_dim_(dimension(in_)),
      out_dim_(dimension(out_)) {
  if (in_.empty() || out_.empty()) throw Error(ErrorCode::shape, name_ + ": empty field type");
  const Group& group = in_.front().group();
  for (const auto& r : concat(in_, out_))
    if (r.group() != group) throw Error(ErrorCode::group_mismatch, name_ + ": fields over different groups");

  std::normal_distribution<double> normal(0.0, 1.0);
  if (constraint_ == Constraint::dense) {
    Matrix w(out_dim_, in_dim_);
    const double sd = gain / std::sqrt(static_cast<double>(in_dim_));
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = sd * normal(rng);
    weight_ = Parameter(name_ + ".weight", w);
    if (has_bias_) bias_ = Parameter(name_ + ".bias", Matrix::Zero(1, out_dim_));
    return;
  }

  auto blocks = std::make_shared<std::vector<Block>>();
  auto groups = std::make_shared<std::vector<BlockGroup>>();
  std::map<const IntertwinerBasis*, size_t> group_of;
  std::vector<double> init;
  int oo = 0;
  for (const auto& ro : out_) {
    int io = 0;
    for (const auto& ri : in_) {
      auto basis = cached_intertwiner_basis(ri, ro);
      if (basis->count() > 0) {
        auto [it, fresh] = group_of.try_emplace(basis.get(), groups->size());
        if (fresh) groups->push_back({std::make_shared<const Matrix>(basis->stacked()), {}});
        BlockGroup& grp = (*groups)[it->second];
        grp.members.push_back(static_cast<int>(blocks->size()));
        blocks->push_back({oo, io, ro.dimension(), ri.dimension(), static_cast<int>(init.size()), grp.basis});
        // Entry variance of the realized block ~ gain^2 / fan_in.
        const double var = gain * gain * ro.dimension() * ri.dimension() /
                           (static_cast<double>(basis->count()) * in_dim_);
        for (int k = 0; k < basis->count(); ++k) init.push_back(std::sqrt(var) * normal(rng));
      }
      io += ri.dimension();
    }
    oo += ro.dimension();
  }
  blocks_ = blocks;
  groups_ = groups;
  weight_ = Parameter(name_ + ".coeffs", Eigen::Map<const Matrix>(init.data(), static_cast<Eigen::Index>(init.size()), 1));

  if (has_bias_) {
    auto bias_blocks = std::make_shared<std::vector<BiasBlock>>();
    int count = 0;
    oo = 0;
    for (const auto& ro : out_) {
      auto basis = cached_intertwiner_basis(Representation::trivial(group), ro);
      if (basis->count() > 0) {
        bias_blocks->push_back({oo, ro.dimension(), count, std::make_shared<const Matrix>(basis->stacked())});
        count += basis->count();
      }
      oo += ro.dimension();
    }
    bias_blocks_ = bias_blocks;
    bias_ = Parameter(name_ + ".bias_coeffs", Matrix::Zero(count, 1));
  }
}

std::vector<Parameter*> Linear::parameters() {
  std::vector<Parameter*> out{&weight_};
  if (has_bias_) out.push_back(&bias_);
  return out;
}

Var Linear::realize_weight(Tape& tape) {
  Var coeffs = tape.leaf(weight_);
  if (constraint_ == Constraint::dense) return coeffs;
  Matrix w = Matrix::Zero(out_dim_, in_dim_);
  const Vector& c = coeffs.value().col(0);
  for (const BlockGroup& grp : *groups_) {
    const Eigen::Index k = grp.basis->cols();
    Matrix cs(k, static_cast<Eigen::Index>(grp.members.size()));
    for (size_t j = 0; j < grp.members.size(); ++j) cs.col(j) = c.segment((*blocks_)[grp.members[j]].coeff_offset, k);
    const Matrix flat = (*grp.basis) * cs;
    for (size_t j = 0; j < grp.members.size(); ++j) {
      const Block& b = (*blocks_)[grp.members[j]];
      w.block(b.out_offset, b.in_offset, b.out_dim, b.in_dim) =
          Eigen::Map<const RowMatrix>(flat.col(j).data(), b.out_dim, b.in_dim);
    }
  }
  const int ic = coeffs.id();
  auto blocks = blocks_;
  auto groups = groups_;
  const Eigen::Index ncoef = c.size();
  return tape.push(std::move(w), {ic}, [ic, blocks, groups, ncoef](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix dc = Matrix::Zero(ncoef, 1);
    for (const BlockGroup& grp : *groups) {
      const Eigen::Index k = grp.basis->cols();
      Matrix gs(grp.basis->rows(), static_cast<Eigen::Index>(grp.members.size()));
      for (size_t j = 0; j < grp.members.size(); ++j) {
        const Block& b = (*blocks)[grp.members[j]];
        Eigen::Map<RowMatrix>(gs.col(j).data(), b.out_dim, b.in_dim) =
            g.block(b.out_offset, b.in_offset, b.out_dim, b.in_dim);
      }
      const Matrix d = grp.basis->transpose() * gs;
      for (size_t j = 0; j < grp.members.size(); ++j)
        dc.col(0).segment((*blocks)[grp.members[j]].coeff_offset, k) = d.col(j);
    }
    tp.accumulate(ic, dc);
  });
}

Var Linear::realize_bias(Tape& tape) {
  Var coeffs = tape.leaf(bias_);
  if (constraint_ == Constraint::dense) return coeffs;
  Matrix b = Matrix::Zero(1, out_dim_);
  const Vector& c = coeffs.value().col(0);
  for (const BiasBlock& bb : *bias_blocks_)
    b.block(0, bb.out_offset, 1, bb.out_dim) = ((*bb.basis) * c.segment(bb.coeff_offset, bb.basis->cols())).transpose();
  const int ic = coeffs.id();
  auto blocks = bias_blocks_;
  const Eigen::Index ncoef = c.size();
  return tape.push(std::move(b), {ic}, [ic, blocks, ncoef](Tape& tp, int self) {
    const Matrix& g = tp.grad(self);
    Matrix dc = Matrix::Zero(ncoef, 1);
    for (const BiasBlock& bb : *blocks)
      dc.col(0).segment(bb.coeff_offset, bb.basis->cols()) =
          bb.basis->transpose() * g.block(0, bb.out_offset, 1, bb.out_dim).transpose();
    tp.accumulate(ic, dc);
  });
}

Linear::Realized Linear::realize(Tape& tape) {
  Realized r{realize_weight(tape), {}};
  if (has_bias_) r.bias = realize_bias(tape);
  return r;
}

Var Linear::apply(const Realized& r, const Var& x) {
  if (x.cols() != r.weight.cols())
    throw Error(ErrorCode::rep_mismatch, "linear input has " + std::to_string(x.cols()) + " features, layer expects " +
                                             std::to_string(r.weight.cols()));
  Var y = ad::matmul_nt(x, r.weight);
  if (r.bias.valid()) y = ad::add_row(y, r.bias);
  return y;
}

Matrix Linear::weight_matrix() const {
  Tape tape;
  Linear& self = const_cast<Linear&>(*this);
  return self.realize_weight(tape).value();
}

Eigen::RowVectorXd Linear::bias_vector() const {
  if (!has_bias_) return Eigen::RowVectorXd::Zero(out_dim_);
  Tape tape;
  Linear& self = const_cast<Linear&>(*this);
  return self.realize_bias(tape).value().row(0);
}

// ---------------------------------------------------------------------------
// Conv2d

FieldType patch_type(const FieldType& in, int kernel) {
  FieldType out;
  for (const auto& r : in) out.push_back(Representation::grid(r, kernel, kernel));
  return out;
}

Conv2d::Conv2d(std::string name, FieldType in, FieldType out, int kernel, int padding, int height, int width,
               Constraint constraint, std::mt19937_64& rng)
    : in_(std::move(in)),
      out_(std::move(out)),
      kernel_(kernel),
      padding_(padding),
      height_(height),
      width_(width),
      out_h_(height + 2 * padding - kernel + 1),
      out_w_(width + 2 * padding - kernel + 1),
      linear_(name, patch_type(in_, kernel), out_, constraint, true, rng) {
  if (height != width)
    throw Error(ErrorCode::unsupported_spatial_action,
                name + ": non-square input " + std::to_string(height) + "x" + std::to_string(width));
  if (out_h_ <= 0) throw Error(ErrorCode::shape, name + ": kernel larger than padded input");
  for (const auto& r : in_)
    if (r.kind() == RepKind::grid) throw Error(ErrorCode::rep_mismatch, name + ": nested grid field");
}

std::shared_ptr<const std::vector<int>> Conv2d::im2col_map(int batch) {
  auto it = im2col_cache_.find(batch);
  if (it != im2col_cache_.end()) return it->second;
  const int hw = height_ * width_;
  const int in_channels = dimension(in_);
  const int kk = kernel_ * kernel_;
  const int cols = linear_.in_dim();
  const int out_pixels = out_h_ * out_w_;
  auto map = std::make_shared<std::vector<int>>(static_cast<size_t>(batch) * out_pixels * cols, -1);
  const int sample_stride = in_channels * hw;
  for (int b = 0; b < batch; ++b)
    for (int oy = 0; oy < out_h_; ++oy)
      for (int ox = 0; ox < out_w_; ++ox) {
        const int row = (b * out_pixels) + oy * out_w_ + ox;
        // Patch layout per field: [channel][ky][kx], fields concatenated, which
        // is the channel-major layout of the grid representation of the patch.
        for (int ch = 0; ch < in_channels; ++ch)
          for (int ky = 0; ky < kernel_; ++ky)
            for (int kx = 0; kx < kernel_; ++kx) {
              const int iy = oy + ky - padding_;
              const int ix = ox + kx - padding_;
              const int col = ch * kk + ky * kernel_ + kx;
              if (iy < 0 || iy >= height_ || ix < 0 || ix >= width_) continue;
              (*map)[static_cast<size_t>(row) * cols + col] = b * sample_stride + ch * hw + iy * width_ + ix;
            }
      }
  im2col_cache_[batch] = map;
  return map;
}

std::shared_ptr<const std::vector<int>> Conv2d::col2im_map(int batch) {
  auto it = col2im_cache_.find(batch);
  if (it != col2im_cache_.end()) return it->second;
  const int out_pixels = out_h_ * out_w_;
  const int dout = linear_.out_dim();
  auto map = std::make_shared<std::vector<int>>(static_cast<size_t>(batch) * dout * out_pixels);
  // source: (batch*out_pixels) x dout ; dest: batch x (dout*out_pixels)
  for (int b = 0; b < batch; ++b)
    for (int ch = 0; ch < dout; ++ch)
      for (int p = 0; p < out_pixels; ++p)
        (*map)[static_cast<size_t>(b) * dout * out_pixels + ch * out_pixels + p] = (b * out_pixels + p) * dout + ch;
  col2im_cache_[batch] = map;
  return map;
}

Var Conv2d::apply(const Linear::Realized& weights, const Var& x) {
  const int per_sample = dimension(in_) * height_ * width_;
  if (x.cols() != per_sample)
    throw Error(ErrorCode::rep_mismatch, "conv input has " + std::to_string(x.cols()) + " values per sample, expected " +
                                             std::to_string(per_sample));
  const int batch = static_cast<int>(x.rows());
  const int out_pixels = out_h_ * out_w_;
  Var patches = ad::remap(x, static_cast<Eigen::Index>(batch) * out_pixels, linear_.in_dim(), im2col_map(batch));
  Var y = Linear::apply(weights, patches);
  return ad::remap(y, batch, static_cast<Eigen::Index>(linear_.out_dim()) * out_pixels, col2im_map(batch));
}

// ---------------------------------------------------------------------------
// LSTM

namespace {

FieldType gate_type(const FieldType& hidden) {
  FieldType out;
  for (int k = 0; k < 4; ++k) out = concat(out, hidden);
  return out;
}

}  // namespace

LstmCell::LstmCell(std::string name, FieldType input, FieldType hidden, Constraint constraint, std::mt19937_64& rng,
                   bool candidate_tanh_twice)
    : input_(std::move(input)),
      hidden_(std::move(hidden)),
      hidden_dim_(dimension(hidden_)),
      candidate_tanh_twice_(candidate_tanh_twice),
      gates_(name + ".gates", concat(input_, hidden_), gate_type(hidden_), constraint, true, rng) {
  if (constraint == Constraint::equivariant) require_pointwise_safe(hidden_, name);
}

LstmState LstmCell::step(const Linear::Realized& gates, const Var& x, const LstmState& state) const {
  if (state.h.cols() != hidden_dim_ || state.c.cols() != hidden_dim_)
    throw Error(ErrorCode::rep_mismatch, "lstm state width " + std::to_string(state.h.cols()) + ", expected " +
                                             std::to_string(hidden_dim_));
  const Var pre = Linear::apply(gates, ad::concat_cols({x, state.h}));
  const Eigen::Index h = hidden_dim_;
  const Var i = ad::sigmoid(ad::slice_cols(pre, 0, h));
  const Var f = ad::sigmoid(ad::slice_cols(pre, h, h));
  const Var o = ad::sigmoid(ad::slice_cols(pre, 2 * h, h));
  const Var g = ad::tanh(ad::slice_cols(pre, 3 * h, h));
  const Var candidate = candidate_tanh_twice_ ? ad::tanh(g) : g;
  const Var c = ad::add(ad::hadamard(f, state.c), ad::hadamard(i, candidate));
  const Var hn = ad::hadamard(o, ad::tanh(c));
  return {hn, c};
}

std::pair<Matrix, Matrix> initial_state(int batch, int hidden_dim, InitMode mode, std::mt19937_64& rng) {
  if (mode == InitMode::zero) return {Matrix::Zero(batch, hidden_dim), Matrix::Zero(batch, hidden_dim)};
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix h(batch, hidden_dim), c(batch, hidden_dim);
  for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = normal(rng);
  return {h, c};
}

// ---------------------------------------------------------------------------
// Head

Head::Head(std::string name, FieldType in, FieldType hidden, FieldType out, Constraint constraint, std::mt19937_64& rng)
    : first_(name + ".hidden", std::move(in), hidden, constraint, true, rng),
      second_(name + ".out", hidden, std::move(out), constraint, true, rng) {
  if (constraint == Constraint::equivariant) require_pointwise_safe(hidden, name);
}

Var Head::apply(const Realized& r, const Var& x) {
  return Linear::apply(r.second, ad::relu(Linear::apply(r.first, x)));
}

std::vector<Parameter*> Head::parameters() {
  auto out = first_.parameters();
  for (auto* p : second_.parameters()) out.push_back(p);
  return out;
}

}  // namespace equirl
