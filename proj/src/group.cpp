#include "equirl/group.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace equirl {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_order: return "invalid-order";
    case ErrorCode::unknown_element: return "unknown-element";
    case ErrorCode::group_mismatch: return "group-mismatch";
    case ErrorCode::empty_sum: return "empty-sum";
    case ErrorCode::unsupported_spatial_action: return "unsupported-spatial-action";
    case ErrorCode::shape: return "shape";
    case ErrorCode::rank: return "rank";
    case ErrorCode::non_finite_gradient: return "non-finite-gradient";
    case ErrorCode::rep_mismatch: return "rep-mismatch";
    case ErrorCode::impossible_observation: return "impossible-observation";
    case ErrorCode::budget: return "budget";
    case ErrorCode::placement: return "placement";
    case ErrorCode::invalid_action: return "invalid-action";
    case ErrorCode::invalid_pomdp: return "invalid-pomdp";
    case ErrorCode::parse: return "parse";
    case ErrorCode::config: return "config";
    case ErrorCode::alignment: return "alignment";
  }
  return "unknown";
}

// ---------------------------------------------------------------------------
// Group

Group::Group(GroupKind kind, int order) : kind_(kind), order_(order) {
  table_.resize(static_cast<size_t>(order) * order);
  inverse_.resize(order);
  // Both kinds are cyclic as abstract groups; composition is addition mod n.
  for (int a = 0; a < order; ++a) {
    for (int b = 0; b < order; ++b) table_[a * order + b] = (a + b) % order;
    inverse_[a] = (order - a) % order;
  }
}

Group Group::cyclic(int n) {
  if (n < 1) throw Error(ErrorCode::invalid_order, "cyclic group order must be >= 1, got " + std::to_string(n));
  return Group(GroupKind::cyclic, n);
}

Group Group::reflection() { return Group(GroupKind::reflection, 2); }

void Group::check_element(int g) const {
  if (!contains(g))
    throw Error(ErrorCode::unknown_element, "element " + std::to_string(g) + " not in " + name());
}

int Group::compose(int a, int b) const {
  check_element(a);
  check_element(b);
  return table_[a * order_ + b];
}

int Group::inverse(int a) const {
  check_element(a);
  return inverse_[a];
}

std::vector<int> Group::elements() const {
  std::vector<int> out(order_);
  for (int i = 0; i < order_; ++i) out[i] = i;
  return out;
}

double Group::angle(int g) const {
  check_element(g);
  return 2.0 * std::numbers::pi * g / order_;
}

std::string Group::name() const {
  return (kind_ == GroupKind::cyclic ? "C" : "R") + std::to_string(order_);
}

// ---------------------------------------------------------------------------
// Representation

namespace {

bool all_permutations(const std::vector<Matrix>& ms) {
  for (const auto& m : ms) {
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      int ones = 0;
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        if (m(r, c) == 1.0) ++ones;
        else if (m(r, c) != 0.0) return false;
      }
      if (ones != 1) return false;
    }
  }
  return true;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\"'");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\"'");
  return s.substr(b, e - b + 1);
}

}  // namespace

Representation Representation::trivial(const Group& group) {
  Impl impl{group, RepKind::trivial, 1, "trivial", {}, {}, 0, 0, true};
  for (int g = 0; g < group.order(); ++g) impl.matrices.push_back(Matrix::Identity(1, 1));
  return Representation(std::make_shared<const Impl>(std::move(impl)));
}

Representation Representation::standard(const Group& group) {
  Impl impl{group, RepKind::standard, 2, "standard", {}, {}, 0, 0, false};
  for (int g = 0; g < group.order(); ++g) {
    Matrix m(2, 2);
    if (group.kind() == GroupKind::reflection) {
      m << (g == 0 ? 1.0 : -1.0), 0.0, 0.0, 1.0;
    } else {
      // Exact entries at quarter turns keep permutation-like structure clean.
      const int quarter = (4 * g) % group.order() == 0 ? 4 * g / group.order() : -1;
      double c, s;
      if (quarter >= 0) {
        static constexpr double cs[4][2] = {{1, 0}, {0, 1}, {-1, 0}, {0, -1}};
        c = cs[quarter % 4][0];
        s = cs[quarter % 4][1];
      } else {
        c = std::cos(group.angle(g));
        s = std::sin(group.angle(g));
      }
      m << c, -s, s, c;
    }
    impl.matrices.push_back(m);
  }
  impl.permutation = false;
  return Representation(std::make_shared<const Impl>(std::move(impl)));
}

Representation Representation::sign(const Group& group) {
  if (group.order() % 2 != 0)
    throw Error(ErrorCode::invalid_order, "sign representation needs an even-order group, got " + group.name());
  Impl impl{group, RepKind::sign, 1, "sign", {}, {}, 0, 0, false};
  for (int g = 0; g < group.order(); ++g) impl.matrices.push_back(Matrix::Constant(1, 1, g % 2 == 0 ? 1.0 : -1.0));
  return Representation(std::make_shared<const Impl>(std::move(impl)));
}

Representation Representation::regular(const Group& group) {
  const int n = group.order();
  Impl impl{group, RepKind::regular, n, "regular", {}, {}, 0, 0, true};
  for (int g = 0; g < n; ++g) {
    // channel i -> channel g.i
    Matrix m = Matrix::Zero(n, n);
    for (int i = 0; i < n; ++i) m(group.compose(g, i), i) = 1.0;
    impl.matrices.push_back(m);
  }
  return Representation(std::make_shared<const Impl>(std::move(impl)));
}

Representation Representation::grid(const Representation& channel, int height, int width) {
  const Group& group = channel.group();
  const int d = channel.dimension();
  const int pixels = height * width;
  Impl impl{group, RepKind::grid, d * pixels, {}, {}, {channel}, height, width, false};
  impl.name = "grid" + std::to_string(height) + "x" + std::to_string(width) + "(" + channel.name() + ")";
  for (int g = 0; g < group.order(); ++g) {
    const auto moved = grid_pixel_map(group, g, height, width);
    const Matrix& rho = channel.matrix(g);
    Matrix m = Matrix::Zero(impl.dimension, impl.dimension);
    for (int p = 0; p < pixels; ++p)
      for (int co = 0; co < d; ++co)
        for (int ci = 0; ci < d; ++ci) m(co * pixels + moved[p], ci * pixels + p) = rho(co, ci);
    impl.matrices.push_back(std::move(m));
  }
  impl.permutation = all_permutations(impl.matrices);
  return Representation(std::make_shared<const Impl>(std::move(impl)));
}

Representation Representation::parse(const Group& group, const std::string& spec) {
  const std::string s = trim(spec);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') throw Error(ErrorCode::parse, "unterminated representation list: " + spec);
    std::vector<Representation> parts;
    std::stringstream body(s.substr(1, s.size() - 2));
    std::string item;
    while (std::getline(body, item, ',')) parts.push_back(parse(group, item));
    return direct_sum(parts);
  }
  if (s == "trivial") return trivial(group);
  if (s == "standard") return standard(group);
  if (s == "sign") return sign(group);
  if (s == "regular") return regular(group);
  throw Error(ErrorCode::parse, "unknown representation '" + s + "'");
}

const Matrix& Representation::matrix(int g) const {
  impl_->group.check_element(g);
  return impl_->matrices[g];
}

const Representation& Representation::channel() const {
  if (impl_->kind != RepKind::grid) throw Error(ErrorCode::rep_mismatch, name() + " is not a grid representation");
  return impl_->components.front();
}

bool Representation::operator==(const Representation& other) const {
  if (impl_ == other.impl_) return true;
  return impl_->group == other.impl_->group && impl_->name == other.impl_->name;
}

Representation direct_sum(const std::vector<Representation>& reps) {
  if (reps.empty()) throw Error(ErrorCode::empty_sum, "direct sum of zero representations");
  if (reps.size() == 1) return reps.front();
  const Group& group = reps.front().group();
  using Impl = Representation::Impl;
  Impl impl{group, RepKind::sum, 0, "[", {}, reps, 0, 0, false};
  for (size_t i = 0; i < reps.size(); ++i) {
    if (reps[i].group() != group)
      throw Error(ErrorCode::group_mismatch, "cannot sum " + reps[i].group().name() + " with " + group.name());
    impl.dimension += reps[i].dimension();
    impl.name += (i ? "," : "") + reps[i].name();
  }
  impl.name += "]";
  for (int g = 0; g < group.order(); ++g) {
    Matrix m = Matrix::Zero(impl.dimension, impl.dimension);
    int off = 0;
    for (const auto& r : reps) {
      m.block(off, off, r.dimension(), r.dimension()) = r.matrix(g);
      off += r.dimension();
    }
    impl.matrices.push_back(std::move(m));
  }
  impl.permutation = all_permutations(impl.matrices);
  return Representation(std::make_shared<const Impl>(std::move(impl)));
}

// ---------------------------------------------------------------------------
// Grid action

std::vector<int> grid_pixel_map(const Group& group, int g, int height, int width) {
  group.check_element(g);
  std::vector<int> out(static_cast<size_t>(height) * width);
  int quarter_turns = 0;
  bool mirror = false;
  if (group.kind() == GroupKind::reflection) {
    mirror = g == 1;
  } else {
    const int n = group.order();
    if (n != 1 && n != 2 && n != 4)
      throw Error(ErrorCode::unsupported_spatial_action,
                  group.name() + " has no exact action on a pixel grid (only C1, C2, C4)");
    quarter_turns = g * (4 / n);
  }
  if (quarter_turns % 2 == 1 && height != width)
    throw Error(ErrorCode::unsupported_spatial_action,
                "quarter turn of a non-square " + std::to_string(height) + "x" + std::to_string(width) + " grid");
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      int rr = r, cc = c;
      if (mirror) cc = width - 1 - c;
      for (int k = 0; k < quarter_turns; ++k) {
        // 90 degrees counter-clockwise with row 0 at the top.
        const int nr = width - 1 - cc;
        const int nc = rr;
        rr = nr;
        cc = nc;
      }
      out[r * width + c] = rr * width + cc;
    }
  }
  return out;
}

FeatureField::FeatureField(Representation r, Vector v) : rep(std::move(r)), values(std::move(v)) {
  if (values.size() != rep.dimension())
    throw Error(ErrorCode::shape, "field has " + std::to_string(values.size()) + " values for a " +
                                      std::to_string(rep.dimension()) + "-dim representation");
}

FeatureField::FeatureField(Representation r, int h, int w, Vector v)
    : rep(std::move(r)), height(h), width(w), values(std::move(v)) {
  if (h <= 0 || w <= 0) throw Error(ErrorCode::shape, "grid dimensions must be positive");
  if (values.size() != static_cast<Eigen::Index>(rep.dimension()) * h * w)
    throw Error(ErrorCode::shape, "grid field size mismatch");
}

FeatureField act_on_field(int g, const FeatureField& field) {
  const Matrix& rho = field.rep.matrix(g);
  if (!field.spatial()) return FeatureField(field.rep, rho * field.values);
  const int pixels = field.pixels();
  const int d = field.rep.dimension();
  const auto moved = grid_pixel_map(field.rep.group(), g, field.height, field.width);
  // view values as d x pixels (channel-major)
  Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> in(field.values.data(), d,
                                                                                              pixels);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> out(d, pixels);
  const Matrix mixed = rho * in;
  for (int p = 0; p < pixels; ++p) out.col(moved[p]) = mixed.col(p);
  Vector flat = Eigen::Map<const Vector>(out.data(), out.size());
  return FeatureField(field.rep, field.height, field.width, std::move(flat));
}

}  // namespace equirl
