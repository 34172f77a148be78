#pragma once

#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "equirl/error.hpp"

namespace equirl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

enum class GroupKind { cyclic, reflection };

/// Finite symmetry group stored as an explicit composition table.
///
/// Elements are integer ids in [0, order); id 0 is the identity. For the
/// cyclic group C_n, element k is the rotation by 2*pi*k/n. For the
/// reflection group, element 1 is the mirror x -> -x.
class Group {
 public:
  static Group cyclic(int n);
  static Group reflection();

  GroupKind kind() const { return kind_; }
  int order() const { return order_; }
  int identity() const { return 0; }
  int compose(int a, int b) const;
  int inverse(int a) const;
  bool contains(int g) const { return g >= 0 && g < order_; }
  void check_element(int g) const;
  std::vector<int> elements() const;

  /// Rotation angle of element g in radians (0 or pi for the mirror's standard rep).
  double angle(int g) const;

  /// "C4", "R2", ...
  std::string name() const;

  bool operator==(const Group& other) const { return kind_ == other.kind_ && order_ == other.order_; }
  bool operator!=(const Group& other) const { return !(*this == other); }

 private:
  Group(GroupKind kind, int order);

  GroupKind kind_;
  int order_;
  std::vector<int> table_;
  std::vector<int> inverse_;
};

enum class RepKind { trivial, standard, sign, regular, grid, sum };

/// Matrix-valued homomorphism rho: G -> GL(d). Immutable; copies share storage.
class Representation {
 public:
  static Representation trivial(const Group& group);
  static Representation standard(const Group& group);
  static Representation sign(const Group& group);
  static Representation regular(const Group& group);
  /// Action on an H x W grid carrying `channel` at every pixel, laid out
  /// channel-major ([channel][row][col]). Pixels move by g, then channels by rho(g).
  static Representation grid(const Representation& channel, int height, int width);
  /// Parses "trivial", "standard", "sign", "regular", or a list "[a, b, ...]".
  static Representation parse(const Group& group, const std::string& spec);

  const Group& group() const { return impl_->group; }
  RepKind kind() const { return impl_->kind; }
  int dimension() const { return impl_->dimension; }
  const std::string& name() const { return impl_->name; }
  const Matrix& matrix(int g) const;
  const std::vector<Representation>& components() const { return impl_->components; }

  /// For grid reps: the channel representation and the grid shape.
  const Representation& channel() const;
  int height() const { return impl_->height; }
  int width() const { return impl_->width; }

  /// True if every rho(g) is a permutation matrix.
  bool is_permutation() const { return impl_->permutation; }

  bool operator==(const Representation& other) const;
  bool operator!=(const Representation& other) const { return !(*this == other); }

 private:
  struct Impl {
    Group group;
    RepKind kind;
    int dimension = 0;
    std::string name;
    std::vector<Matrix> matrices;
    std::vector<Representation> components;
    int height = 0;
    int width = 0;
    bool permutation = false;
  };
  explicit Representation(std::shared_ptr<const Impl> impl) : impl_(std::move(impl)) {}
  friend Representation direct_sum(const std::vector<Representation>& reps);

  std::shared_ptr<const Impl> impl_;
};

/// Block-diagonal sum; all components must share a group.
Representation direct_sum(const std::vector<Representation>& reps);

/// Index permutation realizing g on an H x W grid: result[p] = g.p for flat pixel p.
/// Only exact grid symmetries are supported (quarter turns, half turns, mirror).
std::vector<int> grid_pixel_map(const Group& group, int g, int height, int width);

/// A feature vector carrying a representation, optionally over a square grid.
struct FeatureField {
  Representation rep;
  int height = 0;  ///< 0 means a scalar (non-spatial) field
  int width = 0;
  Vector values;

  FeatureField(Representation r, Vector v);
  FeatureField(Representation r, int h, int w, Vector v);

  bool spatial() const { return height > 0; }
  int pixels() const { return spatial() ? height * width : 1; }
};

/// g.x = rho(g) (rho_f(g)^-1 x): pixels permuted, then channels transformed.
FeatureField act_on_field(int g, const FeatureField& field);

}  // namespace equirl
