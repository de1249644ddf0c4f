#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace css::geometry {

/// Bounded convex polytope in H-representation A x <= b with the vertex list
/// enumerated at construction. Immutable afterwards; safe for concurrent
/// reads.
class Polytope {
 public:
  /// Builds the polytope, enumerates vertices, and drops redundant faces
  /// (duplicates and faces touching no vertex). Throws unbounded / empty.
  static Polytope from_halfspaces(const Eigen::MatrixXd& a, const Eigen::VectorXd& b);

  const Eigen::MatrixXd& face_normals() const { return a_; }
  const Eigen::VectorXd& face_offsets() const { return b_; }
  const std::vector<Eigen::VectorXd>& vertices() const { return vertices_; }

  Eigen::Index dim() const { return a_.cols(); }
  Eigen::Index num_faces() const { return a_.rows(); }

  /// Index each retained face had in the input system (duplicates collapse
  /// onto their first occurrence).
  const std::vector<Eigen::Index>& original_face_indices() const { return original_indices_; }

  bool contains(const Eigen::VectorXd& x, double tol = 1e-9) const;

  /// Same faces, translated so that `origin` becomes 0: A x' <= b - A*origin.
  Polytope shifted(const Eigen::VectorXd& origin) const;

  /// Center of the largest inscribed ball, found exactly by active-set
  /// enumeration of the lifted (center, radius) program.
  Eigen::VectorXd chebyshev_center() const;

  /// Axis-aligned bounding box of the vertex set.
  void bounding_box(Eigen::VectorXd& lo, Eigen::VectorXd& hi) const;

  Polytope() = default;  // empty; fill via from_halfspaces

 private:
  Eigen::MatrixXd a_;
  Eigen::VectorXd b_;
  std::vector<Eigen::VectorXd> vertices_;
  std::vector<Eigen::Index> original_indices_;
};

/// Exact vertex set of A x <= b by exhaustive active-set enumeration:
/// every full-rank n-subset of faces is solved and kept when feasible.
/// Deduplicated within 1e-9 and sorted lexicographically. Throws unbounded.
std::vector<Eigen::VectorXd> enumerate_vertices(const Eigen::MatrixXd& a,
                                                const Eigen::VectorXd& b);

/// Signed per-face Euclidean distances d(x) = Lambda*(b - A x) with
/// Lambda = diag(1/||a_i||). Positive strictly inside, zero on face i,
/// negative beyond it; affine in x.
class FaceDistance {
 public:
  FaceDistance() = default;
  explicit FaceDistance(const Polytope& polytope);
  FaceDistance(const Eigen::MatrixXd& a, const Eigen::VectorXd& b);

  Eigen::VectorXd operator()(const Eigen::VectorXd& x) const;
  double face(Eigen::Index i, const Eigen::VectorXd& x) const;
  Eigen::Index num_faces() const { return scaled_normals_.rows(); }

  const Eigen::MatrixXd& scaled_normals() const { return scaled_normals_; }
  const Eigen::VectorXd& scaled_offsets() const { return scaled_offsets_; }

 private:
  Eigen::MatrixXd scaled_normals_;  // rows a_i / ||a_i||
  Eigen::VectorXd scaled_offsets_;  // b_i / ||a_i||
};

/// State-dependent risk budget eta_i(x) = log(d_i(x)/gamma + 1): zero on face
/// i, concave, and <= 1 everywhere in the cell when gamma comes from
/// gamma_for().
class RiskBudget {
 public:
  RiskBudget() = default;  // empty; use risk_budget_for
  RiskBudget(FaceDistance distances, double gamma);

  /// Budget for face i at x. Throws negative_distance when x is outside the
  /// cell by more than 1e-9 (distances in [-1e-9, 0) clamp to zero).
  double operator()(const Eigen::VectorXd& x, Eigen::Index face) const;

  double gamma() const { return gamma_; }
  const FaceDistance& distances() const { return distances_; }

 private:
  FaceDistance distances_;
  double gamma_ = 1.0;
};

/// Smallest gamma with eta <= 1 on the cell: gamma = d_max / (e - 1), where
/// d_max is the maximum of max_i d_i(x) over the vertices and the Chebyshev
/// center (the vertex maximum already dominates; the center is a cheap
/// cross-check).
double gamma_for(const Polytope& polytope);

inline RiskBudget risk_budget_for(const Polytope& polytope) {
  return RiskBudget(FaceDistance(polytope), gamma_for(polytope));
}

/// Uniform interior samples by seeded rejection from the vertex bounding box.
std::vector<Eigen::VectorXd> sample_interior(const Polytope& polytope, std::size_t count,
                                             std::uint64_t seed);

}  // namespace css::geometry
