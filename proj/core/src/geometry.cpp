#include "css/geometry.hpp"

#include <algorithm>
#include <cmath>

#include "css/error.hpp"
#include "css/rng.hpp"

namespace css::geometry {

namespace {

constexpr double kVertexTol = 1e-9;

/// Visits every k-subset of {0,...,m-1} in lexicographic order.
template <typename Fn>
void for_each_subset(Eigen::Index m, Eigen::Index k, Fn&& fn) {
  if (k < 0 || k > m) return;
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(k));
  for (Eigen::Index i = 0; i < k; ++i) idx[static_cast<std::size_t>(i)] = i;
  for (;;) {
    fn(idx);
    Eigen::Index pos = k - 1;
    while (pos >= 0 && idx[static_cast<std::size_t>(pos)] == m - k + pos) --pos;
    if (pos < 0) return;
    ++idx[static_cast<std::size_t>(pos)];
    for (Eigen::Index j = pos + 1; j < k; ++j) {
      idx[static_cast<std::size_t>(j)] = idx[static_cast<std::size_t>(j - 1)] + 1;
    }
  }
}

bool lex_less(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    if (a[i] < b[i] - kVertexTol) return true;
    if (a[i] > b[i] + kVertexTol) return false;
  }
  return false;
}

/// A d <= 0 componentwise, with a scale-aware tolerance.
bool is_recession_direction(const Eigen::MatrixXd& a, const Eigen::VectorXd& d) {
  const double scale = std::max(1.0, d.lpNorm<Eigen::Infinity>());
  return ((a * d).array() <= 1e-12 * scale).all();
}

/// Searches for an extreme ray of the recession cone {d : A d <= 0}. Rays of
/// a pointed cone have n-1 linearly independent active rows, so checking the
/// null spaces of all (n-1)-subsets is exhaustive.
bool has_recession_ray(const Eigen::MatrixXd& a) {
  const Eigen::Index n = a.cols();
  if (n == 1) {
    Eigen::VectorXd d(1);
    d << 1.0;
    return is_recession_direction(a, d) || is_recession_direction(a, -d);
  }
  bool found = false;
  for_each_subset(a.rows(), n - 1, [&](const std::vector<Eigen::Index>& subset) {
    if (found) return;
    Eigen::MatrixXd rows(n - 1, n);
    for (Eigen::Index i = 0; i < n - 1; ++i) rows.row(i) = a.row(subset[static_cast<std::size_t>(i)]);
    Eigen::FullPivLU<Eigen::MatrixXd> lu(rows);
    lu.setThreshold(1e-10);
    if (lu.rank() != n - 1) return;
    Eigen::MatrixXd kernel = lu.kernel();
    for (Eigen::Index c = 0; c < kernel.cols(); ++c) {
      Eigen::VectorXd d = kernel.col(c);
      const double norm = d.norm();
      if (norm < 1e-12) continue;
      d /= norm;
      if (is_recession_direction(a, d) || is_recession_direction(a, -d)) {
        found = true;
        return;
      }
    }
  });
  return found;
}

}  // namespace

std::vector<Eigen::VectorXd> enumerate_vertices(const Eigen::MatrixXd& a,
                                                const Eigen::VectorXd& b) {
  const Eigen::Index n = a.cols();
  const Eigen::Index n_h = a.rows();
  if (b.size() != n_h) {
    throw Error(ErrorCode::dimension_mismatch, "face offsets do not match face normals");
  }

  Eigen::FullPivLU<Eigen::MatrixXd> full(a);
  full.setThreshold(1e-10);
  if (full.rank() < n) {
    throw Error(ErrorCode::unbounded, "face normals do not span the space");
  }

  std::vector<Eigen::VectorXd> vertices;
  for_each_subset(n_h, n, [&](const std::vector<Eigen::Index>& subset) {
    Eigen::MatrixXd active(n, n);
    Eigen::VectorXd rhs(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      active.row(i) = a.row(subset[static_cast<std::size_t>(i)]);
      rhs[i] = b[subset[static_cast<std::size_t>(i)]];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(active);
    lu.setThreshold(1e-10);
    if (lu.rank() != n) return;  // degenerate active set: skipped, not an error
    Eigen::VectorXd v = lu.solve(rhs);
    if (!v.allFinite()) return;
    const double tol = kVertexTol * std::max(1.0, v.lpNorm<Eigen::Infinity>());
    if (((a * v - b).array() > tol).any()) return;
    for (const auto& existing : vertices) {
      if ((existing - v).lpNorm<Eigen::Infinity>() <= kVertexTol) return;
    }
    vertices.push_back(std::move(v));
  });

  std::sort(vertices.begin(), vertices.end(), lex_less);
  return vertices;
}

Polytope Polytope::from_halfspaces(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  if (a.rows() == 0 || a.cols() == 0) {
    throw Error(ErrorCode::invalid_argument, "empty halfspace system");
  }
  if (b.size() != a.rows()) {
    throw Error(ErrorCode::dimension_mismatch, "face offsets do not match face normals");
  }
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    if (a.row(i).norm() < 1e-12) {
      throw Error(ErrorCode::invalid_argument, "zero face normal");
    }
  }

  // Collapse duplicated faces (same normalized row and offset) onto the first
  // occurrence so barrier bookkeeping sees each geometric face once.
  std::vector<Eigen::Index> kept;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double ni = a.row(i).norm();
    bool duplicate = false;
    for (Eigen::Index j : kept) {
      const double nj = a.row(j).norm();
      if ((a.row(i) / ni - a.row(j) / nj).lpNorm<Eigen::Infinity>() <= kVertexTol &&
          std::abs(b[i] / ni - b[j] / nj) <= kVertexTol) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) kept.push_back(i);
  }

  Eigen::MatrixXd a1(static_cast<Eigen::Index>(kept.size()), a.cols());
  Eigen::VectorXd b1(static_cast<Eigen::Index>(kept.size()));
  for (std::size_t i = 0; i < kept.size(); ++i) {
    a1.row(static_cast<Eigen::Index>(i)) = a.row(kept[i]);
    b1[static_cast<Eigen::Index>(i)] = b[kept[i]];
  }

  std::vector<Eigen::VectorXd> vertices = enumerate_vertices(a1, b1);
  if (vertices.empty()) {
    throw Error(ErrorCode::empty, "inequality system has no feasible point");
  }
  if (has_recession_ray(a1)) {
    throw Error(ErrorCode::unbounded, "polytope has a recession direction");
  }

  // Faces touching no vertex are redundant for a bounded polytope.
  std::vector<Eigen::Index> touching;
  for (Eigen::Index i = 0; i < a1.rows(); ++i) {
    for (const auto& v : vertices) {
      const double tol = kVertexTol * std::max(1.0, std::abs(b1[i]));
      if (std::abs(a1.row(i).dot(v) - b1[i]) <= tol) {
        touching.push_back(i);
        break;
      }
    }
  }

  Polytope p;
  p.a_.resize(static_cast<Eigen::Index>(touching.size()), a.cols());
  p.b_.resize(static_cast<Eigen::Index>(touching.size()));
  for (std::size_t i = 0; i < touching.size(); ++i) {
    p.a_.row(static_cast<Eigen::Index>(i)) = a1.row(touching[i]);
    p.b_[static_cast<Eigen::Index>(i)] = b1[touching[i]];
    p.original_indices_.push_back(kept[static_cast<std::size_t>(touching[i])]);
  }
  p.vertices_ = std::move(vertices);
  return p;
}

bool Polytope::contains(const Eigen::VectorXd& x, double tol) const {
  if (x.size() != dim()) {
    throw Error(ErrorCode::dimension_mismatch, "point dimension does not match polytope");
  }
  return ((a_ * x - b_).array() <= tol).all();
}

Polytope Polytope::shifted(const Eigen::VectorXd& origin) const {
  if (origin.size() != dim()) {
    throw Error(ErrorCode::dimension_mismatch, "shift dimension does not match polytope");
  }
  Polytope p(*this);
  p.b_ -= p.a_ * origin;
  for (auto& v : p.vertices_) v -= origin;
  return p;
}

Eigen::VectorXd Polytope::chebyshev_center() const {
  const Eigen::Index n = dim();
  const Eigen::Index n_h = num_faces();
  Eigen::VectorXd norms(n_h);
  for (Eigen::Index i = 0; i < n_h; ++i) norms[i] = a_.row(i).norm();

  // maximize rho s.t. a_i' c + ||a_i|| rho <= b_i; the optimum is a basic
  // solution with n+1 active faces.
  double best_rho = -1.0;
  Eigen::VectorXd best = Eigen::VectorXd::Zero(n);
  for_each_subset(n_h, n + 1, [&](const std::vector<Eigen::Index>& subset) {
    Eigen::MatrixXd active(n + 1, n + 1);
    Eigen::VectorXd rhs(n + 1);
    for (Eigen::Index i = 0; i < n + 1; ++i) {
      const Eigen::Index row = subset[static_cast<std::size_t>(i)];
      active.block(i, 0, 1, n) = a_.row(row);
      active(i, n) = norms[row];
      rhs[i] = b_[row];
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(active);
    lu.setThreshold(1e-10);
    if (lu.rank() != n + 1) return;
    Eigen::VectorXd sol = lu.solve(rhs);
    if (!sol.allFinite()) return;
    const double rho = sol[n];
    if (rho <= best_rho) return;
    Eigen::VectorXd c = sol.head(n);
    const double tol = kVertexTol * std::max(1.0, c.lpNorm<Eigen::Infinity>());
    if (((a_ * c + norms * rho - b_).array() > tol).any()) return;
    best_rho = rho;
    best = c;
  });

  if (best_rho < 0.0) {
    // Fall back to the vertex centroid for degenerate geometry.
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(n);
    for (const auto& v : vertices_) mean += v;
    return mean / static_cast<double>(vertices_.size());
  }
  return best;
}

void Polytope::bounding_box(Eigen::VectorXd& lo, Eigen::VectorXd& hi) const {
  lo = vertices_.front();
  hi = vertices_.front();
  for (const auto& v : vertices_) {
    lo = lo.cwiseMin(v);
    hi = hi.cwiseMax(v);
  }
}

FaceDistance::FaceDistance(const Polytope& polytope)
    : FaceDistance(polytope.face_normals(), polytope.face_offsets()) {}

FaceDistance::FaceDistance(const Eigen::MatrixXd& a, const Eigen::VectorXd& b) {
  scaled_normals_.resize(a.rows(), a.cols());
  scaled_offsets_.resize(a.rows());
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    const double norm = a.row(i).norm();
    if (norm < 1e-12) {
      throw Error(ErrorCode::invalid_argument, "zero face normal");
    }
    scaled_normals_.row(i) = a.row(i) / norm;
    scaled_offsets_[i] = b[i] / norm;
  }
}

Eigen::VectorXd FaceDistance::operator()(const Eigen::VectorXd& x) const {
  return scaled_offsets_ - scaled_normals_ * x;
}

double FaceDistance::face(Eigen::Index i, const Eigen::VectorXd& x) const {
  return scaled_offsets_[i] - scaled_normals_.row(i).dot(x);
}

RiskBudget::RiskBudget(FaceDistance distances, double gamma)
    : distances_(std::move(distances)), gamma_(gamma) {
  if (!(gamma > 0.0)) {
    throw Error(ErrorCode::invalid_argument, "gamma must be positive");
  }
}

double RiskBudget::operator()(const Eigen::VectorXd& x, Eigen::Index face) const {
  double d = distances_.face(face, x);
  if (d < -1e-9) {
    throw Error(ErrorCode::negative_distance, "point lies outside the cell");
  }
  if (d < 0.0) d = 0.0;
  return std::log1p(d / gamma_);
}

double gamma_for(const Polytope& polytope) {
  const FaceDistance fd(polytope);
  double d_max = 0.0;
  for (const auto& v : polytope.vertices()) {
    d_max = std::max(d_max, fd(v).maxCoeff());
  }
  d_max = std::max(d_max, fd(polytope.chebyshev_center()).maxCoeff());
  if (d_max <= 0.0) {
    throw Error(ErrorCode::degenerate, "cell has no interior");
  }
  return d_max / (std::exp(1.0) - 1.0);
}

std::vector<Eigen::VectorXd> sample_interior(const Polytope& polytope, std::size_t count,
                                             std::uint64_t seed) {
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;
  polytope.bounding_box(lo, hi);
  Rng rng(derive_seed(seed, 0xce11));
  std::vector<Eigen::VectorXd> points;
  points.reserve(count);
  std::size_t attempts = 0;
  const std::size_t max_attempts = 10000 * std::max<std::size_t>(count, 1);
  while (points.size() < count) {
    if (++attempts > max_attempts) {
      throw Error(ErrorCode::degenerate, "interior sampling failed; cell may have no volume");
    }
    Eigen::VectorXd x(polytope.dim());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      x[i] = lo[i] + (hi[i] - lo[i]) * rng.uniform();
    }
    if (polytope.contains(x, 0.0)) points.push_back(std::move(x));
  }
  return points;
}

}  // namespace css::geometry
