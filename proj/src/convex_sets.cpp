#include "vmfejer/convex_sets.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <Eigen/QR>

#include "vmfejer/errors.hpp"

namespace vmfejer {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

void require_finite(const Vector& v, const char* name) {
  if (!v.allFinite()) throw InvalidInput(std::string(name) + " has non-finite entries");
}

void require_dim(const ConvexSet& c, const Vector& x) {
  if (x.size() != c.dim()) {
    std::ostringstream os;
    os << "point has dimension " << x.size() << ", set has " << c.dim();
    throw InvalidInput(os.str());
  }
}

bool is_diagonal(const Matrix& m) {
  for (Eigen::Index j = 0; j < m.cols(); ++j) {
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
      if (i != j && m(i, j) != 0.0) return false;
    }
  }
  return true;
}

bool is_scaled_identity(const Matrix& m) {
  return is_diagonal(m) && (m.diagonal().array() == m(0, 0)).all();
}

Vector clamp(const Vector& x, const Box& b) { return x.cwiseMax(b.lo).cwiseMin(b.hi); }

// Dykstra over the coordinate slabs {lo_i <= y_i <= hi_i} in the W geometry.
Vector project_box_metric(const Box& box, const MetricOperator& w, const Vector& x) {
  const auto n = x.size();
  const Matrix w_inv = w.inverse();
  Vector y = x;
  Matrix incr = Matrix::Zero(n, n);
  double change = 0.0;
  for (std::size_t sweep = 0; sweep < kMetricProjectionMaxIter; ++sweep) {
    change = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const Vector z = y + incr.col(i);
      const double target = std::clamp(z(i), box.lo(i), box.hi(i));
      Vector y_new = z;
      if (target != z(i)) y_new += ((target - z(i)) / w_inv(i, i)) * w_inv.col(i);
      const Vector incr_new = z - y_new;
      change += metric_norm_sq(w, incr_new - incr.col(i));
      incr.col(i) = incr_new;
      y = std::move(y_new);
    }
    change = std::sqrt(change);
    const double violation =
        std::max((box.lo - y).cwiseMax(0.0).maxCoeff(), (y - box.hi).cwiseMax(0.0).maxCoeff());
    if (change <= kMetricProjectionTol && violation <= kMetricProjectionTol) {
      return clamp(y, box);
    }
  }
  throw NumericError("metric box projection did not converge", change);
}

// Multiplier nu >= 0 with ||c + (W + nu I)^{-1} W (x - c) - c|| = r.
Vector project_ball_metric(const Ball& ball, const MetricOperator& w, const Vector& x) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(w.matrix());
  const Vector& lam = es.eigenvalues();
  const Vector d = es.eigenvectors().transpose() * (x - ball.center);
  const double r = ball.radius;

  auto radius_at = [&](double nu, double* dpsi) {
    double psi2 = 0.0;
    double dpsi2 = 0.0;
    for (Eigen::Index i = 0; i < lam.size(); ++i) {
      const double s = lam(i) / (lam(i) + nu);
      psi2 += s * s * d(i) * d(i);
      dpsi2 -= 2.0 * s * s * d(i) * d(i) / (lam(i) + nu);
    }
    const double psi = std::sqrt(psi2);
    if (dpsi) *dpsi = psi > 0.0 ? dpsi2 / (2.0 * psi) : 0.0;
    return psi;
  };

  double lo = 0.0;
  double hi = lam.maxCoeff() * d.norm() / r;
  double nu = 0.0;
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t it = 0; it < kMetricProjectionMaxIter; ++it) {
    double dpsi = 0.0;
    const double psi = radius_at(nu, &dpsi);
    gap = psi - r;
    if (std::abs(gap) <= 1e-14 * std::max(1.0, r) || hi - lo <= 1e-16 * std::max(1.0, hi)) {
      gap = std::abs(gap);
      break;
    }
    if (gap > 0.0) {
      lo = nu;
    } else {
      hi = nu;
    }
    // Newton on 1/r - 1/psi(nu), which is close to linear in nu.
    const double phi = 1.0 / r - 1.0 / psi;
    const double dphi = dpsi / (psi * psi);
    double next = dphi != 0.0 ? nu - phi / dphi : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    nu = next;
  }
  if (!(gap <= kMetricProjectionTol * std::max(1.0, r))) {
    throw NumericError("metric ball projection did not converge", gap);
  }
  Vector scaled(lam.size());
  for (Eigen::Index i = 0; i < lam.size(); ++i) scaled(i) = lam(i) / (lam(i) + nu) * d(i);
  Vector offset = es.eigenvectors() * scaled;
  const double len = offset.norm();
  if (len > r) offset *= r / len;
  return ball.center + offset;
}

}  // namespace

ConvexSet::ConvexSet(Shape shape) : shape_(std::move(shape)) {
  dim_ = std::visit(
      overloaded{[](const HalfSpace& h) { return h.u.size(); },
                 [](const Hyperplane& h) { return h.u.size(); },
                 [](const Box& b) { return b.lo.size(); },
                 [](const Ball& b) { return b.center.size(); },
                 [](const AffineSubspace& a) { return a.a.cols(); }},
      shape_);
  if (dim_ == 0) throw InvalidInput("convex set has dimension zero");
}

ConvexSet ConvexSet::half_space(Vector u, double eta) {
  require_finite(u, "half-space normal");
  if (!(u.norm() > 0.0)) throw InvalidInput("half-space normal must be nonzero");
  if (!std::isfinite(eta)) throw InvalidInput("half-space offset must be finite");
  return ConvexSet(HalfSpace{std::move(u), eta});
}

ConvexSet ConvexSet::hyperplane(Vector u, double eta) {
  require_finite(u, "hyperplane normal");
  if (!(u.norm() > 0.0)) throw InvalidInput("hyperplane normal must be nonzero");
  if (!std::isfinite(eta)) throw InvalidInput("hyperplane offset must be finite");
  return ConvexSet(Hyperplane{std::move(u), eta});
}

ConvexSet ConvexSet::box(Vector lo, Vector hi) {
  if (lo.size() != hi.size()) throw InvalidInput("box bounds have different dimensions");
  require_finite(lo, "box lower bound");
  require_finite(hi, "box upper bound");
  if ((lo.array() > hi.array()).any()) throw InvalidInput("box needs lo <= hi componentwise");
  return ConvexSet(Box{std::move(lo), std::move(hi)});
}

ConvexSet ConvexSet::ball(Vector center, double radius) {
  require_finite(center, "ball center");
  if (!(radius > 0.0) || !std::isfinite(radius)) {
    throw InvalidInput("ball radius must be positive");
  }
  return ConvexSet(Ball{std::move(center), radius});
}

ConvexSet ConvexSet::affine(Matrix a, Vector b) {
  if (a.rows() != b.size() || a.rows() == 0) {
    throw InvalidInput("affine subspace needs A (m x n) and b (m) with m >= 1");
  }
  if (!a.allFinite() || !b.allFinite()) throw InvalidInput("affine subspace has non-finite data");
  Eigen::ColPivHouseholderQR<Matrix> qr(a.transpose());
  qr.setThreshold(1e-12);
  if (qr.rank() != a.rows()) throw InvalidInput("affine subspace matrix must have full row rank");
  ConvexSet set(AffineSubspace{std::move(a), std::move(b)});
  const auto& aff = std::get<AffineSubspace>(set.shape_);
  set.gram_.compute(aff.a * aff.a.transpose());
  return set;
}

std::string ConvexSet::kind() const {
  return std::visit(overloaded{[](const HalfSpace&) { return "halfspace"; },
                               [](const Hyperplane&) { return "hyperplane"; },
                               [](const Box&) { return "box"; },
                               [](const Ball&) { return "ball"; },
                               [](const AffineSubspace&) { return "affine"; }},
                    shape_);
}

bool ConvexSet::contains(const Vector& x, double tol) const {
  require_dim(*this, x);
  return std::visit(
      overloaded{
          [&](const HalfSpace& h) { return x.dot(h.u) <= h.eta + tol; },
          [&](const Hyperplane& h) { return std::abs(x.dot(h.u) - h.eta) <= tol; },
          [&](const Box& b) {
            return ((x - b.lo).array() >= -tol).all() && ((b.hi - x).array() >= -tol).all();
          },
          [&](const Ball& b) {
            return (x - b.center).squaredNorm() <= b.radius * b.radius ||
                   (x - b.center).norm() <= b.radius + tol;
          },
          [&](const AffineSubspace& a) {
            return (a.a * x - a.b).cwiseAbs().maxCoeff() <= tol;
          }},
      shape_);
}

Vector ConvexSet::affine_gram_solve(const Vector& r) const { return gram_.solve(r); }

Vector project_euclid(const ConvexSet& c, const Vector& x) {
  require_dim(c, x);
  return std::visit(
      overloaded{
          [&](const HalfSpace& h) -> Vector {
            const double ux = x.dot(h.u);
            if (!(ux > h.eta)) return x;
            return x + ((h.eta - ux) / h.u.squaredNorm()) * h.u;
          },
          [&](const Hyperplane& h) -> Vector {
            const double ux = x.dot(h.u);
            if (ux == h.eta) return x;
            return x + ((h.eta - ux) / h.u.squaredNorm()) * h.u;
          },
          [&](const Box& b) -> Vector { return clamp(x, b); },
          [&](const Ball& b) -> Vector {
            const Vector d = x - b.center;
            const double nd = d.norm();
            if (nd <= b.radius) return x;
            return b.center + (b.radius / nd) * d;
          },
          [&](const AffineSubspace& a) -> Vector {
            return x - a.a.transpose() * c.affine_gram_solve(a.a * x - a.b);
          }},
      c.shape());
}

Vector project_metric(const ConvexSet& c, const MetricOperator& w, const Vector& x) {
  require_dim(c, x);
  if (w.dim() != c.dim()) throw InvalidInput("metric and set dimensions differ");
  return std::visit(
      overloaded{
          [&](const HalfSpace& h) -> Vector {
            const double ux = x.dot(h.u);
            if (!(ux > h.eta)) return x;
            const Vector wu = w.solve(h.u);
            return x + ((h.eta - ux) / h.u.dot(wu)) * wu;
          },
          [&](const Hyperplane& h) -> Vector {
            const double ux = x.dot(h.u);
            if (ux == h.eta) return x;
            const Vector wu = w.solve(h.u);
            return x + ((h.eta - ux) / h.u.dot(wu)) * wu;
          },
          [&](const Box& b) -> Vector {
            if (c.contains(x)) return x;
            if (is_diagonal(w.matrix())) return clamp(x, b);
            return project_box_metric(b, w, x);
          },
          [&](const Ball& b) -> Vector {
            if (c.contains(x)) return x;
            if (is_scaled_identity(w.matrix())) return project_euclid(c, x);
            return project_ball_metric(b, w, x);
          },
          [&](const AffineSubspace& a) -> Vector {
            const Matrix winv_at = w.solve_matrix(a.a.transpose());
            const Matrix gram = a.a * winv_at;
            return x - winv_at * gram.llt().solve(a.a * x - a.b);
          }},
      c.shape());
}

double distance(const ConvexSet& c, const Vector& x) { return (x - project_euclid(c, x)).norm(); }

double distance(const ConvexSet& c, const Vector& x, const MetricOperator& w) {
  return metric_norm(w, x - project_metric(c, w, x));
}

IntersectionProjection intersection_project(std::span<const ConvexSet> sets, const Vector& x,
                                            double tol, const MetricOperator* w,
                                            std::size_t max_sweeps) {
  if (sets.empty()) throw PreconditionError("intersection of an empty family");
  for (const auto& s : sets) require_dim(s, x);

  auto project = [&](const ConvexSet& s, const Vector& z) {
    return w ? project_metric(s, *w, z) : project_euclid(s, z);
  };
  auto norm_sq = [&](const Vector& v) { return w ? metric_norm_sq(*w, v) : v.squaredNorm(); };
  auto residual_of = [&](const Vector& y) {
    double r = 0.0;
    for (const auto& s : sets) r = std::max(r, distance(s, y));
    return r;
  };

  IntersectionProjection out;
  Vector y = x;
  std::vector<Vector> incr(sets.size(), Vector::Zero(x.size()));
  double change = 0.0;
  for (std::size_t sweep = 1; sweep <= max_sweeps; ++sweep) {
    change = 0.0;
    for (std::size_t i = 0; i < sets.size(); ++i) {
      const Vector z = y + incr[i];
      Vector y_new = project(sets[i], z);
      Vector incr_new = z - y_new;
      change += norm_sq(incr_new - incr[i]);
      incr[i] = std::move(incr_new);
      y = std::move(y_new);
    }
    change = std::sqrt(change);
    if (change <= tol) {
      out.residual = residual_of(y);
      if (out.residual <= tol) {
        out.point = std::move(y);
        out.sweeps = sweep;
        return out;
      }
    }
  }
  NumericError err("Dykstra iteration cap reached", std::max(change, residual_of(y)));
  throw err;
}

double intersection_distance(std::span<const ConvexSet> sets, const Vector& x, double tol) {
  return (x - intersection_project(sets, x, tol).point).norm();
}

}  // namespace vmfejer
