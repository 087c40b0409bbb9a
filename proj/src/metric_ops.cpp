#include "vmfejer/metric_ops.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "vmfejer/errors.hpp"

namespace vmfejer {

namespace {

void require_dim(const MetricOperator& w, const Vector& x, const char* name) {
  if (x.size() != w.dim()) {
    std::ostringstream os;
    os << name << " has dimension " << x.size() << ", metric has " << w.dim();
    throw InvalidInput(os.str());
  }
}

std::pair<double, double> eigen_range(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(a, Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) {
    throw NumericError("symmetric eigenvalue solve failed", 0.0);
  }
  return {es.eigenvalues()(0), es.eigenvalues()(a.rows() - 1)};
}

}  // namespace

void require_symmetric(const Matrix& a, const char* name) {
  if (a.rows() != a.cols() || a.rows() == 0) {
    throw InvalidInput(std::string(name) + " must be a nonempty square matrix");
  }
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  const double asym = (a - a.transpose()).cwiseAbs().maxCoeff();
  if (!(asym <= 1e-12 * scale)) {
    std::ostringstream os;
    os << name << " is not symmetric (max |a_ij - a_ji| = " << asym << ")";
    throw InvalidInput(os.str());
  }
}

double min_eigenvalue(const Matrix& a) { return eigen_range(a).first; }
double max_eigenvalue(const Matrix& a) { return eigen_range(a).second; }

// ---------------------------------------------------------------------------

MetricOperator::MetricOperator(Matrix w, double alpha) : w_(std::move(w)), alpha_(alpha) {
  if (!(alpha_ > 0.0)) throw InvalidInput("metric lower bound alpha must be positive");
  require_symmetric(w_, "metric");
  std::tie(min_eig_, max_eig_) = eigen_range(w_);
  if (min_eig_ < alpha_ - kMatrixTol) {
    std::ostringstream os;
    os << "metric smallest eigenvalue " << min_eig_ << " is below alpha = " << alpha_;
    throw InvalidInput(os.str());
  }
  llt_.compute(w_);
  if (llt_.info() != Eigen::Success) {
    throw NumericError("Cholesky factorization of the metric failed", min_eig_);
  }
  const Matrix l = llt_.matrixL();
  const double wnorm = w_.norm();
  const double refactor = (l * l.transpose() - w_).norm();
  if (refactor > kMatrixTol * wnorm) {
    throw NumericError("Cholesky factor does not reproduce the metric", refactor);
  }
  identity_ = w_.isIdentity(0.0);
}

MetricOperator MetricOperator::identity(Eigen::Index dim) {
  return MetricOperator(Matrix::Identity(dim, dim), 1.0);
}

Vector MetricOperator::apply(const Vector& x) const {
  require_dim(*this, x, "vector");
  return w_ * x;
}

Vector MetricOperator::solve(const Vector& x) const {
  require_dim(*this, x, "vector");
  return llt_.solve(x);
}

Matrix MetricOperator::solve_matrix(const Matrix& b) const {
  if (b.rows() != dim()) throw InvalidInput("right-hand side rows do not match the metric");
  return llt_.solve(b);
}

Matrix MetricOperator::inverse() const {
  return llt_.solve(Matrix::Identity(dim(), dim()));
}

Matrix MetricOperator::whitener() const { return llt_.matrixU(); }

Vector MetricOperator::whiten(const Vector& x) const {
  require_dim(*this, x, "vector");
  return llt_.matrixU() * x;
}

Vector MetricOperator::unwhiten(const Vector& y) const {
  require_dim(*this, y, "vector");
  return llt_.matrixU().solve(y);
}

double metric_inner(const MetricOperator& w, const Vector& x, const Vector& y) {
  require_dim(w, x, "x");
  require_dim(w, y, "y");
  return (w.matrix() * x).dot(y);
}

double metric_norm_sq(const MetricOperator& w, const Vector& x) {
  return std::max(0.0, metric_inner(w, x, x));
}

double metric_norm(const MetricOperator& w, const Vector& x) {
  return std::sqrt(metric_norm_sq(w, x));
}

// ---------------------------------------------------------------------------

double loewner_slack(const Matrix& a, const Matrix& b) {
  require_symmetric(a, "A");
  require_symmetric(b, "B");
  if (a.rows() != b.rows()) throw InvalidInput("Loewner comparison of different dimensions");
  return min_eigenvalue(a - b);
}

bool loewner_geq(const Matrix& a, const Matrix& b, double tol) {
  return loewner_slack(a, b) >= -tol;
}

bool loewner_geq(const MetricOperator& a, const MetricOperator& b, double tol) {
  return loewner_geq(a.matrix(), b.matrix(), tol);
}

double InverseOrderReport::min_conclusion_slack() const {
  return std::min({inv_alpha_b, inv_b_a, inv_a_mu, quad_lower, inv_norm});
}

InverseOrderReport inverse_order_check(const MetricOperator& a, const MetricOperator& b,
                                       double alpha, double mu, double tol,
                                       std::size_t samples, std::uint64_t seed) {
  if (a.dim() != b.dim()) throw InvalidInput("A and B have different dimensions");
  if (!(alpha > 0.0) || !(mu >= alpha)) {
    throw PreconditionError("inverse_order_check needs 0 < alpha <= mu");
  }
  const auto n = a.dim();
  const Matrix id = Matrix::Identity(n, n);

  InverseOrderReport r;
  r.hyp_mu_a = loewner_slack(mu * id, a.matrix());
  r.hyp_a_b = loewner_slack(a.matrix(), b.matrix());
  r.hyp_b_alpha = loewner_slack(b.matrix(), alpha * id);
  if (r.hyp_mu_a < -tol) throw HypothesisError("mu*I >= A", "hypothesis mu*I >= A fails");
  if (r.hyp_a_b < -tol) throw HypothesisError("A >= B", "hypothesis A >= B fails");
  if (r.hyp_b_alpha < -tol) {
    throw HypothesisError("B >= alpha*I", "hypothesis B >= alpha*I fails");
  }

  Matrix a_inv = a.inverse();
  Matrix b_inv = b.inverse();
  // Solves are symmetric only up to roundoff.
  a_inv = 0.5 * (a_inv + a_inv.transpose()).eval();
  b_inv = 0.5 * (b_inv + b_inv.transpose()).eval();

  r.inv_alpha_b = loewner_slack(id / alpha, b_inv);
  r.inv_b_a = loewner_slack(b_inv, a_inv);
  r.inv_a_mu = loewner_slack(a_inv, id / mu);

  const double a_norm = a.norm();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  r.quad_lower = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < samples; ++k) {
    Vector x(n);
    for (auto i = 0; i < n; ++i) x(i) = normal(rng);
    x.normalize();
    r.quad_lower = std::min(r.quad_lower, x.dot(a_inv * x) - 1.0 / a_norm);
  }
  r.samples = samples;
  if (samples == 0) r.quad_lower = 0.0;

  r.inv_norm = 1.0 / alpha - max_eigenvalue(a_inv);
  r.pass = r.min_conclusion_slack() >= -tol;
  return r;
}

// ---------------------------------------------------------------------------

SummableSequence::SummableSequence(Form form) : form_(std::move(form)) {
  std::visit(
      [](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, GeometricSequence>) {
          if (!(f.c >= 0.0) || !(f.q >= 0.0 && f.q < 1.0)) {
            throw InvalidInput("geometric sequence needs c >= 0 and 0 <= q < 1");
          }
        } else if constexpr (std::is_same_v<T, InverseSquareSequence>) {
          if (!(f.c >= 0.0)) throw InvalidInput("inverse-square sequence needs c >= 0");
        } else {
          for (double v : f.values) {
            if (!(v >= 0.0) || !std::isfinite(v)) {
              throw InvalidInput("sequence values must be finite and nonnegative");
            }
          }
        }
      },
      form_);
}

double SummableSequence::operator()(std::size_t n) const {
  return std::visit(
      [n](const auto& f) -> double {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, GeometricSequence>) {
          return f.c * std::pow(f.q, static_cast<double>(n));
        } else if constexpr (std::is_same_v<T, InverseSquareSequence>) {
          const double k = static_cast<double>(n) + 1.0;
          return f.c / (k * k);
        } else {
          return n < f.values.size() ? f.values[n] : 0.0;
        }
      },
      form_);
}

double SummableSequence::total() const {
  return std::visit(
      [](const auto& f) -> double {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, GeometricSequence>) {
          return f.c / (1.0 - f.q);
        } else if constexpr (std::is_same_v<T, InverseSquareSequence>) {
          return f.c * std::numbers::pi * std::numbers::pi / 6.0;
        } else {
          double s = 0.0;
          for (double v : f.values) s += v;
          return s;
        }
      },
      form_);
}

// ---------------------------------------------------------------------------

std::string to_string(Direction d) {
  switch (d) {
    case Direction::decreasing: return "decreasing";
    case Direction::increasing: return "increasing";
    case Direction::both: return "both";
  }
  return "decreasing";
}

Direction direction_from_string(const std::string& s) {
  if (s == "decreasing") return Direction::decreasing;
  if (s == "increasing") return Direction::increasing;
  if (s == "both") return Direction::both;
  throw InvalidInput("unknown schedule direction '" + s + "'");
}

namespace {

Eigen::Index family_dim(const MetricSchedule::Family& family) {
  return std::visit(
      [](const auto& f) -> Eigen::Index {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ConstantFamily>) {
          require_symmetric(f.w, "W");
          return f.w.rows();
        } else if constexpr (std::is_same_v<T, ScaledFamily>) {
          require_symmetric(f.w0, "W0");
          if (!(f.c >= 0.0) || !(f.q >= 0.0 && f.q < 1.0)) {
            throw InvalidInput("scaled schedule needs c >= 0 and 0 <= q < 1");
          }
          return f.w0.rows();
        } else if constexpr (std::is_same_v<T, RankOneFamily>) {
          require_symmetric(f.w0, "W0");
          if (f.v.size() != f.w0.rows()) throw InvalidInput("rank-one vector dimension mismatch");
          if (!(f.c >= 0.0) || !(f.q >= 0.0 && f.q < 1.0)) {
            throw InvalidInput("rank-one schedule needs c >= 0 and 0 <= q < 1");
          }
          return f.w0.rows();
        } else if constexpr (std::is_same_v<T, ListFamily>) {
          if (f.matrices.empty()) throw InvalidInput("list schedule is empty");
          const auto n = f.matrices.front().rows();
          for (const auto& m : f.matrices) {
            require_symmetric(m, "W_n");
            if (m.rows() != n) throw InvalidInput("list schedule dimensions differ");
          }
          return n;
        } else {
          require_symmetric(f.u, "U");
          if (f.gammas.empty()) throw InvalidInput("induced schedule has no step sizes");
          return f.u.rows();
        }
      },
      family);
}

}  // namespace

MetricSchedule::MetricSchedule(Family family, double alpha, double mu, SummableSequence eta,
                               Direction direction, std::optional<SummableSequence> nu)
    : family_(std::move(family)),
      alpha_(alpha),
      mu_(mu),
      eta_(std::move(eta)),
      direction_(direction),
      nu_(std::move(nu)) {
  if (!(alpha_ > 0.0)) throw InvalidInput("schedule alpha must be positive");
  if (!(mu_ >= alpha_)) throw InvalidInput("schedule mu must be at least alpha");
  dim_ = family_dim(family_);
}

MetricSchedule MetricSchedule::identity(Eigen::Index dim) {
  return MetricSchedule(ConstantFamily{Matrix::Identity(dim, dim)}, 1.0, 1.0,
                        SummableSequence::zero(), Direction::both);
}

Matrix MetricSchedule::matrix_at(std::size_t n) const {
  return std::visit(
      [n](const auto& f) -> Matrix {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ConstantFamily>) {
          return f.w;
        } else if constexpr (std::is_same_v<T, ScaledFamily>) {
          return (1.0 + f.c * std::pow(f.q, static_cast<double>(n))) * f.w0;
        } else if constexpr (std::is_same_v<T, RankOneFamily>) {
          return f.w0 + (f.c * std::pow(f.q, static_cast<double>(n))) * (f.v * f.v.transpose());
        } else if constexpr (std::is_same_v<T, ListFamily>) {
          return f.matrices[std::min(n, f.matrices.size() - 1)];
        } else {
          const double g = f.gammas[std::min(n, f.gammas.size() - 1)];
          return Matrix::Identity(f.u.rows(), f.u.cols()) - g * f.u;
        }
      },
      family_);
}

MetricOperator MetricSchedule::at(std::size_t n) const { return {matrix_at(n), alpha_}; }

ScheduleCertificate schedule_validate(const MetricSchedule& s, std::size_t n_examined,
                                      double tol) {
  if (n_examined < 2) throw PreconditionError("schedule_validate needs N >= 2");
  ScheduleCertificate cert;
  cert.examined = n_examined;
  cert.direction = s.direction();
  cert.min_decreasing_slack = std::numeric_limits<double>::infinity();
  cert.min_increasing_slack = std::numeric_limits<double>::infinity();

  const bool dec = s.direction() != Direction::increasing;
  const bool inc = s.direction() != Direction::decreasing;
  Matrix current = s.matrix_at(0);
  for (std::size_t n = 0; n < n_examined; ++n) {
    Matrix next = s.matrix_at(n + 1);
    const auto [lo, hi] = eigen_range(current);
    cert.max_norm = std::max(cert.max_norm, hi);
    if (hi > s.mu() + tol) cert.violations.push_back({n, "bound", s.mu() - hi});
    if (lo < s.alpha() - tol) cert.violations.push_back({n, "alpha", lo - s.alpha()});
    if (n + 1 < n_examined) {
      if (dec) {
        const double slack = min_eigenvalue((1.0 + s.eta()(n)) * current - next);
        cert.min_decreasing_slack = std::min(cert.min_decreasing_slack, slack);
        if (slack < -tol) cert.violations.push_back({n, "decreasing", slack});
      }
      if (inc) {
        const double slack = min_eigenvalue((1.0 + s.nu()(n)) * next - current);
        cert.min_increasing_slack = std::min(cert.min_increasing_slack, slack);
        if (slack < -tol) cert.violations.push_back({n, "increasing", slack});
      }
    }
    current = std::move(next);
  }
  return cert;
}

ScheduleLimit schedule_limit(const MetricSchedule& s, const Vector& x, double tol,
                             std::size_t n_max) {
  if (x.size() != s.dim()) throw InvalidInput("vector dimension does not match schedule");
  constexpr std::size_t max_lag = kProbeLags[std::size(kProbeLags) - 1];
  std::vector<Vector> images;
  images.reserve(n_max + max_lag + 1);
  for (std::size_t n = 0; n <= n_max + max_lag; ++n) images.push_back(s.matrix_at(n) * x);

  ScheduleLimit out;
  for (std::size_t n = 0; n + 1 < images.size(); ++n) {
    out.decrements.push_back((images[n] - images[n + 1]).norm());
  }
  for (std::size_t n = 0; n <= n_max; ++n) {
    bool ok = true;
    for (std::size_t k : kProbeLags) {
      if ((images[n] - images[n + k]).norm() > tol) {
        ok = false;
        break;
      }
    }
    if (ok) {
      out.converged = true;
      out.index = n;
      out.value = images[n];
      out.decrements.resize(n + 1 < out.decrements.size() ? n + 1 : out.decrements.size());
      return out;
    }
  }
  out.index = n_max;
  out.value = images[n_max];
  return out;
}

}  // namespace vmfejer
