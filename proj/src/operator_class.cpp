#include "vmfejer/operator_class.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "vmfejer/errors.hpp"

namespace vmfejer {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

double sign(double t) { return t > 0.0 ? 1.0 : (t < 0.0 ? -1.0 : 0.0); }

double soft_threshold(double t, double tau) { return sign(t) * std::max(std::abs(t) - tau, 0.0); }

double piece_derivative(const ScalarPiece& p, double t) {
  return std::visit(overloaded{[](const ZeroPiece&) { return 0.0; },
                               [t](const AbsPiece& a) { return a.weight * sign(t); },
                               [t](const QuadraticPiece& q) { return q.weight * t; },
                               [](const IntervalPiece&) { return 0.0; },
                               [t](const SmoothPiece& s) { return s.derivative(t); }},
                    p);
}

bool piece_coercive(const ScalarPiece& p) {
  return std::visit(overloaded{[](const ZeroPiece&) { return false; },
                               [](const AbsPiece& a) { return a.weight > 0.0; },
                               [](const QuadraticPiece& q) { return q.weight > 0.0; },
                               [](const IntervalPiece&) { return true; },
                               [](const SmoothPiece&) { return false; }},
                    p);
}

// Root of s - t + gamma phi'(s) on the bracket between 0 and t.
double smooth_prox(const SmoothPiece& p, double t, double gamma) {
  double lo = std::min(0.0, t);
  double hi = std::max(0.0, t);
  double s = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double g = s - t + gamma * p.derivative(s);
    if (std::abs(g) <= 1e-15 * std::max(1.0, std::abs(t))) return s;
    if (g > 0.0) {
      hi = s;
    } else {
      lo = s;
    }
    const double dg = 1.0 + gamma * p.second_derivative(s);
    double next = dg > 0.0 ? s - g / dg : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == s || hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(t))) {
      return next;
    }
    s = next;
  }
  return s;
}

void require_psd(const Matrix& m, const char* name) {
  require_symmetric(m, name);
  if (min_eigenvalue(m) < -kMatrixTol) {
    throw InvalidInput(std::string(name) + " must be positive semidefinite");
  }
}

void require_dim(Eigen::Index want, const Vector& x) {
  if (want != 0 && x.size() != want) {
    std::ostringstream os;
    os << "point has dimension " << x.size() << ", operator has " << want;
    throw InvalidInput(os.str());
  }
}

// Structural view of an operator: gamma-independent nonsmooth part f and an
// affine part x -> M x + b.
struct Split {
  const ProxFunction* f = nullptr;
  Matrix m;
  Vector b;
};

void accumulate(const MonotoneOperator& a, Split& s) {
  std::visit(overloaded{[&](const Subdifferential& d) {
                          if (const auto* sq = std::get_if<SquaredNorm>(&d.f.kind())) {
                            s.m.diagonal().array() += sq->weight;
                          } else {
                            s.f = &d.f;
                          }
                        },
                        [&](const AffineMonotone& af) {
                          s.m += af.m;
                          s.b += af.b;
                        },
                        [&](const ShiftedSum& ss) {
                          accumulate(*ss.a, s);
                          s.m += ss.u_op;
                          s.b += ss.u;
                        }},
             a.kind());
}

Split split(const MonotoneOperator& a, Eigen::Index n) {
  Split s;
  s.m = Matrix::Zero(n, n);
  s.b = Vector::Zero(n);
  accumulate(a, s);
  return s;
}

Vector spd_solve(const Matrix& h, const Vector& rhs) {
  Eigen::LLT<Matrix> llt(h);
  if (llt.info() != Eigen::Success) throw NumericError("resolvent system is not positive definite", 0.0);
  const double rcond = llt.rcond();
  if (!(rcond >= 1e-14)) throw NumericError("resolvent system is ill-conditioned", rcond);
  return llt.solve(rhs);
}

Vector generic_resolvent(const MonotoneOperator& a, const MetricOperator& w, double gamma,
                         const Vector& x) {
  const auto n = x.size();
  const Split s = split(a, n);
  const Matrix hessian = w.matrix() + gamma * s.m;
  if (s.f == nullptr) return spd_solve(hessian, w.matrix() * x - gamma * s.b);

  // Proximal gradient on gamma f(y) + gamma (y^T M y / 2 + b^T y) + ||y - x||_W^2 / 2.
  const double lip = max_eigenvalue(hessian);
  const double step = 1.0 / lip;
  const Vector wx = w.matrix() * x;
  Vector y = x;
  double residual = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < kResolventMaxIter; ++k) {
    const Vector grad = hessian * y - wx + gamma * s.b;
    Vector y_new = s.f->prox(y - step * grad, gamma * step);
    residual = lip * (y_new - y).norm();
    y = std::move(y_new);
    if (residual <= kResolventTol) return y;
  }
  if (residual <= kResolventAcceptTol) return y;
  throw NumericError("metric resolvent inner loop did not converge", residual);
}

}  // namespace

// ---------------------------------------------------------------------------

void validate_piece(const ScalarPiece& p) {
  std::visit(overloaded{[](const ZeroPiece&) {},
                        [](const AbsPiece& a) {
                          if (!(a.weight >= 0.0)) throw InvalidInput("abs piece weight must be >= 0");
                        },
                        [](const QuadraticPiece& q) {
                          if (!(q.weight >= 0.0)) {
                            throw InvalidInput("quadratic piece weight must be >= 0");
                          }
                        },
                        [](const IntervalPiece& i) {
                          if (!(i.lo <= 0.0 && 0.0 <= i.hi)) {
                            throw InvalidInput("interval piece needs lo <= 0 <= hi");
                          }
                        },
                        [](const SmoothPiece& s) {
                          if (!s.value || !s.derivative || !s.second_derivative) {
                            throw InvalidInput("smooth piece needs value and two derivatives");
                          }
                          if (std::abs(s.value(0.0)) > 1e-12 || std::abs(s.derivative(0.0)) > 1e-12) {
                            throw InvalidInput("smooth piece must satisfy phi(0) = 0 = phi'(0)");
                          }
                        }},
             p);
}

double piece_value(const ScalarPiece& p, double t) {
  return std::visit(
      overloaded{[](const ZeroPiece&) { return 0.0; },
                 [t](const AbsPiece& a) { return a.weight * std::abs(t); },
                 [t](const QuadraticPiece& q) { return 0.5 * q.weight * t * t; },
                 [t](const IntervalPiece& i) {
                   return (t >= i.lo && t <= i.hi) ? 0.0 : std::numeric_limits<double>::infinity();
                 },
                 [t](const SmoothPiece& s) { return s.value(t); }},
      p);
}

double piece_prox(const ScalarPiece& p, double t, double gamma) {
  return std::visit(overloaded{[t](const ZeroPiece&) { return t; },
                               [t, gamma](const AbsPiece& a) {
                                 return soft_threshold(t, gamma * a.weight);
                               },
                               [t, gamma](const QuadraticPiece& q) {
                                 return t / (1.0 + gamma * q.weight);
                               },
                               [t](const IntervalPiece& i) { return std::clamp(t, i.lo, i.hi); },
                               [t, gamma](const SmoothPiece& s) { return smooth_prox(s, t, gamma); }},
                    p);
}

// ---------------------------------------------------------------------------

ProxFunction ProxFunction::l1(double weight) {
  if (!(weight >= 0.0)) throw InvalidInput("l1 weight must be >= 0");
  return ProxFunction(L1Norm{weight}, 0);
}

ProxFunction ProxFunction::squared_norm(double weight) {
  if (!(weight >= 0.0)) throw InvalidInput("squared-norm weight must be >= 0");
  return ProxFunction(SquaredNorm{weight}, 0);
}

ProxFunction ProxFunction::indicator(ConvexSet set) {
  const auto n = set.dim();
  return ProxFunction(Indicator{std::move(set)}, n);
}

ProxFunction ProxFunction::separable_basis(Matrix q, std::vector<ScalarPiece> pieces) {
  if (q.rows() != q.cols() || q.rows() == 0) throw InvalidInput("basis matrix must be square");
  const auto n = q.rows();
  if ((q.transpose() * q - Matrix::Identity(n, n)).norm() > 1e-10) {
    throw InvalidInput("basis matrix must be orthogonal");
  }
  if (static_cast<Eigen::Index>(pieces.size()) != n) {
    throw InvalidInput("separable basis needs one scalar piece per basis vector");
  }
  for (const auto& p : pieces) validate_piece(p);
  return ProxFunction(SeparableBasis{std::move(q), std::move(pieces)}, n);
}

std::string ProxFunction::name() const {
  return std::visit(overloaded{[](const L1Norm&) { return "l1"; },
                               [](const SquaredNorm&) { return "squared_norm"; },
                               [](const Indicator&) { return "indicator"; },
                               [](const SeparableBasis&) { return "separable_basis"; }},
                    kind_);
}

double ProxFunction::value(const Vector& x) const {
  require_dim(dim_, x);
  return std::visit(
      overloaded{[&](const L1Norm& f) { return f.weight * x.lpNorm<1>(); },
                 [&](const SquaredNorm& f) { return 0.5 * f.weight * x.squaredNorm(); },
                 [&](const Indicator& f) {
                   return f.set.contains(x, 1e-9) ? 0.0 : std::numeric_limits<double>::infinity();
                 },
                 [&](const SeparableBasis& f) {
                   const Vector c = f.q.transpose() * x;
                   double v = 0.0;
                   for (Eigen::Index k = 0; k < c.size(); ++k) v += piece_value(f.pieces[k], c(k));
                   return v;
                 }},
      kind_);
}

Vector ProxFunction::prox(const Vector& x, double gamma) const {
  require_dim(dim_, x);
  if (!(gamma > 0.0)) throw PreconditionError("prox step must be positive");
  return std::visit(
      overloaded{[&](const L1Norm& f) -> Vector {
                   const double tau = gamma * f.weight;
                   return x.unaryExpr([tau](double t) { return soft_threshold(t, tau); });
                 },
                 [&](const SquaredNorm& f) -> Vector { return x / (1.0 + gamma * f.weight); },
                 [&](const Indicator& f) -> Vector { return project_euclid(f.set, x); },
                 [&](const SeparableBasis& f) -> Vector {
                   Vector c = f.q.transpose() * x;
                   for (Eigen::Index k = 0; k < c.size(); ++k) c(k) = piece_prox(f.pieces[k], c(k), gamma);
                   return f.q * c;
                 }},
      kind_);
}

Vector ProxFunction::subgradient(const Vector& x) const {
  require_dim(dim_, x);
  return std::visit(
      overloaded{[&](const L1Norm& f) -> Vector { return f.weight * x.unaryExpr(&sign); },
                 [&](const SquaredNorm& f) -> Vector { return f.weight * x; },
                 [&](const Indicator&) -> Vector { return Vector::Zero(x.size()); },
                 [&](const SeparableBasis& f) -> Vector {
                   Vector c = f.q.transpose() * x;
                   for (Eigen::Index k = 0; k < c.size(); ++k) c(k) = piece_derivative(f.pieces[k], c(k));
                   return f.q * c;
                 }},
      kind_);
}

bool ProxFunction::coercive() const {
  return std::visit(
      overloaded{[](const L1Norm& f) { return f.weight > 0.0; },
                 [](const SquaredNorm& f) { return f.weight > 0.0; },
                 [](const Indicator& f) {
                   return std::holds_alternative<Box>(f.set.shape()) ||
                          std::holds_alternative<Ball>(f.set.shape());
                 },
                 [](const SeparableBasis& f) {
                   return std::all_of(f.pieces.begin(), f.pieces.end(), piece_coercive);
                 }},
      kind_);
}

// ---------------------------------------------------------------------------

MonotoneOperator MonotoneOperator::subdifferential(ProxFunction f) {
  const auto n = f.dim();
  return MonotoneOperator(Subdifferential{std::move(f)}, n);
}

MonotoneOperator MonotoneOperator::affine(Matrix m, Vector b) {
  require_psd(m, "M");
  if (b.size() != m.rows()) throw InvalidInput("affine offset dimension mismatch");
  const auto n = m.rows();
  return MonotoneOperator(AffineMonotone{std::move(m), std::move(b)}, n);
}

MonotoneOperator MonotoneOperator::shifted_sum(MonotoneOperator a, Matrix u_op, Vector u) {
  require_psd(u_op, "U");
  if (u.size() != u_op.rows()) throw InvalidInput("shift vector dimension mismatch");
  if (a.dim() != 0 && a.dim() != u_op.rows()) throw InvalidInput("shifted sum dimension mismatch");
  const auto n = u_op.rows();
  return MonotoneOperator(
      ShiftedSum{std::make_shared<const MonotoneOperator>(std::move(a)), std::move(u_op), std::move(u)}, n);
}

std::string MonotoneOperator::name() const {
  return std::visit(overloaded{[](const Subdifferential& s) { return "subdifferential(" + s.f.name() + ")"; },
                               [](const AffineMonotone&) { return std::string("affine"); },
                               [](const ShiftedSum& s) { return "shifted_sum(" + s.a->name() + ")"; }},
                    kind_);
}

Vector MonotoneOperator::select(const Vector& x) const {
  require_dim(dim_, x);
  return std::visit(overloaded{[&](const Subdifferential& s) -> Vector { return s.f.subgradient(x); },
                               [&](const AffineMonotone& a) -> Vector { return a.m * x + a.b; },
                               [&](const ShiftedSum& s) -> Vector {
                                 return s.a->select(x) + s.u_op * x + s.u;
                               }},
                    kind_);
}

// ---------------------------------------------------------------------------

Vector resolvent(const MonotoneOperator& a, double gamma, const Vector& x) {
  if (!(gamma > 0.0)) throw PreconditionError("resolvent needs gamma > 0");
  require_dim(a.dim(), x);
  return std::visit(
      overloaded{[&](const Subdifferential& s) -> Vector { return s.f.prox(x, gamma); },
                 [&](const AffineMonotone& af) -> Vector {
                   const auto n = x.size();
                   return spd_solve(Matrix::Identity(n, n) + gamma * af.m, x - gamma * af.b);
                 },
                 [&](const ShiftedSum&) -> Vector {
                   return generic_resolvent(a, MetricOperator::identity(x.size()), gamma, x);
                 }},
      a.kind());
}

Vector resolvent_metric(const MonotoneOperator& a, const MetricOperator& w, double gamma,
                        const Vector& x, ResolventPath path) {
  if (!(gamma > 0.0)) throw PreconditionError("resolvent needs gamma > 0");
  require_dim(a.dim(), x);
  if (w.dim() != x.size()) throw InvalidInput("metric and point dimensions differ");

  if (path == ResolventPath::automatic) {
    if (const auto* ss = std::get_if<ShiftedSum>(&a.kind())) {
      const auto n = x.size();
      const Matrix induced = Matrix::Identity(n, n) - gamma * ss->u_op;
      const double scale = std::max(1.0, w.matrix().cwiseAbs().maxCoeff());
      if ((induced - w.matrix()).cwiseAbs().maxCoeff() <= 1e-12 * scale) {
        return lemma62_resolvent(*ss->a, ss->u_op, ss->u, gamma, x);
      }
    }
    if (const auto* sd = std::get_if<Subdifferential>(&a.kind())) {
      if (w.is_identity()) return sd->f.prox(x, gamma);
      if (const auto* ind = std::get_if<Indicator>(&sd->f.kind())) {
        return project_metric(ind->set, w, x);
      }
    }
  }
  return generic_resolvent(a, w, gamma, x);
}

Vector lemma62_resolvent(const MonotoneOperator& a, const Matrix& u_op, const Vector& u,
                         double gamma, const Vector& x) {
  require_psd(u_op, "U");
  if (u.size() != u_op.rows() || x.size() != u_op.rows()) {
    throw InvalidInput("shifted-sum resolvent dimension mismatch");
  }
  if (u_op.isZero(0.0)) throw PreconditionError("U must be nonzero");
  if (!(gamma > 0.0)) throw PreconditionError("resolvent needs gamma > 0");
  const double u_norm = operator_norm(u_op).value;
  if (gamma * u_norm >= 1.0 - 1e-12) {
    std::ostringstream os;
    os << "need 0 < gamma < 1/||U||; gamma * ||U|| = " << gamma * u_norm;
    throw PreconditionError(os.str());
  }
  const Vector shifted = x - gamma * (u_op * x) - gamma * u;
  return resolvent(a, gamma, shifted);
}

// ---------------------------------------------------------------------------

TOperator TOperator::projector(const ConvexSet& c, const MetricOperator& w) {
  return TOperator([c, w](const Vector& x) { return project_metric(c, w, x); },
                   Map([c](const Vector& x) { return project_euclid(c, x); }), "projector(" + c.kind() + ")");
}

TOperator TOperator::resolvent(const MonotoneOperator& a, const MetricOperator& w, double gamma) {
  return TOperator([a, w, gamma](const Vector& x) { return resolvent_metric(a, w, gamma, x); },
                   std::nullopt, "resolvent(" + a.name() + ")");
}

Vector TOperator::witness(const Vector& x) const {
  if (!witness_) throw PreconditionError("operator '" + name_ + "' has no fixed-point witness");
  return (*witness_)(x);
}

Vector relax(const TOperator& t, double lambda, const Vector& x) {
  if (!(lambda >= 0.0 && lambda <= 2.0)) throw PreconditionError("relaxation needs lambda in [0, 2]");
  if (lambda == 0.0) return x;
  const Vector tx = t(x);
  if (lambda == 1.0) return tx;
  return x + lambda * (tx - x);
}

TClassReport t_class_check(const TOperator& t, const MetricOperator& w, std::span<const Vector> xs,
                           std::span<const Vector> ys, double tol) {
  if (xs.empty() || ys.empty()) throw PreconditionError("t_class_check needs samples and fixed points");
  for (const auto& y : ys) {
    const double moved = (t(y) - y).norm();
    if (moved > 1e-9) {
      std::ostringstream os;
      os << "claimed fixed point moves by " << moved << " under " << t.name();
      throw BadWitness(os.str());
    }
  }
  TClassReport r;
  r.max_value = -std::numeric_limits<double>::infinity();
  for (const auto& x : xs) {
    const Vector tx = t(x);
    const Vector step = x - tx;
    for (const auto& y : ys) {
      r.max_value = std::max(r.max_value, metric_inner(w, y - tx, step));
      ++r.pairs;
    }
  }
  r.pass = r.max_value <= tol;
  return r;
}

MonotonicityReport uniform_monotonicity_check(const MonotoneOperator& a, double modulus,
                                              std::span<const Vector> samples, double tol) {
  if (samples.size() < 2) throw PreconditionError("monotonicity check needs at least two samples");
  if (!(modulus > 0.0)) throw PreconditionError("monotonicity modulus must be positive");
  std::vector<Vector> images;
  images.reserve(samples.size());
  for (const auto& x : samples) images.push_back(a.select(x));

  MonotonicityReport r;
  r.min_slack = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = i + 1; j < samples.size(); ++j) {
      const Vector dx = samples[i] - samples[j];
      const double slack = dx.dot(images[i] - images[j]) - modulus * dx.squaredNorm();
      r.min_slack = std::min(r.min_slack, slack);
      ++r.pairs;
    }
  }
  r.pass = r.min_slack >= -tol;
  return r;
}

OperatorNormEstimate operator_norm(const Matrix& l, double tol) {
  if (l.size() == 0 || l.isZero(0.0)) throw PreconditionError("operator_norm of a zero matrix");
  if (!(tol > 0.0)) throw PreconditionError("operator_norm needs tol > 0");
  const auto n = l.cols();
  std::mt19937_64 rng(0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> normal;
  Vector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
  v.normalize();

  OperatorNormEstimate est;
  double previous = 0.0;
  Eigen::Index restart = 0;
  constexpr std::size_t max_iter = 100000;
  for (std::size_t it = 1; it <= max_iter; ++it) {
    Vector w = l.transpose() * (l * v);
    const double wn = w.norm();
    if (wn == 0.0) {
      // v lies in the kernel: restart from the next coordinate vector.
      v = Vector::Unit(n, restart % n);
      ++restart;
      continue;
    }
    v = w / wn;
    const Vector lv = l * v;
    const double rho = lv.squaredNorm();
    est.iterations = it;
    est.rayleigh = rho;
    if (it > 1 && std::abs(rho - previous) <= 1e-3 * tol * rho) break;
    previous = rho;
  }
  est.value = std::sqrt(est.rayleigh);
  est.residual = (l.transpose() * (l * v) - est.rayleigh * v).norm();
  return est;
}

}  // namespace vmfejer
