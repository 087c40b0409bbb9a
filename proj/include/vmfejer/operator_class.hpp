#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "vmfejer/convex_sets.hpp"
#include "vmfejer/metric_ops.hpp"

namespace vmfejer {

// ---------------------------------------------------------------------------
// Scalar convex pieces phi_k with phi_k >= phi_k(0) = 0.

struct ZeroPiece {};
/// w |t|
struct AbsPiece {
  double weight = 1.0;
};
/// (w / 2) t^2
struct QuadraticPiece {
  double weight = 1.0;
};
/// Indicator of [lo, hi] with lo <= 0 <= hi.
struct IntervalPiece {
  double lo = -1.0;
  double hi = 1.0;
};
/// Differentiable convex piece given by value and first two derivatives.
/// Its prox is computed by Newton's method with a bisection safeguard.
struct SmoothPiece {
  std::function<double(double)> value;
  std::function<double(double)> derivative;
  std::function<double(double)> second_derivative;
};

using ScalarPiece = std::variant<ZeroPiece, AbsPiece, QuadraticPiece, IntervalPiece, SmoothPiece>;

/// Throws InvalidInput unless the piece satisfies phi >= phi(0) = 0.
void validate_piece(const ScalarPiece& p);
double piece_value(const ScalarPiece& p, double t);
/// prox_{gamma phi}(t) = argmin_s phi(s) + (s - t)^2 / (2 gamma).
double piece_prox(const ScalarPiece& p, double t, double gamma);

// ---------------------------------------------------------------------------
// Convex functions with a computable Euclidean proximity operator.

/// lambda ||x||_1
struct L1Norm {
  double weight = 1.0;
};
/// (w / 2) ||x||^2
struct SquaredNorm {
  double weight = 1.0;
};
/// Indicator of a convex set.
struct Indicator {
  ConvexSet set;
};
/// x -> sum_k phi_k(<x, e_k>) for the orthonormal columns e_k of Q.
struct SeparableBasis {
  Matrix q;
  std::vector<ScalarPiece> pieces;
};

class ProxFunction {
 public:
  using Kind = std::variant<L1Norm, SquaredNorm, Indicator, SeparableBasis>;

  static ProxFunction l1(double weight);
  static ProxFunction squared_norm(double weight);
  static ProxFunction indicator(ConvexSet set);
  static ProxFunction separable_basis(Matrix q, std::vector<ScalarPiece> pieces);

  const Kind& kind() const noexcept { return kind_; }
  std::string name() const;
  /// Fixed dimension, or 0 when the function is defined in every dimension.
  Eigen::Index dim() const noexcept { return dim_; }

  /// f(x); +infinity outside the domain of an indicator.
  double value(const Vector& x) const;
  /// prox_{gamma f}(x) in the Euclidean metric.
  Vector prox(const Vector& x, double gamma) const;
  /// One element of the subdifferential (the minimal-norm one at kinks;
  /// zero for indicators, which is only a subgradient inside the set).
  Vector subgradient(const Vector& x) const;
  /// Whether f alone is coercive, from a fixed catalog.
  bool coercive() const;

 private:
  explicit ProxFunction(Kind k, Eigen::Index dim) : kind_(std::move(k)), dim_(dim) {}
  Kind kind_;
  Eigen::Index dim_ = 0;
};

// ---------------------------------------------------------------------------
// Maximally monotone operators with computable resolvents.

class MonotoneOperator;

struct Subdifferential {
  ProxFunction f;
};
/// x -> M x + b with M symmetric positive semidefinite.
struct AffineMonotone {
  Matrix m;
  Vector b;
};
/// B = A + U + {u} with U symmetric positive semidefinite.
struct ShiftedSum {
  std::shared_ptr<const MonotoneOperator> a;
  Matrix u_op;
  Vector u;
};

class MonotoneOperator {
 public:
  using Kind = std::variant<Subdifferential, AffineMonotone, ShiftedSum>;

  static MonotoneOperator subdifferential(ProxFunction f);
  static MonotoneOperator affine(Matrix m, Vector b);
  static MonotoneOperator shifted_sum(MonotoneOperator a, Matrix u_op, Vector u);

  const Kind& kind() const noexcept { return kind_; }
  std::string name() const;
  /// Fixed dimension, or 0 when the operator is defined in every dimension.
  Eigen::Index dim() const noexcept { return dim_; }

  /// One element of A x.
  Vector select(const Vector& x) const;

 private:
  explicit MonotoneOperator(Kind k, Eigen::Index dim) : kind_(std::move(k)), dim_(dim) {}
  Kind kind_;
  Eigen::Index dim_ = 0;
};

inline constexpr double kResolventTol = 1e-10;
inline constexpr double kResolventAcceptTol = 1e-8;
inline constexpr std::size_t kResolventMaxIter = 50000;

/// J_{gamma A} x: the unique p with x in p + gamma A p.
Vector resolvent(const MonotoneOperator& a, double gamma, const Vector& x);

enum class ResolventPath {
  automatic,  // closed forms and the shifted-sum shortcut where they apply
  generic,    // always the structural solve (linear solve or prox-gradient)
};

/*
 * J^W_{gamma A} x = (W + gamma A)^{-1}(W x).
 *
 * Affine parts reduce to an SPD linear solve. A nonsmooth part f is handled
 * by proximal-gradient on gamma f(y) + 1/2 ||y - x||_W^2 (+ the affine part)
 * with step 1/lambda_max of the smooth Hessian, stopped at gradient-map
 * residual 1e-10. The cap of 50000 steps throws NumericError unless the
 * residual is already below 1e-8.
 */
Vector resolvent_metric(const MonotoneOperator& a, const MetricOperator& w, double gamma,
                        const Vector& x, ResolventPath path = ResolventPath::automatic);

/*
 * J^W_{gamma B} x for B = A + U + {u} and W = I - gamma U, computed as
 * J_{gamma A}((I - gamma U) x - gamma u). Requires U != 0 and
 * 0 < gamma < 1/||U||.
 */
Vector lemma62_resolvent(const MonotoneOperator& a, const Matrix& u_op, const Vector& u,
                         double gamma, const Vector& x);

// ---------------------------------------------------------------------------

/*
 * Operator T together with a way to produce points of Fix T, so that the
 * defining inequality <y - Tx, x - Tx>_W <= 0 can be sampled.
 */
class TOperator {
 public:
  using Map = std::function<Vector(const Vector&)>;

  TOperator(Map map, std::optional<Map> witness, std::string name)
      : map_(std::move(map)), witness_(std::move(witness)), name_(std::move(name)) {}

  /// P_C^W; witnesses are Euclidean projections onto C.
  static TOperator projector(const ConvexSet& c, const MetricOperator& w);
  /// J^W_{gamma A}; no generic witness (zeros of A are not known).
  static TOperator resolvent(const MonotoneOperator& a, const MetricOperator& w, double gamma);

  Vector operator()(const Vector& x) const { return map_(x); }
  bool has_witness() const noexcept { return witness_.has_value(); }
  /// A point of Fix T associated with x.
  Vector witness(const Vector& x) const;
  const std::string& name() const noexcept { return name_; }

 private:
  Map map_;
  std::optional<Map> witness_;
  std::string name_;
};

/// x + lambda (T x - x) for lambda in [0, 2].
Vector relax(const TOperator& t, double lambda, const Vector& x);

struct TClassReport {
  double max_value = 0.0;   // max <y - Tx, x - Tx>_W over the samples
  std::size_t pairs = 0;
  bool pass = false;        // max_value <= tol
};

/*
 * Samples the class inequality over all pairs (x, y). Every y must satisfy
 * ||T y - y|| <= 1e-9, otherwise BadWitness is thrown.
 */
TClassReport t_class_check(const TOperator& t, const MetricOperator& w,
                           std::span<const Vector> xs, std::span<const Vector> ys,
                           double tol = 1e-8);

struct MonotonicityReport {
  double min_slack = 0.0;  // min <x - y, Ax - Ay> - m ||x - y||^2
  std::size_t pairs = 0;
  bool pass = false;
};

/// Uniform monotonicity with the quadratic modulus t -> m t^2 over sample pairs.
MonotonicityReport uniform_monotonicity_check(const MonotoneOperator& a, double modulus,
                                              std::span<const Vector> samples,
                                              double tol = 1e-10);

struct OperatorNormEstimate {
  double value = 0.0;       // sqrt of the Rayleigh quotient
  double rayleigh = 0.0;    // v^T L^T L v for the final unit vector v
  double residual = 0.0;    // ||L^T L v - rayleigh v||
  std::size_t iterations = 0;
};

/// ||L|| by power iteration on L^T L, relative accuracy tol.
OperatorNormEstimate operator_norm(const Matrix& l, double tol = 1e-8);

}  // namespace vmfejer
