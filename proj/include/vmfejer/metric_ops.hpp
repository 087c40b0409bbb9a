#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

namespace vmfejer {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kMatrixTol = 1e-10;

/*
 * Symmetric positive definite operator W with a certified lower spectral
 * bound alpha. Induces <x, y>_W = <Wx, y> and ||x||_W.
 *
 * Construction verifies symmetry, smallest eigenvalue >= alpha - 1e-10 and
 * caches a Cholesky factor W = R^T R used for solves and whitening.
 */
class MetricOperator {
 public:
  MetricOperator(Matrix w, double alpha);

  static MetricOperator identity(Eigen::Index dim);

  Eigen::Index dim() const noexcept { return w_.rows(); }
  const Matrix& matrix() const noexcept { return w_; }
  double alpha() const noexcept { return alpha_; }
  /// Spectral norm (largest eigenvalue).
  double norm() const noexcept { return max_eig_; }
  double min_eigenvalue() const noexcept { return min_eig_; }

  Vector apply(const Vector& x) const;
  /// W^{-1} x.
  Vector solve(const Vector& x) const;
  /// W^{-1} B, column by column.
  Matrix solve_matrix(const Matrix& b) const;
  Matrix inverse() const;

  /// Upper-triangular R with W = R^T R.
  Matrix whitener() const;
  /// R x.
  Vector whiten(const Vector& x) const;
  /// R^{-1} y.
  Vector unwhiten(const Vector& y) const;

  /// True when W is exactly the identity matrix.
  bool is_identity() const noexcept { return identity_; }

 private:
  Matrix w_;
  double alpha_;
  double min_eig_ = 0.0;
  double max_eig_ = 0.0;
  bool identity_ = false;
  Eigen::LLT<Matrix> llt_;
};

double metric_inner(const MetricOperator& w, const Vector& x, const Vector& y);
double metric_norm(const MetricOperator& w, const Vector& x);
double metric_norm_sq(const MetricOperator& w, const Vector& x);

/// Throws InvalidInput when `a` is not square-symmetric to 1e-12 relative.
void require_symmetric(const Matrix& a, const char* name);

/// Smallest eigenvalue of a symmetric matrix.
double min_eigenvalue(const Matrix& a);
/// Largest eigenvalue of a symmetric matrix.
double max_eigenvalue(const Matrix& a);

/// Smallest eigenvalue of A - B; the signed slack of A >= B.
double loewner_slack(const Matrix& a, const Matrix& b);

/// A >= B in the Loewner order, i.e. lambda_min(A - B) >= -tol.
bool loewner_geq(const Matrix& a, const Matrix& b, double tol = kMatrixTol);
bool loewner_geq(const MetricOperator& a, const MetricOperator& b,
                 double tol = kMatrixTol);

struct InverseOrderReport {
  // Hypothesis slacks: mu I - A, A - B, B - alpha I.
  double hyp_mu_a = 0.0;
  double hyp_a_b = 0.0;
  double hyp_b_alpha = 0.0;
  // (i) alpha^{-1} I >= B^{-1} >= A^{-1} >= mu^{-1} I, one slack per link.
  double inv_alpha_b = 0.0;
  double inv_b_a = 0.0;
  double inv_a_mu = 0.0;
  // (ii) min over sampled unit x of <A^{-1}x, x> - ||A||^{-1}.
  double quad_lower = 0.0;
  // (iii) alpha^{-1} - ||A^{-1}||.
  double inv_norm = 0.0;
  std::size_t samples = 0;
  bool pass = false;

  double min_conclusion_slack() const;
};

/*
 * Verifies mu I >= A >= B >= alpha I and then evaluates the three conclusions
 * about inverses, each with a signed slack. Throws HypothesisError naming the
 * first failed ordering.
 */
InverseOrderReport inverse_order_check(const MetricOperator& a,
                                       const MetricOperator& b, double alpha,
                                       double mu, double tol = kMatrixTol,
                                       std::size_t samples = 32,
                                       std::uint64_t seed = 0x1e55ULL);

// ---------------------------------------------------------------------------
// Summable nonnegative sequences.

struct GeometricSequence {
  double c = 0.0;
  double q = 0.0;  // 0 <= q < 1
};
struct InverseSquareSequence {
  double c = 0.0;  // term c / (n + 1)^2
};
struct ListSequence {
  std::vector<double> values;  // zero beyond the end
};

/*
 * Nonnegative sequence whose summability is decidable from its form:
 * c q^n, c/(n+1)^2, or a finite explicit list.
 */
class SummableSequence {
 public:
  using Form = std::variant<GeometricSequence, InverseSquareSequence, ListSequence>;

  SummableSequence() : form_(ListSequence{}) {}
  explicit SummableSequence(Form form);

  static SummableSequence zero() { return SummableSequence{}; }
  static SummableSequence geometric(double c, double q) {
    return SummableSequence{GeometricSequence{c, q}};
  }
  static SummableSequence inverse_square(double c) {
    return SummableSequence{InverseSquareSequence{c}};
  }
  static SummableSequence list(std::vector<double> values) {
    return SummableSequence{ListSequence{std::move(values)}};
  }

  double operator()(std::size_t n) const;
  /// Exact (closed-form) value of the full series.
  double total() const;
  const Form& form() const noexcept { return form_; }

 private:
  Form form_;
};

// ---------------------------------------------------------------------------
// Metric schedules n -> W_n.

/// W_n = W.
struct ConstantFamily {
  Matrix w;
};
/// W_n = (1 + c q^n) W0.
struct ScaledFamily {
  Matrix w0;
  double c = 1.0;
  double q = 0.5;
};
/// W_n = W0 + c q^n v v^T.
struct RankOneFamily {
  Matrix w0;
  Vector v;
  double c = 1.0;
  double q = 0.5;
};
/// W_n = matrices[min(n, size - 1)].
struct ListFamily {
  std::vector<Matrix> matrices;
};
/// W_n = I - gamma_n U with gamma_n = gammas[min(n, size - 1)].
struct InducedFamily {
  Matrix u;
  std::vector<double> gammas;
};

enum class Direction { decreasing, increasing, both };

std::string to_string(Direction d);
Direction direction_from_string(const std::string& s);

class MetricSchedule {
 public:
  using Family =
      std::variant<ConstantFamily, ScaledFamily, RankOneFamily, ListFamily, InducedFamily>;

  MetricSchedule(Family family, double alpha, double mu, SummableSequence eta,
                 Direction direction = Direction::decreasing,
                 std::optional<SummableSequence> nu = std::nullopt);

  /// Identity metric, eta = 0, valid in both directions.
  static MetricSchedule identity(Eigen::Index dim);

  Eigen::Index dim() const noexcept { return dim_; }
  double alpha() const noexcept { return alpha_; }
  double mu() const noexcept { return mu_; }
  Direction direction() const noexcept { return direction_; }
  const SummableSequence& eta() const noexcept { return eta_; }
  /// nu, falling back to eta when not given.
  const SummableSequence& nu() const noexcept { return nu_ ? *nu_ : eta_; }
  bool has_nu() const noexcept { return nu_.has_value(); }
  const Family& family() const noexcept { return family_; }

  Matrix matrix_at(std::size_t n) const;
  /// W_n, verified against the shared alpha.
  MetricOperator at(std::size_t n) const;

 private:
  Family family_;
  double alpha_;
  double mu_;
  SummableSequence eta_;
  Direction direction_;
  std::optional<SummableSequence> nu_;
  Eigen::Index dim_ = 0;
};

struct ScheduleViolation {
  std::size_t n = 0;
  std::string condition;  // "decreasing", "increasing", "bound"
  double slack = 0.0;
};

struct ScheduleCertificate {
  std::size_t examined = 0;
  Direction direction = Direction::decreasing;
  double min_decreasing_slack = 0.0;
  double min_increasing_slack = 0.0;
  double max_norm = 0.0;
  std::vector<ScheduleViolation> violations;
  bool valid() const noexcept { return violations.empty(); }
};

/*
 * Checks (1 + eta_n) W_n >= W_{n+1} (decreasing), (1 + nu_n) W_{n+1} >= W_n
 * (increasing) and ||W_n|| <= mu + tol for n = 0..N-2.
 */
ScheduleCertificate schedule_validate(const MetricSchedule& s, std::size_t n_examined,
                                      double tol = kMatrixTol);

struct ScheduleLimit {
  bool converged = false;
  std::size_t index = 0;      // N at which the probe test passed
  Vector value;               // W_N x
  std::vector<double> decrements;  // ||W_n x - W_{n+1} x||, n = 0..examined
};

/// Probe lags used by every Cauchy-type test in the library.
inline constexpr std::size_t kProbeLags[] = {1, 2, 4, 8};

/*
 * Smallest N <= n_max with ||W_N x - W_{N+k} x|| <= tol for every probe lag.
 * Non-convergence is reported through `converged`, not thrown.
 */
ScheduleLimit schedule_limit(const MetricSchedule& s, const Vector& x, double tol,
                             std::size_t n_max);

}  // namespace vmfejer
