#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vmfejer/convex_sets.hpp"
#include "vmfejer/fejer_monitor.hpp"
#include "vmfejer/metric_ops.hpp"
#include "vmfejer/operator_class.hpp"

namespace vmfejer {

// ---------------------------------------------------------------------------
// Controls.

/*
 * Index map n -> i(n) over {0, ..., count-1}. Either periodic (n mod m) or an
 * explicit pattern repeated cyclically, with a declared window bound M_j per
 * index.
 */
class ControlSequence {
 public:
  static ControlSequence periodic(std::size_t m);
  static ControlSequence pattern(std::vector<std::size_t> indices, std::vector<std::size_t> windows);

  std::size_t operator()(std::size_t n) const;
  std::size_t count() const noexcept { return windows_.size(); }
  std::size_t period() const noexcept { return period_; }
  const std::vector<std::size_t>& windows() const noexcept { return windows_; }
  std::size_t max_window() const;
  bool is_periodic() const noexcept { return pattern_.empty(); }
  const std::vector<std::size_t>& indices() const noexcept { return pattern_; }

 private:
  ControlSequence() = default;
  std::vector<std::size_t> pattern_;  // empty for periodic
  std::vector<std::size_t> windows_;
  std::size_t period_ = 0;
};

struct ControlCertificate {
  bool valid = false;
  std::optional<std::size_t> n;      // first window start that misses an index
  std::optional<std::size_t> index;  // the missing index
};

/// Every j occurs in i(n), ..., i(n + M_j - 1) for n <= N - max M_j.
ControlCertificate control_validate(const ControlSequence& c, std::size_t n_examined);

// ---------------------------------------------------------------------------
// Run configuration.

/// Constant (one value) or explicit list; the last value is held.
struct StepSequence {
  std::vector<double> values{1.0};
  double operator()(std::size_t n) const;
  static StepSequence constant(double v) { return StepSequence{{v}}; }
};

/// a_n = c q^n u_n with u_n a seeded unit Gaussian direction.
struct ErrorInjection {
  double c = 0.0;
  double q = 0.5;
  bool active() const noexcept { return c > 0.0; }
};

struct RunConfig {
  double epsilon = 0.05;
  StepSequence lambda;
  StepSequence gamma;
  ErrorInjection noise;
  std::size_t max_iter = 100000;
  double tol = 1e-10;  // 0 disables the stop rule
  std::optional<Vector> x0;  // zero when absent
  std::uint64_t seed = 0;
  /// When false the hypothesis checks are skipped (used to run deliberate violations).
  bool enforce_hypotheses = true;
};

/// Throws HypothesisError for epsilon outside (0, 1), a listed lambda outside
/// [lambda_lo, lambda_hi] or a non-summable noise specification.
void config_validate(const RunConfig& cfg, double lambda_lo, double lambda_hi);

// ---------------------------------------------------------------------------
// Feasibility.

using TFactory = std::function<TOperator(std::size_t n, const MetricOperator& w)>;

/*
 * x_{n+1} = x_n + lambda_n (T_{i(n),n} x_n + a_n - x_n). Stops after period()
 * consecutive increments <= tol, or after max_iter steps. Residuals d_{C}(x_n)
 * are logged for `sets`.
 */
IterateTrace feasibility_solve(std::span<const TFactory> factories,
                               std::shared_ptr<const MetricSchedule> schedule,
                               const ControlSequence& control, const RunConfig& cfg,
                               std::span<const ConvexSet> sets = {});

/// feasibility_solve with T_{i,n} = P_{C_i}^{W_n} and the periodic control.
IterateTrace periodic_projections(std::span<const ConvexSet> sets,
                                  std::shared_ptr<const MetricSchedule> schedule, const RunConfig& cfg);

/// The two-branch half-space iteration, written out literally. No error injection.
IterateTrace linear_inequalities(std::span<const Vector> us, std::span<const double> etas,
                                 std::shared_ptr<const MetricSchedule> schedule, const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Proximal point.

/// x_{n+1} = x_n + lambda_n (J^{W_n}_{gamma_n A} x_n + a_n - x_n).
IterateTrace proximal_point(const MonotoneOperator& a, std::shared_ptr<const MetricSchedule> schedule,
                            const RunConfig& cfg);

// ---------------------------------------------------------------------------
// Inverse problems.

struct GammaViolation {
  std::size_t n = 0;
  std::string condition;  // "gamma_n >= epsilon", "gamma_n <= (1 - epsilon)/S", "(1 + eta_n) gamma_n - gamma_{n+1} <= eta_n/S"
  double slack = 0.0;
};

struct GammaReport {
  std::size_t examined = 0;
  std::vector<GammaViolation> violations;
  bool valid() const noexcept { return violations.empty(); }
};

/*
 * epsilon <= gamma_n <= (1 - epsilon)/S and (1 + eta_n) gamma_n - gamma_{n+1}
 * <= eta_n/S for every listed gamma_n (the last one is held).
 */
GammaReport gamma_schedule_validate(std::span<const double> gammas, const SummableSequence& eta,
                                    double epsilon, double s);

/// Classical band epsilon <= gamma_n <= (2 - epsilon)/S.
GammaReport gamma_classical_validate(std::span<const double> gammas, double epsilon, double s);

struct DataTerm {
  Matrix l;
  Vector r;
  double mu = 1.0;
};

/// min f(x) + 1/2 sum_i mu_i ||L_i x - r_i||^2.
class InverseProblem {
 public:
  InverseProblem(ProxFunction f, std::vector<DataTerm> terms);

  const ProxFunction& f() const noexcept { return f_; }
  const std::vector<DataTerm>& terms() const noexcept { return terms_; }
  Eigen::Index dim() const noexcept { return dim_; }
  /// Power-iteration estimates of ||L_i||.
  const std::vector<double>& norms() const noexcept { return norms_; }
  /// (1 + 1e-6) sum_i mu_i ||L_i||^2, a conservative upper bound.
  double s_bar() const noexcept { return s_bar_; }
  /// U = sum_i mu_i L_i^T L_i and u = -sum_i mu_i L_i^T r_i.
  const Matrix& u_op() const noexcept { return u_op_; }
  const Vector& u() const noexcept { return u_; }

  double objective(const Vector& x) const;
  /// x + gamma sum_i mu_i L_i^T (r_i - L_i x).
  Vector forward_step(const Vector& x, double gamma) const;

 private:
  ProxFunction f_;
  std::vector<DataTerm> terms_;
  Eigen::Index dim_ = 0;
  std::vector<double> norms_;
  double s_bar_ = 0.0;
  Matrix u_op_;
  Vector u_;
};

struct ProblemReport {
  std::vector<double> sigma_min;  // per term
  std::optional<double> beta;     // sqrt(mu_j) sigma_min(L_j), best term, when positive
  std::optional<std::size_t> beta_term;
  bool f_coercive = false;
  std::string verdict;  // "bounded_below", "coercive" or "unverified"
};

ProblemReport problem_validate(const InverseProblem& p);

enum class StepRegime {
  variable_metric,  // epsilon <= gamma_n <= (1 - epsilon)/S with the eta-coupling, lambda in [eps, 2 - eps]
  classical,        // epsilon <= gamma_n <= (2 - epsilon)/S, lambda in [eps, 1]
};

std::string to_string(StepRegime r);
StepRegime regime_from_string(const std::string& s);

/*
 * x_{n+1} = x_n + lambda_n (prox_{gamma_n f}(x_n + gamma_n sum_i mu_i L_i^T (r_i
 * - L_i x_n)) + a_n - x_n). In the variable-metric regime the trace schedule is
 * W_n = I - gamma_n U (alpha = epsilon, mu = 1); in the classical regime it is
 * the identity.
 */
IterateTrace prox_landweber(const InverseProblem& p, const SummableSequence& eta, const RunConfig& cfg,
                            StepRegime regime = StepRegime::variable_metric);

/*
 * Proximal Landweber for f = sum_k phi_k(<x, e_k>) with e_k the columns of Q
 * and a single data term (L, r). Noise is drawn in coefficient space,
 * a_n = Q alpha_n.
 */
IterateTrace basis_prox_landweber(const Matrix& q, std::vector<ScalarPiece> pieces, const Matrix& l,
                                  const Vector& r, const SummableSequence& eta, const RunConfig& cfg,
                                  StepRegime regime = StepRegime::variable_metric);

}  // namespace vmfejer
