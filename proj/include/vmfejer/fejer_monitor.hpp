#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "vmfejer/convex_sets.hpp"
#include "vmfejer/metric_ops.hpp"

namespace vmfejer {

// ---------------------------------------------------------------------------
// Traces.

/// One iterate x_n. Step quantities (lambda, gamma, a_norm, ...) describe the
/// move from x_n to x_{n+1} and are absent on the final record.
struct IterateRecord {
  std::size_t n = 0;
  Vector x;
  std::size_t metric_index = 0;  // W_n = schedule->at(metric_index)
  std::optional<std::size_t> op_index;
  std::optional<double> lambda;
  std::optional<double> gamma;
  double a_norm = 0.0;
  std::optional<double> v_norm;     // ||W_n (x_n - y_n)|| / gamma_n for resolvent steps
  std::optional<double> objective;  // objective value at x_n when the solver has one
  std::vector<double> residuals;    // d_{C_i}(x_n) per logged set
};

struct TraceMetadata {
  std::string solver;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string stop_reason;  // "tolerance" or "max_iter"
  int threads = 1;
};

struct IterateTrace {
  std::vector<IterateRecord> records;
  std::shared_ptr<const MetricSchedule> schedule;
  TraceMetadata meta;

  std::size_t size() const noexcept { return records.size(); }
  /// Throws InvalidInput unless indices run 0, 1, ... and dimensions match.
  void validate() const;
  std::vector<Vector> points() const;
};

/// W_n for every record, factored once per distinct schedule index.
std::vector<MetricOperator> trace_metrics(const IterateTrace& trace);

// ---------------------------------------------------------------------------
// Quasi-Fejer certificates.

enum class Phi { absolute, square };

std::string to_string(Phi phi);
Phi phi_from_string(const std::string& s);

struct SummabilityReport {
  std::string model;        // "zero", "geometric", "inverse_square" or "none"
  bool consistent = false;  // some envelope fitted on the first half dominates every term
  double c = 0.0;
  double q = 0.0;           // geometric ratio when model == "geometric"
  double partial_sum = 0.0;
  double envelope_total = 0.0;  // full series of the fitted envelope
  double fit_residual = 0.0;    // max_n (partial sum - envelope partial sum); <= 0 when consistent
};

/// Envelope consistency of a nonnegative finite sequence. Entries <= zero_tol count as 0.
SummabilityReport summability_report(std::span<const double> values, double zero_tol = 0.0);

struct FejerViolation {
  std::size_t target = 0;
  std::size_t n = 0;
  double slack = 0.0;
};

/*
 * s_n(z) = (1 + eta_n) phi(||x_n - z||_{W_n}) + eps_n - phi(||x_{n+1} - z||_{W_{n+1}})
 * for n = 0..N-2. pass iff every slack >= -tol.
 */
struct FejerCertificate {
  std::vector<Vector> targets;
  Phi phi = Phi::absolute;
  double tol = 0.0;
  bool auto_epsilon = false;
  bool stationary = false;  // one eps sequence covers every target
  std::vector<double> eta;
  std::vector<std::vector<double>> epsilon;        // per target (identical rows when stationary)
  std::vector<std::vector<double>> slacks;         // [target][n]
  std::vector<std::vector<double>> implied_epsilon;  // max(0, -slack without eps)
  std::vector<double> shared_implied_epsilon;      // max over targets
  SummabilityReport summability;                   // of shared_implied_epsilon
  std::vector<FejerViolation> violations;
  double min_slack = 0.0;
  bool pass = false;
};

/*
 * With eps == nullopt the implied eps_n is used (so every slack is >= 0) and
 * the verdict that matters is the summability report.
 */
FejerCertificate check_quasi_fejer(const IterateTrace& trace, std::span<const Vector> targets,
                                   const SummableSequence& eta, Phi phi,
                                   const std::optional<std::vector<double>>& eps, double tol = 1e-9);

/// eps_n = 2 sqrt(mu) ||a_n|| from the logged error norms; length N-1.
std::vector<double> noise_envelope(const IterateTrace& trace, double mu);

// ---------------------------------------------------------------------------
// Trace reports.

struct BoundednessReport {
  double sup_norm = 0.0;         // sup_n ||x_n||
  double sup_metric_dist = 0.0;  // sup_n ||x_n - z||_{W_n}
  double trace_bound = 0.0;      // ||z|| + sqrt(sup_n ||x_n - z||^2_{W_n} / alpha)
  double predicted_bound = 0.0;  // ||z|| + prod(1 + eta) (||x_0 - z||_{W_0} + sum eps) / sqrt(alpha)
  bool flag = false;             // sup_norm exceeds predicted_bound
};

/// eps defaults to zero. The predicted bound is the a-priori one implied by
/// quasi-Fejer monotonicity with phi = |.|.
BoundednessReport boundedness_report(const IterateTrace& trace, const Vector& z,
                                     const SummableSequence& eta,
                                     const std::optional<std::vector<double>>& eps = std::nullopt);

inline constexpr std::size_t kDefaultWindow = 50;
inline constexpr double kConvergenceTol = 1e-8;

struct NormConvergenceReport {
  std::size_t window = 0;
  double tol = 0.0;
  double oscillation = 0.0;  // max - min of ||x_n - z||_{W_n} over the window
  double last = 0.0;
  bool converged = false;
};

NormConvergenceReport norm_convergence_report(const IterateTrace& trace, const Vector& z,
                                              std::size_t window = kDefaultWindow,
                                              double tol = kConvergenceTol);

struct HullSpreadReport {
  Vector combination;
  std::vector<double> alpha;            // 1/2 sum_ij w_i w_j ||z_i - z_j||^2_{W_n}
  std::vector<FejerCertificate> vertices;  // phi = square, per vertex
  FejerCertificate certificate;         // for the combination with constructed eps
  bool pass = false;                    // every vertex and the combination pass
};

/*
 * Vertex eps (shared) defaults to the implied per-vertex values; the
 * constructed eps_n = (1 + eta_n) alpha_n - alpha_{n+1} + max_i eps_{i,n}.
 */
HullSpreadReport hull_spread_check(const IterateTrace& trace, std::span<const Vector> vertices,
                                   std::span<const double> weights, const SummableSequence& eta,
                                   const std::optional<std::vector<double>>& vertex_eps,
                                   double tol = 1e-9);

struct LagIncrement {
  std::size_t lag = 0;
  double value = 0.0;  // ||z_{N-1} - z_{N-1-lag}||
};

struct ShadowReport {
  std::vector<Vector> shadows;  // z_n = P_C^{W_n} x_n
  bool approximated = false;    // C was an intersection handled by Dykstra
  std::vector<LagIncrement> increments;
  double tol = 0.0;
  bool cauchy = false;
};

ShadowReport shadow_sequence(const IterateTrace& trace, std::span<const ConvexSet> sets,
                             double tol = kConvergenceTol);

}  // namespace vmfejer
