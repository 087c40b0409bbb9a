#include "vmfejer/fejer_monitor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "vmfejer/errors.hpp"

namespace vmfejer {

namespace {

double apply_phi(Phi phi, double d) { return phi == Phi::square ? d * d : d; }

void require_targets(const IterateTrace& trace, std::span<const Vector> targets) {
  if (targets.empty()) throw PreconditionError("at least one target is required");
  for (const auto& z : targets) {
    if (z.size() != trace.schedule->dim()) throw InvalidInput("target dimension differs from the trace");
  }
}

std::vector<double> distances(const IterateTrace& trace, const std::vector<MetricOperator>& ws,
                              const Vector& z) {
  std::vector<double> d(trace.size());
  for (std::size_t n = 0; n < trace.size(); ++n) d[n] = metric_norm(ws[n], trace.records[n].x - z);
  return d;
}

struct EnvelopeFit {
  bool dominates = false;
  double c = 0.0;
  double q = 0.0;
};

// Termwise fit of c q^k (q in (0,1)) or c/(k+1)^2 (q == 0) on [begin, fit_end),
// then a dominance check on every index.
EnvelopeFit fit_envelope(const std::vector<double>& e, std::size_t begin, std::size_t fit_end, double q) {
  auto log_shape = [q](std::size_t k) {
    return q > 0.0 ? static_cast<double>(k) * std::log(q) : -2.0 * std::log(static_cast<double>(k) + 1.0);
  };
  double log_c = -std::numeric_limits<double>::infinity();
  for (std::size_t k = begin; k < fit_end; ++k) {
    if (e[k] > 0.0) log_c = std::max(log_c, std::log(e[k]) - log_shape(k));
  }
  EnvelopeFit fit;
  fit.q = q;
  fit.c = std::exp(log_c);
  fit.dominates = std::isfinite(log_c);
  for (std::size_t k = 0; k < e.size() && fit.dominates; ++k) {
    if (e[k] > 0.0 && std::log(e[k]) > log_c + log_shape(k) + 1e-9) fit.dominates = false;
  }
  return fit;
}

}  // namespace

// ---------------------------------------------------------------------------

void IterateTrace::validate() const {
  if (!schedule) throw InvalidInput("trace has no metric schedule");
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (records[i].n != i) {
      std::ostringstream os;
      os << "trace record " << i << " has index " << records[i].n;
      throw InvalidInput(os.str());
    }
    if (records[i].x.size() != schedule->dim()) throw InvalidInput("trace iterate dimension mismatch");
  }
}

std::vector<Vector> IterateTrace::points() const {
  std::vector<Vector> xs;
  xs.reserve(records.size());
  for (const auto& r : records) xs.push_back(r.x);
  return xs;
}

std::vector<MetricOperator> trace_metrics(const IterateTrace& trace) {
  trace.validate();
  std::vector<MetricOperator> out;
  out.reserve(trace.size());
  std::optional<std::size_t> last_index;
  for (const auto& r : trace.records) {
    if (last_index && *last_index == r.metric_index) {
      out.push_back(out.back());
      continue;
    }
    Matrix m = trace.schedule->matrix_at(r.metric_index);
    if (!out.empty() && m == out.back().matrix()) {
      out.push_back(out.back());
    } else {
      out.push_back(trace.schedule->at(r.metric_index));
    }
    last_index = r.metric_index;
  }
  return out;
}

std::string to_string(Phi phi) { return phi == Phi::square ? "square" : "absolute"; }

Phi phi_from_string(const std::string& s) {
  if (s == "absolute") return Phi::absolute;
  if (s == "square") return Phi::square;
  throw InvalidInput("unknown phi '" + s + "'");
}

SummabilityReport summability_report(std::span<const double> values, double zero_tol) {
  std::vector<double> e(values.begin(), values.end());
  SummabilityReport r;
  std::size_t first = e.size();
  for (std::size_t k = 0; k < e.size(); ++k) {
    if (!(e[k] > zero_tol)) e[k] = 0.0;
    r.partial_sum += e[k];
    if (e[k] > 0.0 && first == e.size()) first = k;
  }
  if (first == e.size()) {
    r.model = "zero";
    r.consistent = true;
    return r;
  }
  const std::size_t fit_end = first + std::max<std::size_t>(1, (e.size() - first) / 2);

  EnvelopeFit chosen;
  for (double q : {0.5, 0.6, 0.7, 0.8, 0.9, 0.95, 0.99}) {
    chosen = fit_envelope(e, first, fit_end, q);
    if (chosen.dominates) break;
  }
  if (chosen.dominates) {
    r.model = "geometric";
  } else {
    chosen = fit_envelope(e, first, fit_end, 0.0);
    r.model = chosen.dominates ? "inverse_square" : "none";
  }
  r.consistent = chosen.dominates;
  r.c = chosen.c;
  r.q = chosen.q;
  r.envelope_total = chosen.q > 0.0 ? chosen.c / (1.0 - chosen.q) : chosen.c * std::numbers::pi * std::numbers::pi / 6.0;

  double partial = 0.0;
  double envelope = 0.0;
  r.fit_residual = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < e.size(); ++k) {
    partial += e[k];
    const double kk = static_cast<double>(k);
    envelope += chosen.q > 0.0 ? chosen.c * std::pow(chosen.q, kk) : chosen.c / ((kk + 1.0) * (kk + 1.0));
    r.fit_residual = std::max(r.fit_residual, partial - envelope);
  }
  return r;
}

FejerCertificate check_quasi_fejer(const IterateTrace& trace, std::span<const Vector> targets,
                                   const SummableSequence& eta, Phi phi,
                                   const std::optional<std::vector<double>>& eps, double tol) {
  if (trace.size() < 2) throw PreconditionError("quasi-Fejer check needs at least two iterates");
  trace.validate();
  require_targets(trace, targets);
  const std::size_t steps = trace.size() - 1;
  if (eps && eps->size() < steps) {
    throw PreconditionError("epsilon sequence is shorter than the trace");
  }
  const auto ws = trace_metrics(trace);

  FejerCertificate c;
  c.targets.assign(targets.begin(), targets.end());
  c.phi = phi;
  c.tol = tol;
  c.auto_epsilon = !eps.has_value();
  c.stationary = true;
  c.eta.resize(steps);
  for (std::size_t n = 0; n < steps; ++n) c.eta[n] = eta(n);

  std::vector<std::vector<double>> raw(targets.size(), std::vector<double>(steps));
  c.implied_epsilon.assign(targets.size(), std::vector<double>(steps));
  c.shared_implied_epsilon.assign(steps, 0.0);
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto d = distances(trace, ws, targets[t]);
    for (std::size_t n = 0; n < steps; ++n) {
      raw[t][n] = (1.0 + c.eta[n]) * apply_phi(phi, d[n]) - apply_phi(phi, d[n + 1]);
      c.implied_epsilon[t][n] = std::max(0.0, -raw[t][n]);
      c.shared_implied_epsilon[n] = std::max(c.shared_implied_epsilon[n], c.implied_epsilon[t][n]);
    }
  }

  const std::vector<double> used =
      eps ? std::vector<double>(eps->begin(), eps->begin() + static_cast<std::ptrdiff_t>(steps))
          : c.shared_implied_epsilon;
  c.epsilon.assign(targets.size(), used);
  c.slacks.assign(targets.size(), std::vector<double>(steps));
  c.min_slack = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t < targets.size(); ++t) {
    for (std::size_t n = 0; n < steps; ++n) {
      const double s = raw[t][n] + used[n];
      c.slacks[t][n] = s;
      c.min_slack = std::min(c.min_slack, s);
      if (s < -tol) c.violations.push_back({t, n, s});
    }
  }
  c.summability = summability_report(c.shared_implied_epsilon, tol);
  c.pass = c.violations.empty();
  return c;
}

std::vector<double> noise_envelope(const IterateTrace& trace, double mu) {
  std::vector<double> e;
  if (trace.size() < 2) return e;
  e.reserve(trace.size() - 1);
  const double root = 2.0 * std::sqrt(mu);
  for (std::size_t n = 0; n + 1 < trace.size(); ++n) e.push_back(root * trace.records[n].a_norm);
  return e;
}

// ---------------------------------------------------------------------------

BoundednessReport boundedness_report(const IterateTrace& trace, const Vector& z,
                                     const SummableSequence& eta,
                                     const std::optional<std::vector<double>>& eps) {
  if (trace.size() == 0) throw PreconditionError("empty trace");
  const Vector zs[] = {z};
  require_targets(trace, zs);
  const auto ws = trace_metrics(trace);
  const auto d = distances(trace, ws, z);
  const double root_alpha = std::sqrt(trace.schedule->alpha());

  BoundednessReport r;
  for (std::size_t n = 0; n < trace.size(); ++n) {
    r.sup_norm = std::max(r.sup_norm, trace.records[n].x.norm());
    r.sup_metric_dist = std::max(r.sup_metric_dist, d[n]);
  }
  r.trace_bound = z.norm() + r.sup_metric_dist / root_alpha;

  double log_prod = 0.0;
  double eps_sum = 0.0;
  for (std::size_t n = 0; n + 1 < trace.size(); ++n) {
    log_prod += std::log1p(eta(n));
    if (eps) eps_sum += n < eps->size() ? (*eps)[n] : 0.0;
  }
  r.predicted_bound = z.norm() + std::exp(log_prod) * (d[0] + eps_sum) / root_alpha;
  r.flag = r.sup_norm > r.predicted_bound * (1.0 + 1e-12) + 1e-12;
  return r;
}

NormConvergenceReport norm_convergence_report(const IterateTrace& trace, const Vector& z,
                                              std::size_t window, double tol) {
  if (window == 0 || window > trace.size()) {
    std::ostringstream os;
    os << "window " << window << " does not fit a trace of " << trace.size() << " iterates";
    throw PreconditionError(os.str());
  }
  const Vector zs[] = {z};
  require_targets(trace, zs);
  const auto ws = trace_metrics(trace);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t n = trace.size() - window; n < trace.size(); ++n) {
    const double d = metric_norm(ws[n], trace.records[n].x - z);
    lo = std::min(lo, d);
    hi = std::max(hi, d);
  }
  NormConvergenceReport r;
  r.window = window;
  r.tol = tol;
  r.oscillation = hi - lo;
  r.last = metric_norm(ws.back(), trace.records.back().x - z);
  r.converged = r.oscillation <= tol;
  return r;
}

HullSpreadReport hull_spread_check(const IterateTrace& trace, std::span<const Vector> vertices,
                                   std::span<const double> weights, const SummableSequence& eta,
                                   const std::optional<std::vector<double>>& vertex_eps, double tol) {
  if (vertices.size() != weights.size() || vertices.empty()) {
    throw PreconditionError("one weight per vertex is required");
  }
  double total = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw PreconditionError("hull weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-12) throw PreconditionError("hull weights must sum to 1");
  if (trace.size() < 2) throw PreconditionError("hull check needs at least two iterates");
  require_targets(trace, vertices);
  if (trace.schedule->direction() == Direction::increasing) {
    throw PreconditionError("hull spreading needs a decreasing-direction schedule");
  }

  HullSpreadReport r;
  r.combination = Vector::Zero(trace.schedule->dim());
  for (std::size_t i = 0; i < vertices.size(); ++i) r.combination += weights[i] * vertices[i];

  const std::size_t steps = trace.size() - 1;
  std::vector<double> max_vertex_eps(steps, 0.0);
  bool vertices_pass = true;
  for (const auto& v : vertices) {
    const Vector one[] = {v};
    r.vertices.push_back(check_quasi_fejer(trace, one, eta, Phi::square, vertex_eps, tol));
    vertices_pass = vertices_pass && r.vertices.back().pass;
    for (std::size_t n = 0; n < steps; ++n) {
      max_vertex_eps[n] = std::max(max_vertex_eps[n], r.vertices.back().epsilon[0][n]);
    }
  }

  const auto ws = trace_metrics(trace);
  r.alpha.assign(trace.size(), 0.0);
  for (std::size_t n = 0; n < trace.size(); ++n) {
    for (std::size_t i = 0; i < vertices.size(); ++i) {
      for (std::size_t j = 0; j < vertices.size(); ++j) {
        r.alpha[n] += 0.5 * weights[i] * weights[j] * metric_norm_sq(ws[n], vertices[i] - vertices[j]);
      }
    }
  }
  std::vector<double> eps(steps);
  for (std::size_t n = 0; n < steps; ++n) {
    eps[n] = (1.0 + eta(n)) * r.alpha[n] - r.alpha[n + 1] + max_vertex_eps[n];
  }
  const Vector z[] = {r.combination};
  r.certificate = check_quasi_fejer(trace, z, eta, Phi::square, eps, tol);
  r.pass = vertices_pass && r.certificate.pass;
  return r;
}

ShadowReport shadow_sequence(const IterateTrace& trace, std::span<const ConvexSet> sets, double tol) {
  if (sets.empty()) throw PreconditionError("shadow sequence needs a target set");
  if (trace.size() == 0) throw PreconditionError("empty trace");
  const auto ws = trace_metrics(trace);
  ShadowReport r;
  r.tol = tol;
  r.approximated = sets.size() > 1;
  r.shadows.reserve(trace.size());
  for (std::size_t n = 0; n < trace.size(); ++n) {
    const Vector& x = trace.records[n].x;
    if (sets.size() == 1) {
      r.shadows.push_back(project_metric(sets[0], ws[n], x));
    } else {
      r.shadows.push_back(intersection_project(sets, x, 1e-12, &ws[n]).point);
    }
  }
  const std::size_t last = trace.size() - 1;
  for (std::size_t lag : kProbeLags) {
    if (lag > last) break;
    r.increments.push_back({lag, (r.shadows[last] - r.shadows[last - lag]).norm()});
  }
  r.cauchy = !r.increments.empty() &&
             std::all_of(r.increments.begin(), r.increments.end(),
                         [tol](const LagIncrement& li) { return li.value <= tol; });
  return r;
}

}  // namespace vmfejer
