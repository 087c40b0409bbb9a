#include "vmfejer/solvers.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "vmfejer/errors.hpp"

namespace vmfejer {

namespace {

constexpr std::uint64_t kSampleSalt = 0x5eedf00dULL;
constexpr std::size_t kStartupSamples = 8;

class NoiseStream {
 public:
  NoiseStream(const ErrorInjection& spec, Eigen::Index dim, std::uint64_t seed)
      : spec_(spec), dim_(dim), rng_(seed) {}

  // a_n, or an empty vector when no noise is injected.
  Vector next(std::size_t n) {
    if (!spec_.active()) return {};
    Vector u(dim_);
    for (Eigen::Index i = 0; i < dim_; ++i) u(i) = normal_(rng_);
    return (spec_.c * std::pow(spec_.q, static_cast<double>(n)) / u.norm()) * u;
  }

 private:
  ErrorInjection spec_;
  Eigen::Index dim_;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
};

struct Step {
  Vector y;
  std::optional<std::size_t> op;
  std::optional<double> gamma;
  std::optional<double> v_norm;
};

using StepFn = std::function<Step(std::size_t n, const Vector& x, const MetricOperator* w)>;

// Consecutive small increments required before stopping; at least the largest probe lag.
constexpr std::size_t kStopTail = kProbeLags[std::size(kProbeLags) - 1];

struct DriveOptions {
  std::string solver;
  std::size_t stop_window = 1;
  bool needs_metric = true;
  std::span<const ConvexSet> sets;
  std::function<double(const Vector&)> objective;
  const Matrix* noise_basis = nullptr;  // a_n = Q alpha_n
};

Vector start_point(const RunConfig& cfg, Eigen::Index dim) {
  if (!cfg.x0) return Vector::Zero(dim);
  if (cfg.x0->size() != dim) throw InvalidInput("x0 dimension differs from the problem");
  return *cfg.x0;
}

IterateRecord make_record(std::size_t n, const Vector& x, const DriveOptions& opt) {
  IterateRecord r;
  r.n = n;
  r.x = x;
  r.metric_index = n;
  r.residuals.reserve(opt.sets.size());
  for (const auto& c : opt.sets) r.residuals.push_back(distance(c, x));
  if (opt.objective) r.objective = opt.objective(x);
  return r;
}

IterateTrace drive(const StepFn& step, std::shared_ptr<const MetricSchedule> schedule, const RunConfig& cfg,
                   const DriveOptions& opt, Eigen::Index dim) {
  IterateTrace trace;
  trace.schedule = std::move(schedule);
  trace.meta.solver = opt.solver;
  trace.meta.seed = cfg.seed;
  trace.meta.stop_reason = "max_iter";

  NoiseStream noise(cfg.noise, dim, cfg.seed);
  Vector x = start_point(cfg, dim);
  trace.records.push_back(make_record(0, x, opt));

  std::optional<MetricOperator> w;
  std::size_t small = 0;
  for (std::size_t n = 0; n < cfg.max_iter; ++n) {
    if (opt.needs_metric) {
      Matrix m = trace.schedule->matrix_at(n);
      if (!w || m != w->matrix()) w = trace.schedule->at(n);
    }
    Step s;
    try {
      s = step(n, x, w ? &*w : nullptr);
    } catch (NumericError& e) {
      e.iteration = static_cast<std::ptrdiff_t>(n);
      throw;
    }
    const double lambda = cfg.lambda(n);
    Vector a = noise.next(n);
    double a_norm = 0.0;
    if (a.size() > 0) {
      if (opt.noise_basis) a = *opt.noise_basis * a;
      a_norm = a.norm();
      s.y += a;
    }
    Vector next = x + lambda * (s.y - x);
    if (!next.allFinite()) {
      NumericError e("iterate is not finite", std::numeric_limits<double>::infinity());
      e.iteration = static_cast<std::ptrdiff_t>(n);
      throw e;
    }

    IterateRecord& rec = trace.records.back();
    rec.op_index = s.op;
    rec.lambda = lambda;
    rec.gamma = s.gamma;
    rec.a_norm = a_norm;
    rec.v_norm = s.v_norm;

    const double increment = (next - x).norm();
    x = std::move(next);
    trace.records.push_back(make_record(n + 1, x, opt));
    small = cfg.tol > 0.0 && increment <= cfg.tol ? small + 1 : 0;
    if (small >= std::max(opt.stop_window, kStopTail)) {
      trace.meta.stop_reason = "tolerance";
      break;
    }
  }
  return trace;
}

std::string at_index(const std::string& what, std::size_t n, double slack) {
  std::ostringstream os;
  os << what << " fails at n = " << n << " (slack " << slack << ")";
  return os.str();
}

std::size_t examined_horizon(const MetricSchedule& s, std::size_t max_iter) {
  std::size_t n = std::min<std::size_t>(max_iter + 1, 256);
  std::visit(
      [&n](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ListFamily>) n = std::max(n, f.matrices.size() + 1);
        if constexpr (std::is_same_v<T, InducedFamily>) n = std::max(n, f.gammas.size() + 1);
      },
      s.family());
  return std::max<std::size_t>(n, 2);
}

void require_decreasing(const MetricSchedule& s, std::size_t max_iter) {
  if (s.direction() == Direction::increasing) {
    throw HypothesisError("(1 + eta_n) W_n >= W_{n+1}", "schedule must be declared decreasing");
  }
  const auto cert = schedule_validate(s, examined_horizon(s, max_iter));
  if (cert.valid()) return;
  const auto& v = cert.violations.front();
  std::string condition = "(1 + eta_n) W_n >= W_{n+1}";
  if (v.condition == "increasing") condition = "(1 + nu_n) W_{n+1} >= W_n";
  if (v.condition == "bound") condition = "||W_n|| <= mu";
  if (v.condition == "alpha") condition = "W_n >= alpha I";
  throw HypothesisError(condition, at_index("schedule: " + condition, v.n, v.slack));
}

void require_dim(const MetricSchedule& s, Eigen::Index dim) {
  if (s.dim() != dim) throw InvalidInput("schedule dimension differs from the problem");
}

std::vector<Vector> startup_samples(const Vector& x0, std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ kSampleSalt);
  std::normal_distribution<double> normal;
  const double scale = 1.0 + x0.norm();
  std::vector<Vector> xs{x0};
  for (std::size_t k = 0; k < kStartupSamples; ++k) {
    Vector v(x0.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = scale * normal(rng);
    xs.push_back(std::move(v));
  }
  return xs;
}

void startup_class_check(std::span<const TFactory> factories, const MetricOperator& w0, const Vector& x0,
                         std::uint64_t seed) {
  const auto xs = startup_samples(x0, seed);
  for (std::size_t i = 0; i < factories.size(); ++i) {
    const TOperator t = factories[i](0, w0);
    if (!t.has_witness()) continue;
    std::vector<Vector> ys;
    ys.reserve(xs.size());
    for (const auto& x : xs) ys.push_back(t.witness(x));
    TClassReport rep;
    try {
      rep = t_class_check(t, w0, xs, ys);
    } catch (const BadWitness& e) {
      throw BadOperator("operator " + std::to_string(i) + ": " + e.what());
    }
    if (!rep.pass) {
      std::ostringstream os;
      os << "operator " << i << " (" << t.name() << ") violates <y - Tx, x - Tx>_W <= 0: max "
         << rep.max_value;
      throw BadOperator(os.str());
    }
  }
}

void require_gamma_floor(const RunConfig& cfg) {
  for (std::size_t k = 0; k < cfg.gamma.values.size(); ++k) {
    if (!(cfg.gamma.values[k] >= cfg.epsilon)) {
      throw HypothesisError("gamma_n >= epsilon", at_index("gamma_n >= epsilon", k, cfg.gamma.values[k] - cfg.epsilon));
    }
  }
}

IterateTrace landweber_driver(const InverseProblem& p, const SummableSequence& eta, const RunConfig& cfg,
                              StepRegime regime, const Matrix* noise_basis, const std::string& name) {
  const double s = p.s_bar();
  if (cfg.enforce_hypotheses) {
    const GammaReport rep = regime == StepRegime::variable_metric
                                ? gamma_schedule_validate(cfg.gamma.values, eta, cfg.epsilon, s)
                                : gamma_classical_validate(cfg.gamma.values, cfg.epsilon, s);
    if (!rep.valid()) {
      const auto& v = rep.violations.front();
      throw HypothesisError(v.condition, at_index(v.condition, v.n, v.slack));
    }
    config_validate(cfg, cfg.epsilon, regime == StepRegime::variable_metric ? 2.0 - cfg.epsilon : 1.0);
  }

  DriveOptions opt;
  opt.solver = name;
  opt.needs_metric = false;
  opt.noise_basis = noise_basis;
  opt.objective = [&p](const Vector& x) { return p.objective(x); };
  const StepFn step = [&p, &cfg](std::size_t n, const Vector& x, const MetricOperator*) {
    const double gamma = cfg.gamma(n);
    Step st;
    st.y = p.f().prox(p.forward_step(x, gamma), gamma);
    st.gamma = gamma;
    return st;
  };
  IterateTrace trace = drive(step, nullptr, cfg, opt, p.dim());

  // The metric family the run is certified against.
  const auto n_dim = p.dim();
  std::shared_ptr<const MetricSchedule> sched;
  if (regime == StepRegime::variable_metric) {
    std::vector<double> gammas;
    gammas.reserve(trace.size());
    for (std::size_t n = 0; n < trace.size(); ++n) gammas.push_back(cfg.gamma(n));
    try {
      auto candidate = std::make_shared<const MetricSchedule>(InducedFamily{p.u_op(), std::move(gammas)},
                                                              cfg.epsilon, 1.0, eta, Direction::decreasing);
      candidate->at(0);
      sched = std::move(candidate);
    } catch (const Error&) {
      sched.reset();
    }
  }
  if (!sched) sched = std::make_shared<const MetricSchedule>(MetricSchedule::identity(n_dim));
  trace.schedule = std::move(sched);
  for (std::size_t n = 0; n < trace.size(); ++n) {
    trace.records[n].metric_index = regime == StepRegime::variable_metric ? n : 0;
  }
  return trace;
}

}  // namespace

// ---------------------------------------------------------------------------

ControlSequence ControlSequence::periodic(std::size_t m) {
  if (m == 0) throw InvalidInput("periodic control needs m >= 1");
  ControlSequence c;
  c.windows_.assign(m, m);
  c.period_ = m;
  return c;
}

ControlSequence ControlSequence::pattern(std::vector<std::size_t> indices, std::vector<std::size_t> windows) {
  if (indices.empty()) throw InvalidInput("control pattern is empty");
  if (windows.empty()) throw InvalidInput("control needs one window bound per index");
  for (std::size_t i : indices) {
    if (i >= windows.size()) throw InvalidInput("control index " + std::to_string(i) + " has no window bound");
  }
  for (std::size_t m : windows) {
    if (m == 0) throw InvalidInput("control window bounds must be >= 1");
  }
  ControlSequence c;
  c.period_ = indices.size();
  c.pattern_ = std::move(indices);
  c.windows_ = std::move(windows);
  return c;
}

std::size_t ControlSequence::operator()(std::size_t n) const {
  return pattern_.empty() ? n % period_ : pattern_[n % period_];
}

std::size_t ControlSequence::max_window() const {
  return *std::max_element(windows_.begin(), windows_.end());
}

ControlCertificate control_validate(const ControlSequence& c, std::size_t n_examined) {
  const std::size_t mmax = c.max_window();
  if (n_examined < mmax) {
    throw PreconditionError("control_validate needs N >= max window bound");
  }
  ControlCertificate cert;
  for (std::size_t n = 0; n + mmax <= n_examined; ++n) {
    for (std::size_t j = 0; j < c.count(); ++j) {
      bool seen = false;
      for (std::size_t k = 0; k < c.windows()[j] && !seen; ++k) seen = c(n + k) == j;
      if (!seen) {
        cert.n = n;
        cert.index = j;
        return cert;
      }
    }
  }
  cert.valid = true;
  return cert;
}

double StepSequence::operator()(std::size_t n) const {
  if (values.empty()) throw InvalidInput("step sequence is empty");
  return values[std::min(n, values.size() - 1)];
}

void config_validate(const RunConfig& cfg, double lambda_lo, double lambda_hi) {
  if (!(cfg.epsilon > 0.0 && cfg.epsilon < 1.0)) {
    throw HypothesisError("0 < epsilon < 1", "epsilon must lie in (0, 1)");
  }
  if (cfg.lambda.values.empty() || cfg.gamma.values.empty()) throw InvalidInput("step sequences must be nonempty");
  std::ostringstream cond;
  cond << "lambda_n in [" << lambda_lo << ", " << lambda_hi << "]";
  for (std::size_t k = 0; k < cfg.lambda.values.size(); ++k) {
    const double l = cfg.lambda.values[k];
    if (!(l >= lambda_lo && l <= lambda_hi)) {
      throw HypothesisError(cond.str(), at_index(cond.str(), k, std::min(l - lambda_lo, lambda_hi - l)));
    }
  }
  if (!(cfg.noise.c >= 0.0) || !(cfg.noise.q >= 0.0 && cfg.noise.q < 1.0)) {
    throw HypothesisError("sum ||a_n|| < inf", "noise needs c >= 0 and 0 <= q < 1");
  }
}

// ---------------------------------------------------------------------------

IterateTrace feasibility_solve(std::span<const TFactory> factories, std::shared_ptr<const MetricSchedule> schedule,
                               const ControlSequence& control, const RunConfig& cfg,
                               std::span<const ConvexSet> sets) {
  if (!schedule) throw InvalidInput("missing metric schedule");
  if (factories.empty()) throw InvalidInput("at least one operator is required");
  if (control.count() != factories.size()) {
    throw InvalidInput("control indexes a different number of operators");
  }
  const Eigen::Index dim = schedule->dim();
  const Vector x0 = start_point(cfg, dim);
  for (const auto& c : sets) {
    if (c.dim() != dim) throw InvalidInput("set dimension differs from the schedule");
  }

  if (cfg.enforce_hypotheses) {
    require_decreasing(*schedule, cfg.max_iter);
    const auto cc = control_validate(control, control.max_window() + 2 * control.period());
    if (!cc.valid) {
      std::ostringstream os;
      os << "index " << *cc.index << " missing from the window starting at n = " << *cc.n;
      throw HypothesisError("j in {i(n), ..., i(n + M_j - 1)}", os.str());
    }
    config_validate(cfg, cfg.epsilon, 2.0 - cfg.epsilon);
    startup_class_check(factories, schedule->at(0), x0, cfg.seed);
  }

  DriveOptions opt;
  opt.solver = "feasibility";
  opt.stop_window = control.period();
  opt.sets = sets;
  const StepFn step = [&](std::size_t n, const Vector& x, const MetricOperator* w) {
    Step s;
    s.op = control(n);
    s.y = factories[*s.op](n, *w)(x);
    return s;
  };
  return drive(step, std::move(schedule), cfg, opt, dim);
}

IterateTrace periodic_projections(std::span<const ConvexSet> sets, std::shared_ptr<const MetricSchedule> schedule,
                                  const RunConfig& cfg) {
  if (sets.empty()) throw InvalidInput("at least one set is required");
  std::vector<TFactory> factories;
  factories.reserve(sets.size());
  for (const auto& c : sets) {
    factories.emplace_back([c](std::size_t, const MetricOperator& w) { return TOperator::projector(c, w); });
  }
  auto trace = feasibility_solve(factories, std::move(schedule), ControlSequence::periodic(sets.size()), cfg, sets);
  trace.meta.solver = "periodic_projections";
  return trace;
}

IterateTrace linear_inequalities(std::span<const Vector> us, std::span<const double> etas,
                                 std::shared_ptr<const MetricSchedule> schedule, const RunConfig& cfg) {
  if (!schedule) throw InvalidInput("missing metric schedule");
  if (us.empty() || us.size() != etas.size()) throw InvalidInput("one offset per normal vector is required");
  const Eigen::Index dim = schedule->dim();
  std::vector<ConvexSet> sets;
  sets.reserve(us.size());
  for (std::size_t i = 0; i < us.size(); ++i) {
    if (us[i].size() != dim) throw InvalidInput("normal vector dimension differs from the schedule");
    sets.push_back(ConvexSet::half_space(us[i], etas[i]));
  }
  if (cfg.noise.active()) throw InvalidInput("linear_inequalities takes no error injection");
  if (cfg.enforce_hypotheses) {
    require_decreasing(*schedule, cfg.max_iter);
    config_validate(cfg, cfg.epsilon, 2.0 - cfg.epsilon);
  }

  const std::size_t m = us.size();
  DriveOptions opt;
  opt.solver = "linear_inequalities";
  opt.stop_window = m;
  opt.sets = sets;
  const StepFn step = [&](std::size_t n, const Vector& x, const MetricOperator* w) {
    Step s;
    const std::size_t i = n % m;
    s.op = i;
    const double ux = x.dot(us[i]);
    if (ux <= etas[i]) {
      s.y = x;
    } else {
      const Vector wu = w->solve(us[i]);
      s.y = x + ((etas[i] - ux) / us[i].dot(wu)) * wu;
    }
    return s;
  };
  return drive(step, std::move(schedule), cfg, opt, dim);
}

IterateTrace proximal_point(const MonotoneOperator& a, std::shared_ptr<const MetricSchedule> schedule,
                            const RunConfig& cfg) {
  if (!schedule) throw InvalidInput("missing metric schedule");
  const Eigen::Index dim = schedule->dim();
  if (a.dim() != 0) require_dim(*schedule, a.dim());
  if (cfg.enforce_hypotheses) {
    require_decreasing(*schedule, cfg.max_iter);
    config_validate(cfg, cfg.epsilon, 2.0 - cfg.epsilon);
    require_gamma_floor(cfg);
  }
  DriveOptions opt;
  opt.solver = "proximal_point";
  const StepFn step = [&](std::size_t n, const Vector& x, const MetricOperator* w) {
    Step s;
    const double gamma = cfg.gamma(n);
    s.y = resolvent_metric(a, *w, gamma, x);
    s.gamma = gamma;
    s.v_norm = (w->apply(x - s.y) / gamma).norm();
    return s;
  };
  return drive(step, std::move(schedule), cfg, opt, dim);
}

// ---------------------------------------------------------------------------

GammaReport gamma_schedule_validate(std::span<const double> gammas, const SummableSequence& eta, double epsilon,
                                    double s) {
  if (!(s > 0.0)) throw PreconditionError("S must be positive");
  if (gammas.empty()) throw PreconditionError("gamma schedule is empty");
  const double slop = 1e-12 / s;
  GammaReport r;
  r.examined = gammas.size();
  for (std::size_t n = 0; n < gammas.size(); ++n) {
    const double g = gammas[n];
    const double g1 = gammas[std::min(n + 1, gammas.size() - 1)];
    const double e = eta(n);
    const double floor_slack = g - epsilon;
    const double band_slack = (1.0 - epsilon) / s - g;
    const double coupling_slack = e / s - ((1.0 + e) * g - g1);
    if (floor_slack < -slop) r.violations.push_back({n, "gamma_n >= epsilon", floor_slack});
    if (band_slack < -slop) r.violations.push_back({n, "gamma_n <= (1 - epsilon)/S", band_slack});
    if (coupling_slack < -slop) {
      r.violations.push_back({n, "(1 + eta_n) gamma_n - gamma_{n+1} <= eta_n/S", coupling_slack});
    }
  }
  return r;
}

GammaReport gamma_classical_validate(std::span<const double> gammas, double epsilon, double s) {
  if (!(s > 0.0)) throw PreconditionError("S must be positive");
  if (gammas.empty()) throw PreconditionError("gamma schedule is empty");
  const double slop = 1e-12 / s;
  GammaReport r;
  r.examined = gammas.size();
  for (std::size_t n = 0; n < gammas.size(); ++n) {
    const double floor_slack = gammas[n] - epsilon;
    const double band_slack = (2.0 - epsilon) / s - gammas[n];
    if (floor_slack < -slop) r.violations.push_back({n, "gamma_n >= epsilon", floor_slack});
    if (band_slack < -slop) r.violations.push_back({n, "gamma_n <= (2 - epsilon)/S", band_slack});
  }
  return r;
}

InverseProblem::InverseProblem(ProxFunction f, std::vector<DataTerm> terms)
    : f_(std::move(f)), terms_(std::move(terms)) {
  if (terms_.empty()) throw InvalidInput("an inverse problem needs at least one data term");
  dim_ = terms_.front().l.cols();
  if (dim_ == 0) throw InvalidInput("data operators must have at least one column");
  if (f_.dim() != 0 && f_.dim() != dim_) throw InvalidInput("regularizer dimension differs from the data terms");
  u_op_ = Matrix::Zero(dim_, dim_);
  u_ = Vector::Zero(dim_);
  double s = 0.0;
  for (const auto& t : terms_) {
    if (t.l.cols() != dim_) throw InvalidInput("data operators disagree on the domain dimension");
    if (t.r.size() != t.l.rows()) throw InvalidInput("data vector dimension differs from its operator");
    if (!(t.mu > 0.0)) throw InvalidInput("term weights mu_i must be positive");
    const double norm = t.l.isZero(0.0) ? 0.0 : operator_norm(t.l).value;
    norms_.push_back(norm);
    s += t.mu * norm * norm;
    u_op_ += t.mu * (t.l.transpose() * t.l);
    u_ -= t.mu * (t.l.transpose() * t.r);
  }
  if (!(s > 0.0)) throw InvalidInput("sum_i mu_i ||L_i||^2 must be positive");
  s_bar_ = (1.0 + 1e-6) * s;
}

double InverseProblem::objective(const Vector& x) const {
  double v = f_.value(x);
  for (const auto& t : terms_) v += 0.5 * t.mu * (t.l * x - t.r).squaredNorm();
  return v;
}

Vector InverseProblem::forward_step(const Vector& x, double gamma) const {
  Vector g = Vector::Zero(dim_);
  for (const auto& t : terms_) g += t.mu * (t.l.transpose() * (t.r - t.l * x));
  return x + gamma * g;
}

ProblemReport problem_validate(const InverseProblem& p) {
  ProblemReport r;
  for (std::size_t i = 0; i < p.terms().size(); ++i) {
    const auto& t = p.terms()[i];
    double smin = 0.0;
    if (t.l.rows() >= t.l.cols()) {
      Eigen::JacobiSVD<Matrix> svd(t.l);
      const auto& sv = svd.singularValues();
      smin = sv.minCoeff();
      if (smin <= 1e-12 * std::max(1.0, sv.maxCoeff())) smin = 0.0;
    }
    r.sigma_min.push_back(smin);
    if (smin > 0.0) {
      const double beta = std::sqrt(t.mu) * smin;
      if (!r.beta || beta > *r.beta) {
        r.beta = beta;
        r.beta_term = i;
      }
    }
  }
  r.f_coercive = p.f().coercive();
  r.verdict = r.beta ? "bounded_below" : (r.f_coercive ? "coercive" : "unverified");
  return r;
}

std::string to_string(StepRegime r) { return r == StepRegime::classical ? "classical" : "variable_metric"; }

StepRegime regime_from_string(const std::string& s) {
  if (s == "variable_metric") return StepRegime::variable_metric;
  if (s == "classical") return StepRegime::classical;
  throw InvalidInput("unknown step regime '" + s + "'");
}

IterateTrace prox_landweber(const InverseProblem& p, const SummableSequence& eta, const RunConfig& cfg,
                            StepRegime regime) {
  return landweber_driver(p, eta, cfg, regime, nullptr, "prox_landweber");
}

IterateTrace basis_prox_landweber(const Matrix& q, std::vector<ScalarPiece> pieces, const Matrix& l,
                                  const Vector& r, const SummableSequence& eta, const RunConfig& cfg,
                                  StepRegime regime) {
  InverseProblem p(ProxFunction::separable_basis(q, std::move(pieces)), {DataTerm{l, r, 1.0}});
  return landweber_driver(p, eta, cfg, regime, &q, "basis_prox_landweber");
}

}  // namespace vmfejer
