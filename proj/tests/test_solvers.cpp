#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "vmfejer/errors.hpp"
#include "vmfejer/solvers.hpp"

using namespace vmfejer;

namespace {

std::shared_ptr<const MetricSchedule> identity(Eigen::Index n) {
  return std::make_shared<const MetricSchedule>(MetricSchedule::identity(n));
}

std::shared_ptr<const MetricSchedule> rank_one(std::mt19937_64& rng, Eigen::Index n) {
  return std::make_shared<const MetricSchedule>(RankOneFamily{Matrix::Identity(n, n), oracle::unit(rng, n), 1.0, 0.5},
                                                1.0, 2.0, SummableSequence::zero());
}

RunConfig config(const Vector& x0, double lambda, std::size_t max_iter, double tol = 1e-12) {
  RunConfig c;
  c.x0 = x0;
  c.lambda = StepSequence::constant(lambda);
  c.max_iter = max_iter;
  c.tol = tol;
  return c;
}

struct Polyhedron {
  std::vector<Vector> us;
  std::vector<double> etas;
  std::vector<ConvexSet> sets;
  Vector interior;
};

Polyhedron polyhedron(std::mt19937_64& rng, Eigen::Index n, int m) {
  Polyhedron p;
  p.interior = oracle::gaussian(rng, n);
  for (int i = 0; i < m; ++i) {
    p.us.push_back(oracle::unit(rng, n));
    p.etas.push_back(p.us.back().dot(p.interior) + 0.5);
    p.sets.push_back(ConvexSet::half_space(p.us.back(), p.etas.back()));
  }
  return p;
}

}  // namespace

TEST_CASE("control validation") {
  const auto p3 = ControlSequence::periodic(3);
  CHECK(p3(4) == 1);
  CHECK(control_validate(p3, 12).valid);

  const std::vector<std::size_t> pat{0, 0, 0, 1};
  CHECK(control_validate(ControlSequence::pattern(pat, {2, 4}), 20).valid);
  const auto bad = control_validate(ControlSequence::pattern(pat, {2, 3}), 20);
  CHECK_FALSE(bad.valid);
  CHECK(*bad.index == 1);
  CHECK_THROWS_AS(control_validate(p3, 2), PreconditionError);

  // round-robin shuffle: each block of m is a permutation; window 2m - 1 always suffices
  std::mt19937_64 rng(1);
  std::vector<std::size_t> seq;
  for (int block = 0; block < 6; ++block) {
    std::vector<std::size_t> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng);
    seq.insert(seq.end(), perm.begin(), perm.end());
  }
  const auto shuffled = ControlSequence::pattern(seq, {7, 7, 7, 7});
  // direct window scan
  bool scan = true;
  for (std::size_t n = 0; n + 7 <= 48; ++n)
    for (std::size_t j = 0; j < 4; ++j) {
      bool seen = false;
      for (std::size_t k = n; k < n + 7; ++k) seen = seen || shuffled(k) == j;
      scan = scan && seen;
    }
  CHECK(scan);
  CHECK(control_validate(shuffled, 48).valid);
}

TEST_CASE("config and hypothesis checks") {
  RunConfig c;
  c.lambda = StepSequence::constant(2.5);
  CHECK_THROWS_AS(config_validate(c, c.epsilon, 2.0 - c.epsilon), HypothesisError);
  c.lambda = StepSequence::constant(1.0);
  c.epsilon = 1.5;
  CHECK_THROWS_AS(config_validate(c, 0.1, 1.9), HypothesisError);
  c.epsilon = 0.05;
  c.noise = ErrorInjection{1.0, 1.0};
  CHECK_THROWS_AS(config_validate(c, c.epsilon, 1.95), HypothesisError);

  const std::vector<ConvexSet> sets{ConvexSet::half_space(Vector{{1.0, 0.0}}, 0.0)};
  auto grows = std::make_shared<const MetricSchedule>(
      ListFamily{{Matrix::Identity(2, 2), 2.0 * Matrix::Identity(2, 2)}}, 1.0, 2.0, SummableSequence::zero());
  try {
    periodic_projections(sets, grows, config(Vector{{1.0, 1.0}}, 1.0, 10));
    FAIL("expected a hypothesis error");
  } catch (const HypothesisError& e) {
    CHECK(e.condition().find("W_{n+1}") != std::string::npos);
    CHECK(std::string(e.what()).find("n = 0") != std::string::npos);
  }
}

TEST_CASE("feasibility with one projector") {
  const auto ball = ConvexSet::ball(Vector::Zero(3), 1.0);
  const std::vector<TFactory> fs{[ball](std::size_t, const MetricOperator& w) { return TOperator::projector(ball, w); }};
  const Vector x0{{3.0, 0.0, 4.0}};
  const auto t = feasibility_solve(fs, identity(3), ControlSequence::periodic(1), config(x0, 1.0, 20));
  REQUIRE(t.size() >= 2);
  CHECK((t.records[1].x - Vector{{0.6, 0.0, 0.8}}).norm() <= 1e-15);
  for (std::size_t n = 1; n < t.size(); ++n) CHECK(t.records[n].x == t.records[1].x);
  CHECK(t.meta.stop_reason == "tolerance");
}

TEST_CASE("feasibility rejects operators outside the class") {
  const std::vector<TFactory> fs{[](std::size_t, const MetricOperator&) {
    return TOperator([](const Vector& x) { return Vector(-x); }, [](const Vector& x) { return Vector(Vector::Zero(x.size())); },
                     "negation");
  }};
  CHECK_THROWS_AS(feasibility_solve(fs, identity(2), ControlSequence::periodic(1), config(Vector::Ones(2), 1.0, 5)),
                  BadOperator);
}

TEST_CASE("periodic projections") {
  std::mt19937_64 rng(2);
  // nested balls, x0 in the smaller one
  const std::vector<ConvexSet> balls{ConvexSet::ball(Vector::Zero(3), 1.0), ConvexSet::ball(Vector::Zero(3), 2.0)};
  const auto nested = periodic_projections(balls, identity(3), config(Vector{{0.1, 0.2, 0.3}}, 1.0, 10));
  for (const auto& r : nested.records) CHECK(r.x == Vector{{0.1, 0.2, 0.3}});

  // three half-spaces in R^5 with a variable metric
  const auto p = polyhedron(rng, 5, 3);
  const auto sched = rank_one(rng, 5);
  const Vector x0 = p.interior + 10.0 * oracle::gaussian(rng, 5);
  const auto t = periodic_projections(p.sets, sched, config(x0, 1.5, 10000));
  CHECK(intersection_distance(p.sets, t.records.back().x) <= 1e-8);
  CHECK(t.meta.solver == "periodic_projections");

  // same trace as the generic driver with projector factories
  std::vector<TFactory> fs;
  for (const auto& c : p.sets) fs.emplace_back([c](std::size_t, const MetricOperator& w) { return TOperator::projector(c, w); });
  const auto g = feasibility_solve(fs, sched, ControlSequence::periodic(3), config(x0, 1.5, 10000), p.sets);
  REQUIRE(g.size() == t.size());
  for (std::size_t n = 0; n < t.size(); ++n) CHECK(g.records[n].x == t.records[n].x);

  // with injected noise the trace stays certifiable
  RunConfig noisy = config(x0, 1.5, 600, 0.0);
  noisy.noise = ErrorInjection{1.0, 0.5};
  noisy.seed = 9;
  const auto tn = periodic_projections(p.sets, sched, noisy);
  CHECK(tn.size() == 601);
  const std::vector<Vector> zs{p.interior};
  const auto cert = check_quasi_fejer(tn, zs, SummableSequence::zero(), Phi::absolute, noise_envelope(tn, 2.0));
  CHECK(cert.pass);

  // wedge with W = I, lambda = 1: classical alternating projections, monotone residual decay
  const std::vector<ConvexSet> wedge{ConvexSet::half_space(Vector{{1.0, -0.2}}, 0.0),
                                     ConvexSet::half_space(Vector{{-1.0, -0.2}}, 0.0)};
  const auto w = periodic_projections(wedge, identity(2), config(Vector{{0.0, -10.0}}, 1.0, 2000));
  double prev = 1e300;
  for (const auto& r : w.records) {
    const double d = intersection_distance(wedge, r.x);
    CHECK(d <= prev + 1e-12);
    prev = d;
  }
  CHECK(prev <= 1e-8);
}

TEST_CASE("fixed points are stationary") {
  std::mt19937_64 rng(3);
  const auto p = polyhedron(rng, 4, 3);
  const auto t = periodic_projections(p.sets, rank_one(rng, 4), config(p.interior, 1.2, 20, 0.0));
  for (const auto& r : t.records) CHECK((r.x - p.interior).norm() <= 1e-12);
}

TEST_CASE("linear inequalities") {
  const std::vector<Vector> one{Vector{{1.0, 0.0}}};
  const std::vector<double> eta1{1.0};
  const auto sat = linear_inequalities(one, eta1, identity(2), config(Vector{{0.5, 3.0}}, 1.0, 10));
  for (const auto& r : sat.records) CHECK(r.x == Vector{{0.5, 3.0}});

  const Matrix wm = Vector{{1.0, 4.0}}.asDiagonal();
  auto ws = std::make_shared<const MetricSchedule>(ConstantFamily{wm}, 1.0, 4.0, SummableSequence::zero());
  const auto t = linear_inequalities(one, eta1, ws, config(Vector{{2.0, 0.0}}, 1.5, 10));
  const Vector p = project_metric(ConvexSet::half_space(one[0], 1.0), MetricOperator(wm, 1.0), Vector{{2.0, 0.0}});
  CHECK((t.records[1].x - (Vector{{2.0, 0.0}} + 1.5 * (p - Vector{{2.0, 0.0}}))).norm() <= 1e-15);

  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 5; ++trial) {
    const auto poly = polyhedron(rng, 4, 3);
    const auto sched = rank_one(rng, 4);
    const Vector x0 = poly.interior + 8.0 * oracle::gaussian(rng, 4);
    const auto li = linear_inequalities(poly.us, poly.etas, sched, config(x0, 1.3, 10000));
    const auto pp = periodic_projections(poly.sets, sched, config(x0, 1.3, 10000));
    CHECK(intersection_distance(poly.sets, li.records.back().x) <= 1e-8);
    REQUIRE(li.size() == pp.size());
    double gap = 0.0;
    for (std::size_t n = 0; n < li.size(); ++n) gap = std::max(gap, (li.records[n].x - pp.records[n].x).norm());
    CHECK(gap <= 1e-12);
  }
  RunConfig noisy = config(Vector{{2.0, 0.0}}, 1.0, 10);
  noisy.noise = ErrorInjection{1.0, 0.5};
  CHECK_THROWS_AS(linear_inequalities(one, eta1, identity(2), noisy), InvalidInput);
}

TEST_CASE("proximal point") {
  const Vector c{{1.0, -2.0, 0.5}};
  const auto quad = MonotoneOperator::affine(Matrix::Identity(3, 3), -c);
  RunConfig cfg = config(Vector::Zero(3), 1.0, 60, 0.0);
  cfg.gamma = StepSequence{{0.5, 1.0, 2.0}};
  const auto t = proximal_point(quad, identity(3), cfg);
  Vector x = Vector::Zero(3);
  for (std::size_t n = 0; n + 1 < t.size(); ++n) {
    const double g = cfg.gamma(n);
    x = x + (c - x) * g / (1.0 + g);
    CHECK((t.records[n + 1].x - x).norm() <= 1e-12);
    CHECK(t.records[n].v_norm.has_value());
  }
  CHECK((t.records.back().x - c).norm() <= 1e-12);

  const auto strong = MonotoneOperator::shifted_sum(MonotoneOperator::subdifferential(ProxFunction::l1(0.7)),
                                                    Matrix::Identity(3, 3), -c);
  const Vector zero = oracle::soft(c, 0.7);
  const auto s = proximal_point(strong, identity(3), config(Vector{{4.0, 4.0, 4.0}}, 1.0, 10000));
  CHECK((s.records.back().x - zero).norm() <= 1e-8);
  CHECK((s.records.back().x - s.records[s.size() - 2].x).norm() <= 1e-8);

  auto scaled = std::make_shared<const MetricSchedule>(ScaledFamily{Matrix::Identity(3, 3), 1.0, 0.5}, 1.0, 2.0,
                                                       SummableSequence::zero());
  const auto v = proximal_point(strong, scaled, config(Vector{{4.0, 4.0, 4.0}}, 1.0, 10000));
  CHECK((v.records.back().x - zero).norm() <= 1e-6);

  RunConfig small = config(Vector::Zero(3), 1.0, 10);
  small.gamma = StepSequence::constant(0.01);
  CHECK_THROWS_AS(proximal_point(quad, identity(3), small), HypothesisError);
}

TEST_CASE("gamma bands") {
  const double eps = 0.05, s = 4.0;
  const auto eta = SummableSequence::geometric(0.5, 0.5);
  const std::vector<double> constant{(1.0 - eps) / s};
  CHECK(gamma_schedule_validate(constant, eta, eps, s).valid());
  const std::vector<double> rising{0.1, 0.12, 0.15, 0.2};
  CHECK(gamma_schedule_validate(rising, eta, eps, s).valid());

  // eta_2 / S = 0.125 / 4; a drop of 0.1 at index 2 breaks the coupling there only
  const std::vector<double> drop{0.2, 0.2, 0.2, 0.1, 0.1};
  const auto rep = gamma_schedule_validate(drop, eta, eps, s);
  REQUIRE_FALSE(rep.valid());
  CHECK(rep.violations.size() == 1);
  CHECK(rep.violations[0].n == 2);
  CHECK(rep.violations[0].condition == "(1 + eta_n) gamma_n - gamma_{n+1} <= eta_n/S");

  const std::vector<double> high{0.3};
  CHECK_FALSE(gamma_schedule_validate(high, eta, eps, s).valid());
  CHECK(gamma_classical_validate(high, eps, s).valid());
  const std::vector<double> low{0.01};
  CHECK_FALSE(gamma_classical_validate(low, eps, s).valid());
}

TEST_CASE("inverse problem plumbing") {
  std::mt19937_64 rng(5);
  const Matrix l = oracle::gaussian(rng, 6, 4);
  const Vector r = oracle::gaussian(rng, 6);
  const InverseProblem ip(ProxFunction::l1(0.2), {DataTerm{l, r, 2.0}});
  CHECK(ip.s_bar() >= 2.0 * std::pow(oracle::svd_norm(l), 2) * (1.0 + 1e-7));
  CHECK(ip.s_bar() <= 2.0 * std::pow(oracle::svd_norm(l), 2) * (1.0 + 1e-5));
  CHECK((ip.u_op() - 2.0 * l.transpose() * l).norm() <= 1e-12);
  CHECK((ip.u() + 2.0 * l.transpose() * r).norm() <= 1e-12);
  const Vector x = oracle::gaussian(rng, 4);
  CHECK(ip.objective(x) == doctest::Approx(0.2 * x.lpNorm<1>() + (l * x - r).squaredNorm()));
  CHECK((ip.forward_step(x, 0.1) - (x + 0.2 * l.transpose() * (r - l * x))).norm() <= 1e-12);
  CHECK_THROWS_AS(InverseProblem(ProxFunction::l1(0.2), {}), InvalidInput);

  const auto bb = problem_validate(InverseProblem(ProxFunction::squared_norm(0.0), {DataTerm{Matrix::Identity(3, 3), Vector::Zero(3), 4.0}}));
  CHECK(bb.verdict == "bounded_below");
  CHECK(*bb.beta == doctest::Approx(2.0));
  const auto wide = problem_validate(InverseProblem(ProxFunction::squared_norm(0.0), {DataTerm{oracle::gaussian(rng, 5, 10), Vector::Zero(5), 1.0}}));
  CHECK(wide.verdict == "unverified");
  const auto co = problem_validate(InverseProblem(ProxFunction::l1(0.5), {DataTerm{oracle::gaussian(rng, 5, 10), Vector::Zero(5), 1.0}}));
  CHECK(co.verdict == "coercive");
}

TEST_CASE("proximal Landweber") {
  std::mt19937_64 rng(6);
  const Matrix l = oracle::gaussian(rng, 8, 4) / std::sqrt(8.0);
  const Vector r = oracle::gaussian(rng, 8);
  RunConfig cfg;
  cfg.max_iter = 100000;
  cfg.tol = 1e-14;

  // plain Landweber reaches the least-squares solution
  const InverseProblem plain(ProxFunction::squared_norm(0.0), {DataTerm{l, r, 1.0}});
  cfg.gamma = StepSequence::constant((1.0 - cfg.epsilon) / plain.s_bar());
  const auto t = prox_landweber(plain, SummableSequence::zero(), cfg);
  const Vector xl = t.records.back().x;
  CHECK((l.transpose() * (l * xl - r)).norm() <= 1e-8);
  CHECK((xl - oracle::normal_equations(l, r)).norm() <= 1e-7);
  CHECK(t.records.front().objective.has_value());

  // induced metric family is a valid decreasing schedule
  CHECK(schedule_validate(*t.schedule, std::min<std::size_t>(t.size(), 200)).valid());
  CHECK(std::holds_alternative<InducedFamily>(t.schedule->family()));

  // Tikhonov closed form
  const InverseProblem tik(ProxFunction::squared_norm(1.0), {DataTerm{l, r, 1.0}});
  cfg.gamma = StepSequence::constant((1.0 - cfg.epsilon) / tik.s_bar());
  const auto tt = prox_landweber(tik, SummableSequence::zero(), cfg);
  const Vector closed = (l.transpose() * l + Matrix::Identity(4, 4)).ldlt().solve(l.transpose() * r);
  CHECK((tt.records.back().x - closed).norm() <= 1e-8);

  // gamma band violations are refused with the condition named
  RunConfig bad = cfg;
  bad.gamma = StepSequence{{0.5, 0.5, 0.05}};
  const InverseProblem small(ProxFunction::l1(0.1), {DataTerm{l / 2.0, r, 1.0}});
  try {
    prox_landweber(small, SummableSequence::zero(), bad);
    FAIL("expected a hypothesis error");
  } catch (const HypothesisError& e) {
    CHECK(e.condition() == "(1 + eta_n) gamma_n - gamma_{n+1} <= eta_n/S");
  }

  // classical regime accepts longer steps and is certified on the identity
  RunConfig cl = cfg;
  cl.gamma = StepSequence::constant(1.5 / tik.s_bar());
  const auto tc = prox_landweber(tik, SummableSequence::zero(), cl, StepRegime::classical);
  CHECK((tc.records.back().x - closed).norm() <= 1e-8);
  CHECK(std::holds_alternative<ConstantFamily>(tc.schedule->family()));
}

TEST_CASE("prox-Landweber step equals the relaxed resolvent step") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 10; ++trial) {
    const Matrix l = oracle::gaussian(rng, 5, 6) / 3.0;
    const Vector r = oracle::gaussian(rng, 5);
    const InverseProblem ip(ProxFunction::l1(0.3), {DataTerm{l, r, 1.0}});
    RunConfig cfg;
    cfg.max_iter = 30;
    cfg.tol = 0.0;
    cfg.lambda = StepSequence::constant(1.3);
    cfg.gamma = StepSequence::constant((1.0 - cfg.epsilon) / ip.s_bar());
    cfg.x0 = oracle::gaussian(rng, 6);
    const auto t = prox_landweber(ip, SummableSequence::zero(), cfg);
    const auto b = MonotoneOperator::shifted_sum(MonotoneOperator::subdifferential(ip.f()), ip.u_op(), ip.u());
    for (std::size_t n = 0; n + 1 < t.size(); ++n) {
      const double g = *t.records[n].gamma;
      const Vector& x = t.records[n].x;
      const MetricOperator w(Matrix::Identity(6, 6) - g * ip.u_op(), cfg.epsilon);
      const Vector j = resolvent_metric(b, w, g, x, ResolventPath::generic);
      CHECK((t.records[n + 1].x - (x + 1.3 * (j - x))).norm() <= 1e-9);
    }
  }
}

TEST_CASE("basis variant") {
  std::mt19937_64 rng(8);
  const Matrix l = oracle::gaussian(rng, 6, 5) / 3.0;
  const Vector r = oracle::gaussian(rng, 6);
  RunConfig cfg;
  cfg.max_iter = 400;
  cfg.tol = 0.0;
  cfg.gamma = StepSequence::constant(0.5);
  cfg.noise = ErrorInjection{0.5, 0.5};
  cfg.seed = 3;
  const Matrix id = Matrix::Identity(5, 5);

  // zero pieces: plain Landweber
  const auto z = basis_prox_landweber(id, std::vector<ScalarPiece>(5, ZeroPiece{}), l, r, SummableSequence::zero(), cfg);
  const auto pl = prox_landweber(InverseProblem(ProxFunction::squared_norm(0.0), {DataTerm{l, r, 1.0}}),
                                 SummableSequence::zero(), cfg);
  double gap = 0.0;
  for (std::size_t n = 0; n < z.size(); ++n) gap = std::max(gap, (z.records[n].x - pl.records[n].x).norm());
  CHECK(gap <= 1e-12);

  // soft thresholds with Q = I: same trace as the l1 solver, noise included
  const auto b = basis_prox_landweber(id, std::vector<ScalarPiece>(5, AbsPiece{0.2}), l, r, SummableSequence::zero(), cfg);
  const auto a = prox_landweber(InverseProblem(ProxFunction::l1(0.2), {DataTerm{l, r, 1.0}}), SummableSequence::zero(), cfg);
  REQUIRE(a.size() == b.size());
  gap = 0.0;
  for (std::size_t n = 0; n < a.size(); ++n) gap = std::max(gap, (a.records[n].x - b.records[n].x).norm());
  CHECK(gap <= 1e-12);

  // rotated frame: solving with (Q, L Q^T) gives the rotated iterates and the same objective
  cfg.noise = ErrorInjection{};
  const Matrix q = oracle::orthogonal(rng, 5);
  const auto rot = basis_prox_landweber(q, std::vector<ScalarPiece>(5, AbsPiece{0.2}), l * q.transpose(), r,
                                        SummableSequence::zero(), cfg);
  const auto flat = basis_prox_landweber(id, std::vector<ScalarPiece>(5, AbsPiece{0.2}), l, r, SummableSequence::zero(), cfg);
  CHECK(std::abs(*rot.records.back().objective - *flat.records.back().objective) <= 1e-8);
  CHECK((q.transpose() * rot.records.back().x - flat.records.back().x).norm() <= 1e-8);
}
