#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "oracles.hpp"
#include "vmfejer/convex_sets.hpp"
#include "vmfejer/errors.hpp"

using namespace vmfejer;

namespace {

bool near(const Vector& a, const Vector& b, double tol) { return (a - b).norm() <= tol; }

Vector sample_in(const ConvexSet& c, std::mt19937_64& rng) {
  return project_euclid(c, 3.0 * oracle::gaussian(rng, c.dim()));
}

std::vector<ConvexSet> shapes(std::mt19937_64& rng, Eigen::Index n) {
  std::vector<ConvexSet> out;
  out.push_back(ConvexSet::half_space(oracle::gaussian(rng, n), 0.3));
  out.push_back(ConvexSet::hyperplane(oracle::gaussian(rng, n), -0.2));
  out.push_back(ConvexSet::box(-Vector::Ones(n), 0.5 * Vector::Ones(n)));
  out.push_back(ConvexSet::ball(oracle::gaussian(rng, n), 1.3));
  out.push_back(ConvexSet::affine(oracle::gaussian(rng, 2, n), oracle::gaussian(rng, 2)));
  return out;
}

}  // namespace

TEST_CASE("euclidean projections") {
  CHECK(near(project_euclid(ConvexSet::half_space(Vector{{1.0, 0.0}}, 1.0), Vector{{2.0, 0.0}}), Vector{{1.0, 0.0}}, 1e-15));
  CHECK(near(project_euclid(ConvexSet::ball(Vector::Zero(2), 1.0), Vector{{3.0, 4.0}}), Vector{{0.6, 0.8}}, 1e-15));
  CHECK(near(project_euclid(ConvexSet::box(Vector::Zero(2), Vector::Ones(2)), Vector{{-1.0, 0.5}}), Vector{{0.0, 0.5}}, 0.0));

  std::mt19937_64 rng(1);
  for (const auto& c : shapes(rng, 4)) {
    const Vector x = 4.0 * oracle::gaussian(rng, 4);
    const Vector p = project_euclid(c, x);
    CHECK(c.contains(p, 1e-9));
    CHECK(near(project_euclid(c, p), p, 1e-12));
  }
}

TEST_CASE("set invariants") {
  CHECK_THROWS_AS(ConvexSet::half_space(Vector::Zero(2), 1.0), InvalidInput);
  CHECK_THROWS_AS(ConvexSet::box(Vector::Ones(2), Vector::Zero(2)), InvalidInput);
  CHECK_THROWS_AS(ConvexSet::ball(Vector::Zero(2), 0.0), InvalidInput);
  CHECK_THROWS_AS(ConvexSet::affine(Matrix{{1.0, 1.0}, {2.0, 2.0}}, Vector::Zero(2)), InvalidInput);
  CHECK(ConvexSet::ball(Vector::Zero(2), 1.0).kind() == "ball");
}

TEST_CASE("metric projection closed forms") {
  const MetricOperator i2 = MetricOperator::identity(2);
  const auto h = ConvexSet::half_space(Vector{{1.0, 0.0}}, 1.0);
  CHECK(near(project_metric(h, i2, Vector{{2.0, 0.0}}), Vector{{1.0, 0.0}}, 1e-15));

  const MetricOperator w(Vector{{1.0, 4.0}}.asDiagonal().toDenseMatrix(), 1.0);
  const auto h2 = ConvexSet::half_space(Vector{{1.0, 1.0}}, 0.0);
  const Vector x{{1.0, 1.0}};
  const Vector p = project_metric(h2, w, x);
  const Vector qp = oracle::halfspace_qp(w.matrix(), x, {Vector{{1.0, 1.0}}}, {0.0});
  CHECK(near(p, qp, 1e-12));
  CHECK(near(p, Vector{{-0.6, 0.6}}, 1e-12));
  CHECK(distance(h2, x, w) == doctest::Approx(std::sqrt(3.2)).epsilon(1e-12));
  CHECK(distance(h, Vector{{3.0, 0.0}}) == doctest::Approx(2.0));
  CHECK(distance(h, Vector{{0.0, 5.0}}) == 0.0);

  std::mt19937_64 rng(2);
  for (int t = 0; t < 10; ++t) {
    const MetricOperator mw(oracle::spd(rng, 4, 0.3), 0.3);
    for (const auto& c : shapes(rng, 4)) {
      const Vector inside = sample_in(c, rng);
      CHECK(near(project_metric(c, mw, inside), inside, 1e-9));
    }
  }
}

TEST_CASE("metric projection properties") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 5; ++t) {
    const Matrix wm = oracle::spd(rng, 4, 0.3);
    const MetricOperator w(wm, 0.3);
    const Matrix r = w.whitener();
    for (const auto& c : shapes(rng, 4)) {
      const Vector x = 4.0 * oracle::gaussian(rng, 4), y = 4.0 * oracle::gaussian(rng, 4);
      const Vector px = project_metric(c, w, x), py = project_metric(c, w, y);
      CHECK(c.contains(px, 1e-8));
      // variational inequality
      double worst = -1e300;
      for (int k = 0; k < 50; ++k) {
        const Vector z = sample_in(c, rng);
        worst = std::max(worst, metric_inner(w, x - px, z - px));
      }
      CHECK(worst <= 1e-8);
      // nonexpansive in the W norm
      CHECK(metric_norm(w, px - py) <= metric_norm(w, x - y) * (1.0 + 1e-10));

      // whitened consistency for the closed-form shapes
      if (c.kind() == "halfspace" || c.kind() == "hyperplane") {
        const auto& u = std::holds_alternative<HalfSpace>(c.shape()) ? std::get<HalfSpace>(c.shape()).u
                                                                       : std::get<Hyperplane>(c.shape()).u;
        const double eta = std::holds_alternative<HalfSpace>(c.shape()) ? std::get<HalfSpace>(c.shape()).eta
                                                                          : std::get<Hyperplane>(c.shape()).eta;
        // {Rx : <x,u> <= eta} = {y : <y, R^{-T} u> <= eta}
        const Vector ru = r.transpose().triangularView<Eigen::Lower>().solve(u);
        const ConvexSet rc = c.kind() == "halfspace" ? ConvexSet::half_space(ru, eta) : ConvexSet::hyperplane(ru, eta);
        const Vector alt = r.triangularView<Eigen::Upper>().solve(project_euclid(rc, r * x));
        CHECK(near(px, alt, 1e-9));
      }
      if (c.kind() == "affine") {
        const auto& a = std::get<AffineSubspace>(c.shape());
        const Matrix ar = r.transpose().triangularView<Eigen::Lower>().solve(a.a.transpose()).transpose();
        const Vector alt = r.triangularView<Eigen::Upper>().solve(project_euclid(ConvexSet::affine(ar, a.b), r * x));
        CHECK(near(px, alt, 1e-9));
      }
    }
  }
}

TEST_CASE("metric projection of half-spaces matches the QP oracle") {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 30; ++t) {
    const Matrix wm = oracle::spd(rng, 5, 0.2);
    const MetricOperator w(wm, 0.2);
    const Vector u = oracle::gaussian(rng, 5), x = 3.0 * oracle::gaussian(rng, 5);
    const double eta = 0.1;
    CHECK(near(project_metric(ConvexSet::half_space(u, eta), w, x), oracle::halfspace_qp(wm, x, {u}, {eta}), 1e-9));
  }
}

TEST_CASE("intersection distance") {
  std::vector<ConvexSet> single{ConvexSet::half_space(Vector{{1.0, 2.0}}, 0.5)};
  const Vector x{{3.0, 1.0}};
  CHECK(intersection_distance(single, x) == doctest::Approx(distance(single[0], x)).epsilon(1e-10));

  std::vector<ConvexSet> quadrant{ConvexSet::half_space(Vector{{1.0, 0.0}}, 0.0),
                                  ConvexSet::half_space(Vector{{0.0, 1.0}}, 0.0)};
  CHECK(intersection_distance(quadrant, Vector{{1.0, 1.0}}) == doctest::Approx(std::sqrt(2.0)).epsilon(1e-10));

  std::mt19937_64 rng(8);
  for (int t = 0; t < 20; ++t) {
    std::vector<Vector> us;
    std::vector<double> etas;
    std::vector<ConvexSet> sets;
    for (int i = 0; i < 3; ++i) {
      us.push_back(oracle::gaussian(rng, 4));
      etas.push_back(0.2);
      sets.push_back(ConvexSet::half_space(us.back(), etas.back()));
    }
    const Vector y = 5.0 * oracle::gaussian(rng, 4);
    const Vector qp = oracle::halfspace_qp(Matrix::Identity(4, 4), y, us, etas);
    CHECK(std::abs(intersection_distance(sets, y) - (y - qp).norm()) <= 1e-6);
    const auto ip = intersection_project(sets, y, 1e-12);
    CHECK(near(ip.point, qp, 1e-6));
  }
}
