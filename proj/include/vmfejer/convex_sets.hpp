#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Cholesky>

#include "vmfejer/metric_ops.hpp"

namespace vmfejer {

/// {x : <x, u> <= eta}
struct HalfSpace {
  Vector u;
  double eta = 0.0;
};
/// {x : <x, u> = eta}
struct Hyperplane {
  Vector u;
  double eta = 0.0;
};
/// {x : lo <= x <= hi}
struct Box {
  Vector lo;
  Vector hi;
};
/// {x : ||x - center|| <= radius}
struct Ball {
  Vector center;
  double radius = 1.0;
};
/// {x : A x = b} with A of full row rank.
struct AffineSubspace {
  Matrix a;
  Vector b;
};

/*
 * Nonempty closed convex set with an exact Euclidean projection and a
 * projection in the metric of any MetricOperator. Instances are immutable;
 * the factories check every invariant.
 */
class ConvexSet {
 public:
  using Shape = std::variant<HalfSpace, Hyperplane, Box, Ball, AffineSubspace>;

  static ConvexSet half_space(Vector u, double eta);
  static ConvexSet hyperplane(Vector u, double eta);
  static ConvexSet box(Vector lo, Vector hi);
  static ConvexSet ball(Vector center, double radius);
  static ConvexSet affine(Matrix a, Vector b);

  const Shape& shape() const noexcept { return shape_; }
  Eigen::Index dim() const noexcept { return dim_; }
  std::string kind() const;

  /// Exact membership up to an absolute tolerance on the defining constraints.
  bool contains(const Vector& x, double tol = 0.0) const;

  /// Solve (A A^T) y = r for affine subspaces (cached factorization).
  Vector affine_gram_solve(const Vector& r) const;

 private:
  explicit ConvexSet(Shape shape);

  Shape shape_;
  Eigen::Index dim_ = 0;
  Eigen::LLT<Matrix> gram_;  // A A^T, affine subspaces only
};

/// Euclidean projection argmin_{y in C} ||x - y||.
Vector project_euclid(const ConvexSet& c, const Vector& x);

/// Inner tolerance and iteration cap of the box/ball metric projection.
inline constexpr double kMetricProjectionTol = 1e-10;
inline constexpr std::size_t kMetricProjectionMaxIter = 10000;

/*
 * Projection argmin_{y in C} ||x - y||_W.
 *
 * Half-spaces, hyperplanes and affine subspaces use closed forms. Boxes run
 * Dykstra over the coordinate slabs in the W geometry; balls solve the
 * one-dimensional secular equation for the multiplier with safeguarded
 * Newton. Either iterative path throws NumericError when its residual
 * stays above tolerance.
 */
Vector project_metric(const ConvexSet& c, const MetricOperator& w, const Vector& x);

/// ||x - P_C x|| or ||x - P_C^W x||_W.
double distance(const ConvexSet& c, const Vector& x);
double distance(const ConvexSet& c, const Vector& x, const MetricOperator& w);

struct IntersectionProjection {
  Vector point;
  std::size_t sweeps = 0;
  double residual = 0.0;  // max distance of `point` to any of the sets
};

/*
 * Dykstra's algorithm for the projection onto the intersection of the sets.
 * A diagnostic oracle, not one of the feasibility algorithms; the
 * intersection must be nonempty. The metric defaults to the Euclidean one.
 */
IntersectionProjection intersection_project(std::span<const ConvexSet> sets, const Vector& x,
                                            double tol, const MetricOperator* w = nullptr,
                                            std::size_t max_sweeps = 200000);

/// Distance from x to the intersection, via intersection_project.
double intersection_distance(std::span<const ConvexSet> sets, const Vector& x,
                             double tol = 1e-12);

}  // namespace vmfejer
