#include "vmfejer/cli_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>
#include <string_view>

#include "vmfejer/errors.hpp"

namespace vmfejer::io {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

[[noreturn]] void fail(const std::string& where, const std::string& what) {
  throw InvalidInput("schema: " + where + ": " + what);
}

void check_keys(const Json& j, const std::string& where, std::initializer_list<std::string_view> allowed) {
  if (!j.is_object()) fail(where, "expected an object");
  for (const auto& item : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
      fail(where, "unknown field '" + item.key() + "'");
    }
  }
}

const Json& field(const Json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) fail(where, std::string("missing field '") + key + "'");
  return *it;
}

double number(const Json& j, const std::string& where) {
  if (!j.is_number()) fail(where, "expected a number");
  return j.get<double>();
}

double number_field(const Json& j, const char* key, const std::string& where) {
  return number(field(j, key, where), where + "." + key);
}

double number_or(const Json& j, const char* key, double fallback, const std::string& where) {
  return j.contains(key) ? number(j.at(key), where + "." + key) : fallback;
}

std::uint64_t unsigned_value(const Json& j, const std::string& where) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
  fail(where, "expected a nonnegative integer");
}

std::string string_field(const Json& j, const char* key, const std::string& where) {
  const Json& v = field(j, key, where);
  if (!v.is_string()) fail(where + "." + key, "expected a string");
  return v.get<std::string>();
}

// Non-finite doubles have no JSON spelling; they are written as null.
Json num(double v) { return std::isfinite(v) ? Json(v) : Json(nullptr); }

Json doubles(const std::vector<double>& v) {
  Json a = Json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

std::vector<double> doubles_from_json(const Json& j, const std::string& where) {
  if (!j.is_array()) fail(where, "expected an array of numbers");
  std::vector<double> out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], where + "[" + std::to_string(i) + "]"));
  return out;
}

void require_size(const Vector& v, Eigen::Index dim, const std::string& where) {
  if (v.size() != dim) {
    fail(where, "expected length " + std::to_string(dim) + ", got " + std::to_string(v.size()));
  }
}

Vector sized_vector(const Json& j, Eigen::Index dim, const std::string& where) {
  Vector v = vector_from_json(j, where);
  require_size(v, dim, where);
  return v;
}

Matrix square_matrix(const Json& j, Eigen::Index dim, const std::string& where) {
  Matrix m = matrix_from_json(j, where);
  if (m.rows() != dim || m.cols() != dim) fail(where, "expected a " + std::to_string(dim) + "x" + std::to_string(dim) + " matrix");
  return m;
}

Json step_to_json(const StepSequence& s) {
  return s.values.size() == 1 ? Json(s.values.front()) : Json(s.values);
}

StepSequence step_from_json(const Json& j, const std::string& where) {
  StepSequence s;
  if (j.is_number()) {
    s.values = {j.get<double>()};
  } else {
    s.values = doubles_from_json(j, where);
    if (s.values.empty()) fail(where, "step list is empty");
  }
  return s;
}

Json piece_to_json(const ScalarPiece& p) {
  return std::visit(overloaded{[](const ZeroPiece&) { return Json{{"type", "zero"}}; },
                               [](const AbsPiece& a) { return Json{{"type", "abs"}, {"weight", a.weight}}; },
                               [](const QuadraticPiece& q) { return Json{{"type", "quadratic"}, {"weight", q.weight}}; },
                               [](const IntervalPiece& i) { return Json{{"type", "interval"}, {"lo", i.lo}, {"hi", i.hi}}; },
                               [](const SmoothPiece&) -> Json {
                                 throw InvalidInput("smooth scalar pieces cannot be serialized");
                               }},
                    p);
}

ScalarPiece piece_from_json(const Json& j, const std::string& where) {
  check_keys(j, where, {"type", "weight", "lo", "hi"});
  const std::string type = string_field(j, "type", where);
  if (type == "zero") {
    check_keys(j, where, {"type"});
    return ZeroPiece{};
  }
  if (type == "abs" || type == "quadratic") {
    check_keys(j, where, {"type", "weight"});
    const double w = number_field(j, "weight", where);
    if (type == "abs") return AbsPiece{w};
    return QuadraticPiece{w};
  }
  if (type == "interval") {
    check_keys(j, where, {"type", "lo", "hi"});
    return IntervalPiece{number_field(j, "lo", where), number_field(j, "hi", where)};
  }
  fail(where, "unknown piece type '" + type + "'");
}

std::string hex64(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool is_feasibility_kind(const std::string& kind) {
  return kind == "feasibility" || kind == "linear_inequalities";
}

std::vector<ConvexSet> logged_sets(const ProblemFile& p) {
  if (p.kind == "feasibility") return p.sets;
  std::vector<ConvexSet> sets;
  if (p.kind == "linear_inequalities") {
    for (std::size_t i = 0; i < p.us.size(); ++i) sets.push_back(ConvexSet::half_space(p.us[i], p.etas[i]));
  }
  return sets;
}

}  // namespace

// ---------------------------------------------------------------------------
// Value codecs.

Json vector_to_json(const Vector& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

Vector vector_from_json(const Json& j, const std::string& where) {
  const auto d = doubles_from_json(j, where);
  return Eigen::Map<const Vector>(d.data(), static_cast<Eigen::Index>(d.size()));
}

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vector_to_json(m.row(i).transpose()));
  return rows;
}

Matrix matrix_from_json(const Json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) fail(where, "expected a nonempty array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  Matrix m;
  for (Eigen::Index i = 0; i < rows; ++i) {
    const auto row = doubles_from_json(j[static_cast<std::size_t>(i)], where + "[" + std::to_string(i) + "]");
    if (i == 0) {
      if (row.empty()) fail(where, "rows must be nonempty");
      m.resize(rows, static_cast<Eigen::Index>(row.size()));
    } else if (static_cast<Eigen::Index>(row.size()) != m.cols()) {
      fail(where, "rows have different lengths");
    }
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(i, c) = row[static_cast<std::size_t>(c)];
  }
  return m;
}

Json sequence_to_json(const SummableSequence& s) {
  return std::visit(
      overloaded{[](const GeometricSequence& g) { return Json{{"type", "geometric"}, {"c", g.c}, {"q", g.q}}; },
                 [](const InverseSquareSequence& q) { return Json{{"type", "inverse_square"}, {"c", q.c}}; },
                 [](const ListSequence& l) {
                   return l.values.empty() ? Json{{"type", "zero"}} : Json{{"type", "list"}, {"values", l.values}};
                 }},
      s.form());
}

SummableSequence sequence_from_json(const Json& j, const std::string& where) {
  check_keys(j, where, {"type", "c", "q", "values"});
  const std::string type = string_field(j, "type", where);
  if (type == "zero") {
    check_keys(j, where, {"type"});
    return SummableSequence::zero();
  }
  if (type == "geometric") {
    check_keys(j, where, {"type", "c", "q"});
    return SummableSequence::geometric(number_field(j, "c", where), number_field(j, "q", where));
  }
  if (type == "inverse_square") {
    check_keys(j, where, {"type", "c"});
    return SummableSequence::inverse_square(number_field(j, "c", where));
  }
  if (type == "list") {
    check_keys(j, where, {"type", "values"});
    return SummableSequence::list(doubles_from_json(field(j, "values", where), where + ".values"));
  }
  fail(where, "unknown sequence type '" + type + "'");
}

Json set_to_json(const ConvexSet& c) {
  return std::visit(
      overloaded{
          [](const HalfSpace& h) { return Json{{"kind", "halfspace"}, {"u", vector_to_json(h.u)}, {"eta", h.eta}}; },
          [](const Hyperplane& h) { return Json{{"kind", "hyperplane"}, {"u", vector_to_json(h.u)}, {"eta", h.eta}}; },
          [](const Box& b) { return Json{{"kind", "box"}, {"lo", vector_to_json(b.lo)}, {"hi", vector_to_json(b.hi)}}; },
          [](const Ball& b) {
            return Json{{"kind", "ball"}, {"center", vector_to_json(b.center)}, {"radius", b.radius}};
          },
          [](const AffineSubspace& a) {
            return Json{{"kind", "affine"}, {"A", matrix_to_json(a.a)}, {"b", vector_to_json(a.b)}};
          }},
      c.shape());
}

ConvexSet set_from_json(const Json& j, const std::string& where) {
  check_keys(j, where, {"kind", "u", "eta", "lo", "hi", "center", "radius", "A", "b"});
  const std::string kind = string_field(j, "kind", where);
  if (kind == "halfspace" || kind == "hyperplane") {
    check_keys(j, where, {"kind", "u", "eta"});
    Vector u = vector_from_json(field(j, "u", where), where + ".u");
    const double eta = number_field(j, "eta", where);
    return kind == "halfspace" ? ConvexSet::half_space(std::move(u), eta) : ConvexSet::hyperplane(std::move(u), eta);
  }
  if (kind == "box") {
    check_keys(j, where, {"kind", "lo", "hi"});
    return ConvexSet::box(vector_from_json(field(j, "lo", where), where + ".lo"),
                          vector_from_json(field(j, "hi", where), where + ".hi"));
  }
  if (kind == "ball") {
    check_keys(j, where, {"kind", "center", "radius"});
    return ConvexSet::ball(vector_from_json(field(j, "center", where), where + ".center"),
                           number_field(j, "radius", where));
  }
  if (kind == "affine") {
    check_keys(j, where, {"kind", "A", "b"});
    return ConvexSet::affine(matrix_from_json(field(j, "A", where), where + ".A"),
                             vector_from_json(field(j, "b", where), where + ".b"));
  }
  fail(where, "unknown set kind '" + kind + "'");
}

Json schedule_to_json(const MetricSchedule& s) {
  Json j = std::visit(
      overloaded{[](const ConstantFamily& f) { return Json{{"family", "constant"}, {"W", matrix_to_json(f.w)}}; },
                 [](const ScaledFamily& f) {
                   return Json{{"family", "scaled"}, {"W0", matrix_to_json(f.w0)}, {"c", f.c}, {"q", f.q}};
                 },
                 [](const RankOneFamily& f) {
                   return Json{{"family", "rank_one"}, {"W0", matrix_to_json(f.w0)}, {"v", vector_to_json(f.v)},
                               {"c", f.c}, {"q", f.q}};
                 },
                 [](const ListFamily& f) {
                   Json ms = Json::array();
                   for (const auto& m : f.matrices) ms.push_back(matrix_to_json(m));
                   return Json{{"family", "list"}, {"matrices", ms}};
                 },
                 [](const InducedFamily& f) {
                   return Json{{"family", "induced"}, {"U", matrix_to_json(f.u)}, {"gammas", f.gammas}};
                 }},
      s.family());
  j["alpha"] = s.alpha();
  j["mu"] = s.mu();
  j["eta"] = sequence_to_json(s.eta());
  if (s.has_nu()) j["nu"] = sequence_to_json(s.nu());
  j["direction"] = to_string(s.direction());
  return j;
}

MetricSchedule schedule_from_json(const Json& j, Eigen::Index dim, const std::string& where) {
  check_keys(j, where,
             {"family", "W", "W0", "v", "c", "q", "matrices", "U", "gammas", "alpha", "mu", "eta", "nu", "direction"});
  const std::string family = string_field(j, "family", where);
  const double alpha = number_or(j, "alpha", 1.0, where);
  const double mu = number_or(j, "mu", 1.0, where);
  const SummableSequence eta =
      j.contains("eta") ? sequence_from_json(j.at("eta"), where + ".eta") : SummableSequence::zero();
  std::optional<SummableSequence> nu;
  if (j.contains("nu")) nu = sequence_from_json(j.at("nu"), where + ".nu");
  Direction direction = Direction::decreasing;
  if (j.contains("direction")) {
    if (!j.at("direction").is_string()) fail(where + ".direction", "expected a string");
    direction = direction_from_string(j.at("direction").get<std::string>());
  }

  auto only = [&](std::initializer_list<std::string_view> extra) {
    for (const auto& item : j.items()) {
      const std::string& k = item.key();
      const bool common = k == "family" || k == "alpha" || k == "mu" || k == "eta" || k == "nu" || k == "direction";
      if (!common && std::find(extra.begin(), extra.end(), k) == extra.end()) {
        fail(where, "field '" + k + "' does not apply to family '" + family + "'");
      }
    }
  };

  MetricSchedule::Family fam;
  if (family == "identity") {
    only({});
    fam = ConstantFamily{Matrix::Identity(dim, dim)};
  } else if (family == "constant") {
    only({"W"});
    fam = ConstantFamily{square_matrix(field(j, "W", where), dim, where + ".W")};
  } else if (family == "scaled") {
    only({"W0", "c", "q"});
    fam = ScaledFamily{square_matrix(field(j, "W0", where), dim, where + ".W0"), number_field(j, "c", where),
                       number_field(j, "q", where)};
  } else if (family == "rank_one") {
    only({"W0", "v", "c", "q"});
    fam = RankOneFamily{square_matrix(field(j, "W0", where), dim, where + ".W0"),
                        sized_vector(field(j, "v", where), dim, where + ".v"), number_field(j, "c", where),
                        number_field(j, "q", where)};
  } else if (family == "list") {
    only({"matrices"});
    const Json& ms = field(j, "matrices", where);
    if (!ms.is_array() || ms.empty()) fail(where + ".matrices", "expected a nonempty array of matrices");
    ListFamily lf;
    for (std::size_t i = 0; i < ms.size(); ++i) {
      lf.matrices.push_back(square_matrix(ms[i], dim, where + ".matrices[" + std::to_string(i) + "]"));
    }
    fam = std::move(lf);
  } else if (family == "induced") {
    only({"U", "gammas"});
    auto gammas = doubles_from_json(field(j, "gammas", where), where + ".gammas");
    if (gammas.empty()) fail(where + ".gammas", "expected a nonempty list");
    fam = InducedFamily{square_matrix(field(j, "U", where), dim, where + ".U"), std::move(gammas)};
  } else {
    fail(where, "unknown schedule family '" + family + "'");
  }
  return MetricSchedule(std::move(fam), alpha, mu, eta, direction, nu);
}

Json function_to_json(const ProxFunction& f) {
  return std::visit(overloaded{[](const L1Norm& g) { return Json{{"type", "l1"}, {"weight", g.weight}}; },
                               [](const SquaredNorm& g) { return Json{{"type", "squared_norm"}, {"weight", g.weight}}; },
                               [](const Indicator& g) { return Json{{"type", "indicator"}, {"set", set_to_json(g.set)}}; },
                               [](const SeparableBasis& g) {
                                 Json pieces = Json::array();
                                 for (const auto& p : g.pieces) pieces.push_back(piece_to_json(p));
                                 return Json{{"type", "separable_basis"}, {"Q", matrix_to_json(g.q)}, {"pieces", pieces}};
                               }},
                    f.kind());
}

ProxFunction function_from_json(const Json& j, Eigen::Index dim, const std::string& where) {
  check_keys(j, where, {"type", "weight", "set", "Q", "pieces"});
  const std::string type = string_field(j, "type", where);
  ProxFunction f = ProxFunction::squared_norm(0.0);
  if (type == "l1" || type == "squared_norm") {
    check_keys(j, where, {"type", "weight"});
    const double w = number_field(j, "weight", where);
    f = type == "l1" ? ProxFunction::l1(w) : ProxFunction::squared_norm(w);
  } else if (type == "indicator") {
    check_keys(j, where, {"type", "set"});
    f = ProxFunction::indicator(set_from_json(field(j, "set", where), where + ".set"));
  } else if (type == "separable_basis") {
    check_keys(j, where, {"type", "Q", "pieces"});
    const Json& ps = field(j, "pieces", where);
    if (!ps.is_array()) fail(where + ".pieces", "expected an array");
    std::vector<ScalarPiece> pieces;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      pieces.push_back(piece_from_json(ps[i], where + ".pieces[" + std::to_string(i) + "]"));
    }
    f = ProxFunction::separable_basis(square_matrix(field(j, "Q", where), dim, where + ".Q"), std::move(pieces));
  } else {
    fail(where, "unknown function type '" + type + "'");
  }
  if (f.dim() != 0 && f.dim() != dim) fail(where, "function dimension differs from the problem");
  return f;
}

Json operator_to_json(const MonotoneOperator& a) {
  return std::visit(
      overloaded{[](const Subdifferential& s) { return Json{{"type", "subdifferential"}, {"f", function_to_json(s.f)}}; },
                 [](const AffineMonotone& af) {
                   return Json{{"type", "affine"}, {"M", matrix_to_json(af.m)}, {"b", vector_to_json(af.b)}};
                 },
                 [](const ShiftedSum& s) {
                   return Json{{"type", "shifted_sum"}, {"A", operator_to_json(*s.a)}, {"U", matrix_to_json(s.u_op)},
                               {"u", vector_to_json(s.u)}};
                 }},
      a.kind());
}

MonotoneOperator operator_from_json(const Json& j, Eigen::Index dim, const std::string& where) {
  check_keys(j, where, {"type", "f", "M", "b", "A", "U", "u"});
  const std::string type = string_field(j, "type", where);
  if (type == "subdifferential") {
    check_keys(j, where, {"type", "f"});
    return MonotoneOperator::subdifferential(function_from_json(field(j, "f", where), dim, where + ".f"));
  }
  if (type == "affine") {
    check_keys(j, where, {"type", "M", "b"});
    return MonotoneOperator::affine(square_matrix(field(j, "M", where), dim, where + ".M"),
                                    sized_vector(field(j, "b", where), dim, where + ".b"));
  }
  if (type == "shifted_sum") {
    check_keys(j, where, {"type", "A", "U", "u"});
    return MonotoneOperator::shifted_sum(operator_from_json(field(j, "A", where), dim, where + ".A"),
                                         square_matrix(field(j, "U", where), dim, where + ".U"),
                                         sized_vector(field(j, "u", where), dim, where + ".u"));
  }
  fail(where, "unknown operator type '" + type + "'");
}

Json config_to_json(const RunConfig& c) {
  Json j{{"epsilon", c.epsilon},
         {"lambda", step_to_json(c.lambda)},
         {"gamma", step_to_json(c.gamma)},
         {"noise", Json{{"c", c.noise.c}, {"q", c.noise.q}}},
         {"max_iter", c.max_iter},
         {"tol", c.tol}};
  if (c.x0) j["x0"] = vector_to_json(*c.x0);
  return j;
}

RunConfig config_from_json(const Json& j, Eigen::Index dim, const std::string& where) {
  check_keys(j, where, {"epsilon", "lambda", "gamma", "noise", "max_iter", "tol", "x0"});
  RunConfig c;
  c.epsilon = number_or(j, "epsilon", c.epsilon, where);
  if (j.contains("lambda")) c.lambda = step_from_json(j.at("lambda"), where + ".lambda");
  if (j.contains("gamma")) c.gamma = step_from_json(j.at("gamma"), where + ".gamma");
  if (j.contains("noise")) {
    const Json& n = j.at("noise");
    check_keys(n, where + ".noise", {"c", "q"});
    c.noise.c = number_field(n, "c", where + ".noise");
    c.noise.q = number_or(n, "q", c.noise.q, where + ".noise");
  }
  if (j.contains("max_iter")) c.max_iter = unsigned_value(j.at("max_iter"), where + ".max_iter");
  c.tol = number_or(j, "tol", c.tol, where);
  if (j.contains("x0")) c.x0 = sized_vector(j.at("x0"), dim, where + ".x0");
  return c;
}

// ---------------------------------------------------------------------------
// Problem files.

ProblemFile parse_problem(const Json& j) {
  const std::string top = "problem";
  check_keys(j, top,
             {"schema", "kind", "dim", "seed", "sets", "control", "inequalities", "operator", "problem", "schedule",
              "config", "targets", "planted", "generator"});
  if (unsigned_value(field(j, "schema", top), "schema") != static_cast<std::uint64_t>(kSchemaVersion)) {
    fail("schema", "unsupported schema version");
  }
  ProblemFile p;
  p.kind = string_field(j, "kind", top);
  const auto dim = unsigned_value(field(j, "dim", top), "dim");
  if (dim == 0) fail("dim", "must be positive");
  p.dim = static_cast<Eigen::Index>(dim);
  p.seed = j.contains("seed") ? unsigned_value(j.at("seed"), "seed") : 0;

  auto allow = [&](std::initializer_list<std::string_view> payload) {
    for (const char* k : {"sets", "control", "inequalities", "operator", "problem", "schedule"}) {
      if (j.contains(k) && std::find(payload.begin(), payload.end(), k) == payload.end()) {
        fail(top, std::string("field '") + k + "' does not apply to kind '" + p.kind + "'");
      }
    }
  };

  if (p.kind == "feasibility") {
    allow({"sets", "control", "schedule"});
    const Json& sets = field(j, "sets", top);
    if (!sets.is_array() || sets.empty()) fail("sets", "expected a nonempty array");
    for (std::size_t i = 0; i < sets.size(); ++i) {
      p.sets.push_back(set_from_json(sets[i], "sets[" + std::to_string(i) + "]"));
      if (p.sets.back().dim() != p.dim) fail("sets[" + std::to_string(i) + "]", "dimension differs from dim");
    }
    if (j.contains("control")) {
      const Json& c = j.at("control");
      check_keys(c, "control", {"type", "indices", "windows"});
      const std::string type = string_field(c, "type", "control");
      ControlSpec spec;
      if (type == "pattern") {
        for (const auto& v : field(c, "indices", "control")) spec.indices.push_back(unsigned_value(v, "control.indices"));
        for (const auto& v : field(c, "windows", "control")) spec.windows.push_back(unsigned_value(v, "control.windows"));
        if (spec.windows.size() != p.sets.size()) fail("control.windows", "expected one bound per set");
        ControlSequence::pattern(spec.indices, spec.windows);
      } else if (type == "periodic") {
        check_keys(c, "control", {"type"});
      } else {
        fail("control", "unknown control type '" + type + "'");
      }
      p.control = spec;
    }
  } else if (p.kind == "linear_inequalities") {
    allow({"inequalities", "schedule"});
    const Json& ineq = field(j, "inequalities", top);
    if (!ineq.is_array() || ineq.empty()) fail("inequalities", "expected a nonempty array");
    for (std::size_t i = 0; i < ineq.size(); ++i) {
      const std::string where = "inequalities[" + std::to_string(i) + "]";
      check_keys(ineq[i], where, {"u", "eta"});
      p.us.push_back(sized_vector(field(ineq[i], "u", where), p.dim, where + ".u"));
      if (p.us.back().isZero(0.0)) fail(where + ".u", "normal vector must be nonzero");
      p.etas.push_back(number_field(ineq[i], "eta", where));
    }
  } else if (p.kind == "proximal_point") {
    allow({"operator", "schedule"});
    p.op = operator_from_json(field(j, "operator", top), p.dim, "operator");
  } else if (p.kind == "inverse_problem") {
    allow({"problem"});
    const Json& q = field(j, "problem", top);
    check_keys(q, "problem", {"f", "terms", "regime", "eta"});
    InverseSpec spec;
    spec.f = function_from_json(field(q, "f", "problem"), p.dim, "problem.f");
    const Json& terms = field(q, "terms", "problem");
    if (!terms.is_array() || terms.empty()) fail("problem.terms", "expected a nonempty array");
    for (std::size_t i = 0; i < terms.size(); ++i) {
      const std::string where = "problem.terms[" + std::to_string(i) + "]";
      check_keys(terms[i], where, {"L", "r", "mu"});
      DataTerm t;
      t.l = matrix_from_json(field(terms[i], "L", where), where + ".L");
      if (t.l.cols() != p.dim) fail(where + ".L", "column count differs from dim");
      t.r = sized_vector(field(terms[i], "r", where), t.l.rows(), where + ".r");
      t.mu = number_or(terms[i], "mu", 1.0, where);
      spec.terms.push_back(std::move(t));
    }
    if (q.contains("regime")) {
      if (!q.at("regime").is_string()) fail("problem.regime", "expected a string");
      spec.regime = regime_from_string(q.at("regime").get<std::string>());
    }
    if (q.contains("eta")) spec.eta = sequence_from_json(q.at("eta"), "problem.eta");
    p.inverse = std::move(spec);
  } else {
    fail("kind", "unknown problem kind '" + p.kind + "'");
  }

  if (p.kind != "inverse_problem") {
    p.schedule = schedule_from_json(field(j, "schedule", top), p.dim, "schedule");
  }
  p.config = config_from_json(j.contains("config") ? j.at("config") : Json::object(), p.dim, "config");
  p.config.seed = p.seed;
  if (j.contains("targets")) {
    const Json& t = j.at("targets");
    if (!t.is_array()) fail("targets", "expected an array of points");
    for (std::size_t i = 0; i < t.size(); ++i) {
      p.targets.push_back(sized_vector(t[i], p.dim, "targets[" + std::to_string(i) + "]"));
    }
  }
  if (j.contains("planted")) p.planted = sized_vector(j.at("planted"), p.dim, "planted");
  if (j.contains("generator")) p.generator = j.at("generator");
  return p;
}

ProblemFile load_problem(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw InvalidInput("schema: '" + path.string() + "' is not valid JSON: " + e.what());
  }
  return parse_problem(j);
}

Json to_json(const ProblemFile& p) {
  Json j{{"schema", kSchemaVersion}, {"kind", p.kind}, {"dim", p.dim}, {"seed", p.seed}};
  if (p.kind == "feasibility") {
    Json sets = Json::array();
    for (const auto& c : p.sets) sets.push_back(set_to_json(c));
    j["sets"] = sets;
    if (p.control) {
      j["control"] = p.control->indices.empty()
                         ? Json{{"type", "periodic"}}
                         : Json{{"type", "pattern"}, {"indices", p.control->indices}, {"windows", p.control->windows}};
    }
  } else if (p.kind == "linear_inequalities") {
    Json ineq = Json::array();
    for (std::size_t i = 0; i < p.us.size(); ++i) ineq.push_back({{"u", vector_to_json(p.us[i])}, {"eta", p.etas[i]}});
    j["inequalities"] = ineq;
  } else if (p.kind == "proximal_point") {
    j["operator"] = operator_to_json(*p.op);
  } else if (p.kind == "inverse_problem") {
    Json terms = Json::array();
    for (const auto& t : p.inverse->terms) {
      terms.push_back({{"L", matrix_to_json(t.l)}, {"r", vector_to_json(t.r)}, {"mu", t.mu}});
    }
    j["problem"] = {{"f", function_to_json(p.inverse->f)},
                    {"terms", terms},
                    {"regime", to_string(p.inverse->regime)},
                    {"eta", sequence_to_json(p.inverse->eta)}};
  }
  if (p.schedule) j["schedule"] = schedule_to_json(*p.schedule);
  j["config"] = config_to_json(p.config);
  if (!p.targets.empty()) {
    Json t = Json::array();
    for (const auto& z : p.targets) t.push_back(vector_to_json(z));
    j["targets"] = t;
  }
  if (p.planted) j["planted"] = vector_to_json(*p.planted);
  if (p.generator) j["generator"] = *p.generator;
  return j;
}

std::string config_hash(const Json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return hex64(h);
}

ProblemFile generate_problem(const std::string& kind, Eigen::Index dim, std::uint64_t seed) {
  if (dim <= 0) throw InvalidInput("generate: dim must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  auto gaussian = [&](Eigen::Index n) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = normal(rng);
    return v;
  };
  auto unit = [&](Eigen::Index n) {
    Vector v = gaussian(n);
    return Vector(v / v.norm());
  };

  ProblemFile p;
  p.kind = kind;
  p.dim = dim;
  p.seed = seed;
  p.config.seed = seed;
  p.generator = Json{{"kind", kind}, {"seed", seed}};
  const Matrix id = Matrix::Identity(dim, dim);

  if (kind == "feasibility" || kind == "linear_inequalities") {
    const Vector planted = gaussian(dim);
    const auto m = static_cast<std::size_t>(std::min<Eigen::Index>(5, dim));
    for (std::size_t i = 0; i < m; ++i) {
      Vector u = unit(dim);
      const double eta = u.dot(planted) + 0.5 + uniform(rng);
      if (kind == "feasibility") {
        p.sets.push_back(ConvexSet::half_space(u, eta));
      } else {
        p.us.push_back(std::move(u));
        p.etas.push_back(eta);
      }
    }
    if (kind == "feasibility") {
      p.schedule = MetricSchedule(RankOneFamily{id, unit(dim), 1.0, 0.5}, 1.0, 2.0, SummableSequence::zero());
      p.config.lambda = StepSequence::constant(1.5);
    } else {
      Vector diag(dim);
      for (Eigen::Index i = 0; i < dim; ++i) diag(i) = 1.0 + uniform(rng);
      p.schedule = MetricSchedule(ConstantFamily{diag.asDiagonal()}, diag.minCoeff(), diag.maxCoeff(),
                                  SummableSequence::zero(), Direction::both);
      p.config.lambda = StepSequence::constant(1.0);
    }
    p.planted = planted;
    p.targets = {planted};
    p.config.x0 = planted + 10.0 * gaussian(dim);
    p.config.max_iter = 10000;
    p.config.tol = 1e-12;
  } else if (kind == "proximal_point") {
    const Vector c = 2.0 * gaussian(dim);
    const double weight = 0.5;
    const double m = 1.0;
    p.op = MonotoneOperator::shifted_sum(MonotoneOperator::subdifferential(ProxFunction::l1(weight)), m * id, -m * c);
    p.planted = c.unaryExpr([&](double t) { return std::copysign(std::max(std::abs(t) - weight / m, 0.0), t); });
    p.targets = {*p.planted};
    p.schedule = MetricSchedule(ScaledFamily{id, 1.0, 0.5}, 1.0, 2.0, SummableSequence::zero());
    p.config.x0 = gaussian(dim);
    p.config.max_iter = 10000;
    p.config.tol = 1e-12;
  } else if (kind == "inverse_problem") {
    const Eigen::Index rows = std::max<Eigen::Index>(1, dim / 2);
    Matrix l(rows, dim);
    for (Eigen::Index i = 0; i < rows; ++i) {
      for (Eigen::Index k = 0; k < dim; ++k) l(i, k) = normal(rng) / std::sqrt(static_cast<double>(rows));
    }
    Vector planted = Vector::Zero(dim);
    const Eigen::Index nonzeros = std::max<Eigen::Index>(1, dim / 5);
    for (Eigen::Index k = 0; k < nonzeros; ++k) {
      planted(static_cast<Eigen::Index>(uniform(rng) * static_cast<double>(dim)) % dim) = 3.0 * normal(rng);
    }
    const Vector noise = 0.01 * gaussian(rows);
    const Vector r = l * planted + noise;
    InverseSpec spec;
    spec.f = ProxFunction::l1(0.1);
    spec.terms = {DataTerm{l, r, 1.0}};
    p.inverse = spec;
    const InverseProblem ip(spec.f, spec.terms);
    p.config.gamma = StepSequence::constant((1.0 - p.config.epsilon) / ip.s_bar());
    p.config.max_iter = 20000;
    p.config.tol = 1e-12;
    p.planted = planted;
    (*p.generator)["noise"] = vector_to_json(noise);
  } else {
    throw InvalidInput("generate: unknown kind '" + kind + "'");
  }
  return p;
}

// ---------------------------------------------------------------------------
// Traces and certificates.

void write_atomic(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InvalidInput("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) throw InvalidInput("write to '" + tmp.string() + "' failed");
  }
  std::filesystem::rename(tmp, path);
}

std::string trace_to_jsonl(const IterateTrace& trace, const Json& extra_header) {
  if (!trace.schedule) throw InvalidInput("trace has no metric schedule");
  Json header{{"type", "header"},
              {"schema", kSchemaVersion},
              {"solver", trace.meta.solver},
              {"seed", trace.meta.seed},
              {"config_hash", trace.meta.config_hash},
              {"stop_reason", trace.meta.stop_reason},
              {"threads", trace.meta.threads},
              {"dim", trace.schedule->dim()},
              {"records", trace.size()},
              {"schedule", schedule_to_json(*trace.schedule)}};
  for (const auto& item : extra_header.items()) header[item.key()] = item.value();

  std::string out = header.dump();
  out += '\n';
  for (const auto& r : trace.records) {
    Json rec{{"n", r.n}, {"x", vector_to_json(r.x)}, {"metric_tag", r.metric_index}, {"a_norm", r.a_norm},
             {"residuals", doubles(r.residuals)}};
    if (r.op_index) rec["op"] = *r.op_index;
    if (r.lambda) rec["lambda"] = *r.lambda;
    if (r.gamma) rec["gamma"] = *r.gamma;
    if (r.v_norm) rec["v_norm"] = num(*r.v_norm);
    if (r.objective) rec["objective"] = num(*r.objective);
    out += rec.dump();
    out += '\n';
  }
  return out;
}

IterateTrace trace_from_jsonl(const std::string& text, Json* header_out) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw InvalidInput("trace: empty file");
  Json header;
  try {
    header = Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw InvalidInput(std::string("trace: header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || header.value("type", "") != "header") throw InvalidInput("trace: first line must be the header");
  if (unsigned_value(field(header, "schema", "header"), "header.schema") != static_cast<std::uint64_t>(kSchemaVersion)) {
    fail("header.schema", "unsupported schema version");
  }
  const auto dim = static_cast<Eigen::Index>(unsigned_value(field(header, "dim", "header"), "header.dim"));

  IterateTrace trace;
  trace.schedule = std::make_shared<const MetricSchedule>(schedule_from_json(field(header, "schedule", "header"), dim, "header.schedule"));
  trace.meta.solver = header.value("solver", "");
  trace.meta.seed = header.contains("seed") ? unsigned_value(header.at("seed"), "header.seed") : 0;
  trace.meta.config_hash = header.value("config_hash", "");
  trace.meta.stop_reason = header.value("stop_reason", "");
  trace.meta.threads = header.value("threads", 1);

  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "trace line " + std::to_string(lineno);
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw InvalidInput(where + ": not valid JSON: " + e.what());
    }
    check_keys(j, where, {"n", "x", "metric_tag", "op", "lambda", "gamma", "a_norm", "v_norm", "objective", "residuals"});
    IterateRecord r;
    r.n = unsigned_value(field(j, "n", where), where + ".n");
    if (r.n != trace.records.size()) fail(where, "record indices must be contiguous from 0");
    r.x = sized_vector(field(j, "x", where), dim, where + ".x");
    r.metric_index = unsigned_value(field(j, "metric_tag", where), where + ".metric_tag");
    r.a_norm = number_or(j, "a_norm", 0.0, where);
    if (j.contains("op")) r.op_index = unsigned_value(j.at("op"), where + ".op");
    if (j.contains("lambda")) r.lambda = number(j.at("lambda"), where + ".lambda");
    if (j.contains("gamma")) r.gamma = number(j.at("gamma"), where + ".gamma");
    auto optional_number = [&](const char* key) -> std::optional<double> {
      if (!j.contains(key)) return std::nullopt;
      if (j.at(key).is_null()) return std::numeric_limits<double>::infinity();
      return number(j.at(key), where + "." + key);
    };
    r.v_norm = optional_number("v_norm");
    r.objective = optional_number("objective");
    if (j.contains("residuals")) r.residuals = doubles_from_json(j.at("residuals"), where + ".residuals");
    trace.records.push_back(std::move(r));
  }
  trace.validate();
  if (header_out) *header_out = std::move(header);
  return trace;
}

IterateTrace read_trace(const std::filesystem::path& path, Json* header) {
  return trace_from_jsonl(read_file(path), header);
}

Json certificate_to_json(const FejerCertificate& c) {
  Json targets = Json::array();
  for (const auto& z : c.targets) targets.push_back(vector_to_json(z));
  Json slacks = Json::array();
  for (const auto& row : c.slacks) slacks.push_back(doubles(row));
  Json implied = Json::array();
  for (const auto& row : c.implied_epsilon) implied.push_back(doubles(row));
  Json violations = Json::array();
  for (const auto& v : c.violations) violations.push_back({{"target", v.target}, {"n", v.n}, {"slack", num(v.slack)}});
  const auto& s = c.summability;
  return Json{{"phi", to_string(c.phi)},
              {"tol", c.tol},
              {"pass", c.pass},
              {"min_slack", num(c.min_slack)},
              {"auto_epsilon", c.auto_epsilon},
              {"stationary", c.stationary},
              {"targets", targets},
              {"eta", doubles(c.eta)},
              {"epsilon", c.epsilon.empty() ? Json::array() : doubles(c.epsilon.front())},
              {"slacks", slacks},
              {"implied_epsilon", implied},
              {"violations", violations},
              {"summability",
               {{"model", s.model},
                {"consistent", s.consistent},
                {"c", num(s.c)},
                {"q", s.q},
                {"partial_sum", num(s.partial_sum)},
                {"envelope_total", num(s.envelope_total)},
                {"fit_residual", num(s.fit_residual)}}}};
}

std::string certificate_csv(const FejerCertificate& c) {
  std::string out = "target,n,slack,implied_eps\n";
  for (std::size_t t = 0; t < c.slacks.size(); ++t) {
    for (std::size_t n = 0; n < c.slacks[t].size(); ++n) {
      out += std::to_string(t) + "," + std::to_string(n) + "," + format_double(c.slacks[t][n]) + "," +
             format_double(c.implied_epsilon[t][n]) + "\n";
    }
  }
  return out;
}

FejerCertificate default_certificate(const IterateTrace& trace, std::span<const Vector> targets, double tol) {
  if (!trace.schedule) throw InvalidInput("trace has no metric schedule");
  return check_quasi_fejer(trace, targets, trace.schedule->eta(), Phi::absolute,
                           noise_envelope(trace, trace.schedule->mu()), tol);
}

// ---------------------------------------------------------------------------
// Commands.

Json Overrides::to_json() const {
  Json j = Json::object();
  if (max_iter) j["max_iter"] = *max_iter;
  if (tol) j["tol"] = *tol;
  if (seed) j["seed"] = *seed;
  if (epsilon) j["epsilon"] = *epsilon;
  return j;
}

void apply_overrides(ProblemFile& p, const Overrides& o) {
  if (o.max_iter) p.config.max_iter = *o.max_iter;
  if (o.tol) p.config.tol = *o.tol;
  if (o.seed) {
    p.seed = *o.seed;
    p.config.seed = *o.seed;
  }
  if (o.epsilon) p.config.epsilon = *o.epsilon;
}

RunResult run_problem(const ProblemFile& p) {
  RunResult res;
  const auto sets = logged_sets(p);
  std::optional<ProblemReport> problem_report;
  std::optional<InverseProblem> inverse;
  if (p.kind == "feasibility") {
    auto sched = std::make_shared<const MetricSchedule>(*p.schedule);
    if (p.control && !p.control->indices.empty()) {
      std::vector<TFactory> factories;
      for (const auto& c : p.sets) {
        factories.emplace_back([c](std::size_t, const MetricOperator& w) { return TOperator::projector(c, w); });
      }
      res.trace = feasibility_solve(factories, sched, ControlSequence::pattern(p.control->indices, p.control->windows),
                                    p.config, p.sets);
    } else {
      res.trace = periodic_projections(p.sets, sched, p.config);
    }
  } else if (p.kind == "linear_inequalities") {
    res.trace = linear_inequalities(p.us, p.etas, std::make_shared<const MetricSchedule>(*p.schedule), p.config);
  } else if (p.kind == "proximal_point") {
    res.trace = proximal_point(*p.op, std::make_shared<const MetricSchedule>(*p.schedule), p.config);
  } else if (p.kind == "inverse_problem") {
    inverse.emplace(p.inverse->f, p.inverse->terms);
    problem_report = problem_validate(*inverse);
    res.trace = prox_landweber(*inverse, p.inverse->eta, p.config, p.inverse->regime);
  } else {
    throw InvalidInput("unknown problem kind '" + p.kind + "'");
  }

  const Vector& last = res.trace.records.back().x;
  if (!p.targets.empty()) {
    res.targets = p.targets;
    res.target_source = "file";
  } else if (p.planted && p.kind != "inverse_problem") {
    res.targets = {*p.planted};
    res.target_source = "planted";
  } else if (is_feasibility_kind(p.kind)) {
    res.targets = {intersection_project(sets, last, 1e-12).point};
    res.target_source = "projected_final_iterate";
  } else {
    res.targets = {last};
    res.target_source = "final_iterate";
  }
  if (res.trace.size() >= 2) res.certificate = default_certificate(res.trace, res.targets);

  Json& s = res.summary;
  s["schema"] = kSchemaVersion;
  s["status"] = "ok";
  s["kind"] = p.kind;
  s["solver"] = res.trace.meta.solver;
  s["seed"] = p.seed;
  s["threads"] = res.trace.meta.threads;
  s["iterations"] = res.trace.size() - 1;
  s["stop_reason"] = res.trace.meta.stop_reason;
  s["final_point"] = vector_to_json(last);
  const auto& residuals = res.trace.records.back().residuals;
  s["residuals"] = doubles(residuals);
  if (!sets.empty()) {
    s["max_residual"] = num(residuals.empty() ? 0.0 : *std::max_element(residuals.begin(), residuals.end()));
    s["intersection_residual"] = num(intersection_distance(sets, last));
  }
  if (inverse) {
    s["objective"] = num(inverse->objective(last));
    s["problem_report"] = {{"sigma_min", doubles(problem_report->sigma_min)},
                           {"beta", problem_report->beta ? Json(*problem_report->beta) : Json(nullptr)},
                           {"f_coercive", problem_report->f_coercive},
                           {"verdict", problem_report->verdict},
                           {"S_bar", inverse->s_bar()}};
  }
  Json cert{{"target_source", res.target_source}};
  if (res.trace.size() >= 2) {
    cert["pass"] = res.certificate.pass;
    cert["min_slack"] = num(res.certificate.min_slack);
    cert["violations"] = res.certificate.violations.size();
    cert["tol"] = res.certificate.tol;
    const auto env = noise_envelope(res.trace, res.trace.schedule->mu());
    const auto b = boundedness_report(res.trace, res.targets.front(), res.trace.schedule->eta(), env);
    cert["boundedness"] = {{"sup_norm", num(b.sup_norm)}, {"predicted_bound", num(b.predicted_bound)}, {"flag", b.flag}};
    const auto nc = norm_convergence_report(res.trace, res.targets.front(), std::min(kDefaultWindow, res.trace.size()));
    cert["norm_convergence"] = {{"window", nc.window}, {"oscillation", num(nc.oscillation)}, {"converged", nc.converged}};
  }
  s["certificate"] = cert;
  return res;
}

std::vector<ValidationRow> validate_problem(const ProblemFile& p) {
  std::vector<ValidationRow> rows;
  auto add = [&rows](std::string h, Verdict v, std::string detail) {
    rows.push_back({std::move(h), v, std::move(detail)});
  };
  auto slack_text = [](std::size_t n, double slack) {
    std::ostringstream os;
    os << "n = " << n << ", slack " << slack;
    return os.str();
  };

  if (p.schedule) {
    const auto& s = *p.schedule;
    const auto cert = schedule_validate(s, std::max<std::size_t>(2, std::min<std::size_t>(p.config.max_iter + 1, 256)));
    auto first = [&](const char* cond) -> const ScheduleViolation* {
      for (const auto& v : cert.violations) {
        if (v.condition == cond) return &v;
      }
      return nullptr;
    };
    if (s.direction() == Direction::increasing) {
      add("(1 + eta_n) W_n >= W_{n+1}", Verdict::fail, "schedule declared increasing only");
    } else if (const auto* v = first("decreasing")) {
      add("(1 + eta_n) W_n >= W_{n+1}", Verdict::fail, slack_text(v->n, v->slack));
    } else {
      add("(1 + eta_n) W_n >= W_{n+1}", Verdict::pass, "min slack " + format_double(cert.min_decreasing_slack));
    }
    if (s.direction() == Direction::both) {
      const auto* v = first("increasing");
      add("(1 + nu_n) W_{n+1} >= W_n", v ? Verdict::fail : Verdict::pass,
          v ? slack_text(v->n, v->slack) : "min slack " + format_double(cert.min_increasing_slack));
    }
    const auto* va = first("alpha");
    add("W_n >= alpha I", va ? Verdict::fail : Verdict::pass, va ? slack_text(va->n, va->slack) : "");
    const auto* vb = first("bound");
    add("||W_n|| <= mu", vb ? Verdict::fail : Verdict::pass,
        vb ? slack_text(vb->n, vb->slack) : "max norm " + format_double(cert.max_norm));
  }

  const auto& c = p.config;
  const bool eps_ok = c.epsilon > 0.0 && c.epsilon < 1.0;
  add("0 < epsilon < 1", eps_ok ? Verdict::pass : Verdict::fail, "epsilon = " + format_double(c.epsilon));
  double lambda_hi = 2.0 - c.epsilon;
  if (p.inverse && p.inverse->regime == StepRegime::classical) lambda_hi = 1.0;
  {
    std::ostringstream cond;
    cond << "lambda_n in [epsilon, " << (lambda_hi == 1.0 ? "1" : "2 - epsilon") << "]";
    std::string detail;
    for (std::size_t k = 0; k < c.lambda.values.size(); ++k) {
      const double l = c.lambda.values[k];
      if (!(l >= c.epsilon && l <= lambda_hi)) {
        detail = "lambda_" + std::to_string(k) + " = " + format_double(l);
        break;
      }
    }
    add(cond.str(), detail.empty() ? Verdict::pass : Verdict::fail, detail);
  }
  const bool noise_ok = c.noise.c >= 0.0 && c.noise.q >= 0.0 && c.noise.q < 1.0;
  add("sum ||a_n|| < inf", noise_ok ? Verdict::pass : Verdict::fail,
      "c = " + format_double(c.noise.c) + ", q = " + format_double(c.noise.q));
  if (p.kind == "linear_inequalities" && c.noise.active()) {
    add("no error injection", Verdict::fail, "linear_inequalities takes no noise");
  }

  if (p.kind == "feasibility" && p.control && !p.control->indices.empty()) {
    const auto ctrl = ControlSequence::pattern(p.control->indices, p.control->windows);
    const auto cc = control_validate(ctrl, ctrl.max_window() + 2 * ctrl.period());
    add("j in {i(n), ..., i(n + M_j - 1)}", cc.valid ? Verdict::pass : Verdict::fail,
        cc.valid ? "" : "index " + std::to_string(*cc.index) + " missing at n = " + std::to_string(*cc.n));
  }
  if (p.kind == "proximal_point") {
    std::string detail;
    for (std::size_t k = 0; k < c.gamma.values.size(); ++k) {
      if (!(c.gamma.values[k] >= c.epsilon)) {
        detail = slack_text(k, c.gamma.values[k] - c.epsilon);
        break;
      }
    }
    add("gamma_n >= epsilon", detail.empty() ? Verdict::pass : Verdict::fail, detail);
  }
  if (p.kind == "inverse_problem") {
    const InverseProblem ip(p.inverse->f, p.inverse->terms);
    const auto rep = p.inverse->regime == StepRegime::variable_metric
                         ? gamma_schedule_validate(c.gamma.values, p.inverse->eta, c.epsilon, ip.s_bar())
                         : gamma_classical_validate(c.gamma.values, c.epsilon, ip.s_bar());
    const std::vector<std::string> conds =
        p.inverse->regime == StepRegime::variable_metric
            ? std::vector<std::string>{"gamma_n >= epsilon", "gamma_n <= (1 - epsilon)/S",
                                       "(1 + eta_n) gamma_n - gamma_{n+1} <= eta_n/S"}
            : std::vector<std::string>{"gamma_n >= epsilon", "gamma_n <= (2 - epsilon)/S"};
    for (const auto& cond : conds) {
      const auto it = std::find_if(rep.violations.begin(), rep.violations.end(),
                                   [&](const GammaViolation& v) { return v.condition == cond; });
      add(cond, it == rep.violations.end() ? Verdict::pass : Verdict::fail,
          it == rep.violations.end() ? "S = " + format_double(ip.s_bar()) : slack_text(it->n, it->slack));
    }
    const auto pr = problem_validate(ip);
    add("solvability (coercive or bounded below)", pr.verdict == "unverified" ? Verdict::warn : Verdict::pass,
        pr.verdict + (pr.beta ? ", beta = " + format_double(*pr.beta) : std::string()));
  }
  return rows;
}

std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::pass:
      return "PASS";
    case Verdict::warn:
      return "WARN";
    case Verdict::fail:
      break;
  }
  return "FAIL";
}

namespace {

Json error_summary(const std::string& kind, const std::exception& e) {
  Json s{{"schema", kSchemaVersion}, {"status", "error"}, {"error_kind", kind}, {"message", e.what()}};
  if (const auto* h = dynamic_cast<const HypothesisError*>(&e)) s["condition"] = h->condition();
  if (const auto* n = dynamic_cast<const NumericError*>(&e)) {
    s["residual"] = num(n->residual());
    if (n->iteration >= 0) s["iteration"] = n->iteration;
  }
  return s;
}

std::string error_kind(const std::exception& e) {
  if (dynamic_cast<const HypothesisError*>(&e)) return "hypothesis";
  if (dynamic_cast<const BadOperator*>(&e)) return "bad_operator";
  if (dynamic_cast<const BadWitness*>(&e)) return "bad_witness";
  if (dynamic_cast<const PreconditionError*>(&e)) return "precondition";
  if (dynamic_cast<const NumericError*>(&e)) return "numeric";
  return "validation";
}

void write_error(const std::filesystem::path& out_dir, Json summary) {
  try {
    std::filesystem::create_directories(out_dir);
    write_atomic(out_dir / "summary.json", summary.dump(2) + "\n");
  } catch (const std::exception&) {
    // The exit code still reports the failure.
  }
}

}  // namespace

int cmd_run(const std::filesystem::path& problem, const std::filesystem::path& out_dir, const Overrides& o,
            std::ostream& log) {
  try {
    ProblemFile p = load_problem(problem);
    apply_overrides(p, o);
    const Json canonical = to_json(p);
    RunResult res = run_problem(p);
    res.trace.meta.config_hash = config_hash(canonical);
    res.summary["config_hash"] = res.trace.meta.config_hash;
    res.summary["overrides"] = o.to_json();

    Json extra{{"kind", p.kind}, {"target_source", res.target_source}};
    Json targets = Json::array();
    for (const auto& z : res.targets) targets.push_back(vector_to_json(z));
    extra["targets"] = targets;
    std::filesystem::create_directories(out_dir);
    write_atomic(out_dir / "trace.jsonl", trace_to_jsonl(res.trace, extra));
    if (res.trace.size() >= 2) {
      write_atomic(out_dir / "certificate.json", certificate_to_json(res.certificate).dump(2) + "\n");
      write_atomic(out_dir / "certificate.csv", certificate_csv(res.certificate));
    }
    write_atomic(out_dir / "summary.json", res.summary.dump(2) + "\n");
    log << "run: " << p.kind << ", " << res.trace.size() - 1 << " iterations, stop " << res.trace.meta.stop_reason
        << ", certificate " << (res.trace.size() >= 2 && res.certificate.pass ? "pass" : "fail") << "\n";
    return kExitOk;
  } catch (const NumericError& e) {
    log << "numeric failure: " << e.what() << "\n";
    write_error(out_dir, error_summary("numeric", e));
    return kExitNumeric;
  } catch (const Error& e) {
    log << "validation failure: " << e.what() << "\n";
    write_error(out_dir, error_summary(error_kind(e), e));
    return kExitValidation;
  } catch (const Json::exception& e) {
    log << "validation failure: " << e.what() << "\n";
    write_error(out_dir, error_summary("validation", e));
    return kExitValidation;
  }
}

int cmd_validate(const std::filesystem::path& problem, std::ostream& out) {
  std::vector<ValidationRow> rows;
  try {
    const ProblemFile p = load_problem(problem);
    rows.push_back({"schema", Verdict::pass, "kind " + p.kind});
    const auto more = validate_problem(p);
    rows.insert(rows.end(), more.begin(), more.end());
  } catch (const NumericError& e) {
    out << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    rows.push_back({"schema", Verdict::fail, e.what()});
  }
  bool ok = true;
  for (const auto& r : rows) {
    out << std::left << std::setw(48) << r.hypothesis << std::setw(6) << to_string(r.verdict) << r.detail << "\n";
    ok = ok && r.verdict != Verdict::fail;
  }
  return ok ? kExitOk : kExitValidation;
}

int cmd_report(const std::filesystem::path& trace_path, const std::vector<Vector>& targets,
               const std::filesystem::path& out_dir, std::ostream& log) {
  try {
    Json header;
    const IterateTrace trace = read_trace(trace_path, &header);
    std::vector<Vector> zs = targets;
    if (zs.empty() && header.contains("targets")) {
      for (const auto& t : header.at("targets")) zs.push_back(sized_vector(t, trace.schedule->dim(), "header.targets"));
    }
    if (zs.empty() && !trace.records.empty()) zs.push_back(trace.records.back().x);
    const FejerCertificate cert = default_certificate(trace, zs);
    std::filesystem::create_directories(out_dir);
    write_atomic(out_dir / "certificate.json", certificate_to_json(cert).dump(2) + "\n");
    write_atomic(out_dir / "certificate.csv", certificate_csv(cert));
    log << "report: " << trace.size() << " iterates, " << zs.size() << " target(s), min slack " << cert.min_slack
        << ", " << (cert.pass ? "pass" : "fail") << "\n";
    return cert.pass ? kExitOk : kExitValidation;
  } catch (const NumericError& e) {
    log << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const Error& e) {
    log << "validation failure: " << e.what() << "\n";
    return kExitValidation;
  } catch (const Json::exception& e) {
    log << "validation failure: " << e.what() << "\n";
    return kExitValidation;
  }
}

int cmd_generate(const std::string& kind, Eigen::Index dim, std::uint64_t seed, const std::filesystem::path& out,
                 std::ostream& log) {
  try {
    const ProblemFile p = generate_problem(kind, dim, seed);
    if (out.has_parent_path()) std::filesystem::create_directories(out.parent_path());
    write_atomic(out, to_json(p).dump(2) + "\n");
    log << "generate: wrote " << out.string() << "\n";
    return kExitOk;
  } catch (const Error& e) {
    log << "validation failure: " << e.what() << "\n";
    return kExitValidation;
  }
}

}  // namespace vmfejer::io
