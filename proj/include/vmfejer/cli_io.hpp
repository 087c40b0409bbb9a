#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vmfejer/convex_sets.hpp"
#include "vmfejer/fejer_monitor.hpp"
#include "vmfejer/metric_ops.hpp"
#include "vmfejer/operator_class.hpp"
#include "vmfejer/solvers.hpp"

namespace vmfejer::io {

using Json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr int kExitOk = 0;
inline constexpr int kExitValidation = 2;
inline constexpr int kExitNumeric = 3;

// ---------------------------------------------------------------------------
// Value codecs. Every *_from_json rejects unknown fields with InvalidInput.

Json vector_to_json(const Vector& v);
Vector vector_from_json(const Json& j, const std::string& where);
Json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const Json& j, const std::string& where);

Json sequence_to_json(const SummableSequence& s);
SummableSequence sequence_from_json(const Json& j, const std::string& where);

Json set_to_json(const ConvexSet& c);
ConvexSet set_from_json(const Json& j, const std::string& where);

Json schedule_to_json(const MetricSchedule& s);
MetricSchedule schedule_from_json(const Json& j, Eigen::Index dim, const std::string& where);

Json function_to_json(const ProxFunction& f);
ProxFunction function_from_json(const Json& j, Eigen::Index dim, const std::string& where);

Json operator_to_json(const MonotoneOperator& a);
MonotoneOperator operator_from_json(const Json& j, Eigen::Index dim, const std::string& where);

Json config_to_json(const RunConfig& c);
RunConfig config_from_json(const Json& j, Eigen::Index dim, const std::string& where);

// ---------------------------------------------------------------------------
// Problem files.

struct ControlSpec {
  std::vector<std::size_t> indices;  // empty: periodic over the sets
  std::vector<std::size_t> windows;
};

struct InverseSpec {
  ProxFunction f = ProxFunction::squared_norm(0.0);
  std::vector<DataTerm> terms;
  StepRegime regime = StepRegime::variable_metric;
  SummableSequence eta;
};

struct ProblemFile {
  std::string kind;  // feasibility, linear_inequalities, proximal_point, inverse_problem
  Eigen::Index dim = 0;
  std::uint64_t seed = 0;
  std::vector<ConvexSet> sets;             // feasibility
  std::optional<ControlSpec> control;      // feasibility
  std::vector<Vector> us;                  // linear_inequalities
  std::vector<double> etas;
  std::optional<MonotoneOperator> op;      // proximal_point
  std::optional<InverseSpec> inverse;      // inverse_problem
  std::optional<MetricSchedule> schedule;  // every kind except inverse_problem
  RunConfig config;
  std::vector<Vector> targets;
  std::optional<Vector> planted;
  std::optional<Json> generator;  // free-form provenance written by cmd_generate
};

ProblemFile parse_problem(const Json& j);
ProblemFile load_problem(const std::filesystem::path& path);
Json to_json(const ProblemFile& p);

/// FNV-1a 64 of the compact dump, as 16 hex digits.
std::string config_hash(const Json& j);

ProblemFile generate_problem(const std::string& kind, Eigen::Index dim, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Traces and certificates.

void write_atomic(const std::filesystem::path& path, const std::string& content);

/// Header line then one record per line.
std::string trace_to_jsonl(const IterateTrace& trace, const Json& extra_header = Json::object());
/// Inverse of trace_to_jsonl; the header is returned through `header` when given.
IterateTrace trace_from_jsonl(const std::string& text, Json* header = nullptr);
IterateTrace read_trace(const std::filesystem::path& path, Json* header = nullptr);

Json certificate_to_json(const FejerCertificate& c);
/// Columns target, n, slack, implied_eps.
std::string certificate_csv(const FejerCertificate& c);

/// phi = |.| with the envelope 2 sqrt(mu) ||a_n|| and the schedule's eta.
FejerCertificate default_certificate(const IterateTrace& trace, std::span<const Vector> targets,
                                     double tol = 1e-9);

// ---------------------------------------------------------------------------
// Commands. Each returns an exit code in {0, 2, 3}.

struct Overrides {
  std::optional<std::size_t> max_iter;
  std::optional<double> tol;
  std::optional<std::uint64_t> seed;
  std::optional<double> epsilon;
  Json to_json() const;
};

struct RunResult {
  IterateTrace trace;
  std::vector<Vector> targets;
  std::string target_source;
  FejerCertificate certificate;
  Json summary;
};

enum class Verdict { pass, warn, fail };
std::string to_string(Verdict v);

struct ValidationRow {
  std::string hypothesis;
  Verdict verdict = Verdict::pass;
  std::string detail;
};

/// Hypothesis table for a parsed problem; "unverified" solvability is a warning.
std::vector<ValidationRow> validate_problem(const ProblemFile& p);

/// Runs a parsed problem (overrides already applied). Errors propagate.
RunResult run_problem(const ProblemFile& p);
void apply_overrides(ProblemFile& p, const Overrides& o);

int cmd_run(const std::filesystem::path& problem, const std::filesystem::path& out_dir, const Overrides& o,
            std::ostream& log);
int cmd_validate(const std::filesystem::path& problem, std::ostream& out);
int cmd_report(const std::filesystem::path& trace, const std::vector<Vector>& targets,
               const std::filesystem::path& out_dir, std::ostream& log);
int cmd_generate(const std::string& kind, Eigen::Index dim, std::uint64_t seed, const std::filesystem::path& out,
                 std::ostream& log);

}  // namespace vmfejer::io
