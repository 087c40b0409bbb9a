#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "oracles.hpp"
#include "vmfejer/cli_io.hpp"
#include "vmfejer/errors.hpp"

using namespace vmfejer;
namespace fs = std::filesystem;

namespace {

const fs::path kFixtures = FIXTURE_DIR;

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("vmfejer_test_" + std::to_string(::getpid())) / name;
  fs::remove_all(p);
  fs::create_directories(p.parent_path());
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cli(const std::string& args) {
  const int status = std::system((std::string(CLI_PATH) + " " + args + " > /dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

io::Json parse_file(const fs::path& p) { return io::Json::parse(slurp(p)); }

}  // namespace

TEST_CASE("value codecs round-trip") {
  const Vector v{{0.1, -1.0 / 3.0, 1e-300, 12345.678901234567}};
  CHECK(io::vector_from_json(io::Json::parse(io::vector_to_json(v).dump()), "v") == v);
  const Matrix m{{1.0, 2.0 / 7.0}, {-3.0, 4.5}};
  CHECK(io::matrix_from_json(io::matrix_to_json(m), "m") == m);
  CHECK_THROWS_AS(io::matrix_from_json(io::Json::parse("[[1,2],[3]]"), "m"), InvalidInput);
  CHECK_THROWS_AS(io::vector_from_json(io::Json::parse("[1,\"x\"]"), "v"), InvalidInput);

  for (const auto& s : {SummableSequence::zero(), SummableSequence::geometric(0.5, 0.25),
                        SummableSequence::inverse_square(2.0), SummableSequence::list({1.0, 0.5})}) {
    const auto j = io::sequence_to_json(s);
    CHECK(io::sequence_to_json(io::sequence_from_json(j, "s")) == j);
  }
  CHECK_THROWS_AS(io::sequence_from_json(io::Json::parse(R"({"type":"geometric","c":1,"q":0.5,"x":1})"), "s"),
                  InvalidInput);
  const auto set = io::set_from_json(io::Json::parse(R"({"kind":"ball","center":[0,1],"radius":2})"), "c");
  CHECK(set.kind() == "ball");
  CHECK_THROWS_AS(io::set_from_json(io::Json::parse(R"({"kind":"cone"})"), "c"), InvalidInput);
}

TEST_CASE("problem files round-trip for every kind") {
  for (const char* kind : {"feasibility", "linear_inequalities", "proximal_point", "inverse_problem"}) {
    const auto p = io::generate_problem(kind, 6, 11);
    const auto j = io::to_json(p);
    const auto back = io::parse_problem(io::Json::parse(j.dump()));
    CHECK(io::to_json(back) == j);
  }
  const auto fixture = io::load_problem(kFixtures / "halfspaces.json");
  CHECK(io::to_json(io::parse_problem(io::to_json(fixture))) == io::to_json(fixture));

  // separable basis functions and shifted-sum operators survive as well
  std::mt19937_64 rng(1);
  io::ProblemFile p;
  p.kind = "proximal_point";
  p.dim = 3;
  p.op = MonotoneOperator::shifted_sum(
      MonotoneOperator::subdifferential(ProxFunction::separable_basis(
          oracle::orthogonal(rng, 3), {AbsPiece{0.5}, QuadraticPiece{1.0}, IntervalPiece{-1.0, 2.0}})),
      Matrix::Identity(3, 3), Vector{{1.0, 2.0, 3.0}});
  p.schedule = MetricSchedule(ScaledFamily{Matrix::Identity(3, 3), 1.0, 0.5}, 1.0, 2.0, SummableSequence::zero());
  const auto j = io::to_json(p);
  CHECK(io::to_json(io::parse_problem(j)) == j);
}

TEST_CASE("schema rejections") {
  CHECK_THROWS_AS(io::load_problem(kFixtures / "invalid_schema.json"), InvalidInput);
  auto j = parse_file(kFixtures / "halfspaces.json");
  j["schema"] = 2;
  CHECK_THROWS_AS(io::parse_problem(j), InvalidInput);
  j = parse_file(kFixtures / "halfspaces.json");
  j["sets"][0]["u"] = {1.0, 0.0};
  CHECK_THROWS_AS(io::parse_problem(j), InvalidInput);
  j = parse_file(kFixtures / "halfspaces.json");
  j["operator"] = io::Json::object();
  CHECK_THROWS_AS(io::parse_problem(j), InvalidInput);
  j = parse_file(kFixtures / "halfspaces.json");
  j["schedule"]["v"] = {1.0};
  CHECK_THROWS_AS(io::parse_problem(j), InvalidInput);
  CHECK_THROWS_AS(io::load_problem(kFixtures / "missing.json"), InvalidInput);
}

TEST_CASE("generators") {
  const auto a = io::to_json(io::generate_problem("feasibility", 8, 5)).dump(2);
  const auto b = io::to_json(io::generate_problem("feasibility", 8, 5)).dump(2);
  CHECK(a == b);
  CHECK(a != io::to_json(io::generate_problem("feasibility", 8, 6)).dump(2));

  for (const char* kind : {"feasibility", "linear_inequalities"}) {
    const auto p = io::generate_problem(kind, 7, 3);
    REQUIRE(p.planted);
    // strict interior membership, checked from the raw data
    if (p.kind == "feasibility") {
      for (const auto& c : p.sets) {
        const auto& h = std::get<HalfSpace>(c.shape());
        CHECK(h.u.dot(*p.planted) < h.eta - 0.4);
      }
    } else {
      for (std::size_t i = 0; i < p.us.size(); ++i) CHECK(p.us[i].dot(*p.planted) < p.etas[i] - 0.4);
    }
  }

  const auto inv = io::generate_problem("inverse_problem", 10, 4);
  const auto& term = inv.inverse->terms.front();
  const Vector noise = io::vector_from_json(inv.generator->at("noise"), "noise");
  CHECK((term.r - term.l * *inv.planted - noise).norm() <= 1e-12);

  const auto pp = io::generate_problem("proximal_point", 4, 2);
  CHECK((resolvent(*pp.op, 1.0, *pp.planted) - *pp.planted).norm() <= 1e-12);
  CHECK_THROWS_AS(io::generate_problem("nonsense", 3, 1), InvalidInput);
}

TEST_CASE("traces round-trip through JSONL") {
  auto p = io::generate_problem("feasibility", 4, 9);
  p.config.noise = ErrorInjection{0.5, 0.5};
  p.config.tol = 0.0;
  p.config.max_iter = 40;
  const auto res = io::run_problem(p);
  const std::string text = io::trace_to_jsonl(res.trace);
  io::Json header;
  const auto back = io::trace_from_jsonl(text, &header);
  CHECK(header["type"] == "header");
  CHECK(header["solver"] == "periodic_projections");
  REQUIRE(back.size() == res.trace.size());
  for (std::size_t n = 0; n < back.size(); ++n) {
    CHECK(back.records[n].x == res.trace.records[n].x);
    CHECK(back.records[n].a_norm == res.trace.records[n].a_norm);
    CHECK(back.records[n].residuals == res.trace.records[n].residuals);
  }
  CHECK(io::trace_to_jsonl(back) == text);

  // the stored trace reproduces the certificate bit for bit
  const auto c1 = io::default_certificate(res.trace, res.targets);
  const auto c2 = io::default_certificate(back, res.targets);
  CHECK(c1.slacks == c2.slacks);

  std::string reordered = text;
  const auto first = reordered.find("\"n\":1,");
  REQUIRE(first != std::string::npos);
  reordered.replace(first, 6, "\"n\":5,");
  CHECK_THROWS_AS(io::trace_from_jsonl(reordered), InvalidInput);
  CHECK_THROWS_AS(io::trace_from_jsonl(text.substr(text.find('\n') + 1)), InvalidInput);

  const std::string csv = io::certificate_csv(c1);
  CHECK(csv.rfind("target,n,slack,implied_eps\n", 0) == 0);
}

TEST_CASE("run command") {
  const auto out = scratch("run");
  std::ostringstream log;
  REQUIRE(io::cmd_run(kFixtures / "halfspaces.json", out, {}, log) == io::kExitOk);
  for (const char* f : {"trace.jsonl", "summary.json", "certificate.json", "certificate.csv"}) CHECK(fs::exists(out / f));
  const auto summary = parse_file(out / "summary.json");
  CHECK(summary["status"] == "ok");
  CHECK(summary["intersection_residual"].get<double>() <= 1e-8);
  CHECK(summary["certificate"]["pass"] == true);
  CHECK(summary["config_hash"].get<std::string>().size() == 16);

  // determinism: identical trace bytes on a second run
  const auto again = scratch("run_again");
  REQUIRE(io::cmd_run(kFixtures / "halfspaces.json", again, {}, log) == io::kExitOk);
  CHECK(slurp(out / "trace.jsonl") == slurp(again / "trace.jsonl"));

  // overrides are applied and recorded
  const auto ov = scratch("run_override");
  io::Overrides o;
  o.max_iter = 3;
  o.tol = 0.0;
  REQUIRE(io::cmd_run(kFixtures / "halfspaces.json", ov, o, log) == io::kExitOk);
  const auto s2 = parse_file(ov / "summary.json");
  CHECK(s2["iterations"] == 3);
  CHECK(s2["overrides"]["max_iter"] == 3);
  CHECK(s2["config_hash"] != summary["config_hash"]);

  const auto bad = scratch("run_bad");
  CHECK(io::cmd_run(kFixtures / "invalid_schema.json", bad, {}, log) == io::kExitValidation);
  CHECK(parse_file(bad / "summary.json")["status"] == "error");

  const auto band = scratch("run_band");
  CHECK(io::cmd_run(kFixtures / "gamma_band.json", band, {}, log) == io::kExitValidation);
  const auto bs = parse_file(band / "summary.json");
  CHECK(bs["error_kind"] == "hypothesis");
  CHECK(bs["condition"] == "gamma_n <= (1 - epsilon)/S");
}

TEST_CASE("validate command") {
  std::ostringstream out;
  CHECK(io::cmd_validate(kFixtures / "halfspaces.json", out) == io::kExitOk);
  CHECK(io::cmd_validate(kFixtures / "lambda_2_5.json", out) == io::kExitValidation);
  std::ostringstream lv;
  CHECK(io::cmd_validate(kFixtures / "loewner_violation.json", lv) == io::kExitValidation);
  CHECK(lv.str().find("n = 2") != std::string::npos);

  // the violating index agrees with a direct eigenvalue scan of the fixture
  const auto p = io::load_problem(kFixtures / "loewner_violation.json");
  std::size_t first_bad = 99;
  for (std::size_t n = 0; n + 1 < 4 && first_bad == 99; ++n) {
    if (oracle::min_eig(p.schedule->matrix_at(n) - p.schedule->matrix_at(n + 1)) < -1e-10) first_bad = n;
  }
  CHECK(first_bad == 2);

  // wide operator without a coercive f validates with a warning only
  auto q = io::generate_problem("inverse_problem", 6, 1);
  q.inverse->f = ProxFunction::squared_norm(0.0);
  const auto rows = io::validate_problem(q);
  bool warned = false;
  for (const auto& r : rows) {
    CHECK(r.verdict != io::Verdict::fail);
    warned = warned || r.verdict == io::Verdict::warn;
  }
  CHECK(warned);
}

TEST_CASE("report command") {
  const auto run = scratch("report_run");
  std::ostringstream log;
  REQUIRE(io::cmd_run(kFixtures / "halfspaces.json", run, {}, log) == io::kExitOk);
  const auto rep = scratch("report_out");
  CHECK(io::cmd_report(run / "trace.jsonl", {}, rep, log) == io::kExitOk);
  CHECK(parse_file(rep / "certificate.json")["pass"] == true);

  // explicit target inside C: every slack in the CSV is >= -1e-9
  const std::vector<Vector> z{Vector{{-2.0, -3.0, 1.0}}};
  const auto sets = io::load_problem(kFixtures / "halfspaces.json").sets;
  for (const auto& c : sets) REQUIRE(c.contains(z[0]));
  CHECK(io::cmd_report(run / "trace.jsonl", z, rep, log) == io::kExitOk);
  std::istringstream csv(slurp(rep / "certificate.csv"));
  std::string line;
  std::getline(csv, line);
  std::size_t rows = 0;
  while (std::getline(csv, line)) {
    const double slack = std::stod(line.substr(line.find(',', line.find(',') + 1) + 1));
    CHECK(slack >= -1e-9);
    ++rows;
  }
  CHECK(rows > 0);

  // a one-record trace cannot be certified
  const std::string text = slurp(run / "trace.jsonl");
  const auto cut = scratch("truncated") ;
  fs::create_directories(cut);
  std::size_t second_nl = text.find('\n', text.find('\n') + 1);
  std::ofstream(cut / "trace.jsonl") << text.substr(0, second_nl + 1);
  CHECK(io::cmd_report(cut / "trace.jsonl", {}, rep, log) == io::kExitValidation);
}

TEST_CASE("command-line executable") {
  const auto dir = scratch("cli");
  fs::create_directories(dir);
  const std::string fx = kFixtures.string();
  CHECK(cli("generate feasibility --dim 5 --seed 3 --out " + (dir / "a.json").string()) == 0);
  CHECK(cli("generate feasibility --dim 5 --seed 3 --out " + (dir / "b.json").string()) == 0);
  CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
  CHECK(cli("validate " + (dir / "a.json").string()) == 0);
  CHECK(cli("run " + fx + "/halfspaces.json --out " + (dir / "run").string() + " --max-iter 500 --seed 4") == 0);
  CHECK(parse_file(dir / "run" / "summary.json")["overrides"]["seed"] == 4);
  CHECK(cli("report " + (dir / "run" / "trace.jsonl").string() + " --target 0,-1,0 --out " + (dir / "rep").string()) == 0);
  CHECK(cli("validate " + fx + "/lambda_2_5.json") == 2);
  CHECK(cli("run " + fx + "/invalid_schema.json --out " + (dir / "bad").string()) == 2);
  CHECK(cli("run --bogus") == 2);
}
