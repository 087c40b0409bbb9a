#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vmfejer/cli_io.hpp"

namespace io = vmfejer::io;

namespace {

vmfejer::Vector parse_point(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) values.push_back(std::stod(item));
  return Eigen::Map<const vmfejer::Vector>(values.data(), static_cast<Eigen::Index>(values.size()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variable-metric quasi-Fejer solvers with certificates"};
  app.require_subcommand(1);

  std::string problem, out_dir, trace_path, kind, out_file;
  io::Overrides overrides;
  std::size_t max_iter = 0;
  double tol = 0.0, epsilon = 0.0;
  std::uint64_t seed = 0;
  std::vector<std::string> targets;
  long dim = 0;

  auto* run = app.add_subcommand("run", "Run a problem file and write trace, certificate and summary");
  run->add_option("problem", problem, "problem JSON")->required();
  run->add_option("--out", out_dir, "output directory")->required();
  auto* o_iter = run->add_option("--max-iter", max_iter);
  auto* o_tol = run->add_option("--tol", tol);
  auto* o_seed = run->add_option("--seed", seed);
  auto* o_eps = run->add_option("--epsilon", epsilon);

  auto* validate = app.add_subcommand("validate", "Check every applicable hypothesis");
  validate->add_option("problem", problem, "problem JSON")->required();

  auto* report = app.add_subcommand("report", "Certify a stored trace");
  report->add_option("trace", trace_path, "trace JSONL")->required();
  report->add_option("--target", targets, "comma-separated target point (repeatable)");
  report->add_option("--out", out_dir, "output directory")->required();

  auto* generate = app.add_subcommand("generate", "Write a synthetic problem file");
  generate->add_option("kind", kind, "feasibility | linear_inequalities | proximal_point | inverse_problem")
      ->required();
  generate->add_option("--dim", dim)->required();
  generate->add_option("--seed", seed)->required();
  generate->add_option("--out", out_file)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : io::kExitValidation;
  }

  if (*run) {
    if (*o_iter) overrides.max_iter = max_iter;
    if (*o_tol) overrides.tol = tol;
    if (*o_seed) overrides.seed = seed;
    if (*o_eps) overrides.epsilon = epsilon;
    return io::cmd_run(problem, out_dir, overrides, std::cout);
  }
  if (*validate) return io::cmd_validate(problem, std::cout);
  if (*report) {
    std::vector<vmfejer::Vector> zs;
    try {
      for (const auto& t : targets) zs.push_back(parse_point(t));
    } catch (const std::exception&) {
      std::cerr << "report: cannot parse --target\n";
      return io::kExitValidation;
    }
    return io::cmd_report(trace_path, zs, out_dir, std::cout);
  }
  return io::cmd_generate(kind, dim, seed, out_file, std::cout);
}
