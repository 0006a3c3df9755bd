// latent-match: estimate / simulate / impute / test front end.
#include "latent_match/core_model.hpp"
#include "latent_match/errors.hpp"
#include "latent_match/estimator.hpp"
#include "latent_match/first_stage.hpp"
#include "latent_match/imputation.hpp"
#include "latent_match/inference.hpp"
#include "latent_match/report.hpp"
#include "latent_match/simulation.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

using nlohmann::json;
namespace lm = latent;

namespace {

constexpr int kExitInput = 2;
constexpr int kExitNumerical = 3;
constexpr std::uint64_t kDefaultSeed = 20240601;

struct StageError : std::runtime_error {
  StageError(std::string stage, const lm::Error& e, int code)
      : std::runtime_error(stage + ": " + e.what()), exit_code(code) {}
  int exit_code;
};

int code_of(const lm::Error& e) { return dynamic_cast<const lm::InputError*>(&e) ? kExitInput : kExitNumerical; }

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const lm::Error& e) {
    throw StageError(name, e, code_of(e));
  }
}

struct FirstStageFlags {
  std::string method = "sieve2";
  std::string bandwidth = "auto";
  int kernel_order = 4;
  double bandwidth_scale = 1.0;
  std::string scope = "pooled";
  bool collinear = false;

  void add(CLI::App* app) {
    app->add_option("--first-stage", method, "kernel, sieve2 or sieve3")
        ->check(CLI::IsMember({"kernel", "sieve1", "sieve2", "sieve3"}))
        ->capture_default_str();
    app->add_option("--bandwidth", bandwidth, "kernel bandwidth in standardized units, or auto")
        ->capture_default_str();
    app->add_option("--bandwidth-scale", bandwidth_scale, "C in C * N^(-1/7) when --bandwidth auto")
        ->capture_default_str();
    app->add_option("--kernel-order", kernel_order)->check(CLI::IsMember({4, 6}))->capture_default_str();
    app->add_option("--scope", scope, "pooled, per_market or automatic")
        ->check(CLI::IsMember({"pooled", "per_market", "automatic"}))
        ->capture_default_str();
    app->add_flag("--allow-collinear", collinear, "minimum-norm sieve fit on collinear designs");
  }

  lm::FirstStageConfig resolve() const {
    lm::FirstStageConfig c;
    if (method == "kernel") {
      c.method = lm::SurfaceMethod::kernel;
      c.kernel.order = kernel_order;
      c.kernel.scale = bandwidth_scale;
      if (bandwidth != "auto") {
        try {
          c.kernel.bandwidth = std::stod(bandwidth);
        } catch (const std::exception&) {
          throw lm::InvalidSpec("--bandwidth must be a positive number or auto");
        }
        if (!(*c.kernel.bandwidth > 0.0)) throw lm::InvalidSpec("--bandwidth must be positive");
      }
    } else {
      c.method = lm::SurfaceMethod::sieve;
      c.sieve_degree = method.back() - '0';
    }
    c.scope = scope == "pooled" ? lm::FirstStageScope::pooled
              : scope == "per_market" ? lm::FirstStageScope::per_market
                                      : lm::FirstStageScope::automatic;
    c.fit.allow_collinear = collinear;
    return c;
  }
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag) {
  if (flag) return *flag;
  if (const char* env = std::getenv("LATENT_MATCH_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw lm::InvalidSpec("LATENT_MATCH_SEED is not an unsigned integer");
    }
  }
  return kDefaultSeed;
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path);
  if (!out) throw lm::SchemaError("cannot write '" + path + "'");
  out << text;
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw lm::SchemaError("cannot open '" + path + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw lm::SchemaError("'" + path + "' is not valid JSON: " + e.what());
  }
}

std::map<int, Eigen::VectorXd> read_shifters(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw lm::SchemaError("cannot open '" + path + "'");
  std::string line;
  std::getline(in, line);  // market_id,D1,D2,...
  std::map<int, Eigen::VectorXd> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string f;
    std::vector<double> v;
    while (std::getline(ss, f, ',')) v.push_back(std::stod(f));
    if (v.size() < 2) throw lm::SchemaError("shifter rows need market_id and at least one shifter");
    out[static_cast<int>(v[0])] = Eigen::Map<Eigen::VectorXd>(v.data() + 1, static_cast<Eigen::Index>(v.size() - 1));
  }
  return out;
}

// Reads, completes missing wages when shifters are given, validates.
lm::Sample load_sample(const std::string& input, const std::string& shifters, json& diag) {
  lm::Sample s = stage("input", [&] { return lm::read_sample_csv(input); });
  if (!shifters.empty()) {
    auto wi = stage("wage imputation", [&] { return lm::impute_latent_wages(s, read_shifters(shifters)); });
    diag["wage_imputation"] = {{"r_squared", wi.r_squared}, {"imputed_cells", wi.imputed_cells}};
    s = std::move(wi.completed);
  }
  const auto report = lm::validate_sample(s);
  if (!report.ok()) throw StageError("input", lm::SchemaError(report.summary()), kExitInput);
  return s;
}

json surface_info(const lm::RegressionSurface& s) {
  json j = {{"tag", s.tag()}, {"certified", s.certified()}, {"n", s.fit_size()}};
  if (s.method() == lm::SurfaceMethod::kernel) j["bandwidth"] = s.bandwidth();
  return j;
}

json first_stage_info(const lm::FirstStage& fs) {
  json j;
  j["scope"] = lm::to_string(fs.scope());
  json markets = json::array();
  for (const auto& [id, pair] : fs.markets())
    markets.push_back({{"market_id", id}, {"gamma1", surface_info(pair.gamma1)}, {"gamma2", surface_info(pair.gamma2)}});
  j["surfaces"] = markets;
  return j;
}

void print_estimate_table(std::ostream& os, const json& results) {
  os << std::left << std::setw(18) << "variant" << std::right << std::setw(12) << "alpha0" << std::setw(12)
     << "alpha1" << std::setw(12) << "alpha2" << '\n';
  for (const auto& r : results) {
    os << std::left << std::setw(18) << r["variant"].get<std::string>() << std::right << std::fixed
       << std::setprecision(4);
    for (const auto& a : r["alpha"]) os << std::setw(12) << (a.is_null() ? std::nan("") : a.get<double>());
    os << '\n' << std::setw(18) << "" << std::right;
    for (const auto& s : r["se"]) os << std::setw(12) << (s.is_null() ? std::nan("") : s.get<double>());
    os << '\n';
  }
}

int cmd_estimate(const std::string& input, const std::string& output, const FirstStageFlags& fsf,
                 std::vector<std::string> variants, const std::string& lambda, bool drop_clamped,
                 const std::string& imputed_csv, const std::string& complete_csv, const std::string& shifters) {
  if (variants.empty()) variants = {"raw_y"};
  json doc;
  json diag;
  const lm::FirstStageConfig fcfg = stage("config", [&] { return fsf.resolve(); });
  lm::MatchedOptions mopt;
  mopt.estimator.drop_clamped = drop_clamped;
  mopt.lambda = lambda == "smoothed" ? lm::LambdaMode::smoothed : lm::LambdaMode::proportion;
  mopt.floor = fcfg.floor;
  doc["config"] = {{"command", "estimate"},       {"input", input},
                   {"first_stage", lm::to_json(fcfg)}, {"variants", variants},
                   {"lambda", lm::to_string(mopt.lambda)}, {"drop_clamped", drop_clamped},
                   {"complete", complete_csv},     {"shifters", shifters}};

  const lm::Sample sample = load_sample(input, shifters, diag);
  std::optional<lm::FirstStage> fs;
  std::optional<lm::ImputedSample> imp;
  auto ensure = [&] {
    if (imp) return;
    fs = stage("first stage", [&] { return lm::fit_first_stage(sample, fcfg); });
    doc["first_stage"] = first_stage_info(*fs);
    imp = stage("imputation", [&] { return lm::impute_latent(sample, *fs); });
    diag["imputation"] = {{"interior", imp->count(lm::ImputeFlag::interior)},
                          {"clamped_low", imp->count(lm::ImputeFlag::clamped_low)},
                          {"clamped_high", imp->count(lm::ImputeFlag::clamped_high)},
                          {"failed", imp->count(lm::ImputeFlag::failed)}};
  };

  json results = json::array();
  for (const auto& v : variants) {
    if (v == "infeasible") {
      if (complete_csv.empty())
        throw StageError("config", lm::InvalidSpec("variant infeasible needs --complete <csv>"), kExitInput);
      const auto complete = stage("input", [&] {
        std::ifstream in(complete_csv);
        if (!in) throw lm::SchemaError("cannot open '" + complete_csv + "'");
        return lm::read_complete_csv(in);
      });
      results.push_back(lm::to_json(stage("estimation", [&] { return lm::infeasible_tsls(complete, mopt.estimator); })));
      continue;
    }
    ensure();
    const auto outcome = v == "expected_y" ? lm::Outcome::expected_y : lm::Outcome::raw_y;
    results.push_back(lm::to_json(stage("estimation", [&] { return lm::estimate_matched(*imp, *fs, outcome, mopt); })));
  }
  doc["results"] = results;
  doc["diagnostics"] = diag;

  if (!imputed_csv.empty()) {
    ensure();
    std::ofstream out(imputed_csv);
    if (!out) throw StageError("output", lm::SchemaError("cannot write '" + imputed_csv + "'"), kExitInput);
    lm::write_imputed_csv(out, *imp);
  }
  write_text(output, doc.dump(2) + "\n");
  if (!output.empty() && output != "-") print_estimate_table(std::cout, results);
  return 0;
}

int cmd_impute(const std::string& input, const std::string& output, const FirstStageFlags& fsf,
               const std::string& shifters, const std::string& surface_grid) {
  json diag;
  const lm::FirstStageConfig fcfg = stage("config", [&] { return fsf.resolve(); });
  const lm::Sample sample = load_sample(input, shifters, diag);
  const auto fs = stage("first stage", [&] { return lm::fit_first_stage(sample, fcfg); });
  const auto imp = stage("imputation", [&] { return lm::impute_latent(sample, fs); });
  std::ostringstream os;
  lm::write_imputed_csv(os, imp);
  write_text(output, os.str());
  if (!surface_grid.empty()) {
    std::ofstream g(surface_grid);
    if (!g) throw StageError("output", lm::SchemaError("cannot write '" + surface_grid + "'"), kExitInput);
    for (int d : {1, 2}) {
      g << "# gamma" << d << "\n";
      lm::write_surface_grid(g, fs.pooled_pair()[d], fcfg.grid_density);
    }
  }
  json info = {{"config", {{"command", "impute"}, {"input", input}, {"first_stage", lm::to_json(fcfg)}}},
               {"first_stage", first_stage_info(fs)},
               {"diagnostics", diag}};
  std::cerr << info.dump(2) << '\n';
  return 0;
}

int cmd_simulate(int spec_id, int markets, int firms, int reps, std::optional<std::uint64_t> seed_flag,
                 bool wage_latency, int threads, const std::string& output, const std::string& json_out,
                 const std::string& records, const std::string& config, bool star, bool variance,
                 const FirstStageFlags& fsf, bool fs_overridden) {
  // InvalidSpec is an input error elsewhere, but a bad DGP is a numerical-stage failure here
  lm::DgpSpec spec;
  lm::McConfig mc;
  try {
    spec = lm::DgpSpec::table1(spec_id);
    if (!config.empty()) lm::apply_overrides(spec, read_json_file(config));
    if (markets > 0) spec.L = markets;
    if (firms > 0) spec.I = firms;
    if (wage_latency) spec.wage_latency = true;
    spec.seed = resolve_seed(seed_flag);
    const auto problems = spec.validate();
    if (!problems.empty()) throw lm::InvalidSpec(problems.front());
    mc.replications = reps;
    mc.threads = threads;
    mc.variance = variance;
    mc.keep_records = !records.empty();
    if (star) mc.estimators.push_back(lm::McEstimator::matched_star);
    if (fs_overridden) mc.first_stage = fsf.resolve();
  } catch (const lm::InvalidSpec& e) {
    throw StageError("spec", e, kExitNumerical);
  }

  const lm::McSummary s = stage("simulation", [&] { return lm::run_monte_carlo(spec, mc); });
  std::ostringstream csv;
  lm::write_summary_csv(csv, s);
  write_text(output, csv.str());
  if (!output.empty() && output != "-") lm::write_summary_table(std::cout, s);
  for (const auto& w : s.warnings) std::cerr << "warning: " << w << '\n';

  if (!json_out.empty()) {
    json doc;
    doc["config"] = {{"command", "simulate"}, {"dgp", lm::to_json(spec)}, {"reps", reps},
                     {"threads", threads},    {"first_stage", lm::to_json(mc.first_stage)},
                     {"variance", variance}};
    doc["summary"] = lm::to_json(s);
    write_text(json_out, doc.dump(2) + "\n");
  }
  if (!records.empty()) {
    std::ostringstream rec;
    lm::write_records_csv(rec, s);
    write_text(records, rec.str());
  }
  return 0;
}

struct TestFlags {
  std::string kind = "wald";
  std::vector<std::string> reports;
  int coef = 1;
  std::string tail = "lower";
  double var_a = 0, df_a = 0, var_b = 0, df_b = 0;
  std::string input;
  int klass = 1;
  std::string null = "both_one";
  std::string output;
};

int cmd_test(const TestFlags& t) {
  json doc;
  doc["config"] = {{"command", "test"}, {"kind", t.kind},   {"reports", t.reports}, {"coef", t.coef},
                   {"tail", t.tail},    {"input", t.input}, {"class", t.klass},     {"null", t.null}};
  lm::TestResult r;
  auto load = [&](const std::string& p) {
    json j = stage("input", [&] { return read_json_file(p); });
    // accept a full estimate report (first result) or a bare estimate
    if (j.contains("results")) {
      if (j["results"].empty()) throw StageError("input", lm::SchemaError("'" + p + "' has no results"), kExitInput);
      j = j["results"][0];
    }
    return stage("input", [&] { return lm::estimate_from_json(j); });
  };
  if (t.kind == "wald" || t.kind == "t") {
    if (t.reports.empty() || t.reports.size() > 2)
      throw StageError("config", lm::InvalidSpec("give one or two --report files"), kExitInput);
    const auto a = load(t.reports[0]);
    const auto b = t.reports.size() == 2 ? load(t.reports[1]) : a;
    if (a.alpha.size() != b.alpha.size())
      throw StageError("input", lm::SchemaError("reports have different coefficient dimensions"), kExitInput);
    if (t.kind == "wald") {
      r = stage("test", [&] { return lm::wald_joint(a, b); });
    } else {
      if (t.coef < 0 || t.coef >= a.alpha.size())
        throw StageError("config", lm::InvalidSpec("--coef outside the estimates"), kExitInput);
      r = lm::t_one_sided(a, b, t.coef, t.tail == "upper" ? lm::Tail::upper : lm::Tail::lower);
    }
  } else if (t.kind == "f") {
    try {
      r = lm::f_ratio(t.var_a, t.df_a, t.var_b, t.df_b);
    } catch (const std::invalid_argument& e) {
      throw StageError("config", lm::InvalidSpec(e.what()), kExitInput);
    }
  } else {
    if (t.input.empty()) throw StageError("config", lm::InvalidSpec("optimality test needs --input"), kExitInput);
    json diag;
    const auto s = load_sample(t.input, "", diag);
    r = stage("test", [&] {
      return lm::optimality_test(s, t.klass, t.null == "equal" ? lm::OptimalityNull::equal : lm::OptimalityNull::both_one);
    });
  }
  doc["test"] = lm::to_json(r);
  write_text(t.output, doc.dump(2) + "\n");
  if (!t.output.empty() && t.output != "-") {
    std::cout << std::left << std::setw(18) << "test" << std::setw(14) << "statistic" << std::setw(14) << "p-value"
              << "H0\n"
              << std::setw(18) << lm::to_string(r.kind) << std::fixed << std::setprecision(3) << std::setw(14)
              << r.statistic << std::setw(14) << r.p_value << r.h0 << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Matched TSLS for partially latent covariates"};
  app.require_subcommand(1);

  std::string input, output, lambda = "proportion", imputed_csv, complete_csv, shifters;
  std::vector<std::string> variants;
  bool drop_clamped = false;
  FirstStageFlags est_fs;
  auto* est = app.add_subcommand("estimate", "first stage, imputation and second stage on a CSV sample");
  est->add_option("--input", input, "sample CSV: y,d,x_obs,z1,z2[,market_id][,weight]")->required();
  est->add_option("--output", output, "JSON report path (stdout if omitted)");
  est_fs.add(est);
  est->add_option("--variant", variants, "raw_y, expected_y or infeasible; repeatable")
      ->check(CLI::IsMember({"raw_y", "expected_y", "infeasible"}));
  est->add_option("--lambda", lambda)->check(CLI::IsMember({"proportion", "smoothed"}))->capture_default_str();
  est->add_flag("--drop-clamped", drop_clamped, "exclude rows whose imputation was clamped");
  est->add_option("--imputed-csv", imputed_csv, "write imputed rows here");
  est->add_option("--complete", complete_csv, "complete-data CSV for the infeasible benchmark");
  est->add_option("--shifters", shifters, "market_id,D1,D2 CSV used to fill missing wages");

  FirstStageFlags imp_fs;
  std::string imp_input, imp_output, imp_shifters, imp_grid;
  auto* imp = app.add_subcommand("impute", "write imputed latent inputs");
  imp->add_option("--input", imp_input)->required();
  imp->add_option("--output", imp_output, "imputed CSV path (stdout if omitted)");
  imp->add_option("--shifters", imp_shifters);
  imp->add_option("--surface-grid", imp_grid, "diagnostic grid of the pooled surfaces");
  imp_fs.add(imp);

  int spec_id = 1, markets = 0, firms = 0, reps = 1000, threads = 0;
  std::optional<std::uint64_t> seed;
  bool wage_latency = false, star = false, variance = false;
  std::string sim_out, sim_json, sim_records, sim_config;
  FirstStageFlags sim_fs;
  sim_fs.scope = "automatic";
  auto* sim = app.add_subcommand("simulate", "Monte Carlo campaign over a preset DGP");
  sim->add_option("--spec", spec_id)->check(CLI::IsMember({1, 2, 3}))->capture_default_str();
  sim->add_option("--markets", markets, "L (preset default 50)");
  sim->add_option("--firms", firms, "I (preset default 50)");
  sim->add_option("--reps", reps)->check(CLI::PositiveNumber)->capture_default_str();
  sim->add_option("--seed", seed, "master seed (falls back to LATENT_MATCH_SEED)");
  sim->add_flag("--wage-latency", wage_latency, "observe only the wage matching the observed input");
  sim->add_option("--threads", threads, "worker cap; 0 = all cores")->capture_default_str();
  sim->add_option("--output", sim_out, "summary CSV path (stdout if omitted)");
  sim->add_option("--json", sim_json, "summary JSON path");
  sim->add_option("--records", sim_records, "per-replication estimates CSV");
  sim->add_option("--config", sim_config, "JSON with DGP overrides");
  sim->add_flag("--star", star, "also run the expected-outcome variant");
  sim->add_flag("--variance", variance, "compute influence-corrected standard errors");
  sim_fs.add(sim);

  TestFlags tf;
  auto* tst = app.add_subcommand("test", "hypothesis tests on estimate reports or a sample");
  tst->add_option("--kind", tf.kind)->check(CLI::IsMember({"wald", "t", "f", "optimality"}))->capture_default_str();
  tst->add_option("--report", tf.reports, "estimate report JSON; repeat for two samples");
  tst->add_option("--coef", tf.coef, "coefficient index for the t test")->capture_default_str();
  tst->add_option("--tail", tf.tail)->check(CLI::IsMember({"lower", "upper"}))->capture_default_str();
  tst->add_option("--var-a", tf.var_a);
  tst->add_option("--df-a", tf.df_a);
  tst->add_option("--var-b", tf.var_b);
  tst->add_option("--df-b", tf.df_b);
  tst->add_option("--input", tf.input, "sample CSV for the optimality test");
  tst->add_option("--class", tf.klass)->check(CLI::IsMember({1, 2}))->capture_default_str();
  tst->add_option("--null", tf.null)->check(CLI::IsMember({"both_one", "equal"}))->capture_default_str();
  tst->add_option("--output", tf.output, "JSON path (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitInput;
  }

  try {
    if (*est)
      return cmd_estimate(input, output, est_fs, variants, lambda, drop_clamped, imputed_csv, complete_csv, shifters);
    if (*imp) return cmd_impute(imp_input, imp_output, imp_fs, imp_shifters, imp_grid);
    if (*sim) {
      const bool fs_overridden = sim->count("--first-stage") + sim->count("--scope") + sim->count("--bandwidth") +
                                     sim->count("--kernel-order") + sim->count("--allow-collinear") >
                                 0;
      return cmd_simulate(spec_id, markets, firms, reps, seed, wage_latency, threads, sim_out, sim_json, sim_records,
                          sim_config, star, variance, sim_fs, fs_overridden);
    }
    if (*tst) return cmd_test(tf);
  } catch (const StageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code;
  } catch (const lm::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return code_of(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitInput;
  }
  return 0;
}
