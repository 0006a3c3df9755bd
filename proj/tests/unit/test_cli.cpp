#include "latent_match/simulation.hpp"

#include "support.hpp"

#include <doctest.h>
#include <json.hpp>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

using namespace latent;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

const fs::path& workdir() {
  static const fs::path dir = [] {
    fs::path d = fs::current_path() / "cli_work";
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

std::string path(const std::string& name) { return (workdir() / name).string(); }

std::string slurp(const std::string& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Run {
  int code = -1;
  std::string out;
  std::string err;
};

Run cli(const std::string& args, const std::string& env = "") {
  const std::string out = path("stdout.txt"), err = path("stderr.txt");
  const std::string cmd = env + " \"" LATENT_MATCH_CLI "\" " + args + " > \"" + out + "\" 2> \"" + err + "\"";
  const int status = std::system(cmd.c_str());
  Run r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

// Spec-1 draw with one firm per market, written as a sample CSV.
std::string fixture(std::size_t n, std::uint64_t seed) {
  const std::string p = path("fixture_" + std::to_string(n) + "_" + std::to_string(seed) + ".csv");
  const auto data = support::simulate(support::pooled_spec(1, static_cast<int>(n)), seed);
  std::ofstream out(p);
  write_sample_csv(out, data.masked);
  return p;
}

}  // namespace

TEST_CASE("estimate recovers the truth on a simulated fixture") {
  const std::string in = fixture(5000, 31);
  const std::string rep = path("fixture_report.json");
  const auto r = cli("estimate --input \"" + in + "\" --output \"" + rep + "\"");
  REQUIRE(r.code == 0);
  const json j = json::parse(slurp(rep));
  REQUIRE(j["results"].size() == 1);
  const auto& res = j["results"][0];
  CHECK(res["variant"] == "matched_raw");
  const auto spec = DgpSpec::table1(1);
  const double truth[] = {spec.alpha0, spec.alpha1, spec.alpha2};
  for (int k = 0; k < 3; ++k) {
    const double a = res["alpha"][k].get<double>(), se = res["se"][k].get<double>();
    CHECK(se > 0.0);
    CHECK(std::abs(a - truth[k]) <= 3.0 * se);
  }
  // the resolved configuration is echoed, defaults included
  CHECK(j["config"]["command"] == "estimate");
  CHECK(j["config"]["lambda"] == "proportion");
  CHECK(j["config"]["first_stage"]["method"] == "sieve");
  CHECK(j["config"]["first_stage"]["sieve_degree"] == 2);
  CHECK(j["diagnostics"]["imputation"].contains("clamped_low"));
  // a table goes to stdout when the report goes to a file
  CHECK(r.out.find("matched_raw") != std::string::npos);
}

TEST_CASE("two variants share one report") {
  const std::string in = fixture(2000, 32);
  const auto r = cli("estimate --input \"" + in + "\" --variant expected_y --variant raw_y");
  REQUIRE(r.code == 0);
  const json j = json::parse(r.out);
  REQUIRE(j["results"].size() == 2);
  CHECK(j["results"][0]["variant"] == "matched_expected");
  CHECK(j["results"][1]["variant"] == "matched_raw");
  CHECK(j["results"][0]["n"] == j["results"][1]["n"]);
  CHECK(j["first_stage"]["surfaces"].size() == 1);
}

TEST_CASE("schema violations exit 2 and name the column") {
  const std::string in = path("no_d.csv");
  std::ofstream(in) << "y,x_obs,z1,z2\n1,0.5,2.4,2.1\n2,0.7,2.3,2.2\n";
  const auto r = cli("estimate --input \"" + in + "\"");
  CHECK(r.code == 2);
  CHECK(r.err.find("'d'") != std::string::npos);
  CHECK(r.err.find("input") != std::string::npos);

  CHECK(cli("estimate --input \"" + path("does_not_exist.csv") + "\"").code == 2);
  CHECK(cli("estimate").code == 2);
  CHECK(cli("estimate --input \"" + in + "\" --variant bogus").code == 2);
}

TEST_CASE("simulate is reproducible") {
  const std::string args = "simulate --spec 1 --markets 50 --firms 50 --reps 3 --seed 5 --threads 2";
  const auto a = cli(args);
  const auto b = cli(args);
  REQUIRE(a.code == 0);
  CHECK(a.out == b.out);
  CHECK(a.out.rfind("param,estimator,spec,L,I,bias,rmse,failures\n", 0) == 0);

  // the environment seed stands in for --seed
  const auto e = cli("simulate --spec 1 --markets 50 --firms 50 --reps 3 --threads 2", "LATENT_MATCH_SEED=5");
  CHECK(e.out == a.out);
  const auto other = cli("simulate --spec 1 --markets 50 --firms 50 --reps 3 --seed 6 --threads 2");
  CHECK(other.out != a.out);

  const std::string js = path("sim.json");
  REQUIRE(cli(args + " --json \"" + js + "\"").code == 0);
  const json j = json::parse(slurp(js));
  CHECK(j["config"]["dgp"]["seed"] == 5);
  CHECK(j["config"]["dgp"]["L"] == 50);
  CHECK(j["config"]["reps"] == 3);
  CHECK(j["summary"]["cells"].size() == 6);
}

TEST_CASE("a single replication warns") {
  const auto r = cli("simulate --spec 2 --markets 500 --firms 1 --reps 1 --seed 3");
  REQUIRE(r.code == 0);
  CHECK(r.err.find("warning") != std::string::npos);
  std::istringstream lines(r.out);
  std::string line;
  std::getline(lines, line);
  int rows = 0;
  while (std::getline(lines, line)) {
    ++rows;
    CHECK(line.find(",0,") != std::string::npos);  // rmse column
  }
  CHECK(rows == 6);
}

TEST_CASE("invalid DGP exits 3") {
  const std::string cfg = path("bad_dgp.json");
  std::ofstream(cfg) << R"({"alpha":[4.0,0.7,0.5]})";
  const auto r = cli("simulate --reps 2 --config \"" + cfg + "\"");
  CHECK(r.code == 3);
  CHECK(r.err.find("spec") != std::string::npos);
}

TEST_CASE("test subcommand") {
  const std::string in = fixture(2000, 33);
  const std::string rep = path("self_report.json");
  REQUIRE(cli("estimate --input \"" + in + "\" --output \"" + rep + "\"").code == 0);

  const auto w = cli("test --kind wald --report \"" + rep + "\" --report \"" + rep + "\"");
  REQUIRE(w.code == 0);
  const json j = json::parse(w.out);
  CHECK(j["test"]["statistic"] == 0.0);
  CHECK(j["test"]["p_value"] == 1.0);
  CHECK(j["config"]["kind"] == "wald");

  const auto f = cli("test --kind f --var-a 1.532 --df-a 141 --var-b 1 --df-b 185");
  REQUIRE(f.code == 0);
  const double p = json::parse(f.out)["test"]["p_value"].get<double>();
  CHECK(p > 0.002);
  CHECK(p < 0.004);

  const auto opt = cli("test --kind optimality --input \"" + in + "\" --class 2");
  REQUIRE(opt.code == 0);
  CHECK(json::parse(opt.out)["test"]["kind"] == "optimality_wald");

  const std::string two = path("two_coef.json");
  std::ofstream(two) << R"({"variant":"matched_raw","n":5,"alpha":[1,2],"se":[1,1],"sigma":[[1,0],[0,1]]})";
  CHECK(cli("test --kind wald --report \"" + rep + "\" --report \"" + two + "\"").code == 2);
}
