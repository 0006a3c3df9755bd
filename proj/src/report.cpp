#include "latent_match/report.hpp"

#include "latent_match/errors.hpp"

#include <cmath>

namespace latent {

using nlohmann::json;

namespace {

// JSON has no NaN; non-finite values are written as null.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

json mat(const Eigen::MatrixXd& m) {
  json a = json::array();  // row-major
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(num(m(i, j)));
    a.push_back(row);
  }
  return a;
}

double get_num(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

Eigen::VectorXd get_vec(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = get_num(j[i]);
  return v;
}

Eigen::MatrixXd get_mat(const json& j) {
  const auto r = static_cast<Eigen::Index>(j.size());
  const auto c = r ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(i)].size()) != c)
      throw SchemaError("ragged matrix in report");
    for (Eigen::Index k = 0; k < c; ++k)
      m(i, k) = get_num(j[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)]);
  }
  return m;
}

json mat2(const Eigen::Matrix2d& m) { return mat(Eigen::MatrixXd(m)); }

Eigen::Matrix2d get_mat2(const json& j, const char* name) {
  const Eigen::MatrixXd m = get_mat(j);
  if (m.rows() != 2 || m.cols() != 2) throw SchemaError(std::string(name) + " must be a 2x2 matrix");
  return m;
}

Variant variant_from(const std::string& s) {
  for (auto v : {Variant::matched_raw, Variant::matched_expected, Variant::infeasible_tsls, Variant::two_stage_ls})
    if (to_string(v) == s) return v;
  throw SchemaError("unknown estimate variant '" + s + "'");
}

}  // namespace

json to_json(const EstimateResult& r) {
  json j;
  j["variant"] = to_string(r.variant);
  j["n"] = r.n;
  j["alpha"] = vec(r.alpha);
  j["se"] = vec(r.se);
  j["sigma"] = mat(r.sigma);
  j["omega"] = mat(r.omega);
  j["first_stage_f"] = vec(r.first_stage_f);
  j["diagnostics"] = {{"clamped", r.clamped}, {"failed", r.failed}, {"lambda_mode", r.lambda_mode}};
  return j;
}

EstimateResult estimate_from_json(const json& j) {
  try {
    EstimateResult r;
    r.variant = variant_from(j.at("variant").get<std::string>());
    r.n = j.at("n").get<std::size_t>();
    r.alpha = get_vec(j.at("alpha"));
    r.se = get_vec(j.at("se"));
    r.sigma = get_mat(j.at("sigma"));
    if (j.contains("omega")) r.omega = get_mat(j.at("omega"));
    if (j.contains("first_stage_f")) r.first_stage_f = get_vec(j.at("first_stage_f"));
    if (j.contains("diagnostics")) {
      const auto& d = j.at("diagnostics");
      r.clamped = d.value("clamped", std::size_t{0});
      r.failed = d.value("failed", std::size_t{0});
      r.lambda_mode = d.value("lambda_mode", std::string{});
    }
    if (r.se.size() != r.alpha.size() || r.sigma.rows() != r.alpha.size() || r.sigma.cols() != r.alpha.size())
      throw SchemaError("estimate report has inconsistent dimensions");
    return r;
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed estimate report: ") + e.what());
  }
}

json to_json(const TestResult& t) {
  json j;
  j["kind"] = to_string(t.kind);
  j["statistic"] = num(t.statistic);
  json df = json::array();
  for (double d : t.df) df.push_back(num(d));
  j["df"] = df;
  j["p_value"] = num(t.p_value);
  j["h0"] = t.h0;
  return j;
}

json to_json(const McSummary& s) {
  json j;
  j["spec"] = s.spec;
  j["L"] = s.L;
  j["I"] = s.I;
  j["replications"] = s.replications;
  json cells = json::array();
  for (const auto& c : s.cells)
    cells.push_back({{"param", c.param},
                     {"estimator", to_string(c.estimator)},
                     {"bias", num(c.bias)},
                     {"rmse", num(c.rmse)},
                     {"replications", c.replications},
                     {"failures", c.failures}});
  j["cells"] = cells;
  j["warnings"] = s.warnings;
  return j;
}

json to_json(const DgpSpec& s) {
  json j;
  j["spec"] = s.id;
  j["alpha"] = {s.alpha0, s.alpha1, s.alpha2};
  j["mu_z"] = vec(s.mu_z);
  j["sigma_z"] = mat2(s.sigma_z);
  j["kappa"] = mat2(s.kappa);
  j["sigma_u"] = s.sigma_u;
  j["sigma_eps"] = s.sigma_eps;
  j["sigma_eta"] = mat2(s.sigma_eta);
  j["L"] = s.L;
  j["I"] = s.I;
  j["wage_latency"] = s.wage_latency;
  j["latency"] = s.latency == LatencyMechanism::bernoulli_half ? "bernoulli_half" : "custom";
  j["shifter_cov"] = s.shifter_cov == ShifterCovariance::identity ? "identity" : "moment_matched";
  j["input_perturbation"] = s.input_perturbation;
  j["seed"] = s.seed;
  return j;
}

json to_json(const FirstStageConfig& c) {
  json j;
  j["method"] = to_string(c.method);
  if (c.method == SurfaceMethod::sieve) {
    j["sieve_degree"] = c.sieve_degree;
  } else {
    j["kernel_order"] = c.kernel.order;
    j["bandwidth"] = c.kernel.bandwidth ? json(*c.kernel.bandwidth) : json("auto");
    j["bandwidth_scale"] = c.kernel.scale;
  }
  j["scope"] = to_string(c.scope);
  j["use_z"] = c.fit.use_z;
  j["envelope_pad"] = c.fit.envelope_pad;
  j["allow_collinear"] = c.fit.allow_collinear;
  j["grid_density"] = c.grid_density;
  j["floor"] = c.floor;
  return j;
}

void apply_overrides(DgpSpec& s, const json& j) {
  try {
    if (j.contains("alpha")) {
      const auto& a = j.at("alpha");
      if (a.size() != 3) throw SchemaError("alpha must have three entries");
      s.alpha0 = a[0].get<double>();
      s.alpha1 = a[1].get<double>();
      s.alpha2 = a[2].get<double>();
    }
    if (j.contains("mu_z")) {
      const auto v = get_vec(j.at("mu_z"));
      if (v.size() != 2) throw SchemaError("mu_z must have two entries");
      s.mu_z = v;
    }
    if (j.contains("sigma_z")) s.sigma_z = get_mat2(j.at("sigma_z"), "sigma_z");
    if (j.contains("kappa")) s.kappa = get_mat2(j.at("kappa"), "kappa");
    if (j.contains("sigma_eta")) s.sigma_eta = get_mat2(j.at("sigma_eta"), "sigma_eta");
    s.sigma_u = j.value("sigma_u", s.sigma_u);
    s.sigma_eps = j.value("sigma_eps", s.sigma_eps);
    s.L = j.value("L", s.L);
    s.I = j.value("I", s.I);
    s.wage_latency = j.value("wage_latency", s.wage_latency);
    s.input_perturbation = j.value("input_perturbation", s.input_perturbation);
    s.seed = j.value("seed", s.seed);
    if (j.contains("shifter_cov")) {
      const auto v = j.at("shifter_cov").get<std::string>();
      if (v == "identity") s.shifter_cov = ShifterCovariance::identity;
      else if (v == "moment_matched") s.shifter_cov = ShifterCovariance::moment_matched;
      else throw SchemaError("shifter_cov must be identity or moment_matched");
    }
  } catch (const json::exception& e) {
    throw SchemaError(std::string("malformed DGP config: ") + e.what());
  }
}

}  // namespace latent
