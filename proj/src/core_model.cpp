#include "latent_match/core_model.hpp"

#include "latent_match/errors.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

namespace latent {

Sample::Sample(std::vector<Observation> rows) : rows_(std::move(rows)) {
  if (!rows_.empty()) instrument_dim_ = rows_.front().z.size();
}

std::size_t Sample::count(int d) const {
  std::size_t n = 0;
  for (const auto& r : rows_) n += (r.d == d);
  return n;
}

std::string ValidationReport::summary() const {
  if (ok()) return "pass";
  std::ostringstream os;
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i) os << "; ";
    os << violations[i].message;
  }
  return os.str();
}

ValidationReport validate_sample(const Sample& sample) {
  ValidationReport report;
  auto add = [&](std::optional<std::size_t> row, std::string msg) {
    report.violations.push_back({row, std::move(msg)});
  };

  const Eigen::Index dim = sample.instrument_dim();
  if (!sample.empty() && dim < 2)
    add(std::nullopt, "instrument dimension " + std::to_string(dim) +
                          " below the required 2");

  for (std::size_t i = 0; i < sample.size(); ++i) {
    const auto& r = sample[i];
    const std::string where = "row " + std::to_string(i) + ": ";
    if (r.d != 1 && r.d != 2)
      add(i, where + "latency indicator " + std::to_string(r.d) +
                 " not in {1,2}");
    if (!std::isfinite(r.y)) add(i, where + "non-finite y");
    if (!std::isfinite(r.x_obs)) add(i, where + "non-finite x_obs");
    if (r.z.size() != dim) {
      add(i, where + "instrument dimension " + std::to_string(r.z.size()) +
                 ", expected " + std::to_string(dim));
    } else if (!r.z.allFinite()) {
      add(i, where + "non-finite instrument");
    }
    if (!(std::isfinite(r.weight) && r.weight > 0.0))
      add(i, where + "weight must be positive and finite");
  }

  if (sample.count(1) == 0) add(std::nullopt, "latency class 1 empty");
  if (sample.count(2) == 0) add(std::nullopt, "latency class 2 empty");
  return report;
}

LatencySplit split_by_latency(const Sample& sample) {
  std::vector<Observation> first, second;
  LatencySplit split;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    if (sample[i].d == 1) {
      first.push_back(sample[i]);
      split.first_index.push_back(i);
    } else {
      second.push_back(sample[i]);
      split.second_index.push_back(i);
    }
  }
  split.first = Sample(std::move(first));
  split.second = Sample(std::move(second));
  return split;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) {
    while (!field.empty() && (field.back() == '\r' || field.back() == ' '))
      field.pop_back();
    std::size_t start = field.find_first_not_of(' ');
    out.push_back(start == std::string::npos ? "" : field.substr(start));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_real(const std::string& s) {
  if (s.empty() || s == "NA" || s == "nan" || s == "NaN")
    return std::numeric_limits<double>::quiet_NaN();
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw SchemaError("cannot parse '" + s + "' as a number");
  return v;
}

struct Header {
  std::map<std::string, std::size_t> index;
  std::vector<std::size_t> z_cols;

  std::size_t require(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw SchemaError("missing required column '" + name + "'");
    return it->second;
  }
  std::optional<std::size_t> optional(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) return std::nullopt;
    return it->second;
  }
};

Header parse_header(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw SchemaError("empty input: header row required");
  if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF)
    line.erase(0, 3);  // UTF-8 BOM
  Header h;
  auto names = split_fields(line);
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (!h.index.emplace(names[i], i).second)
      throw SchemaError("duplicate column '" + names[i] + "'");
  }
  for (int k = 1;; ++k) {
    auto idx = h.optional("z" + std::to_string(k));
    if (!idx) break;
    h.z_cols.push_back(*idx);
  }
  if (h.z_cols.size() < 2) {
    h.require("z1");
    h.require("z2");
  }
  return h;
}

template <typename RowFn>
void for_each_record(std::istream& in, std::size_t ncols, RowFn&& fn) {
  std::string line;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line == "\r") continue;
    auto fields = split_fields(line);
    if (fields.size() != ncols)
      throw SchemaError("line " + std::to_string(lineno) + ": expected " +
                        std::to_string(ncols) + " fields, found " +
                        std::to_string(fields.size()));
    try {
      fn(fields);
    } catch (const SchemaError& e) {
      throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

}  // namespace

Sample read_sample_csv(std::istream& in) {
  const Header h = parse_header(in);
  const auto cy = h.require("y");
  const auto cd = h.require("d");
  const auto cx = h.require("x_obs");
  const auto cm = h.optional("market_id");
  const auto cw = h.optional("weight");

  std::vector<Observation> rows;
  for_each_record(in, h.index.size(), [&](const std::vector<std::string>& f) {
    Observation o;
    o.y = parse_real(f[cy]);
    const double d = parse_real(f[cd]);
    o.d = std::isfinite(d) ? static_cast<int>(std::lround(d)) : 0;
    o.x_obs = parse_real(f[cx]);
    o.z.resize(static_cast<Eigen::Index>(h.z_cols.size()));
    for (std::size_t k = 0; k < h.z_cols.size(); ++k)
      o.z(static_cast<Eigen::Index>(k)) = parse_real(f[h.z_cols[k]]);
    if (cm) o.market_id = static_cast<int>(std::lround(parse_real(f[*cm])));
    if (cw) o.weight = parse_real(f[*cw]);
    rows.push_back(std::move(o));
  });
  return Sample(std::move(rows));
}

Sample read_sample_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  return read_sample_csv(in);
}

void write_sample_csv(std::ostream& out, const Sample& sample) {
  const Eigen::Index dim = sample.instrument_dim();
  out << "y,d,x_obs";
  for (Eigen::Index k = 0; k < dim; ++k) out << ",z" << (k + 1);
  out << ",market_id,weight\n";
  out << std::setprecision(17);
  for (const auto& r : sample.rows()) {
    out << r.y << ',' << r.d << ',' << r.x_obs;
    for (Eigen::Index k = 0; k < dim; ++k) out << ',' << r.z(k);
    out << ',' << r.market_id << ',' << r.weight << '\n';
  }
}

std::vector<CompleteObservation> read_complete_csv(std::istream& in) {
  const Header h = parse_header(in);
  const auto cy = h.require("y");
  const auto c1 = h.require("x1");
  const auto c2 = h.require("x2");
  const auto cm = h.optional("market_id");
  const auto cw = h.optional("weight");

  std::vector<CompleteObservation> rows;
  for_each_record(in, h.index.size(), [&](const std::vector<std::string>& f) {
    CompleteObservation o;
    o.y = parse_real(f[cy]);
    o.x1 = parse_real(f[c1]);
    o.x2 = parse_real(f[c2]);
    o.z.resize(static_cast<Eigen::Index>(h.z_cols.size()));
    for (std::size_t k = 0; k < h.z_cols.size(); ++k)
      o.z(static_cast<Eigen::Index>(k)) = parse_real(f[h.z_cols[k]]);
    if (cm) o.market_id = static_cast<int>(std::lround(parse_real(f[*cm])));
    if (cw) o.weight = parse_real(f[*cw]);
    rows.push_back(std::move(o));
  });
  return rows;
}

void write_complete_csv(std::ostream& out,
                        const std::vector<CompleteObservation>& rows) {
  const Eigen::Index dim = rows.empty() ? 0 : rows.front().z.size();
  out << "y,x1,x2";
  for (Eigen::Index k = 0; k < dim; ++k) out << ",z" << (k + 1);
  out << ",market_id,weight\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.y << ',' << r.x1 << ',' << r.x2;
    for (Eigen::Index k = 0; k < dim; ++k) out << ',' << r.z(k);
    out << ',' << r.market_id << ',' << r.weight << '\n';
  }
}

}  // namespace latent
