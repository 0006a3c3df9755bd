#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace latent {

/// One sampled unit. Exactly one of the two inputs is recorded: `x_obs` is
/// x1 when `d == 1` and x2 when `d == 2`.
struct Observation {
  double y = 0.0;
  int d = 1;
  double x_obs = 0.0;
  Eigen::VectorXd z;
  int market_id = 0;
  double weight = 1.0;
};

/// Both inputs observed. Produced by simulation before masking, or read from
/// fully observed data for the infeasible benchmark.
struct CompleteObservation {
  double y = 0.0;
  double x1 = 0.0;
  double x2 = 0.0;
  Eigen::VectorXd z;
  int market_id = 0;
  double weight = 1.0;
};

class Sample {
 public:
  Sample() = default;
  explicit Sample(std::vector<Observation> rows);

  const std::vector<Observation>& rows() const noexcept { return rows_; }
  const Observation& operator[](std::size_t i) const { return rows_[i]; }
  std::size_t size() const noexcept { return rows_.size(); }
  bool empty() const noexcept { return rows_.empty(); }

  /// Instrument dimension recorded from the first row (0 for an empty sample).
  Eigen::Index instrument_dim() const noexcept { return instrument_dim_; }

  std::size_t count(int d) const;

 private:
  std::vector<Observation> rows_;
  Eigen::Index instrument_dim_ = 0;
};

struct Violation {
  std::optional<std::size_t> row;
  std::string message;
};

struct ValidationReport {
  std::vector<Violation> violations;

  bool ok() const noexcept { return violations.empty(); }
  std::string summary() const;
};

ValidationReport validate_sample(const Sample& sample);

struct LatencySplit {
  Sample first;   // d == 1
  Sample second;  // d == 2
  std::vector<std::size_t> first_index;
  std::vector<std::size_t> second_index;
};

/// Order-preserving partition by latency class.
LatencySplit split_by_latency(const Sample& sample);

// CSV layout: y,d,x_obs,z1,z2[,z3...][,market_id][,weight]. Header required.
Sample read_sample_csv(std::istream& in);
Sample read_sample_csv(const std::string& path);
void write_sample_csv(std::ostream& out, const Sample& sample);

/// Complete-data CSV: y,x1,x2,z1,z2[,...][,market_id][,weight].
std::vector<CompleteObservation> read_complete_csv(std::istream& in);
void write_complete_csv(std::ostream& out,
                        const std::vector<CompleteObservation>& rows);

}  // namespace latent
