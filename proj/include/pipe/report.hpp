#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "pipe/config.hpp"
#include "pipe/grid.hpp"

namespace riskpipe {

inline constexpr const char* kReportMagic = "# pipe-report v1";
inline constexpr const char* kReportColumns = "method,region,N,lambda,metric,value";

// One line of a report table. samples is a sample number, "inf" or empty;
// a NaN lambda is written as an empty field.
struct MetricRow {
  std::string method;
  std::string region;
  std::string samples;
  double lambda = kNaN;
  std::string metric;
  double value = kNaN;
};

struct CheckResult {
  std::string name;
  std::string condition;
  bool passed = false;
};

// Metric table plus the resolved configuration it came from. Threshold
// checks are stored as rows with method "check" and value 1 or 0.
class MetricsReport {
 public:
  std::string experiment;
  KeyValues config;
  std::vector<std::string> notes;
  std::vector<MetricRow> rows;
  std::vector<CheckResult> checks;

  void add(const std::string& method, const std::string& region, const std::string& samples,
           double lambda, const std::string& metric, double value);
  bool check(const std::string& name, const std::string& condition, bool passed);
  bool all_passed() const;

  // First matching row; an empty samples or NaN lambda matches anything.
  std::optional<double> find(const std::string& method, const std::string& region,
                             const std::string& metric, const std::string& samples = "",
                             double lambda = kNaN) const;

  void write(std::ostream& out) const;
  void write(const std::string& path) const;
  static MetricsReport read(std::istream& in);
  static MetricsReport read(const std::string& path);
};

std::string samples_label(long n);

// Long-format plotting table: series,x1..xd,T,lambda,value.
struct PlotTable {
  std::string name;
  int state_dim = 1;
  std::vector<std::string> series;
  std::vector<std::vector<double>> coords;  // x1..xd, T, lambda
  std::vector<double> values;

  void add_grid(const std::string& label, const GridSpec& spec, const std::vector<double>& v);
  void add_point(const std::string& label, std::vector<double> point, double value);
  void write(std::ostream& out) const;
};

double pearson(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace riskpipe
