#include "pipe/report.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>

#include "pipe/dataset_io.hpp"

namespace riskpipe {

namespace {

void require_plain(const std::string& field, const char* what) {
  require(field.find_first_of(",\n\r") == std::string::npos, ErrorKind::InvalidArgument,
          std::string(what) + " '" + field + "' may not contain commas or newlines");
}

std::string lambda_field(double lambda) { return std::isnan(lambda) ? "" : format_double(lambda); }

}  // namespace

void MetricsReport::add(const std::string& method, const std::string& region,
                        const std::string& samples, double lambda, const std::string& metric,
                        double value) {
  require_plain(method, "method");
  require_plain(region, "region");
  require_plain(samples, "N");
  require_plain(metric, "metric");
  rows.push_back({method, region, samples, lambda, metric, value});
}

bool MetricsReport::check(const std::string& name, const std::string& condition, bool passed) {
  add("check", name, "", kNaN, condition, passed ? 1.0 : 0.0);
  checks.push_back({name, condition, passed});
  return passed;
}

bool MetricsReport::all_passed() const {
  for (const auto& c : checks) {
    if (!c.passed) return false;
  }
  return true;
}

std::optional<double> MetricsReport::find(const std::string& method, const std::string& region,
                                          const std::string& metric, const std::string& samples,
                                          double lambda) const {
  for (const auto& r : rows) {
    if (r.method != method || r.region != region || r.metric != metric) continue;
    if (!samples.empty() && r.samples != samples) continue;
    if (!std::isnan(lambda) && !(std::abs(r.lambda - lambda) < 1e-12)) continue;
    return r.value;
  }
  return std::nullopt;
}

void MetricsReport::write(std::ostream& out) const {
  out << kReportMagic << '\n';
  out << "# experiment=" << experiment << '\n';
  for (const auto& [k, v] : config.entries()) out << "# config " << k << '=' << v << '\n';
  for (const auto& n : notes) out << "# note " << n << '\n';
  out << kReportColumns << '\n';
  for (const auto& r : rows) {
    out << r.method << ',' << r.region << ',' << r.samples << ',' << lambda_field(r.lambda) << ','
        << r.metric << ',' << format_double(r.value) << '\n';
  }
}

void MetricsReport::write(const std::string& path) const {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot open '" + path + "' for writing");
  write(out);
  require(static_cast<bool>(out), ErrorKind::IoError, "write to '" + path + "' failed");
}

MetricsReport MetricsReport::read(std::istream& in) {
  MetricsReport report;
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line_no == 1) {
      if (line != kReportMagic) {
        throw ParseFailure(ErrorKind::VersionMismatch, line_no,
                           "expected '" + std::string(kReportMagic) + "', got '" + line + "'");
      }
      continue;
    }
    if (!header_seen) {
      if (line.rfind("# experiment=", 0) == 0) {
        report.experiment = line.substr(13);
      } else if (line.rfind("# config ", 0) == 0) {
        const std::string body = line.substr(9);
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
          throw ParseFailure(ErrorKind::ParseError, line_no, "config line without '='");
        }
        report.config.set(body.substr(0, eq), body.substr(eq + 1));
      } else if (line.rfind("# note ", 0) == 0) {
        report.notes.push_back(line.substr(7));
      } else if (line == kReportColumns) {
        header_seen = true;
      } else {
        throw ParseFailure(ErrorKind::SchemaError, line_no, "unexpected header line '" + line + "'");
      }
      continue;
    }
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 6) throw ParseFailure(ErrorKind::SchemaError, line_no, "expected 6 fields");
    MetricRow row{f[0], f[1], f[2], kNaN, f[4], kNaN};
    if (!f[3].empty() && !parse_double(f[3], row.lambda)) {
      throw ParseFailure(ErrorKind::ParseError, line_no, "bad lambda '" + f[3] + "'");
    }
    if (!parse_double(f[5], row.value)) {
      throw ParseFailure(ErrorKind::ParseError, line_no, "bad value '" + f[5] + "'");
    }
    if (row.method == "check") report.checks.push_back({row.region, row.metric, row.value == 1.0});
    report.rows.push_back(std::move(row));
  }
  if (!header_seen) throw ParseFailure(ErrorKind::SchemaError, line_no, "missing column header");
  return report;
}

MetricsReport MetricsReport::read(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot open '" + path + "'");
  return read(in);
}

std::string samples_label(long n) { return n <= 0 ? std::string("inf") : std::to_string(n); }

void PlotTable::add_grid(const std::string& label, const GridSpec& spec,
                         const std::vector<double>& v) {
  require(v.size() == spec.cell_count(), ErrorKind::BadShape, "plot values do not match lattice");
  require(spec.state_dim() == state_dim, ErrorKind::BadShape, "plot state dimension mismatch");
  for (std::size_t cell = 0; cell < spec.cell_count(); ++cell) {
    const State x = spec.state_at(cell);
    std::vector<double> point(x.data(), x.data() + x.size());
    point.push_back(spec.t_at(cell));
    point.push_back(spec.lambda);
    add_point(label, std::move(point), v[cell]);
  }
}

void PlotTable::add_point(const std::string& label, std::vector<double> point, double value) {
  require(static_cast<int>(point.size()) == state_dim + 2, ErrorKind::BadShape,
          "plot point needs state, T and lambda");
  series.push_back(label);
  coords.push_back(std::move(point));
  values.push_back(value);
}

void PlotTable::write(std::ostream& out) const {
  out << "series,";
  for (int d = 0; d < state_dim; ++d) out << 'x' << (d + 1) << ',';
  out << "T,lambda,value\n";
  for (std::size_t i = 0; i < values.size(); ++i) {
    out << series[i];
    for (double c : coords[i]) out << ',' << format_double(c);
    out << ',' << format_double(values[i]) << '\n';
  }
}

double pearson(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size() && a.size() >= 2, ErrorKind::InvalidArgument,
          "pearson needs two equal-length series of length >= 2");
  const auto n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa == 0.0 || sbb == 0.0) return kNaN;
  return sab / std::sqrt(saa * sbb);
}

}  // namespace riskpipe
