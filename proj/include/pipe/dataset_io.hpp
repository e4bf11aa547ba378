#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "pipe/error.hpp"
#include "pipe/grid.hpp"

// Dataset CSV:
//
//   # pipe-dataset v1
//   # source: montecarlo            (optional, defaults to montecarlo)
//   x1,...,xd,T,lambda,F,N,mode
//   one row per lattice cell, row-major, time fastest
//
// Floats are written in the shortest form that reads back exactly.

namespace riskpipe {

inline constexpr const char* kDatasetMagic = "# pipe-dataset v1";

inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, ',')) {
    const auto b = field.find_first_not_of(" \t\r");
    const auto e = field.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string() : field.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline bool parse_double(const std::string& text, double& out) {
  if (text == "nan" || text == "NaN") {
    out = kNaN;
    return true;
  }
  const char* begin = text.data();
  const char* end = begin + text.size();
  auto [ptr, ec] = std::from_chars(begin, end, out);
  return ec == std::errc() && ptr == end;
}

inline void write_dataset(const ProbabilityGrid& grid, std::ostream& out) {
  const GridSpec& spec = grid.spec;
  out << kDatasetMagic << '\n';
  out << "# source: " << to_string(grid.source) << '\n';
  for (int d = 0; d < spec.state_dim(); ++d) out << 'x' << (d + 1) << ',';
  out << "T,lambda,F,N,mode\n";
  for (std::size_t cell = 0; cell < spec.cell_count(); ++cell) {
    const State x = spec.state_at(cell);
    for (int d = 0; d < spec.state_dim(); ++d) out << format_double(x[d]) << ',';
    out << format_double(spec.t_at(cell)) << ',' << format_double(spec.lambda) << ','
        << format_double(grid.values[cell]) << ',' << grid.sample_count << ','
        << to_string(grid.mode) << '\n';
  }
}

inline void write_dataset(const ProbabilityGrid& grid, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot open '" + path + "' for writing");
  write_dataset(grid, out);
  require(static_cast<bool>(out), ErrorKind::IoError, "write to '" + path + "' failed");
}

inline ProbabilityGrid read_dataset(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next_line = [&]() -> bool {
    if (!std::getline(in, line)) return false;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return true;
  };

  if (!next_line()) throw ParseFailure(ErrorKind::ParseError, 1, "empty dataset");
  if (line != kDatasetMagic) {
    throw ParseFailure(ErrorKind::VersionMismatch, line_no,
                       "expected '" + std::string(kDatasetMagic) + "', got '" + line + "'");
  }

  Source source = Source::MonteCarlo;
  std::vector<std::string> header;
  while (next_line()) {
    if (line.rfind("# source:", 0) == 0) {
      std::string name = line.substr(9);
      name.erase(0, name.find_first_not_of(' '));
      try {
        source = parse_source(name);
      } catch (const Error& e) {
        throw ParseFailure(ErrorKind::ParseError, line_no, e.what());
      }
      continue;
    }
    if (!line.empty() && line[0] == '#') continue;
    header = split_csv(line);
    break;
  }
  if (header.empty()) throw ParseFailure(ErrorKind::SchemaError, line_no, "missing header row");

  int dim = 0;
  while (dim < static_cast<int>(header.size()) &&
         header[static_cast<std::size_t>(dim)] == "x" + std::to_string(dim + 1)) {
    ++dim;
  }
  if (dim == 0) throw ParseFailure(ErrorKind::SchemaError, line_no, "missing column 'x1'");
  const std::vector<std::string> tail{"T", "lambda", "F", "N", "mode"};
  for (std::size_t k = 0; k < tail.size(); ++k) {
    const std::size_t col = static_cast<std::size_t>(dim) + k;
    if (col >= header.size() || header[col] != tail[k]) {
      throw ParseFailure(ErrorKind::SchemaError, line_no, "missing column '" + tail[k] + "'");
    }
  }
  if (header.size() != static_cast<std::size_t>(dim) + tail.size()) {
    throw ParseFailure(ErrorKind::SchemaError, line_no, "unexpected extra columns");
  }

  struct Row {
    std::vector<double> coords;  // x1..xd, T
    std::size_t line;
  };
  std::vector<Row> rows;
  std::vector<double> values;
  double lambda = 0.0;
  long samples = 0;
  Mode mode = Mode::Recovery;
  const std::size_t ncols = header.size();

  while (next_line()) {
    if (line.empty() || line[0] == '#') continue;
    const auto fields = split_csv(line);
    if (fields.size() != ncols) {
      throw ParseFailure(ErrorKind::ParseError, line_no,
                         "expected " + std::to_string(ncols) + " fields, got " +
                             std::to_string(fields.size()));
    }
    Row row{std::vector<double>(static_cast<std::size_t>(dim) + 1), line_no};
    for (int c = 0; c <= dim; ++c) {
      auto& v = row.coords[static_cast<std::size_t>(c)];
      if (!parse_double(fields[static_cast<std::size_t>(c)], v) || !std::isfinite(v)) {
        throw ParseFailure(ErrorKind::ParseError, line_no,
                           "bad coordinate '" + fields[static_cast<std::size_t>(c)] + "'");
      }
    }
    double row_lambda = 0.0;
    double f = 0.0;
    if (!parse_double(fields[static_cast<std::size_t>(dim) + 1], row_lambda) ||
        !std::isfinite(row_lambda)) {
      throw ParseFailure(ErrorKind::ParseError, line_no, "bad lambda value");
    }
    if (!parse_double(fields[static_cast<std::size_t>(dim) + 2], f)) {
      throw ParseFailure(ErrorKind::ParseError, line_no, "bad probability value");
    }
    if (!std::isnan(f) && (f < 0.0 || f > 1.0)) {
      throw ParseFailure(ErrorKind::ValueOutOfRange, line_no,
                         "probability " + fields[static_cast<std::size_t>(dim) + 2] +
                             " outside [0, 1]");
    }
    long n = 0;
    {
      const std::string& text = fields[static_cast<std::size_t>(dim) + 3];
      auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), n);
      if (ec != std::errc() || ptr != text.data() + text.size() || n < 0) {
        throw ParseFailure(ErrorKind::ParseError, line_no, "bad sample count '" + text + "'");
      }
    }
    Mode row_mode;
    try {
      row_mode = parse_mode(fields[static_cast<std::size_t>(dim) + 4]);
    } catch (const Error& e) {
      throw ParseFailure(ErrorKind::ParseError, line_no, e.what());
    }
    if (rows.empty()) {
      lambda = row_lambda;
      samples = n;
      mode = row_mode;
    } else if (row_lambda != lambda || n != samples || row_mode != mode) {
      throw ParseFailure(ErrorKind::InconsistentLattice, line_no,
                         "lambda/N/mode differ from the first data row");
    }
    rows.push_back(std::move(row));
    values.push_back(f);
  }
  if (rows.empty()) throw ParseFailure(ErrorKind::NoData, line_no, "dataset has no rows");

  // Rebuild the lattice from the distinct coordinates along each axis.
  GridSpec spec;
  spec.lambda = lambda;
  for (int c = 0; c <= dim; ++c) {
    std::set<double> distinct;
    for (const auto& r : rows) distinct.insert(r.coords[static_cast<std::size_t>(c)]);
    const double lo = *distinct.begin();
    const double hi = *distinct.rbegin();
    const int count = static_cast<int>(distinct.size());
    if (c < dim) {
      spec.state_lo.push_back(lo);
      spec.state_hi.push_back(hi);
      spec.state_steps.push_back(count);
    } else {
      spec.t_lo = lo;
      spec.t_hi = hi;
      spec.t_steps = count;
    }
  }
  if (spec.cell_count() != rows.size()) {
    throw ParseFailure(ErrorKind::InconsistentLattice, rows.back().line,
                       "row count " + std::to_string(rows.size()) + " does not fill a " +
                           std::to_string(spec.cell_count()) + "-cell lattice");
  }
  for (std::size_t cell = 0; cell < rows.size(); ++cell) {
    const State x = spec.state_at(cell);
    for (int c = 0; c <= dim; ++c) {
      const double expected = c < dim ? x[c] : spec.t_at(cell);
      const double got = rows[cell].coords[static_cast<std::size_t>(c)];
      if (std::abs(expected - got) > 1e-9 * (1.0 + std::abs(expected))) {
        throw ParseFailure(ErrorKind::InconsistentLattice, rows[cell].line,
                           "coordinate does not match a regular row-major lattice");
      }
    }
  }
  return ProbabilityGrid{spec, std::move(values), samples, mode, source};
}

inline ProbabilityGrid read_dataset(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot open '" + path + "'");
  return read_dataset(in);
}

}  // namespace riskpipe
