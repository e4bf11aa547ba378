#pragma once

#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "pipe/dataset_io.hpp"
#include "pipe/error.hpp"
#include "pipe/mlp.hpp"

// Checkpoint text format, one key per line:
//
//   # pipe-checkpoint v1
//   layers 5 32 32 32 1
//   activation tanh
//   state_dim 4
//   has_time 1
//   lambda_input 0
//   state_map 1 2 3 0          (optional)
//   input_lo ...
//   input_hi ...
//   theta <count>
//   <one value per line>

namespace riskpipe {

inline constexpr const char* kCheckpointMagic = "# pipe-checkpoint v1";

inline void write_checkpoint(const MlpParams& params, std::ostream& out) {
  params.validate();
  const auto& layout = params.layout;
  out << kCheckpointMagic << '\n';
  out << "layers";
  for (int s : params.layer_sizes) out << ' ' << s;
  out << "\nactivation " << params.activation << '\n';
  out << "state_dim " << layout.state_dim << '\n';
  out << "has_time " << (layout.has_time ? 1 : 0) << '\n';
  out << "lambda_input " << (layout.lambda_input ? 1 : 0) << '\n';
  if (!layout.state_map.empty()) {
    out << "state_map";
    for (int d : layout.state_map) out << ' ' << d;
    out << '\n';
  }
  out << "input_lo";
  for (double v : layout.input_lo) out << ' ' << format_double(v);
  out << "\ninput_hi";
  for (double v : layout.input_hi) out << ' ' << format_double(v);
  out << "\ntheta " << params.theta.size() << '\n';
  for (Eigen::Index i = 0; i < params.theta.size(); ++i) out << format_double(params.theta[i]) << '\n';
}

inline void write_checkpoint(const MlpParams& params, const std::string& path) {
  std::ofstream out(path);
  require(static_cast<bool>(out), ErrorKind::IoError, "cannot open '" + path + "' for writing");
  write_checkpoint(params, out);
  require(static_cast<bool>(out), ErrorKind::IoError, "write to '" + path + "' failed");
}

inline MlpParams read_checkpoint(std::istream& in) {
  std::string line;
  std::size_t line_no = 0;
  auto next = [&]() {
    if (!std::getline(in, line)) throw ParseFailure(ErrorKind::ParseError, line_no + 1, "unexpected end of checkpoint");
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
  };
  next();
  if (line != kCheckpointMagic) {
    throw ParseFailure(ErrorKind::VersionMismatch, line_no,
                       "expected '" + std::string(kCheckpointMagic) + "', got '" + line + "'");
  }

  auto numbers = [&](std::istringstream& fields) {
    std::vector<double> out;
    std::string tok;
    while (fields >> tok) {
      double v = 0.0;
      if (!parse_double(tok, v)) throw ParseFailure(ErrorKind::ParseError, line_no, "bad number '" + tok + "'");
      out.push_back(v);
    }
    return out;
  };

  MlpParams p;
  Eigen::Index theta_count = -1;
  while (theta_count < 0) {
    next();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream fields(line);
    std::string key;
    fields >> key;
    if (key == "layers") {
      for (double v : numbers(fields)) p.layer_sizes.push_back(static_cast<int>(v));
    } else if (key == "activation") {
      fields >> p.activation;
    } else if (key == "state_dim") {
      fields >> p.layout.state_dim;
    } else if (key == "has_time") {
      int v = 1;
      fields >> v;
      p.layout.has_time = v != 0;
    } else if (key == "lambda_input") {
      int v = 0;
      fields >> v;
      p.layout.lambda_input = v != 0;
    } else if (key == "state_map") {
      for (double v : numbers(fields)) p.layout.state_map.push_back(static_cast<int>(v));
    } else if (key == "input_lo") {
      p.layout.input_lo = numbers(fields);
    } else if (key == "input_hi") {
      p.layout.input_hi = numbers(fields);
    } else if (key == "theta") {
      fields >> theta_count;
      if (!fields || theta_count < 0) throw ParseFailure(ErrorKind::ParseError, line_no, "bad theta count");
    } else {
      throw ParseFailure(ErrorKind::SchemaError, line_no, "unknown key '" + key + "'");
    }
  }
  p.theta.resize(theta_count);
  for (Eigen::Index i = 0; i < theta_count; ++i) {
    next();
    if (!parse_double(line, p.theta[i])) throw ParseFailure(ErrorKind::ParseError, line_no, "bad parameter value");
  }
  try {
    p.validate();
  } catch (const Error& e) {
    throw ParseFailure(ErrorKind::SchemaError, line_no, e.what());
  }
  return p;
}

inline MlpParams read_checkpoint(const std::string& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorKind::IoError, "cannot open '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace riskpipe
