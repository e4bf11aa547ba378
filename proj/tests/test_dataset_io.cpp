#include <cmath>
#include <sstream>

#include <gtest/gtest.h>

#include "pipe/dataset_io.hpp"
#include "pipe/montecarlo.hpp"

using namespace riskpipe;

namespace {

ProbabilityGrid sample_grid() {
  auto [sys, safe] = builtin_system(BuiltinSystem::DriftDiffusion1D, 1.0);
  return estimate_grid(sys, safe, make_grid_1d(-3.0, 1.0, 6, 0.0, 2.5, 4, 1.0), 30, {0.01, 5, 1});
}

ErrorKind read_kind(const std::string& text, std::size_t* line = nullptr) {
  std::istringstream in(text);
  try {
    read_dataset(in);
  } catch (const ParseFailure& e) {
    if (line) *line = e.line();
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::IoError;
}

const char* kHeader = "# pipe-dataset v1\nx1,T,lambda,F,N,mode\n";

}  // namespace

TEST(Dataset, RoundTripIsExact) {
  const auto g = sample_grid();
  std::stringstream buf;
  write_dataset(g, buf);
  const auto back = read_dataset(buf);
  EXPECT_TRUE(back == g);
}

TEST(Dataset, RoundTripMultiDimensionalWithNaN) {
  GridSpec spec{{0.1, -1.0 / 3.0}, {0.7, 2.0 / 3.0}, {3, 2}, 0.0, 1.0, 2, 0.25};
  ProbabilityGrid g{spec, std::vector<double>(spec.cell_count(), 0.123456789012345678), 1000,
                    Mode::Safety, Source::Denoised};
  g.values[3] = kNaN;
  std::stringstream buf;
  write_dataset(g, buf);
  EXPECT_TRUE(read_dataset(buf) == g);
}

TEST(Dataset, HeaderIsExact) {
  std::stringstream buf;
  write_dataset(sample_grid(), buf);
  std::string magic, source, header;
  std::getline(buf, magic);
  std::getline(buf, source);
  std::getline(buf, header);
  EXPECT_EQ(magic, "# pipe-dataset v1");
  EXPECT_EQ(header, "x1,T,lambda,F,N,mode");
}

TEST(Dataset, ProbabilityOutOfRange) {
  std::size_t line = 0;
  EXPECT_EQ(read_kind(std::string(kHeader) + "0,0,1,1.2,10,recovery\n", &line),
            ErrorKind::ValueOutOfRange);
  EXPECT_EQ(line, 3u);
}

TEST(Dataset, MissingLambdaColumnNamed) {
  std::istringstream in("# pipe-dataset v1\nx1,T,F,N,mode\n0,0,0.5,10,recovery\n");
  try {
    read_dataset(in);
    FAIL();
  } catch (const ParseFailure& e) {
    EXPECT_EQ(e.kind(), ErrorKind::SchemaError);
    EXPECT_NE(std::string(e.what()).find("lambda"), std::string::npos);
  }
}

TEST(Dataset, VersionMismatch) {
  EXPECT_EQ(read_kind("# pipe-dataset v2\nx1,T,lambda,F,N,mode\n"), ErrorKind::VersionMismatch);
}

TEST(Dataset, MalformedRow) {
  std::size_t line = 0;
  EXPECT_EQ(read_kind(std::string(kHeader) + "0,0,1,0.5,10,recovery\n0,abc,1,0.5,10,recovery\n", &line),
            ErrorKind::ParseError);
  EXPECT_EQ(line, 4u);
  EXPECT_EQ(read_kind(std::string(kHeader) + "0,0,1,0.5,10\n"), ErrorKind::ParseError);
}

TEST(Dataset, InconsistentLattice) {
  // Three x values that are not evenly spaced.
  EXPECT_EQ(read_kind(std::string(kHeader) +
                      "0,0,1,0.5,10,recovery\n1,0,1,0.5,10,recovery\n3,0,1,0.5,10,recovery\n"),
            ErrorKind::InconsistentLattice);
  // Missing cell.
  EXPECT_EQ(read_kind(std::string(kHeader) +
                      "0,0,1,0.5,10,recovery\n0,1,1,0.5,10,recovery\n1,0,1,0.5,10,recovery\n"),
            ErrorKind::InconsistentLattice);
  // Mixed lambda.
  EXPECT_EQ(read_kind(std::string(kHeader) + "0,0,1,0.5,10,recovery\n1,0,2,0.5,10,recovery\n"),
            ErrorKind::InconsistentLattice);
}

TEST(Dataset, EmptyBody) {
  EXPECT_EQ(read_kind(kHeader), ErrorKind::NoData);
}
