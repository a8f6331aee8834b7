#pragma once

#include <stdexcept>
#include <string>

namespace dconv {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// layer geometry admits no valid output placement
struct NonIntegralShape : Error {
  using Error::Error;
};

struct InvalidLayerSpec : Error {
  using Error::Error;
};

struct ShapeMismatch : Error {
  using Error::Error;
};

struct InvalidDescriptor : Error {
  using Error::Error;
};

struct OverflowRisk : Error {
  using Error::Error;
};

struct PlanInfeasible : Error {
  using Error::Error;
};

struct EmptyTrace : Error {
  using Error::Error;
};

struct PlanTensorMismatch : Error {
  using Error::Error;
};

struct InfeasibleStrategy : Error {
  using Error::Error;
};

struct ChainShapeMismatch : Error {
  using Error::Error;
};

struct ParseError : Error {
  int line;
  ParseError(const std::string& msg, int line_no)
      : Error(msg + " (line " + std::to_string(line_no) + ")"), line(line_no) {}
};

}  // namespace dconv
