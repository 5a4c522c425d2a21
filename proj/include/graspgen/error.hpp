#pragma once

#include <stdexcept>
#include <string>

namespace graspgen {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidInput : public Error {
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class EmptyView : public Error {
 public:
  using Error::Error;
};

class OptimizerError : public Error {
 public:
  OptimizerError(const std::string& param, const std::string& what)
      : Error("optimizer: parameter '" + param + "': " + what), param_(param) {}
  const std::string& param() const { return param_; }

 private:
  std::string param_;
};

class DegenerateExtent : public Error {
 public:
  using Error::Error;
};

class DegenerateLabels : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

}  // namespace graspgen
