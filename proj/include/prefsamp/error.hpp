#pragma once

#include <stdexcept>
#include <string>

namespace prefsamp {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Invalid polygon or mesh input.
class GeometryError : public Error {
public:
  using Error::Error;
};

/// Delaunay refinement could not meet the quality constraints.
class RefinementError : public Error {
public:
  using Error::Error;
};

class AssemblyError : public Error {
public:
  using Error::Error;
};

class ParameterError : public Error {
public:
  using Error::Error;
};

/// Sparse Cholesky failed (matrix not numerically SPD).
class FactorizationError : public Error {
public:
  using Error::Error;
};

class ConvergenceError : public Error {
public:
  using Error::Error;
};

class DataError : public Error {
public:
  using Error::Error;
};

/// Malformed run configuration; `where` names the offending line or key.
class ConfigError : public Error {
public:
  ConfigError(const std::string &where, const std::string &what)
      : Error(where + ": " + what), where_(where) {}
  const std::string &where() const noexcept { return where_; }

private:
  std::string where_;
};

} // namespace prefsamp
