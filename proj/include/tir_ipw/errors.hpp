#pragma once

#include <stdexcept>
#include <string>

namespace tir_ipw {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input (bad CSV rows, unknown subjects, invalid configuration).
class InputError : public Error {
 public:
  using Error::Error;
};

/// No available subject at some horizon time, so p_G(t) is not identified there.
class PositivityError : public Error {
 public:
  PositivityError(const std::string& what, double earliest_minutes)
      : Error(what), earliest_minutes_(earliest_minutes) {}
  double earliest_minutes() const { return earliest_minutes_; }

 private:
  double earliest_minutes_;
};

/// Cox model could not be fitted (singular information, no events, no convergence).
class FitError : public Error {
 public:
  using Error::Error;
};

/// Prefixes the message of a library error with the pipeline stage it came from.
template <typename Fn>
decltype(auto) with_stage(const char* stage, Fn&& fn) {
  try {
    return fn();
  } catch (const PositivityError& e) {
    throw PositivityError(std::string(stage) + ": " + e.what(), e.earliest_minutes());
  } catch (const FitError& e) {
    throw FitError(std::string(stage) + ": " + e.what());
  } catch (const InputError& e) {
    throw InputError(std::string(stage) + ": " + e.what());
  } catch (const Error& e) {
    throw Error(std::string(stage) + ": " + e.what());
  }
}

}  // namespace tir_ipw
