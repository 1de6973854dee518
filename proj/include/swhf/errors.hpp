#pragma once

#include <stdexcept>
#include <string>

namespace swhf {

/// Base class for every error raised by the toolkit.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class CapacityError : public Error { using Error::Error; };
class DomainError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class EvaluationError : public Error { using Error::Error; };
class GaugeError : public Error { using Error::Error; };
class SupportError : public Error { using Error::Error; };
class SamplingError : public Error { using Error::Error; };
class InsufficientDataError : public Error { using Error::Error; };
class StudyError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_;
};

class StabilityError : public Error {
 public:
  StabilityError(const std::string& what, double suggested_dt)
      : Error(what), suggested_dt_(suggested_dt) {}
  double suggested_dt() const { return suggested_dt_; }

 private:
  double suggested_dt_;
};

/// The flow map stopped being a diffeomorphism before the requested time.
class DiffeoLostError : public Error {
 public:
  DiffeoLostError(const std::string& what, double loss_time)
      : Error(what), loss_time_(loss_time) {}
  double loss_time() const { return loss_time_; }

 private:
  double loss_time_;
};

}  // namespace swhf
