#pragma once

#include <stdexcept>
#include <string>

namespace pbl {

// All library failures derive from Error so callers can catch one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error { using Error::Error; };
class ValidationError : public Error { using Error::Error; };
class ContractError : public Error { using Error::Error; };
class PartitionError : public Error { using Error::Error; };
class AlignmentError : public Error { using Error::Error; };
class IntegrityError : public Error { using Error::Error; };
class IoError : public Error { using Error::Error; };
class ScorerError : public Error { using Error::Error; };
class ConfigError : public Error { using Error::Error; };
class SessionError : public Error { using Error::Error; };
class StateError : public Error { using Error::Error; };
class NotFoundError : public Error { using Error::Error; };
class EvaluationError : public Error { using Error::Error; };

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, int epoch, long step)
      : Error(what), epoch_(epoch), step_(step) {}
  int epoch() const { return epoch_; }
  long step() const { return step_; }

 private:
  int epoch_;
  long step_;
};

}  // namespace pbl
