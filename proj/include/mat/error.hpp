#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mat {

// Root of every error the library throws. Each subclass names the failure
// domain so the CLI can report which stage broke.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InputError : public Error { public: using Error::Error; };
class DataError : public Error { public: using Error::Error; };
class NumericError : public Error { public: using Error::Error; };
class DomainError : public Error { public: using Error::Error; };
class PersistenceError : public Error { public: using Error::Error; };
class SelectionError : public Error { public: using Error::Error; };
class WatermarkError : public Error { public: using Error::Error; };
class AttackError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class VerificationError : public Error { public: using Error::Error; };
class ReportError : public Error { public: using Error::Error; };

// A pipeline stage failed; `stage()` names it for the CLI exit message.
class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& message)
      : Error("stage " + stage + " failed: " + message), stage_(std::move(stage)) {}
  const std::string& stage() const { return stage_; }

 private:
  std::string stage_;
};

}  // namespace mat
