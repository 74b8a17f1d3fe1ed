#pragma once

#include <stdexcept>
#include <string>

namespace ilqc {

// Process exit codes used by the CLI. Library errors carry the matching code
// so the tool can translate an exception into its exit status directly.
enum class ErrorCode : int {
  generic = 1,
  parse = 2,
  not_regularizable = 3,
  terminal_unreachable = 4,
  assumption2_violated = 5,
  numeric_escape = 6,
};

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

struct InvalidMatrix : Error {
  explicit InvalidMatrix(const std::string& what)
      : Error(ErrorCode::generic, what) {}
};

struct InvalidProjector : Error {
  explicit InvalidProjector(const std::string& what)
      : Error(ErrorCode::generic, what) {}
};

struct ParseError : Error {
  explicit ParseError(const std::string& what)
      : Error(ErrorCode::parse, what) {}
};

struct TraceMismatch : Error {
  explicit TraceMismatch(const std::string& what)
      : Error(ErrorCode::generic, what) {}
};

struct TooLarge : Error {
  explicit TooLarge(const std::string& what)
      : Error(ErrorCode::generic, what) {}
};

// Riccati flow left the escape bound before reaching t0.
struct FiniteEscape : Error {
  FiniteEscape(double t, const std::string& what)
      : Error(ErrorCode::numeric_escape, what), time(t) {}
  double time;
};

struct NotRegularizable : Error {
  explicit NotRegularizable(const std::string& what)
      : Error(ErrorCode::not_regularizable, what) {}
};

struct TerminalUnreachable : Error {
  explicit TerminalUnreachable(const std::string& what)
      : Error(ErrorCode::terminal_unreachable, what) {}
};

struct Assumption2Violated : Error {
  explicit Assumption2Violated(const std::string& what)
      : Error(ErrorCode::assumption2_violated, what) {}
};

// Pathwise terminal steering is only provided when the steered input does not
// re-enter the diffusion; anything else is outside the supported class.
struct UnsupportedNoiseCoupling : Error {
  explicit UnsupportedNoiseCoupling(const std::string& what)
      : Error(ErrorCode::terminal_unreachable, what) {}
};

}  // namespace ilqc
