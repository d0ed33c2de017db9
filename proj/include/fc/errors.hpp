#pragma once

#include <stdexcept>
#include <string>

namespace fc {

// Reasons a computation refuses to produce a value. The CLI maps these to
// process exit codes; library users catch Error like any std::runtime_error.
enum class Errc {
  invalid_argument,        // malformed inputs (dimensions, non-positive parameters)
  unsupported_derivative,  // derivative order beyond what the family provides
  class_undecidable,       // funnel lacks the declared asymptotics a check needs
  numerical_rank,          // a rank/invertibility decision fell outside tolerance
  domain_violation,        // controller evaluated outside its admissible set
  insufficient_history,    // delayed evaluation before the recorded data begins
  inconsistent_initial,    // initial data violates an algebraic constraint
  config_invalid,          // configuration rejected during validation
  integration_failure,     // step-size underflow or non-finite state
  io_failure,              // file read/write problems
};

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  Errc code() const { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& what) { throw Error(code, what); }

inline void require(bool ok, Errc code, const std::string& what) {
  if (!ok) fail(code, what);
}

}  // namespace fc
