#pragma once

#include <functional>
#include <optional>
#include <string>

#include "fc/errors.hpp"

namespace fc::test {

// runs f and reports the error code it threw, if any
inline std::optional<Errc> code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

inline std::string source_dir() {
  const char* d = std::getenv("FC_SOURCE_DIR");
  return d ? d : ".";
}

}  // namespace fc::test
