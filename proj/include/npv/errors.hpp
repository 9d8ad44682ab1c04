#pragma once

#include <stdexcept>
#include <string>

namespace npv {

// Invalid input data or configuration: bad files, violated invariants,
// mismatched shapes. The CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw ValidationError(msg);
}

}  // namespace npv
