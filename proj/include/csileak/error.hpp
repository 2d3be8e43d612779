#pragma once

#include <stdexcept>
#include <string>

namespace csileak {

// All library failures surface as this type; the message carries enough
// context (path, offending token, stage) to be shown to a user as-is.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace csileak
