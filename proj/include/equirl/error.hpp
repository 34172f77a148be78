#pragma once

#include <stdexcept>
#include <string>

namespace equirl {

enum class ErrorCode {
  invalid_order,
  unknown_element,
  group_mismatch,
  empty_sum,
  unsupported_spatial_action,
  shape,
  rank,
  non_finite_gradient,
  rep_mismatch,
  impossible_observation,
  budget,
  placement,
  invalid_action,
  invalid_pomdp,
  parse,
  config,
  alignment,
};

const char* to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace equirl
