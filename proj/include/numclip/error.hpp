#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace numclip {

enum class Errc {
  shape_mismatch,
  domain_error,
  zero_row,
  non_scalar_root,
  non_finite,
  non_deterministic_builder,
  invalid_argument,
  out_of_range,
  bad_arity,
  index_out_of_range,
  batch_too_small,
  length_mismatch,
  inconsistent_batch,
  dimension_too_small,
  malformed_header,
  ragged_row,
  non_numeric_field,
  empty_file,
  empty_split,
  empty_dataset,
  invalid_pmf,
  alphabet_too_large,
  degenerate_marginal,
  io_error,
  bad_checkpoint,
  bad_flag,
  config_error,
};

std::string_view to_string(Errc code);

/// Library error carrying a machine-checkable category.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

}  // namespace numclip
