#include "numclip/error.hpp"

namespace numclip {

std::string_view to_string(Errc code) {
  switch (code) {
    case Errc::shape_mismatch: return "shape-mismatch";
    case Errc::domain_error: return "domain-error";
    case Errc::zero_row: return "zero-row";
    case Errc::non_scalar_root: return "non-scalar-root";
    case Errc::non_finite: return "non-finite";
    case Errc::non_deterministic_builder: return "non-deterministic-builder";
    case Errc::invalid_argument: return "invalid-argument";
    case Errc::out_of_range: return "out-of-range";
    case Errc::bad_arity: return "bad-arity";
    case Errc::index_out_of_range: return "index-out-of-range";
    case Errc::batch_too_small: return "batch-too-small";
    case Errc::length_mismatch: return "length-mismatch";
    case Errc::inconsistent_batch: return "inconsistent-batch";
    case Errc::dimension_too_small: return "dimension-too-small";
    case Errc::malformed_header: return "malformed-header";
    case Errc::ragged_row: return "ragged-row";
    case Errc::non_numeric_field: return "non-numeric-field";
    case Errc::empty_file: return "empty-file";
    case Errc::empty_split: return "empty-split";
    case Errc::empty_dataset: return "empty-dataset";
    case Errc::invalid_pmf: return "invalid-pmf";
    case Errc::alphabet_too_large: return "alphabet-too-large";
    case Errc::degenerate_marginal: return "degenerate-marginal";
    case Errc::io_error: return "io-error";
    case Errc::bad_checkpoint: return "bad-checkpoint";
    case Errc::bad_flag: return "bad-flag";
    case Errc::config_error: return "config-error";
  }
  return "unknown";
}

}  // namespace numclip
