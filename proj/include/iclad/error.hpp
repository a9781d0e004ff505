#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace iclad {

enum class ErrorCode {
  io,
  malformed,
  duplicate_id,
  invalid_argument,
  dim_mismatch,
  zero_vector,
  k_too_large,
  insufficient_class_members,
  too_few_calibration_rows,
  empty_evidence,
  missing_evidence,
  empty_examples,
  unknown_placeholder,
  transport,
  authentication,
  attachment_too_large,
  replay_miss,
  not_icl_shaped,
  unreadable_audio,
  insufficient_source_entries,
  length_mismatch,
  empty_input,
  single_class,
  zero_variance,
  id_mismatch,
  config,
};

std::string_view to_string(ErrorCode code);

/// Single exception type for the library; `code()` carries the category
/// tests and the CLI dispatch on.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, bool transient = false)
      : std::runtime_error(message), code_(code), transient_(transient) {}

  ErrorCode code() const noexcept { return code_; }
  /// Only transport failures may be transient; everything else is permanent.
  bool transient() const noexcept { return transient_; }

 private:
  ErrorCode code_;
  bool transient_;
};

}  // namespace iclad
