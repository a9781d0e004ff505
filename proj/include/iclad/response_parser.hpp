#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "iclad/core.hpp"

namespace iclad {

/// Instruction-following failure taxonomy for ALM responses.
enum class FailureKind {
  omitted_rationale,
  echoed_placeholder,
  format_violation,
  illogical_content,
};

std::string_view to_string(FailureKind kind);
std::optional<FailureKind> parse_failure_kind(std::string_view text);

inline constexpr std::string_view kFieldRealEvidence = "Real_Evidence";
inline constexpr std::string_view kFieldFakeEvidence = "Fake_Evidence";
inline constexpr std::string_view kFieldReconciledEvidence = "Reconciled_Evidence";
inline constexpr std::string_view kFieldFinalAnswer = "Final_Answer";

/// Keyword recovery only looks at this many trailing bytes.
inline constexpr std::size_t kRecoveryTailBytes = 200;

struct ParsedResponse {
  /// Empty iff parse_status == failed.
  std::optional<Label> final_answer;
  std::string real_evidence;
  std::string fake_evidence;
  std::string reconciled_evidence;
  ParseStatus parse_status = ParseStatus::failed;
  /// Present iff parse_status != ok.
  std::optional<FailureKind> failure_kind;
};

/// Total, deterministic parse of a raw ALM reply into the four-field schema.
ParsedResponse parse_response(std::string_view raw);

/// JSON rendering of the four schema fields.
std::string render_response(const ParsedResponse& response);

/// The first balanced {...} block that parses as a JSON object.
std::optional<std::string> extract_json_object(std::string_view raw);

struct InitialEvidence {
  std::string r_real;
  std::string r_fake;
};

/// Phase-1 label-blind reply: both evidence fields present, non-empty and
/// distinct.
std::optional<InitialEvidence> parse_initial_evidence(std::string_view raw);
/// Phase-1 reconciliation reply: a non-empty Reconciled_Evidence.
std::optional<std::string> parse_reconciled_evidence(std::string_view raw);

}  // namespace iclad
