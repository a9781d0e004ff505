#include "iclad/response_parser.hpp"

#include <algorithm>
#include <cctype>

#include <json.hpp>

namespace iclad {

namespace {

bool is_word_char(char c) {
  return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
}

std::string normalized(std::string_view text) {
  std::string out;
  bool space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      space = !out.empty();
      continue;
    }
    if (space) out += ' ';
    space = false;
    out += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

struct KeywordHit {
  Label label;
  std::size_t pos;
};

// Standalone "real"/"fake" occurrences, case-insensitive.
std::vector<KeywordHit> find_keywords(std::string_view text) {
  std::vector<KeywordHit> hits;
  std::string lower(text);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  for (std::size_t i = 0; i + 4 <= lower.size(); ++i) {
    std::string_view word(lower.data() + i, 4);
    if (word != "real" && word != "fake") continue;
    if (i > 0 && is_word_char(lower[i - 1])) continue;
    if (i + 4 < lower.size() && is_word_char(lower[i + 4])) continue;
    hits.push_back({word == "real" ? Label::real : Label::fake, i});
  }
  return hits;
}

std::optional<Label> recover_from_tail(std::string_view raw) {
  auto tail = raw.size() > kRecoveryTailBytes ? raw.substr(raw.size() - kRecoveryTailBytes) : raw;
  auto hits = find_keywords(tail);
  if (hits.empty()) return std::nullopt;
  return hits.back().label;
}

// A Final_Answer naming both classes ("real | fake") is the schema echoed back.
bool names_both_classes(std::string_view answer) {
  bool real = false, fake = false;
  for (const auto& h : find_keywords(answer)) (h.label == Label::real ? real : fake) = true;
  return real && fake;
}

// Template value placeholders are written as <...>.
bool is_angle_placeholder(const std::string& value) {
  auto n = normalized(value);
  return n.size() >= 2 && n.front() == '<' && n.back() == '>';
}

bool looks_like_prose(std::string_view text) {
  int words = 0;
  bool in_word = false;
  for (char c : text) {
    bool alpha = std::isalpha(static_cast<unsigned char>(c));
    if (alpha && !in_word) ++words;
    in_word = alpha;
  }
  return words >= 3;
}

std::optional<std::string> string_field(const nlohmann::json& obj, std::string_view key) {
  auto it = obj.find(std::string(key));
  if (it == obj.end() || !it->is_string()) return std::nullopt;
  return it->get<std::string>();
}

}  // namespace

std::string_view to_string(FailureKind kind) {
  switch (kind) {
    case FailureKind::omitted_rationale: return "omitted_rationale";
    case FailureKind::echoed_placeholder: return "echoed_placeholder";
    case FailureKind::format_violation: return "format_violation";
    case FailureKind::illogical_content: return "illogical_content";
  }
  return "format_violation";
}

std::optional<FailureKind> parse_failure_kind(std::string_view text) {
  for (auto k : {FailureKind::omitted_rationale, FailureKind::echoed_placeholder,
                 FailureKind::format_violation, FailureKind::illogical_content}) {
    if (text == to_string(k)) return k;
  }
  return std::nullopt;
}

std::optional<std::string> extract_json_object(std::string_view raw) {
  for (std::size_t start = raw.find('{'); start != std::string_view::npos;
       start = raw.find('{', start + 1)) {
    int depth = 0;
    bool in_string = false, escaped = false;
    std::size_t end = std::string_view::npos;
    for (std::size_t i = start; i < raw.size(); ++i) {
      char c = raw[i];
      if (in_string) {
        if (escaped) escaped = false;
        else if (c == '\\') escaped = true;
        else if (c == '"') in_string = false;
        continue;
      }
      if (c == '"') in_string = true;
      else if (c == '{') ++depth;
      else if (c == '}' && --depth == 0) {
        end = i;
        break;
      }
    }
    if (end == std::string_view::npos) continue;
    auto candidate = raw.substr(start, end - start + 1);
    auto parsed = nlohmann::json::parse(candidate, nullptr, /*allow_exceptions=*/false);
    if (parsed.is_object()) return std::string(candidate);
  }
  return std::nullopt;
}

ParsedResponse parse_response(std::string_view raw) {
  ParsedResponse r;
  auto json_text = extract_json_object(raw);

  if (!json_text) {
    if (auto label = recover_from_tail(raw)) {
      r.final_answer = label;
      r.parse_status = ParseStatus::recovered;
      r.failure_kind = FailureKind::format_violation;
    } else {
      r.parse_status = ParseStatus::failed;
      // Prose with no verdict at all (a transcription, a description of the
      // voice) is content failure; anything else is a format failure.
      r.failure_kind = looks_like_prose(raw) ? FailureKind::illogical_content
                                             : FailureKind::format_violation;
    }
    return r;
  }

  auto obj = nlohmann::json::parse(*json_text);
  auto real_ev = string_field(obj, kFieldRealEvidence);
  auto fake_ev = string_field(obj, kFieldFakeEvidence);
  auto reconciled = string_field(obj, kFieldReconciledEvidence);
  auto answer = string_field(obj, kFieldFinalAnswer);
  r.real_evidence = real_ev.value_or("");
  r.fake_evidence = fake_ev.value_or("");
  r.reconciled_evidence = reconciled.value_or("");

  const bool rationale_missing =
      normalized(r.real_evidence).empty() || normalized(r.fake_evidence).empty() ||
      normalized(r.reconciled_evidence).empty();
  const bool evidence_echoed = is_angle_placeholder(r.real_evidence) ||
                               is_angle_placeholder(r.fake_evidence) ||
                               is_angle_placeholder(r.reconciled_evidence);
  const bool competing_identical =
      !rationale_missing && normalized(r.real_evidence) == normalized(r.fake_evidence);

  std::optional<FailureKind> content_issue;
  if (evidence_echoed) content_issue = FailureKind::echoed_placeholder;
  else if (rationale_missing) content_issue = FailureKind::omitted_rationale;
  else if (competing_identical) content_issue = FailureKind::illogical_content;

  if (answer && names_both_classes(*answer)) {
    r.parse_status = ParseStatus::failed;
    r.failure_kind = FailureKind::echoed_placeholder;
    return r;
  }
  if (answer) {
    if (auto label = parse_label(*answer)) {
      r.final_answer = label;
      r.parse_status = content_issue ? ParseStatus::recovered : ParseStatus::ok;
      r.failure_kind = content_issue;
      return r;
    }
  }

  if (auto label = recover_from_tail(raw)) {
    r.final_answer = label;
    r.parse_status = ParseStatus::recovered;
    r.failure_kind = content_issue.value_or(FailureKind::format_violation);
    return r;
  }
  r.parse_status = ParseStatus::failed;
  r.failure_kind = content_issue.value_or(FailureKind::format_violation);
  return r;
}

std::string render_response(const ParsedResponse& response) {
  nlohmann::ordered_json j;
  j[std::string(kFieldRealEvidence)] = response.real_evidence;
  j[std::string(kFieldFakeEvidence)] = response.fake_evidence;
  j[std::string(kFieldReconciledEvidence)] = response.reconciled_evidence;
  j[std::string(kFieldFinalAnswer)] =
      response.final_answer ? std::string(to_string(*response.final_answer)) : std::string();
  return j.dump();
}

std::optional<InitialEvidence> parse_initial_evidence(std::string_view raw) {
  auto json_text = extract_json_object(raw);
  if (!json_text) return std::nullopt;
  auto obj = nlohmann::json::parse(*json_text);
  auto real_ev = string_field(obj, kFieldRealEvidence);
  auto fake_ev = string_field(obj, kFieldFakeEvidence);
  if (!real_ev || !fake_ev) return std::nullopt;
  auto nr = normalized(*real_ev), nf = normalized(*fake_ev);
  if (nr.empty() || nf.empty() || nr == nf) return std::nullopt;
  if (is_angle_placeholder(*real_ev) || is_angle_placeholder(*fake_ev)) return std::nullopt;
  return InitialEvidence{*real_ev, *fake_ev};
}

std::optional<std::string> parse_reconciled_evidence(std::string_view raw) {
  auto json_text = extract_json_object(raw);
  if (!json_text) return std::nullopt;
  auto obj = nlohmann::json::parse(*json_text);
  auto reconciled = string_field(obj, kFieldReconciledEvidence);
  if (!reconciled || normalized(*reconciled).empty() || is_angle_placeholder(*reconciled)) {
    return std::nullopt;
  }
  return *reconciled;
}

}  // namespace iclad
