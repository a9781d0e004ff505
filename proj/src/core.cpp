#include "iclad/core.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

namespace iclad {

namespace {

std::string fold(std::string_view text) {
  auto first = text.find_first_not_of(" \t\r\n");
  auto last = text.find_last_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  std::string out(text.substr(first, last - first + 1));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return out;
}

Error malformed(std::size_t line, const std::string& what) {
  return Error(ErrorCode::malformed,
               "manifest line " + std::to_string(line) + ": " + what);
}

std::string required_string(const nlohmann::json& obj, const char* key,
                            std::size_t line) {
  auto it = obj.find(key);
  if (it == obj.end()) throw malformed(line, std::string("missing \"") + key + "\"");
  if (!it->is_string()) throw malformed(line, std::string("\"") + key + "\" is not a string");
  return it->get<std::string>();
}

}  // namespace

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::io: return "io-error";
    case ErrorCode::malformed: return "malformed";
    case ErrorCode::duplicate_id: return "duplicate-id";
    case ErrorCode::invalid_argument: return "invalid-argument";
    case ErrorCode::dim_mismatch: return "dim-mismatch";
    case ErrorCode::zero_vector: return "zero-vector";
    case ErrorCode::k_too_large: return "k-too-large";
    case ErrorCode::insufficient_class_members: return "insufficient-class-members";
    case ErrorCode::too_few_calibration_rows: return "too-few-calibration-rows";
    case ErrorCode::empty_evidence: return "empty-evidence";
    case ErrorCode::missing_evidence: return "missing-evidence";
    case ErrorCode::empty_examples: return "empty-examples";
    case ErrorCode::unknown_placeholder: return "unknown-placeholder";
    case ErrorCode::transport: return "transport-error";
    case ErrorCode::authentication: return "authentication-error";
    case ErrorCode::attachment_too_large: return "attachment-too-large";
    case ErrorCode::replay_miss: return "replay-miss";
    case ErrorCode::not_icl_shaped: return "request-not-icl-shaped";
    case ErrorCode::unreadable_audio: return "unreadable-audio";
    case ErrorCode::insufficient_source_entries: return "insufficient-source-entries";
    case ErrorCode::length_mismatch: return "length-mismatch";
    case ErrorCode::empty_input: return "empty-input";
    case ErrorCode::single_class: return "single-class";
    case ErrorCode::zero_variance: return "zero-variance";
    case ErrorCode::id_mismatch: return "id-mismatch";
    case ErrorCode::config: return "config-error";
  }
  return "unknown";
}

std::string_view to_string(Label label) {
  return label == Label::real ? "real" : "fake";
}

std::string_view to_string(Split split) {
  return split == Split::train ? "train" : "test";
}

std::string_view to_string(VerdictSource source) {
  return source == VerdictSource::detector ? "detector" : "alm";
}

std::string_view to_string(ParseStatus status) {
  switch (status) {
    case ParseStatus::ok: return "ok";
    case ParseStatus::recovered: return "recovered";
    case ParseStatus::failed: return "failed";
  }
  return "failed";
}

std::optional<Label> parse_label(std::string_view text) {
  auto f = fold(text);
  if (f == "real") return Label::real;
  if (f == "fake") return Label::fake;
  return std::nullopt;
}

std::optional<Split> parse_split(std::string_view text) {
  auto f = fold(text);
  if (f == "train") return Split::train;
  if (f == "test") return Split::test;
  return std::nullopt;
}

DatasetManifest::DatasetManifest(std::string name,
                                 std::vector<ManifestEntry> entries)
    : name_(std::move(name)), entries_(std::move(entries)) {
  if (entries_.empty()) {
    throw Error(ErrorCode::empty_input, "manifest '" + name_ + "' has no entries");
  }
  std::unordered_set<std::string> seen;
  for (const auto& e : entries_) {
    if (e.audio.path.empty()) {
      throw Error(ErrorCode::malformed, "entry '" + e.audio.id + "' has an empty path");
    }
    if (!seen.insert(e.audio.id).second) {
      throw Error(ErrorCode::duplicate_id, "duplicate id \"" + e.audio.id + "\"");
    }
  }
}

const ManifestEntry* DatasetManifest::find(std::string_view id) const {
  auto it = std::find_if(entries_.begin(), entries_.end(),
                         [&](const ManifestEntry& e) { return e.audio.id == id; });
  return it == entries_.end() ? nullptr : &*it;
}

DatasetManifest parse_manifest(std::istream& in, std::string name) {
  std::vector<ManifestEntry> entries;
  std::unordered_map<std::string, std::size_t> first_line;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw malformed(line, e.what());
    }
    if (!obj.is_object()) throw malformed(line, "expected a JSON object");

    ManifestEntry entry;
    entry.audio.id = required_string(obj, "id", line);
    entry.audio.path = required_string(obj, "path", line);
    if (entry.audio.id.empty()) throw malformed(line, "empty id");
    if (entry.audio.path.empty()) throw malformed(line, "empty path");

    auto label_text = required_string(obj, "label", line);
    auto label = parse_label(label_text);
    if (!label) throw malformed(line, "invalid label \"" + label_text + "\"");
    entry.label = *label;

    if (auto it = obj.find("dataset"); it != obj.end()) {
      if (!it->is_string()) throw malformed(line, "\"dataset\" is not a string");
      entry.audio.dataset = it->get<std::string>();
    }
    if (auto it = obj.find("split"); it != obj.end()) {
      auto split = it->is_string() ? parse_split(it->get<std::string>()) : std::nullopt;
      if (!split) throw malformed(line, "invalid split");
      entry.audio.split = *split;
    }
    if (auto it = obj.find("duration_s"); it != obj.end() && it->is_number()) {
      entry.audio.duration_s = it->get<double>();
    }

    auto [pos, inserted] = first_line.emplace(entry.audio.id, line);
    if (!inserted) {
      throw Error(ErrorCode::duplicate_id,
                  "duplicate id \"" + entry.audio.id + "\" on lines " +
                      std::to_string(pos->second) + " and " + std::to_string(line));
    }
    entries.push_back(std::move(entry));
  }
  if (in.bad()) throw Error(ErrorCode::io, "read failure in manifest '" + name + "'");
  return DatasetManifest(std::move(name), std::move(entries));
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open manifest " + path.string());
  return parse_manifest(in, path.stem().string());
}

void write_manifest(std::ostream& out, const DatasetManifest& manifest) {
  for (const auto& e : manifest.entries()) {
    nlohmann::ordered_json obj;
    obj["id"] = e.audio.id;
    obj["path"] = e.audio.path.string();
    obj["label"] = to_string(e.label);
    obj["dataset"] = e.audio.dataset;
    obj["split"] = to_string(e.audio.split);
    if (e.audio.duration_s) obj["duration_s"] = *e.audio.duration_s;
    out << obj.dump() << '\n';
  }
}

void save_manifest(const std::filesystem::path& path,
                   const DatasetManifest& manifest) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write manifest " + path.string());
  write_manifest(out, manifest);
  if (!out) throw Error(ErrorCode::io, "write failure on " + path.string());
}

ClassCounts manifest_class_counts(const DatasetManifest& manifest) {
  ClassCounts counts;
  for (const auto& e : manifest.entries()) {
    (e.label == Label::real ? counts.n_real : counts.n_fake) += 1;
  }
  return counts;
}

}  // namespace iclad
