#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "iclad/error.hpp"

namespace iclad {

enum class Label { real, fake };
enum class Split { train, test };

std::string_view to_string(Label label);
std::string_view to_string(Split split);

/// Case-insensitive; surrounding whitespace ignored.
std::optional<Label> parse_label(std::string_view text);
std::optional<Split> parse_split(std::string_view text);

struct AudioRef {
  std::string id;
  std::filesystem::path path;
  std::string dataset;
  Split split = Split::test;
  std::optional<double> duration_s;

  bool operator==(const AudioRef&) const = default;
};

struct EvidenceTriple {
  std::string r_real;
  std::string r_fake;
  std::string r_reconciled;

  /// Both label-blind evidence texts are present.
  bool has_initial() const { return !r_real.empty() && !r_fake.empty(); }
  bool complete() const { return has_initial() && !r_reconciled.empty(); }

  bool operator==(const EvidenceTriple&) const = default;
};

struct CacheEntry {
  AudioRef audio;
  Label label = Label::real;
  EvidenceTriple evidence;
  std::size_t embedding_row = 0;
};

enum class VerdictSource { detector, alm };
enum class ParseStatus { ok, recovered, failed };

std::string_view to_string(VerdictSource source);
std::string_view to_string(ParseStatus status);

struct Verdict {
  Label decision = Label::real;
  VerdictSource source = VerdictSource::detector;
  std::optional<double> detector_score;
  std::optional<double> raw_logit;
  std::optional<EvidenceTriple> evidence;
  ParseStatus parse_status = ParseStatus::ok;

  /// Decision came from the fallback policy rather than the model.
  bool degraded() const { return parse_status == ParseStatus::failed; }
};

struct ManifestEntry {
  AudioRef audio;
  Label label = Label::real;
};

class DatasetManifest {
 public:
  /// Validates non-emptiness and id uniqueness.
  DatasetManifest(std::string name, std::vector<ManifestEntry> entries);

  const std::string& name() const { return name_; }
  const std::vector<ManifestEntry>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }
  const ManifestEntry* find(std::string_view id) const;

 private:
  std::string name_;
  std::vector<ManifestEntry> entries_;
};

struct ClassCounts {
  std::size_t n_real = 0;
  std::size_t n_fake = 0;
};

DatasetManifest load_manifest(const std::filesystem::path& path);
DatasetManifest parse_manifest(std::istream& in, std::string name);
void write_manifest(std::ostream& out, const DatasetManifest& manifest);
void save_manifest(const std::filesystem::path& path,
                   const DatasetManifest& manifest);

ClassCounts manifest_class_counts(const DatasetManifest& manifest);

}  // namespace iclad
