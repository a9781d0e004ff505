#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "iclad/core.hpp"

namespace iclad {

enum class Strategy { zero_shot, audio_label, simple, knowledge_guided, pcr };

std::string_view to_string(Strategy strategy);
std::optional<Strategy> parse_strategy(std::string_view text);

/// The four human-selected attribute families given to the knowledge-guided
/// strategy.
inline constexpr std::string_view kKnowledgeAttributeList =
    "intonation and emotion, speech quality and audio artifacts, biological signs, "
    "and natural pacing and hesitations";

struct PromptPart {
  enum class Kind { text, audio_attachment };

  Kind kind = Kind::text;
  std::string text;
  AudioRef audio;

  static PromptPart make_text(std::string text);
  static PromptPart make_audio(AudioRef audio);

  bool operator==(const PromptPart&) const = default;
};

/// A rendered prompt plus the identity of the template that produced it.
struct Prompt {
  std::vector<PromptPart> parts;
  std::string template_id;

  std::size_t audio_count() const;
  /// Concatenated text parts, with audio parts shown as "[audio:<id>]".
  std::string flatten() const;
};

/// One prompt template file.
///
/// Line-oriented format:
///   # comment
///   @id <name>
///   @version <n>
///   @schema Field_A, Field_B
///   @@ preamble | example | query
///   <section body, may contain {{placeholders}}>
///
/// The example section is rendered once per in-context example and may use
/// {{i}} {{audio_i}} {{label_i}} {{r_real_i}} {{r_fake_i}} {{r_reconciled_i}}.
/// The preamble and query sections may use {{query_audio}} {{query_r_real}}
/// {{query_r_fake}} {{query_label}}. Anything else is rejected at load time.
class PromptTemplate {
 public:
  enum class Section { preamble, example, query };

  static PromptTemplate parse(std::string_view content, const std::string& source);
  static PromptTemplate load(const std::filesystem::path& path);

  const std::string& id() const { return id_; }
  int version() const { return version_; }
  std::string template_id() const { return id_ + "@" + std::to_string(version_); }
  const std::vector<std::string>& schema() const { return schema_; }
  const std::string& section(Section s) const { return sections_[static_cast<int>(s)]; }
  bool has_example_section() const { return !section(Section::example).empty(); }
  /// Placeholder names used by a section, in order of appearance.
  std::vector<std::string> placeholders(Section s) const;
  bool uses(Section s, std::string_view placeholder) const;

  /// Renders with synthetic data and checks that the first JSON object in
  /// the rendered text declares exactly the @schema fields. Returns an empty
  /// string on success, otherwise a description of the mismatch.
  std::string self_test() const;

 private:
  std::string id_;
  int version_ = 0;
  std::vector<std::string> schema_;
  std::string sections_[3];
};

struct PromptOptions {
  /// Evidence texts longer than this many bytes are cut (at a UTF-8
  /// boundary). Zero disables the cap.
  std::size_t evidence_char_cap = 4000;
};

/// The template files shipped in templates/: zero_shot, audio_label, simple,
/// knowledge_guided, pcr, phase1_initial, phase1_reconcile.
class TemplateSet {
 public:
  static TemplateSet load(const std::filesystem::path& dir);
  /// Directory the build installed the default templates into.
  static std::filesystem::path default_dir();

  void add(PromptTemplate t);
  const PromptTemplate& get(std::string_view name) const;
  const PromptTemplate& for_strategy(Strategy strategy) const;

  PromptOptions options;

 private:
  std::map<std::string, PromptTemplate, std::less<>> templates_;
};

/// Label-blind Phase-1 request asking for both real- and fake-supporting
/// evidence.
Prompt build_phase1_initial(const TemplateSet& templates, const AudioRef& audio);

/// Phase-1 reconciliation request: both evidence texts plus the true label.
Prompt build_phase1_reconcile(const TemplateSet& templates, const AudioRef& audio,
                              const EvidenceTriple& partial, Label label);

Prompt build_icl_prompt(const TemplateSet& templates, Strategy strategy,
                        std::span<const CacheEntry> examples, const AudioRef& query);

/// True when no text part states a label ("label: real", "Label = fake", ...).
bool is_label_blind(std::span<const PromptPart> parts);

}  // namespace iclad
