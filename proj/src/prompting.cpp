#include "iclad/prompting.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <regex>
#include <set>
#include <sstream>

#include <json.hpp>

#include "iclad/response_parser.hpp"

#ifndef ICLAD_TEMPLATE_DIR
#define ICLAD_TEMPLATE_DIR "templates"
#endif

namespace iclad {

namespace {

using Section = PromptTemplate::Section;

const std::set<std::string, std::less<>> kExamplePlaceholders = {
    "i", "audio_i", "label_i", "r_real_i", "r_fake_i", "r_reconciled_i"};
const std::set<std::string, std::less<>> kQueryPlaceholders = {
    "query_audio", "query_r_real", "query_r_fake", "query_label"};

constexpr const char* kSectionNames[] = {"preamble", "example", "query"};

Error template_error(const std::string& source, const std::string& what) {
  return Error(ErrorCode::malformed, "template " + source + ": " + what);
}

struct Token {
  bool placeholder = false;
  std::string_view value;
};

// Splits a section body into literal text and {{name}} tokens.
std::vector<Token> tokenize(std::string_view body, const std::string& source) {
  std::vector<Token> out;
  std::size_t pos = 0;
  while (pos < body.size()) {
    auto open = body.find("{{", pos);
    if (open == std::string_view::npos) {
      out.push_back({false, body.substr(pos)});
      break;
    }
    if (open > pos) out.push_back({false, body.substr(pos, open - pos)});
    auto close = body.find("}}", open + 2);
    if (close == std::string_view::npos) throw template_error(source, "unterminated '{{'");
    out.push_back({true, body.substr(open + 2, close - open - 2)});
    pos = close + 2;
  }
  return out;
}

std::string cap_text(const std::string& text, std::size_t cap) {
  if (cap == 0 || text.size() <= cap) return text;
  std::size_t cut = cap;
  while (cut > 0 && (static_cast<unsigned char>(text[cut]) & 0xC0) == 0x80) --cut;
  return text.substr(0, cut);
}

class PartBuilder {
 public:
  void text(std::string_view t) { pending_.append(t); }
  void audio(const AudioRef& a) {
    flush();
    parts_.push_back(PromptPart::make_audio(a));
  }
  std::vector<PromptPart> finish() {
    flush();
    return std::move(parts_);
  }

 private:
  void flush() {
    if (!pending_.empty()) parts_.push_back(PromptPart::make_text(std::move(pending_)));
    pending_.clear();
  }
  std::vector<PromptPart> parts_;
  std::string pending_;
};

struct QueryFields {
  const AudioRef* audio = nullptr;
  const EvidenceTriple* evidence = nullptr;
  std::optional<Label> label;
};

void render_section(PartBuilder& out, const PromptTemplate& t, Section s,
                    const std::function<void(std::string_view)>& on_placeholder) {
  for (const auto& tok : tokenize(t.section(s), t.template_id())) {
    if (tok.placeholder) {
      on_placeholder(tok.value);
    } else {
      out.text(tok.value);
    }
  }
}

Prompt render(const PromptTemplate& t, std::span<const CacheEntry> examples,
              const QueryFields& query, const PromptOptions& options) {
  PartBuilder out;
  auto query_handler = [&](std::string_view name) {
    if (name == "query_audio") {
      out.audio(*query.audio);
    } else if (name == "query_r_real") {
      out.text(cap_text(query.evidence->r_real, options.evidence_char_cap));
    } else if (name == "query_r_fake") {
      out.text(cap_text(query.evidence->r_fake, options.evidence_char_cap));
    } else if (name == "query_label") {
      out.text(to_string(*query.label));
    }
  };

  render_section(out, t, Section::preamble, query_handler);
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    render_section(out, t, Section::example, [&](std::string_view name) {
      if (name == "i") {
        out.text(std::to_string(i + 1));
      } else if (name == "audio_i") {
        out.audio(ex.audio);
      } else if (name == "label_i") {
        out.text(to_string(ex.label));
      } else if (name == "r_real_i") {
        out.text(cap_text(ex.evidence.r_real, options.evidence_char_cap));
      } else if (name == "r_fake_i") {
        out.text(cap_text(ex.evidence.r_fake, options.evidence_char_cap));
      } else if (name == "r_reconciled_i") {
        out.text(cap_text(ex.evidence.r_reconciled, options.evidence_char_cap));
      }
    });
  }
  render_section(out, t, Section::query, query_handler);
  return Prompt{out.finish(), t.template_id()};
}

std::size_t count_uses(const PromptTemplate& t, Section s, std::string_view name) {
  auto names = t.placeholders(s);
  return static_cast<std::size_t>(std::count(names.begin(), names.end(), name));
}

void require_uses(const PromptTemplate& t, Section s, std::initializer_list<std::string_view> names) {
  for (auto name : names) {
    if (!t.uses(s, name)) {
      throw template_error(t.template_id(), std::string(kSectionNames[static_cast<int>(s)]) +
                                                " section must use {{" + std::string(name) + "}}");
    }
  }
}

void forbid_uses(const PromptTemplate& t, Section s, std::initializer_list<std::string_view> names) {
  for (auto name : names) {
    if (t.uses(s, name)) {
      throw template_error(t.template_id(), "must not use {{" + std::string(name) + "}}");
    }
  }
}

// Structural contract each named template must satisfy.
void validate_named(const PromptTemplate& t) {
  const auto& id = t.id();
  if (count_uses(t, Section::query, "query_audio") + count_uses(t, Section::preamble, "query_audio") != 1) {
    throw template_error(t.template_id(), "exactly one {{query_audio}} is required");
  }
  if (t.has_example_section() && count_uses(t, Section::example, "audio_i") != 1) {
    throw template_error(t.template_id(), "the example section needs exactly one {{audio_i}}");
  }

  if (id == "phase1_initial") {
    if (t.has_example_section()) throw template_error(t.template_id(), "no example section allowed");
    for (auto s : {Section::preamble, Section::query}) {
      forbid_uses(t, s, {"query_label", "query_r_real", "query_r_fake"});
    }
  } else if (id == "phase1_reconcile") {
    if (t.has_example_section()) throw template_error(t.template_id(), "no example section allowed");
    for (auto name : {"query_r_real", "query_r_fake", "query_label"}) {
      if (!t.uses(Section::preamble, name) && !t.uses(Section::query, name)) {
        throw template_error(t.template_id(), std::string("must use {{") + name + "}}");
      }
    }
  } else if (auto strategy = parse_strategy(id)) {
    for (auto s : {Section::preamble, Section::query}) {
      forbid_uses(t, s, {"query_label", "query_r_real", "query_r_fake"});
    }
    switch (*strategy) {
      case Strategy::zero_shot:
        if (t.has_example_section()) throw template_error(t.template_id(), "zero-shot has no examples");
        break;
      case Strategy::audio_label:
        require_uses(t, Section::example, {"label_i"});
        forbid_uses(t, Section::example, {"r_real_i", "r_fake_i", "r_reconciled_i"});
        break;
      case Strategy::simple:
        require_uses(t, Section::example, {"r_reconciled_i", "label_i"});
        forbid_uses(t, Section::example, {"r_real_i", "r_fake_i"});
        break;
      case Strategy::knowledge_guided:
        require_uses(t, Section::example, {"label_i"});
        forbid_uses(t, Section::example, {"r_real_i", "r_fake_i", "r_reconciled_i"});
        if (t.section(Section::preamble).find(kKnowledgeAttributeList) == std::string::npos) {
          throw template_error(t.template_id(), "preamble must list the four attribute families");
        }
        break;
      case Strategy::pcr:
        require_uses(t, Section::example, {"r_real_i", "r_fake_i", "r_reconciled_i", "label_i"});
        break;
    }
  }
}

}  // namespace

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::zero_shot: return "zero_shot";
    case Strategy::audio_label: return "audio_label";
    case Strategy::simple: return "simple";
    case Strategy::knowledge_guided: return "knowledge_guided";
    case Strategy::pcr: return "pcr";
  }
  return "pcr";
}

std::optional<Strategy> parse_strategy(std::string_view text) {
  for (auto s : {Strategy::zero_shot, Strategy::audio_label, Strategy::simple,
                 Strategy::knowledge_guided, Strategy::pcr}) {
    if (text == to_string(s)) return s;
  }
  return std::nullopt;
}

PromptPart PromptPart::make_text(std::string text) {
  PromptPart p;
  p.kind = Kind::text;
  p.text = std::move(text);
  return p;
}

PromptPart PromptPart::make_audio(AudioRef audio) {
  PromptPart p;
  p.kind = Kind::audio_attachment;
  p.audio = std::move(audio);
  return p;
}

std::size_t Prompt::audio_count() const {
  return static_cast<std::size_t>(std::count_if(parts.begin(), parts.end(), [](const PromptPart& p) {
    return p.kind == PromptPart::Kind::audio_attachment;
  }));
}

std::string Prompt::flatten() const {
  std::string out;
  for (const auto& p : parts) {
    if (p.kind == PromptPart::Kind::text) {
      out += p.text;
    } else {
      out += "[audio:" + p.audio.id + "]";
    }
  }
  return out;
}

PromptTemplate PromptTemplate::parse(std::string_view content, const std::string& source) {
  PromptTemplate t;
  std::istringstream in{std::string(content)};
  std::string line;
  int current = -1;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("@@", 0) == 0) {
      auto name = line.substr(2);
      name.erase(0, name.find_first_not_of(' '));
      name.erase(name.find_last_not_of(' ') + 1);
      auto it = std::find(std::begin(kSectionNames), std::end(kSectionNames), name);
      if (it == std::end(kSectionNames)) throw template_error(source, "unknown section '" + name + "'");
      current = static_cast<int>(it - std::begin(kSectionNames));
      if (!t.sections_[current].empty()) throw template_error(source, "section '" + name + "' repeated");
      continue;
    }
    if (current < 0) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream directive(line);
      std::string key;
      directive >> key;
      std::string rest;
      std::getline(directive, rest);
      rest.erase(0, rest.find_first_not_of(' '));
      if (key == "@id") {
        t.id_ = rest;
      } else if (key == "@version") {
        try {
          t.version_ = std::stoi(rest);
        } catch (const std::exception&) {
          throw template_error(source, "bad @version");
        }
      } else if (key == "@schema") {
        std::istringstream fields(rest);
        std::string field;
        while (std::getline(fields, field, ',')) {
          field.erase(0, field.find_first_not_of(' '));
          field.erase(field.find_last_not_of(' ') + 1);
          if (!field.empty()) t.schema_.push_back(field);
        }
      } else {
        throw template_error(source, "unknown directive '" + key + "'");
      }
      continue;
    }
    t.sections_[current] += line;
    t.sections_[current] += '\n';
  }
  if (t.id_.empty()) throw template_error(source, "missing @id");
  if (t.version_ <= 0) throw template_error(source, "missing or non-positive @version");
  if (t.schema_.empty()) throw template_error(source, "missing @schema");

  for (int s = 0; s < 3; ++s) {
    const auto& allowed = s == static_cast<int>(Section::example) ? kExamplePlaceholders
                                                                   : kQueryPlaceholders;
    for (const auto& tok : tokenize(t.sections_[s], source)) {
      if (tok.placeholder && !allowed.contains(tok.value)) {
        throw Error(ErrorCode::unknown_placeholder,
                    "template " + source + ": unknown placeholder {{" + std::string(tok.value) +
                        "}} in " + kSectionNames[s] + " section");
      }
    }
  }
  return t;
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::io, "cannot open template " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.filename().string());
}

std::vector<std::string> PromptTemplate::placeholders(Section s) const {
  std::vector<std::string> out;
  for (const auto& tok : tokenize(section(s), template_id())) {
    if (tok.placeholder) out.emplace_back(tok.value);
  }
  return out;
}

bool PromptTemplate::uses(Section s, std::string_view placeholder) const {
  auto names = placeholders(s);
  return std::find(names.begin(), names.end(), placeholder) != names.end();
}

std::string PromptTemplate::self_test() const {
  CacheEntry example;
  example.audio = AudioRef{"selftest-example", "example.wav", "selftest", Split::train, {}};
  example.label = Label::fake;
  example.evidence = {"real-side evidence", "fake-side evidence", "reconciled evidence"};
  AudioRef query{"selftest-query", "query.wav", "selftest", Split::test, {}};
  EvidenceTriple partial{"real-side evidence", "fake-side evidence", ""};

  std::vector<CacheEntry> examples;
  if (has_example_section()) examples.push_back(example);
  QueryFields q{&query, &partial, Label::real};
  auto prompt = render(*this, examples, q, PromptOptions{});

  auto json_text = extract_json_object(prompt.flatten());
  if (!json_text) return "no JSON schema block in rendered prompt";
  auto obj = nlohmann::json::parse(*json_text);
  std::set<std::string> declared(schema_.begin(), schema_.end());
  std::set<std::string> found;
  for (const auto& [key, _] : obj.items()) found.insert(key);
  if (declared != found) {
    std::string msg = "schema block fields {";
    for (const auto& f : found) msg += f + ",";
    msg += "} differ from @schema";
    return msg;
  }
  return {};
}

TemplateSet TemplateSet::load(const std::filesystem::path& dir) {
  TemplateSet set;
  for (const char* name : {"zero_shot", "audio_label", "simple", "knowledge_guided", "pcr",
                           "phase1_initial", "phase1_reconcile"}) {
    auto path = dir / (std::string(name) + ".tmpl");
    auto t = PromptTemplate::load(path);
    if (t.id() != name) {
      throw template_error(path.string(), "@id '" + t.id() + "' does not match file name");
    }
    set.add(std::move(t));
  }
  return set;
}

std::filesystem::path TemplateSet::default_dir() { return ICLAD_TEMPLATE_DIR; }

void TemplateSet::add(PromptTemplate t) {
  validate_named(t);
  if (auto problem = t.self_test(); !problem.empty()) {
    throw template_error(t.template_id(), "self-test failed: " + problem);
  }
  auto id = t.id();
  templates_.insert_or_assign(std::move(id), std::move(t));
}

const PromptTemplate& TemplateSet::get(std::string_view name) const {
  auto it = templates_.find(name);
  if (it == templates_.end()) {
    throw Error(ErrorCode::config, "no template named '" + std::string(name) + "'");
  }
  return it->second;
}

const PromptTemplate& TemplateSet::for_strategy(Strategy strategy) const {
  return get(to_string(strategy));
}

Prompt build_phase1_initial(const TemplateSet& templates, const AudioRef& audio) {
  QueryFields q{&audio, nullptr, std::nullopt};
  return render(templates.get("phase1_initial"), {}, q, templates.options);
}

Prompt build_phase1_reconcile(const TemplateSet& templates, const AudioRef& audio,
                              const EvidenceTriple& partial, Label label) {
  if (partial.r_real.empty() || partial.r_fake.empty()) {
    throw Error(ErrorCode::empty_evidence,
                "reconciliation of '" + audio.id + "' needs non-empty real and fake evidence");
  }
  if (!partial.r_reconciled.empty()) {
    throw Error(ErrorCode::invalid_argument, "'" + audio.id + "' is already reconciled");
  }
  QueryFields q{&audio, &partial, label};
  return render(templates.get("phase1_reconcile"), {}, q, templates.options);
}

Prompt build_icl_prompt(const TemplateSet& templates, Strategy strategy,
                        std::span<const CacheEntry> examples, const AudioRef& query) {
  if (strategy == Strategy::zero_shot && !examples.empty()) {
    throw Error(ErrorCode::invalid_argument, "zero-shot prompts take no examples");
  }
  if (strategy != Strategy::zero_shot && examples.empty()) {
    throw Error(ErrorCode::empty_examples,
                std::string(to_string(strategy)) + " prompts need at least one example");
  }
  for (const auto& ex : examples) {
    const bool ok = strategy == Strategy::pcr      ? ex.evidence.complete()
                    : strategy == Strategy::simple ? !ex.evidence.r_reconciled.empty()
                                                   : true;
    if (!ok) {
      throw Error(ErrorCode::missing_evidence, "example '" + ex.audio.id + "' lacks the evidence " +
                                                   std::string(to_string(strategy)) + " needs");
    }
  }
  QueryFields q{&query, nullptr, std::nullopt};
  return render(templates.for_strategy(strategy), examples, q, templates.options);
}

bool is_label_blind(std::span<const PromptPart> parts) {
  static const std::regex kLabelStatement(R"(label["']?\s*[:=]\s*["']?\s*(real|fake)\b)",
                                          std::regex::icase);
  return std::none_of(parts.begin(), parts.end(), [](const PromptPart& p) {
    return p.kind == PromptPart::Kind::text && std::regex_search(p.text, kLabelStatement);
  });
}

}  // namespace iclad
