#include <gtest/gtest.h>

#include <cstdlib>
#include <string>

#include "iclad/error.hpp"
#include "iclad/prompting.hpp"
#include "test_support.hpp"

namespace iclad {
namespace {

using testing::Gen;
using testing::read_bytes;
using testing::TempDir;
using testing::write_bytes;

const TemplateSet& shipped() {
  static const TemplateSet set = TemplateSet::load(ICLAD_TEMPLATE_DIR);
  return set;
}

AudioRef audio(const std::string& id) {
  AudioRef a;
  a.id = id;
  a.path = "/clips/" + id + ".flac";
  a.dataset = "itw";
  return a;
}

CacheEntry example(const std::string& id, Label label, std::size_t n = 0) {
  CacheEntry e;
  e.audio = audio(id);
  e.label = label;
  e.evidence = {"natural breath before " + id, "slight metallic ring on " + id,
                "breaths are genuine, the ring is room echo (" + id + ")" + std::string(n, '.')};
  return e;
}

std::vector<CacheEntry> examples(std::size_t n) {
  std::vector<CacheEntry> out;
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(example("ex" + std::to_string(i), i % 2 ? Label::fake : Label::real));
  }
  return out;
}

template <class F>
ErrorCode code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an iclad::Error";
  return ErrorCode::io;
}

std::size_t occurrences(const std::string& hay, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = hay.find(needle); p != std::string::npos; p = hay.find(needle, p + 1)) ++n;
  return n;
}

// ---- template files -------------------------------------------------------------

TEST(Templates, ShippedSetLoadsAndSelfTests) {
  for (auto name : {"zero_shot", "audio_label", "simple", "knowledge_guided", "pcr",
                    "phase1_initial", "phase1_reconcile"}) {
    const auto& t = shipped().get(name);
    EXPECT_EQ(t.id(), name);
    EXPECT_EQ(t.self_test(), "") << name;
  }
}

TEST(Templates, UnknownPlaceholderRejected) {
  const char* text =
      "@id x\n@version 1\n@schema Final_Answer\n@@ query\n{{query_audio}} {{speaker_name}}\n"
      "{\"Final_Answer\": \"real | fake\"}\n";
  EXPECT_EQ(code_of([&] { PromptTemplate::parse(text, "x.tmpl"); }),
            ErrorCode::unknown_placeholder);
}

TEST(Templates, DirectiveParsing) {
  const char* text =
      "# comment\n@id probe\n@version 3\n@schema A, B\n@@ preamble\nhello {{query_audio}}\n"
      "@@ example\n{{i}} {{audio_i}} {{label_i}}\n@@ query\n{\"A\": \"<a>\", \"B\": \"<b>\"}\n";
  auto t = PromptTemplate::parse(text, "probe.tmpl");
  EXPECT_EQ(t.template_id(), "probe@3");
  EXPECT_EQ(t.schema(), (std::vector<std::string>{"A", "B"}));
  EXPECT_TRUE(t.has_example_section());
  EXPECT_EQ(t.placeholders(PromptTemplate::Section::example),
            (std::vector<std::string>{"i", "audio_i", "label_i"}));
  EXPECT_EQ(t.self_test(), "");
}

TEST(Templates, SelfTestCatchesSchemaDrift) {
  const char* text =
      "@id drift\n@version 1\n@schema A, B\n@@ query\n{{query_audio}}\n{\"A\": \"<a>\"}\n";
  auto t = PromptTemplate::parse(text, "drift.tmpl");
  EXPECT_NE(t.self_test(), "");
}

TEST(Templates, LoaderRejectsMissingDirectives) {
  EXPECT_ANY_THROW(PromptTemplate::parse("@version 1\n@schema A\n@@ query\nx\n", "a"));
  EXPECT_ANY_THROW(PromptTemplate::parse("@id a\n@schema A\n@@ query\nx\n", "a"));
  EXPECT_ANY_THROW(PromptTemplate::parse("@id a\n@version 1\n@@ query\nx\n", "a"));
  EXPECT_ANY_THROW(PromptTemplate::parse("@id a\n@version 1\n@schema A\n@@ postscript\nx\n", "a"));
}

TEST(Templates, SwappedDirectoryIsUsed) {
  TempDir dir;
  for (const auto& entry : std::filesystem::directory_iterator(ICLAD_TEMPLATE_DIR)) {
    std::filesystem::copy(entry.path(), dir.path() / entry.path().filename());
  }
  auto pcr = read_bytes(dir / "pcr.tmpl");
  pcr.replace(pcr.find("@version 1"), 10, "@version 7");
  write_bytes(dir / "pcr.tmpl", pcr);
  auto set = TemplateSet::load(dir.path());
  auto p = build_icl_prompt(set, Strategy::pcr, examples(2), audio("q"));
  EXPECT_EQ(p.template_id, "pcr@7");
}

// ---- phase 1 ----------------------------------------------------------------------

TEST(Phase1Initial, OneAttachmentAndLabelBlind) {
  Gen g(1);
  for (int i = 0; i < 50; ++i) {
    auto a = audio("clip" + std::to_string(g.next() % 100000));
    auto p = build_phase1_initial(shipped(), a);
    EXPECT_EQ(p.audio_count(), 1u);
    EXPECT_TRUE(is_label_blind(p.parts));
    for (const auto& part : p.parts) {
      if (part.kind != PromptPart::Kind::text) continue;
      std::string lower = part.text;
      for (auto& c : lower) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
      EXPECT_EQ(lower.find("label: real"), std::string::npos);
      EXPECT_EQ(lower.find("label: fake"), std::string::npos);
    }
    const auto flat = p.flatten();
    EXPECT_NE(flat.find("Real_Evidence"), std::string::npos);
    EXPECT_NE(flat.find("Fake_Evidence"), std::string::npos);
  }
}

TEST(Phase1Initial, LabelBlindnessDetector) {
  EXPECT_FALSE(is_label_blind(std::vector{PromptPart::make_text("Label: real")}));
  EXPECT_FALSE(is_label_blind(std::vector{PromptPart::make_text("the LABEL = Fake here")}));
  EXPECT_FALSE(is_label_blind(std::vector{PromptPart::make_text("{\"label\": \"fake\"}")}));
  EXPECT_TRUE(is_label_blind(std::vector{PromptPart::make_text("is it real or fake?")}));
  EXPECT_TRUE(is_label_blind(std::vector{PromptPart::make_audio(audio("label: real"))}));
}

TEST(Phase1Reconcile, EmbedsEvidenceAndLabel) {
  auto a = audio("r1");
  EvidenceTriple partial{"steady breathing", "robotic sibilants", ""};
  auto p = build_phase1_reconcile(shipped(), a, partial, Label::fake);
  const auto flat = p.flatten();
  EXPECT_EQ(p.audio_count(), 1u);
  EXPECT_NE(flat.find("steady breathing"), std::string::npos);
  EXPECT_NE(flat.find("robotic sibilants"), std::string::npos);
  EXPECT_NE(flat.find("fake"), std::string::npos);
  EXPECT_NE(flat.find("Reconciled_Evidence"), std::string::npos);
}

TEST(Phase1Reconcile, Preconditions) {
  auto a = audio("r2");
  EXPECT_EQ(code_of([&] {
              build_phase1_reconcile(shipped(), a, {"x", "", ""}, Label::real);
            }),
            ErrorCode::empty_evidence);
  EXPECT_EQ(code_of([&] {
              build_phase1_reconcile(shipped(), a, {"", "y", ""}, Label::real);
            }),
            ErrorCode::empty_evidence);
  EXPECT_EQ(code_of([&] {
              build_phase1_reconcile(shipped(), a, {"x", "y", "z"}, Label::real);
            }),
            ErrorCode::invalid_argument);
}

TEST(Phase1Reconcile, LengthGrowsLinearlyBelowCap) {
  auto set = shipped();
  set.options.evidence_char_cap = 4000;
  auto a = audio("lin");
  auto size_for = [&](std::size_t n) {
    EvidenceTriple t{std::string(n, 'r'), std::string(n, 'f'), ""};
    return build_phase1_reconcile(set, a, t, Label::real).flatten().size();
  };
  const auto base = size_for(1);
  for (std::size_t n : {10u, 100u, 1000u, 4000u}) {
    EXPECT_EQ(size_for(n), base + 2 * (n - 1)) << n;
  }
  // Above the cap each evidence text contributes exactly cap bytes.
  EXPECT_EQ(size_for(9000), base + 2 * (4000 - 1));
}

TEST(Phase1Reconcile, CapCutsAtUtf8Boundary) {
  auto set = shipped();
  set.options.evidence_char_cap = 5;
  // "aaaa" + U+00E9 (2 bytes): a 5-byte cut would split the code point.
  EvidenceTriple t{"aaaa\xC3\xA9tail", "fake cue", ""};
  const auto flat = build_phase1_reconcile(set, audio("u"), t, Label::real).flatten();
  EXPECT_NE(flat.find("aaaa\n"), std::string::npos);
  EXPECT_EQ(flat.find("\xC3"), std::string::npos);
}

// ---- phase 2 ------------------------------------------------------------------------

TEST(IclPrompt, AttachmentCountAndQueryLastForEveryStrategy) {
  for (auto s : {Strategy::audio_label, Strategy::simple, Strategy::knowledge_guided,
                 Strategy::pcr}) {
    for (std::size_t n : {1u, 2u, 5u, 10u}) {
      auto p = build_icl_prompt(shipped(), s, examples(n), audio("query"));
      EXPECT_EQ(p.audio_count(), n + 1) << to_string(s);
      std::string last_audio;
      for (const auto& part : p.parts)
        if (part.kind == PromptPart::Kind::audio_attachment) last_audio = part.audio.id;
      EXPECT_EQ(last_audio, "query");
      EXPECT_NE(p.flatten().find("Final_Answer"), std::string::npos);
    }
  }
  auto zs = build_icl_prompt(shipped(), Strategy::zero_shot, {}, audio("query"));
  EXPECT_EQ(zs.audio_count(), 1u);
}

TEST(IclPrompt, PcrWithTenExamplesHasElevenAttachments) {
  auto p = build_icl_prompt(shipped(), Strategy::pcr, examples(10), audio("q"));
  EXPECT_EQ(p.audio_count(), 11u);
  const auto flat = p.flatten();
  for (const auto& e : examples(10)) {
    EXPECT_NE(flat.find(e.evidence.r_real), std::string::npos);
    EXPECT_NE(flat.find(e.evidence.r_fake), std::string::npos);
    EXPECT_NE(flat.find(e.evidence.r_reconciled), std::string::npos);
  }
}

TEST(IclPrompt, KnowledgeGuidedListsTheFourAttributes) {
  auto p = build_icl_prompt(shipped(), Strategy::knowledge_guided, examples(2), audio("q"));
  const std::string verbatim =
      "intonation and emotion, speech quality and audio artifacts, biological signs, "
      "and natural pacing and hesitations";
  EXPECT_EQ(kKnowledgeAttributeList, verbatim);
  EXPECT_NE(p.flatten().find(verbatim), std::string::npos);
}

TEST(IclPrompt, AudioLabelCarriesNoEvidence) {
  auto ex = examples(3);
  auto p = build_icl_prompt(shipped(), Strategy::audio_label, ex, audio("q"));
  const auto flat = p.flatten();
  for (const auto& e : ex) {
    EXPECT_EQ(flat.find(e.evidence.r_real), std::string::npos);
    EXPECT_EQ(flat.find(e.evidence.r_reconciled), std::string::npos);
  }
  EXPECT_EQ(occurrences(flat, "Label: real"), 2u);
  EXPECT_EQ(occurrences(flat, "Label: fake"), 1u);
}

TEST(IclPrompt, SimpleStrategyGolden) {
  auto ex = examples(2);
  auto p = build_icl_prompt(shipped(), Strategy::simple, ex, audio("query"));
  const auto golden_path = std::filesystem::path(ICLAD_GOLDEN_DIR) / "simple_two_examples.txt";
  const auto flat = p.flatten();
  if (std::getenv("ICLAD_UPDATE_GOLDEN")) write_bytes(golden_path, flat);
  EXPECT_EQ(flat, read_bytes(golden_path));

  // Ordering: example 1, example 2, query; reason sits between audio and label.
  const auto a0 = flat.find("[audio:ex0]");
  const auto r0 = flat.find(ex[0].evidence.r_reconciled);
  const auto l0 = flat.find("Label: real");
  const auto a1 = flat.find("[audio:ex1]");
  const auto q = flat.find("[audio:query]");
  EXPECT_LT(a0, r0);
  EXPECT_LT(r0, l0);
  EXPECT_LT(l0, a1);
  EXPECT_LT(a1, q);
}

TEST(IclPrompt, Errors) {
  EXPECT_EQ(code_of([&] { build_icl_prompt(shipped(), Strategy::pcr, {}, audio("q")); }),
            ErrorCode::empty_examples);
  EXPECT_EQ(code_of([&] {
              build_icl_prompt(shipped(), Strategy::zero_shot, examples(1), audio("q"));
            }),
            ErrorCode::invalid_argument);
  auto ex = examples(2);
  ex[1].evidence.r_fake.clear();
  EXPECT_EQ(code_of([&] { build_icl_prompt(shipped(), Strategy::pcr, ex, audio("q")); }),
            ErrorCode::missing_evidence);
  // simple only needs the reconciled reason.
  EXPECT_NO_THROW(build_icl_prompt(shipped(), Strategy::simple, ex, audio("q")));
  ex[0].evidence.r_reconciled.clear();
  EXPECT_EQ(code_of([&] { build_icl_prompt(shipped(), Strategy::simple, ex, audio("q")); }),
            ErrorCode::missing_evidence);
  EXPECT_NO_THROW(build_icl_prompt(shipped(), Strategy::audio_label, ex, audio("q")));
}

TEST(IclPrompt, StrategyNamesRoundTrip) {
  for (auto s : {Strategy::zero_shot, Strategy::audio_label, Strategy::simple,
                 Strategy::knowledge_guided, Strategy::pcr}) {
    EXPECT_EQ(parse_strategy(to_string(s)), s);
  }
  EXPECT_FALSE(parse_strategy("cot").has_value());
}

}  // namespace
}  // namespace iclad
