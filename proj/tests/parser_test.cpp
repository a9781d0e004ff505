#include <gtest/gtest.h>

#include <json.hpp>

#include "iclad/response_parser.hpp"
#include "test_support.hpp"

namespace iclad {
namespace {

using testing::Gen;

// ---- failure exemplars -------------------------------------------------------------

TEST(ParseResponse, WellFormed) {
  auto r = parse_response(
      R"({"Real_Evidence":"breaths audible","Fake_Evidence":"none","Reconciled_Evidence":"breaths indicate human","Final_Answer":"real"})");
  EXPECT_EQ(r.parse_status, ParseStatus::ok);
  EXPECT_EQ(r.final_answer, Label::real);
  EXPECT_FALSE(r.failure_kind.has_value());
  EXPECT_EQ(r.real_evidence, "breaths audible");
  EXPECT_EQ(r.fake_evidence, "none");
  EXPECT_EQ(r.reconciled_evidence, "breaths indicate human");
}

TEST(ParseResponse, EchoedPlaceholderAnswer) {
  auto r = parse_response(R"({"Final_Answer": "real | fake"})");
  EXPECT_EQ(r.parse_status, ParseStatus::failed);
  EXPECT_EQ(r.failure_kind, FailureKind::echoed_placeholder);
  EXPECT_FALSE(r.final_answer.has_value());
}

TEST(ParseResponse, ProseVerdictIsRecoveredFormatViolation) {
  auto r = parse_response("The audio clip is real");
  EXPECT_EQ(r.parse_status, ParseStatus::recovered);
  EXPECT_EQ(r.final_answer, Label::real);
  EXPECT_EQ(r.failure_kind, FailureKind::format_violation);
}

TEST(ParseResponse, EmptyReconciledIsOmittedRationale) {
  auto r = parse_response(R"({"Reconciled_Evidence": ""})");
  EXPECT_EQ(r.parse_status, ParseStatus::failed);
  EXPECT_EQ(r.failure_kind, FailureKind::omitted_rationale);
}

TEST(ParseResponse, TranscriptionAndDescriptionAreIllogical) {
  for (const char* raw : {"Because men groping in the Arctic darkness had found a yellow metal",
                          "The audio clip is a recording of a human voice"}) {
    auto r = parse_response(raw);
    EXPECT_EQ(r.parse_status, ParseStatus::failed) << raw;
    EXPECT_EQ(r.failure_kind, FailureKind::illogical_content) << raw;
  }
}

TEST(ParseResponse, IdenticalCompetingFieldsAreIllogical) {
  auto r = parse_response(
      R"({"Real_Evidence":"A yellow metal.","Fake_Evidence":"a  yellow metal.","Reconciled_Evidence":"x","Final_Answer":"fake"})");
  EXPECT_EQ(r.parse_status, ParseStatus::recovered);
  EXPECT_EQ(r.final_answer, Label::fake);
  EXPECT_EQ(r.failure_kind, FailureKind::illogical_content);
}

TEST(ParseResponse, EchoedEvidencePlaceholder) {
  auto r = parse_response(
      R"({"Real_Evidence":"<evidence that the speech is genuine>","Fake_Evidence":"clicks","Reconciled_Evidence":"clicks","Final_Answer":"fake"})");
  EXPECT_EQ(r.parse_status, ParseStatus::recovered);
  EXPECT_EQ(r.failure_kind, FailureKind::echoed_placeholder);
}

TEST(ParseResponse, MissingRationaleWithAnswerIsRecovered) {
  auto r = parse_response(R"({"Final_Answer":"FAKE"})");
  EXPECT_EQ(r.parse_status, ParseStatus::recovered);
  EXPECT_EQ(r.final_answer, Label::fake);
  EXPECT_EQ(r.failure_kind, FailureKind::omitted_rationale);
}

TEST(ParseResponse, JsonEmbeddedInChatter) {
  auto r = parse_response(
      "Sure! Here it is:\n```json\n{\"Real_Evidence\":\"a {brace} inside\",\"Fake_Evidence\":\"b\","
      "\"Reconciled_Evidence\":\"c\",\"Final_Answer\":\"fake\"}\n```\nHope that helps.");
  EXPECT_EQ(r.parse_status, ParseStatus::ok);
  EXPECT_EQ(r.final_answer, Label::fake);
  EXPECT_EQ(r.real_evidence, "a {brace} inside");
}

TEST(ParseResponse, BrokenBlockFallsThroughToLaterObject) {
  auto r = parse_response(
      "{not json} then {\"Real_Evidence\":\"a\",\"Fake_Evidence\":\"b\","
      "\"Reconciled_Evidence\":\"c\",\"Final_Answer\":\"real\"}");
  EXPECT_EQ(r.parse_status, ParseStatus::ok);
  EXPECT_EQ(r.final_answer, Label::real);
}

TEST(ParseResponse, RecoveryTakesLastStandaloneKeywordInTail) {
  auto r = parse_response("It sounds real at first, but the verdict is fake.");
  EXPECT_EQ(r.final_answer, Label::fake);
  // "unreal" and "fakery" are not standalone words.
  auto s = parse_response("fake start... the timbre is unreal, no fakery");
  EXPECT_EQ(s.final_answer, Label::fake);
  EXPECT_EQ(s.parse_status, ParseStatus::recovered);
}

TEST(ParseResponse, RecoveryIgnoresKeywordsBeforeTheTail) {
  std::string raw = "real " + std::string(kRecoveryTailBytes, 'x');
  auto r = parse_response(raw);
  EXPECT_EQ(r.parse_status, ParseStatus::failed);
  EXPECT_FALSE(r.final_answer.has_value());
  std::string edge = "fake" + std::string(kRecoveryTailBytes - 5, ' ') + "!";
  ASSERT_EQ(edge.size(), kRecoveryTailBytes);
  EXPECT_EQ(parse_response(edge).final_answer, Label::fake);
}

TEST(ParseResponse, EmptyAndGarbage) {
  for (const char* raw : {"", "{", "}", "{{}}", "\"\"", "42"}) {
    auto r = parse_response(raw);
    EXPECT_EQ(r.parse_status, ParseStatus::failed) << raw;
    EXPECT_TRUE(r.failure_kind.has_value());
  }
}

TEST(FailureKinds, NamesRoundTrip) {
  for (auto k : {FailureKind::omitted_rationale, FailureKind::echoed_placeholder,
                 FailureKind::format_violation, FailureKind::illogical_content}) {
    EXPECT_EQ(parse_failure_kind(to_string(k)), k);
  }
}

// ---- phase 1 replies -------------------------------------------------------------------

TEST(InitialEvidence, Accepts) {
  auto e = parse_initial_evidence(R"({"Real_Evidence":"breath","Fake_Evidence":"buzz"})");
  ASSERT_TRUE(e);
  EXPECT_EQ(e->r_real, "breath");
  EXPECT_EQ(e->r_fake, "buzz");
}

TEST(InitialEvidence, Rejects) {
  for (const char* raw : {R"({"Real_Evidence":"x"})", R"({"Real_Evidence":"","Fake_Evidence":"y"})",
                          R"({"Real_Evidence":"same","Fake_Evidence":" SAME "})",
                          R"({"Real_Evidence":"<evidence that the speech is genuine>","Fake_Evidence":"y"})",
                          "no json", R"({"Real_Evidence":1,"Fake_Evidence":"y"})"}) {
    EXPECT_FALSE(parse_initial_evidence(raw).has_value()) << raw;
  }
}

TEST(ReconciledEvidence, AcceptsAndRejects) {
  EXPECT_EQ(parse_reconciled_evidence(R"({"Reconciled_Evidence":"breath is genuine"})"),
            "breath is genuine");
  EXPECT_FALSE(parse_reconciled_evidence(R"({"Reconciled_Evidence":""})").has_value());
  EXPECT_FALSE(parse_reconciled_evidence("The clip is real").has_value());
}

// ---- properties --------------------------------------------------------------------------

std::string random_text(Gen& g, std::size_t max_len) {
  static const std::string alphabet =
      "abcdefghijklmnopqrstuvwxyzREALFAKE {}[]\":,\\|<>_\n\t0123456789";
  std::string s(g.index(max_len + 1), ' ');
  for (auto& c : s) c = alphabet[g.index(alphabet.size())];
  return s;
}

void check_invariants(const ParsedResponse& r) {
  ASSERT_TRUE(r.parse_status == ParseStatus::ok || r.parse_status == ParseStatus::recovered ||
              r.parse_status == ParseStatus::failed);
  EXPECT_EQ(r.failure_kind.has_value(), r.parse_status != ParseStatus::ok);
  EXPECT_EQ(r.final_answer.has_value(), r.parse_status != ParseStatus::failed);
}

TEST(ParseFuzz, RandomBytesNeverThrowAndAreDeterministic) {
  Gen g(2024);
  for (int i = 0; i < 10000; ++i) {
    std::string raw(g.index(300), '\0');
    for (auto& c : raw) c = static_cast<char>(g.next() & 0xFF);
    ParsedResponse a, b;
    ASSERT_NO_THROW(a = parse_response(raw));
    b = parse_response(raw);
    check_invariants(a);
    EXPECT_EQ(render_response(a), render_response(b));
    EXPECT_EQ(a.parse_status, b.parse_status);
    EXPECT_EQ(a.failure_kind, b.failure_kind);
  }
}

TEST(ParseFuzz, MutatedSchemaObjectsNeverThrow) {
  Gen g(7);
  const std::string base =
      R"({"Real_Evidence":"breath","Fake_Evidence":"buzz","Reconciled_Evidence":"genuine","Final_Answer":"real"})";
  for (int i = 0; i < 10000; ++i) {
    std::string raw = base;
    const int edits = 1 + g.integer(0, 6);
    for (int e = 0; e < edits && !raw.empty(); ++e) {
      const auto pos = g.index(raw.size());
      switch (g.integer(0, 2)) {
        case 0: raw.erase(pos, 1); break;
        case 1: raw.insert(pos, random_text(g, 4)); break;
        default: raw[pos] = static_cast<char>(g.next() & 0x7F); break;
      }
    }
    ParsedResponse r;
    ASSERT_NO_THROW(r = parse_response(raw)) << raw;
    check_invariants(r);
  }
}

TEST(ParseRoundTrip, RenderedOkResponseParsesToItself) {
  Gen g(99);
  int ok_cases = 0;
  for (int i = 0; i < 2000; ++i) {
    ParsedResponse r;
    r.real_evidence = "r " + random_text(g, 40);
    r.fake_evidence = "f " + random_text(g, 40);
    r.reconciled_evidence = "c " + random_text(g, 40);
    r.final_answer = g.label();
    r.parse_status = ParseStatus::ok;
    auto back = parse_response(render_response(r));
    if (back.parse_status != ParseStatus::ok) {
      // Only generated values that themselves look like placeholders may
      // legitimately fail the content checks.
      EXPECT_EQ(back.failure_kind, FailureKind::echoed_placeholder) << render_response(r);
      continue;
    }
    ++ok_cases;
    EXPECT_EQ(back.real_evidence, r.real_evidence);
    EXPECT_EQ(back.fake_evidence, r.fake_evidence);
    EXPECT_EQ(back.reconciled_evidence, r.reconciled_evidence);
    EXPECT_EQ(back.final_answer, r.final_answer);
  }
  EXPECT_GT(ok_cases, 1900);
}

TEST(ExtractJson, FirstBalancedObject) {
  EXPECT_EQ(extract_json_object(R"(xx {"a": "}"} {"b":1})"), R"({"a": "}"})");
  EXPECT_EQ(extract_json_object(R"({"a": {"b": 2}})"), R"({"a": {"b": 2}})");
  EXPECT_FALSE(extract_json_object("{\"a\": 1").has_value());
  EXPECT_FALSE(extract_json_object("[1, 2]").has_value());
}

}  // namespace
}  // namespace iclad
