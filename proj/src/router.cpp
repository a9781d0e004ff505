#include "iclad/router.hpp"

#include <chrono>
#include <fstream>
#include <ostream>
#include <sstream>

#include <json.hpp>

#include "iclad/parallel.hpp"

namespace iclad {

using nlohmann::ordered_json;

std::string_view to_string(Route route) { return route == Route::detector ? "detector" : "alm"; }

std::string_view to_string(RoutingMode mode) {
  switch (mode) {
    case RoutingMode::auto_route: return "auto";
    case RoutingMode::force_detector: return "detector";
    case RoutingMode::force_alm: return "alm";
  }
  return "?";
}

std::optional<RoutingMode> parse_routing_mode(std::string_view text) {
  for (auto m : {RoutingMode::auto_route, RoutingMode::force_detector, RoutingMode::force_alm}) {
    if (to_string(m) == text) return m;
  }
  return std::nullopt;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

}  // namespace

std::vector<std::size_t> retrieve_examples(const InferenceContext& ctx,
                                           std::span<const float> embedding) {
  const auto& index = ctx.cache.embeddings();
  if (ctx.retrieval.mode == RetrievalMode::mmr) {
    if (ctx.text_index == nullptr) {
      throw Error(ErrorCode::config, "mmr retrieval needs text embeddings of the cache evidence");
    }
    return mmr_select(index, *ctx.text_index, embedding, ctx.retrieval.k_total,
                      ctx.retrieval.mmr_lambda);
  }
  const auto labels = ctx.cache.row_labels();
  return balanced_retrieve(index, labels, embedding, ctx.retrieval);
}

InferenceRecord infer_one(const AudioRef& query, const InferenceContext& ctx) {
  InferenceRecord rec;
  rec.query = query;
  const auto t_start = Clock::now();
  try {
    auto t0 = Clock::now();
    auto det = ctx.detector.score(query);
    rec.latency_ms.detector_ms = ms_since(t0);

    const auto ood = ctx.ood.score(det.embedding);
    rec.route.is_ood = ood.is_ood;
    rec.route.ood_distance = ood.distance;
    rec.route.route = ood.is_ood ? Route::alm : Route::detector;
    if (ctx.routing != RoutingMode::auto_route) {
      rec.route.route = ctx.routing == RoutingMode::force_alm ? Route::alm : Route::detector;
      rec.route.forced = true;
    }

    if (rec.route.route == Route::detector) {
      rec.verdict.source = VerdictSource::detector;
      rec.verdict.detector_score = det.score;
      rec.verdict.raw_logit = det.raw_logit;
      rec.verdict.decision = det.score >= 0.5 ? Label::fake : Label::real;
      rec.verdict.parse_status = ParseStatus::ok;
    } else {
      rec.verdict.source = VerdictSource::alm;
      t0 = Clock::now();
      const auto rows = retrieve_examples(ctx, det.embedding);
      std::vector<CacheEntry> examples;
      examples.reserve(rows.size());
      for (auto r : rows) {
        examples.push_back(ctx.cache.entry_for_row(r));
        rec.retrieved_ids.push_back(examples.back().audio.id);
      }
      rec.latency_ms.retrieval_ms = ms_since(t0);

      auto req = AlmRequest::from_prompt(build_icl_prompt(ctx.templates, ctx.strategy, examples, query));
      rec.prompt_template = req.template_id;
      rec.prompt_fingerprint = request_fingerprint(req);
      t0 = Clock::now();
      const auto raw = ctx.alm.complete(req);
      rec.latency_ms.alm_ms = ms_since(t0);

      const auto parsed = parse_response(raw);
      rec.verdict.parse_status = parsed.parse_status;
      rec.failure_kind = parsed.failure_kind;
      rec.verdict.decision = parsed.final_answer.value_or(Label::real);
      rec.verdict.evidence =
          EvidenceTriple{parsed.real_evidence, parsed.fake_evidence, parsed.reconciled_evidence};
    }
  } catch (const Error& e) {
    rec.error = std::string(to_string(e.code())) + ": " + e.what();
  }
  rec.latency_ms.total_ms = ms_since(t_start);
  return rec;
}

std::vector<InferenceRecord> infer_batch(const DatasetManifest& manifest, const InferenceContext& ctx) {
  ctx.retrieval.validate();
  if (ctx.retrieval.mode == RetrievalMode::mmr && ctx.text_index == nullptr) {
    throw Error(ErrorCode::config, "mmr retrieval needs text embeddings of the cache evidence");
  }
  std::vector<InferenceRecord> out(manifest.size());
  parallel_for(manifest.size(), ctx.jobs,
               [&](std::size_t i) { out[i] = infer_one(manifest.entries()[i].audio, ctx); });
  return out;
}

RoutingSummary summarize(const std::vector<InferenceRecord>& records) {
  RoutingSummary s;
  s.n = records.size();
  for (const auto& r : records) {
    if (r.alm_invoked()) ++s.alm_calls;
    if (r.error) {
      ++s.errors;
      continue;
    }
    (r.route.route == Route::alm ? s.n_alm : s.n_detector)++;
    if (r.verdict.degraded()) ++s.degraded;
  }
  return s;
}

std::string summary_json(const RoutingSummary& s) {
  const auto scored = s.n_detector + s.n_alm;
  auto frac = [&](std::size_t k) { return scored == 0 ? 0.0 : static_cast<double>(k) / scored; };
  ordered_json j = {{"n", s.n},
                    {"n_detector", s.n_detector},
                    {"n_alm", s.n_alm},
                    {"frac_detector", frac(s.n_detector)},
                    {"frac_alm", frac(s.n_alm)},
                    {"alm_calls", s.alm_calls},
                    {"errors", s.errors},
                    {"degraded", s.degraded}};
  return j.dump(2);
}

namespace {

ordered_json record_to_json(const InferenceRecord& r, bool with_timings) {
  ordered_json j;
  j["schema"] = kResultsSchema;
  j["id"] = r.query.id;
  j["path"] = r.query.path.string();
  j["dataset"] = r.query.dataset;
  j["route"] = {{"route", to_string(r.route.route)},
                {"is_ood", r.route.is_ood},
                {"ood_distance", r.route.ood_distance},
                {"forced", r.route.forced}};
  j["retrieved_ids"] = r.retrieved_ids;
  ordered_json v;
  v["decision"] = to_string(r.verdict.decision);
  v["source"] = to_string(r.verdict.source);
  v["parse_status"] = to_string(r.verdict.parse_status);
  v["degraded"] = r.verdict.degraded();
  if (r.verdict.detector_score) v["detector_score"] = *r.verdict.detector_score;
  if (r.verdict.raw_logit) v["raw_logit"] = *r.verdict.raw_logit;
  if (r.verdict.evidence) {
    v["evidence"] = {{"real", r.verdict.evidence->r_real},
                     {"fake", r.verdict.evidence->r_fake},
                     {"reconciled", r.verdict.evidence->r_reconciled}};
  }
  if (r.failure_kind) v["failure_kind"] = to_string(*r.failure_kind);
  j["verdict"] = std::move(v);
  if (!r.prompt_fingerprint.empty()) {
    j["prompt_template"] = r.prompt_template;
    j["prompt_fingerprint"] = r.prompt_fingerprint;
  }
  if (r.error) j["error"] = *r.error;
  if (with_timings) {
    j["latency_ms"] = {{"detector", r.latency_ms.detector_ms},
                       {"retrieval", r.latency_ms.retrieval_ms},
                       {"alm", r.latency_ms.alm_ms},
                       {"total", r.latency_ms.total_ms}};
  }
  return j;
}

template <typename Enum, std::size_t N>
Enum parse_enum(const std::string& text, const Enum (&values)[N], const char* what) {
  for (auto v : values) {
    if (to_string(v) == text) return v;
  }
  throw Error(ErrorCode::malformed, std::string("unknown ") + what + " '" + text + "'");
}

InferenceRecord record_from_json(const nlohmann::json& j) {
  if (j.value("schema", "") != kResultsSchema) {
    throw Error(ErrorCode::malformed, "results line has schema '" + j.value("schema", "") +
                                          "', expected '" + std::string(kResultsSchema) + "'");
  }
  InferenceRecord r;
  r.query.id = j.at("id").get<std::string>();
  r.query.path = j.at("path").get<std::string>();
  r.query.dataset = j.at("dataset").get<std::string>();
  const auto& route = j.at("route");
  r.route.route = parse_enum(route.at("route").get<std::string>(), {Route::detector, Route::alm}, "route");
  r.route.is_ood = route.at("is_ood").get<bool>();
  r.route.ood_distance = route.at("ood_distance").get<double>();
  r.route.forced = route.value("forced", false);
  r.retrieved_ids = j.at("retrieved_ids").get<std::vector<std::string>>();
  const auto& v = j.at("verdict");
  auto label = parse_label(v.at("decision").get<std::string>());
  if (!label) throw Error(ErrorCode::malformed, "bad decision for '" + r.query.id + "'");
  r.verdict.decision = *label;
  r.verdict.source = parse_enum(v.at("source").get<std::string>(),
                                {VerdictSource::detector, VerdictSource::alm}, "verdict source");
  r.verdict.parse_status =
      parse_enum(v.at("parse_status").get<std::string>(),
                 {ParseStatus::ok, ParseStatus::recovered, ParseStatus::failed}, "parse status");
  if (v.contains("detector_score")) r.verdict.detector_score = v["detector_score"].get<double>();
  if (v.contains("raw_logit")) r.verdict.raw_logit = v["raw_logit"].get<double>();
  if (v.contains("evidence")) {
    const auto& e = v["evidence"];
    r.verdict.evidence = EvidenceTriple{e.at("real").get<std::string>(), e.at("fake").get<std::string>(),
                                        e.at("reconciled").get<std::string>()};
  }
  if (v.contains("failure_kind")) {
    auto fk = parse_failure_kind(v["failure_kind"].get<std::string>());
    if (!fk) throw Error(ErrorCode::malformed, "bad failure_kind for '" + r.query.id + "'");
    r.failure_kind = fk;
  }
  r.prompt_template = j.value("prompt_template", "");
  r.prompt_fingerprint = j.value("prompt_fingerprint", "");
  if (j.contains("error")) r.error = j["error"].get<std::string>();
  if (j.contains("latency_ms")) {
    const auto& l = j["latency_ms"];
    r.latency_ms = {l.value("detector", 0.0), l.value("retrieval", 0.0), l.value("alm", 0.0),
                    l.value("total", 0.0)};
  }
  return r;
}

}  // namespace

void write_results(std::ostream& out, const std::vector<InferenceRecord>& records, bool with_timings) {
  for (const auto& r : records) {
    out << record_to_json(r, with_timings).dump(-1, ' ', false,
                                                 nlohmann::json::error_handler_t::replace)
        << '\n';
  }
}

void save_results(const std::filesystem::path& path, const std::vector<InferenceRecord>& records,
                  bool with_timings) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::io, "cannot write " + path.string());
  write_results(out, records, with_timings);
  if (!out) throw Error(ErrorCode::io, "short write to " + path.string());
}

std::vector<InferenceRecord> read_results(std::istream& in) {
  std::vector<InferenceRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object()) {
      throw Error(ErrorCode::malformed, "results line " + std::to_string(line_no) + " is not JSON");
    }
    try {
      out.push_back(record_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::malformed, "results line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<InferenceRecord> load_results(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::io, "cannot read results " + path.string());
  return read_results(in);
}

}  // namespace iclad
