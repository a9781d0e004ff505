#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "iclad/cache_store.hpp"
#include "iclad/clients.hpp"
#include "iclad/core.hpp"
#include "iclad/ood.hpp"
#include "iclad/prompting.hpp"
#include "iclad/response_parser.hpp"
#include "iclad/search.hpp"

namespace iclad {

inline constexpr std::string_view kResultsSchema = "iclad.infer.v1";

enum class Route { detector, alm };
/// `auto_route` follows the OOD model; the forced modes are ablation switches.
enum class RoutingMode { auto_route, force_detector, force_alm };

std::string_view to_string(Route route);
std::string_view to_string(RoutingMode mode);
std::optional<RoutingMode> parse_routing_mode(std::string_view text);

struct RouteDecision {
  bool is_ood = false;
  double ood_distance = 0.0;
  Route route = Route::detector;
  /// Route was imposed by RoutingMode; otherwise route == alm iff is_ood.
  bool forced = false;

  bool operator==(const RouteDecision&) const = default;
};

struct StageTimings {
  double detector_ms = 0.0;
  double retrieval_ms = 0.0;
  double alm_ms = 0.0;
  double total_ms = 0.0;
};

struct InferenceRecord {
  AudioRef query;
  RouteDecision route;
  std::vector<std::string> retrieved_ids;
  Verdict verdict;
  std::optional<FailureKind> failure_kind;
  std::string prompt_template;
  /// Fingerprint of the ALM request; empty on the detector route.
  std::string prompt_fingerprint;
  /// Set when a client failed for this query; the verdict is then meaningless.
  std::optional<std::string> error;
  StageTimings latency_ms;

  bool alm_invoked() const { return !prompt_fingerprint.empty(); }
};

struct InferenceContext {
  const OfflineCache& cache;
  const OodModel& ood;
  const TemplateSet& templates;
  AlmClient& alm;
  DetectorClient& detector;
  RetrievalConfig retrieval;
  Strategy strategy = Strategy::pcr;
  RoutingMode routing = RoutingMode::auto_route;
  /// Per cache row text embeddings of the reconciled evidence; MMR only.
  const EmbeddingMatrix* text_index = nullptr;
  std::size_t jobs = 1;
};

/// One query: detector call, OOD test, then either the detector verdict
/// (fake iff score >= 0.5) or ALM in-context inference over retrieved cache
/// exemplars. An unparseable ALM reply falls back to "real", marked degraded.
/// Client failures are captured in the record, never thrown.
InferenceRecord infer_one(const AudioRef& query, const InferenceContext& ctx);

/// Order-preserving; up to ctx.jobs queries in flight.
std::vector<InferenceRecord> infer_batch(const DatasetManifest& manifest, const InferenceContext& ctx);

/// Row indices of the exemplars the ALM route would use for `embedding`.
std::vector<std::size_t> retrieve_examples(const InferenceContext& ctx,
                                           std::span<const float> embedding);

struct RoutingSummary {
  std::size_t n = 0;
  std::size_t n_detector = 0;
  std::size_t n_alm = 0;
  std::size_t alm_calls = 0;
  std::size_t errors = 0;
  std::size_t degraded = 0;
};

RoutingSummary summarize(const std::vector<InferenceRecord>& records);
std::string summary_json(const RoutingSummary& s);

/// Results JSONL. Latencies are written only when `with_timings` is set so
/// that identical runs produce identical files.
void write_results(std::ostream& out, const std::vector<InferenceRecord>& records,
                   bool with_timings = false);
void save_results(const std::filesystem::path& path, const std::vector<InferenceRecord>& records,
                  bool with_timings = false);
std::vector<InferenceRecord> read_results(std::istream& in);
std::vector<InferenceRecord> load_results(const std::filesystem::path& path);

}  // namespace iclad
