#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "iclad/cache_store.hpp"
#include "iclad/clients.hpp"
#include "iclad/core.hpp"
#include "iclad/prompting.hpp"
#include "iclad/retry.hpp"

namespace iclad {

inline constexpr std::string_view kJobStateFile = "job_state.json";

enum class EntryState { pending, evidenced, reconciled, failed };

std::string_view to_string(EntryState state);
std::optional<EntryState> parse_entry_state(std::string_view text);
/// pending -> evidenced -> reconciled, and anything non-terminal -> failed.
bool is_allowed_transition(EntryState from, EntryState to);

struct JobEntry {
  std::string id;
  EntryState state = EntryState::pending;
  int attempts = 0;
  EvidenceTriple evidence;
  std::vector<float> embedding;
  std::string error;
};

/// Per-entry progress of a Phase-1 build, persisted as job_state.json.
class BuildJob {
 public:
  /// Fresh job, or resumed from `state_file` if it exists. Entries are keyed
  /// by id; ids absent from the saved state start pending.
  BuildJob(const DatasetManifest& pool, const std::filesystem::path& state_file, int max_attempts);

  const std::vector<JobEntry>& entries() const { return entries_; }
  JobEntry& entry(std::size_t i) { return entries_[i]; }
  void transition(std::size_t i, EntryState to);

  /// Atomic write-temp-then-rename of the whole state.
  void checkpoint() const;
  int max_attempts() const { return max_attempts_; }

 private:
  std::filesystem::path state_file_;
  std::vector<JobEntry> entries_;
  int max_attempts_;
};

struct BuildOptions {
  int max_attempts = 3;
  /// Backoff between attempts on transient failures.
  RetryPolicy backoff;
  /// Process at most this many unfinished entries, then stop as if
  /// interrupted. The job state stays resumable.
  std::optional<std::size_t> stop_after;
  std::size_t jobs = 1;
  /// Sees every label-blind initial request before it is sent.
  std::function<void(const AlmRequest&)> on_initial_request;
};

struct BuildSummary {
  std::size_t reconciled = 0;
  std::size_t failed = 0;
  std::size_t pending = 0;  // not yet terminal (only after an early stop)
  std::size_t processed = 0;
  std::size_t cache_rows = 0;
};

/// Phase-1: label-blind evidence, reconciliation with the true label, and a
/// detector embedding for each pool entry; writes embeddings.icladbin,
/// cache.jsonl and job_state.json under `out_dir`. Per-entry failures are
/// recorded and never abort the batch; reruns skip terminal entries.
BuildSummary build_cache(const DatasetManifest& pool, AlmClient& alm, DetectorClient& detector,
                         const TemplateSet& templates, const std::filesystem::path& out_dir,
                         const BuildOptions& options = {});

/// `n_each` entries sampled uniformly without replacement from each source
/// with a seeded generator; anchor samples first, each group in source order.
DatasetManifest compose_rag_pool(const DatasetManifest& anchor, const DatasetManifest& target_train,
                                 std::size_t n_each, std::uint64_t seed);

}  // namespace iclad
