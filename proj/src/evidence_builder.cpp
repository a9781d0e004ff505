#include "iclad/evidence_builder.hpp"

#include <algorithm>
#include <fstream>
#include <mutex>
#include <random>
#include <unordered_map>

#include <json.hpp>

#include "iclad/parallel.hpp"
#include "iclad/response_parser.hpp"

namespace iclad {

namespace fs = std::filesystem;
using nlohmann::json;

std::string_view to_string(EntryState state) {
  switch (state) {
    case EntryState::pending: return "pending";
    case EntryState::evidenced: return "evidenced";
    case EntryState::reconciled: return "reconciled";
    case EntryState::failed: return "failed";
  }
  return "?";
}

std::optional<EntryState> parse_entry_state(std::string_view text) {
  for (auto s : {EntryState::pending, EntryState::evidenced, EntryState::reconciled,
                 EntryState::failed}) {
    if (to_string(s) == text) return s;
  }
  return std::nullopt;
}

bool is_allowed_transition(EntryState from, EntryState to) {
  const bool terminal = from == EntryState::reconciled || from == EntryState::failed;
  if (terminal) return false;
  if (to == EntryState::failed) return true;
  return (from == EntryState::pending && to == EntryState::evidenced) ||
         (from == EntryState::evidenced && to == EntryState::reconciled);
}

namespace {

json entry_to_json(const JobEntry& e) {
  json j = {{"id", e.id},
            {"state", to_string(e.state)},
            {"attempts", e.attempts},
            {"r_real", e.evidence.r_real},
            {"r_fake", e.evidence.r_fake},
            {"r_reconciled", e.evidence.r_reconciled},
            {"embedding", e.embedding}};
  if (!e.error.empty()) j["error"] = e.error;
  return j;
}

JobEntry entry_from_json(const json& j) {
  JobEntry e;
  e.id = j.at("id").get<std::string>();
  auto state = parse_entry_state(j.at("state").get<std::string>());
  if (!state) throw Error(ErrorCode::malformed, "job state: unknown state for '" + e.id + "'");
  e.state = *state;
  e.attempts = j.at("attempts").get<int>();
  e.evidence.r_real = j.value("r_real", "");
  e.evidence.r_fake = j.value("r_fake", "");
  e.evidence.r_reconciled = j.value("r_reconciled", "");
  e.embedding = j.value("embedding", std::vector<float>{});
  e.error = j.value("error", "");
  return e;
}

void write_atomically(const fs::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::io, "cannot write " + tmp.string());
    out << content;
    out.flush();
    if (!out) throw Error(ErrorCode::io, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

BuildJob::BuildJob(const DatasetManifest& pool, const fs::path& state_file, int max_attempts)
    : state_file_(state_file), max_attempts_(max_attempts) {
  if (max_attempts < 1) throw Error(ErrorCode::invalid_argument, "max_attempts must be >= 1");
  std::unordered_map<std::string, JobEntry> saved;
  if (fs::exists(state_file)) {
    std::ifstream in(state_file);
    auto j = json::parse(in, nullptr, false);
    if (j.is_discarded() || !j.contains("entries")) {
      throw Error(ErrorCode::malformed, "unreadable job state " + state_file.string());
    }
    try {
      for (const auto& je : j["entries"]) {
        auto e = entry_from_json(je);
        saved.emplace(e.id, std::move(e));
      }
    } catch (const json::exception& ex) {
      throw Error(ErrorCode::malformed, "job state " + state_file.string() + ": " + ex.what());
    }
  }
  entries_.reserve(pool.size());
  for (const auto& m : pool.entries()) {
    if (auto it = saved.find(m.audio.id); it != saved.end()) {
      entries_.push_back(std::move(it->second));
    } else {
      JobEntry fresh;
      fresh.id = m.audio.id;
      entries_.push_back(std::move(fresh));
    }
  }
}

void BuildJob::transition(std::size_t i, EntryState to) {
  auto& e = entries_.at(i);
  if (!is_allowed_transition(e.state, to)) {
    throw Error(ErrorCode::invalid_argument, "illegal transition " + std::string(to_string(e.state)) +
                                                 " -> " + std::string(to_string(to)) + " for '" +
                                                 e.id + "'");
  }
  e.state = to;
}

void BuildJob::checkpoint() const {
  json j = {{"format", "iclad.job.v1"}, {"entries", json::array()}};
  for (const auto& e : entries_) j["entries"].push_back(entry_to_json(e));
  write_atomically(state_file_, j.dump(1));
}

namespace {

bool is_terminal(EntryState s) { return s == EntryState::reconciled || s == EntryState::failed; }

// Advances one entry as far as it will go. Works on a private copy; `commit`
// publishes each state change.
void process_entry(JobEntry entry, const ManifestEntry& item, AlmClient& alm,
                   DetectorClient& detector, const TemplateSet& templates,
                   const BuildOptions& options, int max_attempts,
                   const std::function<void(const JobEntry&)>& commit) {
  auto move_to = [&](EntryState to) {
    if (!is_allowed_transition(entry.state, to)) {
      throw Error(ErrorCode::invalid_argument, "illegal transition for '" + entry.id + "'");
    }
    entry.state = to;
    commit(entry);
  };
  auto fail = [&](std::string why) {
    entry.error = std::move(why);
    move_to(EntryState::failed);
  };

  while (!is_terminal(entry.state)) {
    try {
      if (entry.state == EntryState::pending) {
        auto req = AlmRequest::from_prompt(build_phase1_initial(templates, item.audio));
        if (!is_label_blind(req.parts)) {
          throw Error(ErrorCode::config, "initial evidence request for '" + entry.id +
                                             "' discloses a label");
        }
        if (options.on_initial_request) options.on_initial_request(req);
        auto parsed = parse_initial_evidence(alm.complete(req));
        if (!parsed) {
          fail("initial evidence reply is missing, empty or duplicated");
          return;
        }
        entry.evidence.r_real = std::move(parsed->r_real);
        entry.evidence.r_fake = std::move(parsed->r_fake);
        move_to(EntryState::evidenced);
        continue;
      }
      // evidenced: reconcile, then embed.
      if (entry.evidence.r_reconciled.empty()) {
        auto partial = entry.evidence;
        auto req = AlmRequest::from_prompt(
            build_phase1_reconcile(templates, item.audio, partial, item.label));
        auto reconciled = parse_reconciled_evidence(alm.complete(req));
        if (!reconciled) {
          fail("reconciliation reply has no usable Reconciled_Evidence");
          return;
        }
        entry.evidence.r_reconciled = std::move(*reconciled);
      }
      auto det = detector.score(item.audio);
      if (det.embedding.empty()) throw Error(ErrorCode::transport, "detector returned no embedding");
      entry.embedding = std::move(det.embedding);
      move_to(EntryState::reconciled);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::config) throw;
      ++entry.attempts;
      if (!e.transient() || entry.attempts >= max_attempts) {
        fail(std::string(to_string(e.code())) + ": " + e.what());
        return;
      }
      commit(entry);
      if (options.backoff.sleep) options.backoff.sleep(options.backoff.delay_before(entry.attempts));
    }
  }
}

void write_cache_files(const DatasetManifest& pool, const BuildJob& job, const fs::path& out_dir,
                       BuildSummary& summary) {
  std::vector<CacheEntry> entries;
  std::vector<std::vector<float>> rows;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& e = job.entries()[i];
    if (e.state != EntryState::reconciled) continue;
    CacheEntry c;
    c.audio = pool.entries()[i].audio;
    c.audio.split = Split::train;
    c.label = pool.entries()[i].label;
    c.evidence = e.evidence;
    c.embedding_row = rows.size();
    entries.push_back(std::move(c));
    rows.push_back(e.embedding);
  }
  summary.cache_rows = entries.size();
  if (entries.empty()) {
    // Never leave a stale cache next to a job state that has no rows.
    fs::remove(out_dir / kCacheEmbeddingsFile);
    fs::remove(out_dir / kCacheMetadataFile);
    return;
  }
  write_cache(out_dir, OfflineCache(std::move(entries), EmbeddingMatrix::from_rows(rows)));
}

}  // namespace

BuildSummary build_cache(const DatasetManifest& pool, AlmClient& alm, DetectorClient& detector,
                         const TemplateSet& templates, const fs::path& out_dir,
                         const BuildOptions& options) {
  fs::create_directories(out_dir);
  BuildJob job(pool, out_dir / kJobStateFile, options.max_attempts);

  std::vector<std::size_t> todo;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (!is_terminal(job.entries()[i].state)) todo.push_back(i);
  }
  if (options.stop_after && *options.stop_after < todo.size()) todo.resize(*options.stop_after);

  std::mutex job_mutex;
  parallel_for(todo.size(), options.jobs, [&](std::size_t t) {
    const std::size_t i = todo[t];
    JobEntry start;
    {
      std::lock_guard lock(job_mutex);
      start = job.entries()[i];
    }
    process_entry(std::move(start), pool.entries()[i], alm, detector, templates, options,
                  job.max_attempts(), [&](const JobEntry& updated) {
                    std::lock_guard lock(job_mutex);
                    job.entry(i) = updated;
                    job.checkpoint();
                  });
  });
  job.checkpoint();

  BuildSummary summary;
  summary.processed = todo.size();
  for (const auto& e : job.entries()) {
    switch (e.state) {
      case EntryState::reconciled: ++summary.reconciled; break;
      case EntryState::failed: ++summary.failed; break;
      default: ++summary.pending; break;
    }
  }
  write_cache_files(pool, job, out_dir, summary);
  return summary;
}

DatasetManifest compose_rag_pool(const DatasetManifest& anchor, const DatasetManifest& target_train,
                                 std::size_t n_each, std::uint64_t seed) {
  if (n_each == 0) throw Error(ErrorCode::invalid_argument, "n_each must be positive");
  for (const auto* src : {&anchor, &target_train}) {
    if (src->size() < n_each) {
      throw Error(ErrorCode::insufficient_source_entries,
                  "'" + src->name() + "' has " + std::to_string(src->size()) + " entries, need " +
                      std::to_string(n_each));
    }
  }
  std::mt19937_64 rng(seed);
  std::vector<ManifestEntry> out;
  out.reserve(2 * n_each);
  for (const auto* src : {&anchor, &target_train}) {
    // std::sample keeps the relative source order of what it picks.
    std::sample(src->entries().begin(), src->entries().end(), std::back_inserter(out), n_each, rng);
  }
  for (auto& e : out) e.audio.split = Split::train;
  return DatasetManifest(anchor.name() + "+" + target_train.name(), std::move(out));
}

}  // namespace iclad
