#pragma once

#include <filesystem>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>

#include "iclad/clients.hpp"

namespace iclad {

/// Recorded ALM responses keyed by request fingerprint.
///
/// On disk: JSONL of {"fingerprint_hex", "response_text", "recorded_at"}.
/// Appends are serialized; lookups may run concurrently with each other.
class ReplayLog {
 public:
  ReplayLog() = default;
  /// Opens (creating if absent) the log at `path`; later appends go there.
  explicit ReplayLog(const std::filesystem::path& path);

  std::optional<std::string> find(const std::string& fingerprint) const;
  /// No-op when the fingerprint is already recorded.
  void append(const std::string& fingerprint, const std::string& response_text);
  std::size_t size() const;

 private:
  std::filesystem::path path_;
  std::unordered_map<std::string, std::string> entries_;
  mutable std::mutex mutex_;
};

/// Serves recorded responses only. An unknown fingerprint is a replay_miss
/// error; there is never a live fallback.
class ReplayAlm : public AlmClient {
 public:
  explicit ReplayAlm(const ReplayLog& log) : log_(log) {}
  std::string complete(const AlmRequest& req) override;

 private:
  const ReplayLog& log_;
};

/// Forwards to `inner` and records each response.
class RecordingAlm : public AlmClient {
 public:
  RecordingAlm(AlmClient& inner, ReplayLog& log) : inner_(inner), log_(log) {}
  std::string complete(const AlmRequest& req) override;

 private:
  AlmClient& inner_;
  ReplayLog& log_;
};

}  // namespace iclad
