#include "iclad/replay.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include <json.hpp>

namespace iclad {

namespace {

std::string utc_now_iso8601() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

ReplayLog::ReplayLog(const std::filesystem::path& path) : path_(path) {
  std::ifstream in(path);
  if (!in) {
    std::ofstream create(path, std::ios::app);
    if (!create) throw Error(ErrorCode::io, "cannot create replay log " + path.string());
    return;
  }
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      auto j = nlohmann::json::parse(line);
      entries_.emplace(j.at("fingerprint_hex").get<std::string>(),
                           j.at("response_text").get<std::string>());
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::malformed, path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
}

std::optional<std::string> ReplayLog::find(const std::string& fingerprint) const {
  std::lock_guard lock(mutex_);
  auto it = entries_.find(fingerprint);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ReplayLog::append(const std::string& fingerprint, const std::string& response_text) {
  std::lock_guard lock(mutex_);
  if (!entries_.emplace(fingerprint, response_text).second) return;
  if (path_.empty()) return;
  nlohmann::ordered_json j;
  j["fingerprint_hex"] = fingerprint;
  j["response_text"] = response_text;
  j["recorded_at"] = utc_now_iso8601();
  std::ofstream out(path_, std::ios::app);
  out << j.dump(-1, ' ', false, nlohmann::json::error_handler_t::replace) << '\n';
  if (!out) throw Error(ErrorCode::io, "cannot append to replay log " + path_.string());
}

std::size_t ReplayLog::size() const {
  std::lock_guard lock(mutex_);
  return entries_.size();
}

std::string ReplayAlm::complete(const AlmRequest& req) {
  const auto fp = request_fingerprint(req);
  if (auto hit = log_.find(fp)) return *hit;
  throw Error(ErrorCode::replay_miss, "no recorded response for request " + fp);
}

std::string RecordingAlm::complete(const AlmRequest& req) {
  auto text = inner_.complete(req);
  log_.append(request_fingerprint(req), text);
  return text;
}

}  // namespace iclad
