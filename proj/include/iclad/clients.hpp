#pragma once

#include <atomic>
#include <cstddef>
#include <functional>
#include <map>
#include <optional>
#include <semaphore>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "iclad/core.hpp"
#include "iclad/embedding.hpp"
#include "iclad/prompting.hpp"

namespace iclad {

struct AlmRequest {
  std::vector<PromptPart> parts;
  std::string template_id;
  int max_output_tokens = 1024;
  double temperature = 0.0;

  static AlmRequest from_prompt(Prompt prompt);
  void validate() const;
};

/// Canonical JSON of the request; the replay fingerprint hashes this.
std::string serialize_request(const AlmRequest& req);
/// Lowercase hex SHA-256 of serialize_request(req).
std::string request_fingerprint(const AlmRequest& req);
std::string sha256_hex(std::string_view data);

class AlmClient {
 public:
  virtual ~AlmClient() = default;
  virtual std::string complete(const AlmRequest& req) = 0;
};

struct DetectorResult {
  /// Probability of fake, in [0, 1].
  double score = 0.0;
  std::optional<double> raw_logit;
  std::vector<float> embedding;

  bool operator==(const DetectorResult&) const = default;
};

class DetectorClient {
 public:
  virtual ~DetectorClient() = default;
  virtual DetectorResult score(const AudioRef& audio) = 0;
  virtual std::vector<DetectorResult> score_batch(std::span<const AudioRef> audio);
};

class TextEmbedder {
 public:
  virtual ~TextEmbedder() = default;
  virtual EmbeddingMatrix embed(std::span<const std::string> texts) = 0;
};

/// Caps in-flight requests for a client.
class ConcurrencyGate {
 public:
  explicit ConcurrencyGate(std::ptrdiff_t limit = 4);

  class Permit {
   public:
    explicit Permit(ConcurrencyGate& gate) : gate_(gate) { gate_.slots_.acquire(); }
    ~Permit() { gate_.slots_.release(); }
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;

   private:
    ConcurrencyGate& gate_;
  };

  Permit enter() { return Permit(*this); }

 private:
  std::counting_semaphore<1024> slots_;
};

// ---------------------------------------------------------------------------
// Deterministic mocks

/// Delegates every request to a function; counts calls.
class ScriptedAlm : public AlmClient {
 public:
  using Script = std::function<std::string(const AlmRequest&)>;
  explicit ScriptedAlm(Script script) : script_(std::move(script)) {}
  static ScriptedAlm constant(std::string reply);

  std::string complete(const AlmRequest& req) override;
  std::size_t calls() const { return calls_.load(); }

 private:
  Script script_;
  std::atomic<std::size_t> calls_{0};
};

/// Answers an in-context request with the majority label of its examples
/// (every attachment but the last), ties and zero examples going to "real".
/// Throws not_icl_shaped when an example id is not in `hidden_labels` or the
/// request has no attachment.
std::string majority_mock_alm(const AlmRequest& req,
                              const std::unordered_map<std::string, Label>& hidden_labels);

/// Mock standing in for a live ALM across both phases. Phase-1 requests get
/// well-formed evidence derived from the audio id; in-context requests go to
/// majority_mock_alm. Requests whose subject id is in `failing_ids` fail with
/// a permanent transport error.
class MockAlm : public AlmClient {
 public:
  explicit MockAlm(std::unordered_map<std::string, Label> hidden_labels = {},
                   std::set<std::string> failing_ids = {})
      : hidden_labels_(std::move(hidden_labels)), failing_ids_(std::move(failing_ids)) {}

  std::string complete(const AlmRequest& req) override;
  std::size_t calls() const { return calls_.load(); }

 private:
  std::unordered_map<std::string, Label> hidden_labels_;
  std::set<std::string> failing_ids_;
  std::atomic<std::size_t> calls_{0};
};

/// Fixed id -> result table. Unknown ids fail with unreadable_audio.
class TableDetector : public DetectorClient {
 public:
  explicit TableDetector(std::unordered_map<std::string, DetectorResult> table)
      : table_(std::move(table)) {}
  /// JSONL lines of {"id", "score", "embedding": [...], "raw_logit"?}.
  static std::unordered_map<std::string, DetectorResult> load_table(const std::filesystem::path& path);

  DetectorResult score(const AudioRef& audio) override;
  std::size_t calls() const { return calls_.load(); }

 private:
  std::unordered_map<std::string, DetectorResult> table_;
  std::atomic<std::size_t> calls_{0};
};

void save_detector_table(const std::filesystem::path& path,
                         const std::unordered_map<std::string, DetectorResult>& table);

/// Bag-of-tokens hash projection: each lowercase alphanumeric token adds a
/// pseudo-random vector seeded by its FNV-1a hash; rows are L2-normalized.
class HashTextEmbedder : public TextEmbedder {
 public:
  explicit HashTextEmbedder(std::size_t dim = 64) : dim_(dim) {}
  EmbeddingMatrix embed(std::span<const std::string> texts) override;

 private:
  std::size_t dim_;
};

std::uint64_t fnv1a64(std::string_view data);
std::uint64_t splitmix64(std::uint64_t x);

}  // namespace iclad
