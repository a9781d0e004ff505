#pragma once

#include <chrono>
#include <cstddef>
#include <string>
#include <vector>

#include "iclad/clients.hpp"
#include "iclad/retry.hpp"

namespace iclad {

struct HttpEndpoint {
  /// scheme://host:port, e.g. "http://127.0.0.1:8080".
  std::string base_url;
  std::string path;
  /// Sent as "Authorization: Bearer <token>" when non-empty. Callers source
  /// this from the environment, never from command-line flags.
  std::string bearer_token;
  std::chrono::seconds timeout{120};
};

/// Reference ALM adapter: POSTs
///   {"parts": [{"text"} | {"audio_b64", "mime"}],
///    "generation": {"max_tokens", "temperature"}}
/// and expects {"text"} back. 401/403 map to authentication errors, 413 to
/// attachment-too-large; 408, 429, 5xx and connection failures are retried.
class HttpAlm : public AlmClient {
 public:
  struct Options {
    HttpEndpoint endpoint;
    RetryPolicy retry;
    std::size_t max_attachment_bytes = 20u << 20;
    std::ptrdiff_t max_in_flight = 4;
  };

  explicit HttpAlm(Options options);
  std::string complete(const AlmRequest& req) override;

  /// The JSON body sent for `req`; reads and base64-encodes each attachment.
  std::string build_body(const AlmRequest& req) const;

 private:
  Options options_;
  ConcurrencyGate gate_;
};

/// Client for the embedding sidecar's POST /embed (detector scores and
/// embeddings). Audio is referenced by server-local path.
class SidecarDetector : public DetectorClient {
 public:
  struct Options {
    HttpEndpoint endpoint;  // path unused; /embed is fixed
    std::string model_tag = "detector-embedding";
    RetryPolicy retry;
    std::ptrdiff_t max_in_flight = 4;
  };

  explicit SidecarDetector(Options options);
  DetectorResult score(const AudioRef& audio) override;

 private:
  Options options_;
  ConcurrencyGate gate_;
};

/// Client for the sidecar's POST /embed_text.
class SidecarTextEmbedder : public TextEmbedder {
 public:
  struct Options {
    HttpEndpoint endpoint;
    std::string model_tag = "text-embedding";
    RetryPolicy retry;
  };

  explicit SidecarTextEmbedder(Options options) : options_(std::move(options)) {}
  EmbeddingMatrix embed(std::span<const std::string> texts) override;

 private:
  Options options_;
};

struct SidecarModel {
  std::string model_tag;
  std::size_t dim = 0;
};

/// GET /health: the sidecar's loaded models.
std::vector<SidecarModel> sidecar_health(const HttpEndpoint& endpoint);

std::string base64_encode(std::string_view bytes);
std::string mime_for(const std::filesystem::path& path);

}  // namespace iclad
